use serde::{Deserialize, Serialize};

use super::{Classification, GlobalPosterior};
use crate::data::CauseList;
use crate::stats::quantile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsmfRow {
    pub cause: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Posterior-mean source weights, causes by domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaMatrix {
    pub causes: Vec<String>,
    pub domains: Vec<String>,
    pub mean: Vec<Vec<f64>>,
}

/// Structured summary of a global fit: CSMF table with 95% intervals, the
/// mean source-weight matrix and sampler diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorReport {
    pub csmf: Vec<CsmfRow>,
    pub csmf_estimate: Vec<f64>,
    pub labeled_csmf: Option<Vec<CsmfRow>>,
    pub lambda: LambdaMatrix,
    pub rhat: Vec<Option<f64>>,
    pub acceptance_rate: Option<f64>,
    pub chains: usize,
    pub draws: usize,
}

fn csmf_rows(draws: &[Vec<f64>], causes: &CauseList) -> Vec<CsmfRow> {
    (0..causes.len())
        .map(|c| {
            let col: Vec<f64> = draws.iter().map(|d| d[c]).collect();
            CsmfRow {
                cause: causes.name(c).to_string(),
                mean: crate::stats::mean(&col),
                lower: quantile(&col, 0.025),
                upper: quantile(&col, 0.975),
            }
        })
        .collect()
}

impl PosteriorReport {
    pub fn new(post: &GlobalPosterior, causes: &CauseList, csmf_estimate: &[f64]) -> Self {
        Self {
            csmf: csmf_rows(&post.pi_draws, causes),
            csmf_estimate: csmf_estimate.to_vec(),
            labeled_csmf: post.pi_tilde_draws.as_ref().map(|d| csmf_rows(d, causes)),
            lambda: LambdaMatrix {
                causes: causes.names().to_vec(),
                domains: post.domain_ids.clone(),
                mean: post.lambda_mean(),
            },
            rhat: post.rhat.clone(),
            acceptance_rate: post.acceptance_rate,
            chains: post.chains,
            draws: post.n_draws(),
        }
    }
}

/// `death_id,<cause_1>,...,<cause_C>,top_cause`
pub fn classification_csv(cls: &Classification, causes: &CauseList) -> String {
    let mut out = String::from("death_id");
    for name in causes.names() {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",top_cause\n");
    for ((id, probs), &top) in cls.death_ids.iter().zip(&cls.probs).zip(&cls.top) {
        out.push_str(id);
        for p in probs {
            out.push(',');
            out.push_str(&p.to_string());
        }
        out.push(',');
        out.push_str(causes.name(top));
        out.push('\n');
    }
    out
}
