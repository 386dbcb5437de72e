//! Confusion-matrix calibration baseline.
//!
//! Each source model is run alone on the target to produce per-death cause
//! predictions. A per-model misclassification matrix is learned from the
//! labeled target deaths under a shrinkage prior toward the identity, and
//! the target CSMF is re-estimated from the unlabeled deaths' predictions.
//!
//! This is the hard-classification variant: each model contributes only its
//! top predicted cause per death, which makes every confusion row conjugate
//! given its concentration.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CauseList, Dataset};
use crate::ensemble::{build_phi_uncovered, fit_single_model, EnsembleConfig, EnsembleError};
use crate::exchange::FederationRegistry;
use crate::stats::{
    argmax, log_dirichlet_density, mean, quantile, sample_dirichlet, sample_log_categorical, sample_log_dirichlet,
    sample_normal, stream_rng,
};

/// Random-walk scale for the Metropolis update of `log gamma`.
pub const LOG_GAMMA_STEP: f64 = 0.3;

pub const METHOD_NOTE: &str = "hard-classification calibration: confusion matrices are estimated from \
each model's top predicted cause, not from its predicted probability vectors";

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("no deaths to calibrate")]
    EmptyPredictions,
    #[error("invalid labels: {0}")]
    InvalidLabels(String),
    #[error("invalid calibration config: {0}")]
    InvalidConfig(String),
    #[error("prediction row ({0}, {1}) is not a simplex")]
    NotASimplex(usize, usize),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

/// `a[i][c][m] = p_m(Y_i = c | x_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTensor {
    n_deaths: usize,
    n_causes: usize,
    n_models: usize,
    /// [i][m][c]
    probs: Vec<f64>,
    death_ids: Vec<String>,
    domain_ids: Vec<String>,
}

impl PredictionTensor {
    /// `per_model[m][i]` is model `m`'s probability vector for death `i`.
    pub fn from_model_rows(
        per_model: &[Vec<Vec<f64>>],
        n_causes: usize,
        death_ids: Vec<String>,
        domain_ids: Vec<String>,
    ) -> Result<Self, CalibrationError> {
        let n = death_ids.len();
        let n_models = per_model.len();
        if domain_ids.len() != n_models || per_model.iter().any(|rows| rows.len() != n) {
            return Err(CalibrationError::InvalidConfig("prediction shapes disagree".into()));
        }
        let mut probs = Vec::with_capacity(n * n_models * n_causes);
        for i in 0..n {
            for (m, rows) in per_model.iter().enumerate() {
                let row = &rows[i];
                let s: f64 = row.iter().sum();
                if row.len() != n_causes || row.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-8 {
                    return Err(CalibrationError::NotASimplex(i, m));
                }
                probs.extend_from_slice(row);
            }
        }
        Ok(Self {
            n_deaths: n,
            n_causes,
            n_models,
            probs,
            death_ids,
            domain_ids,
        })
    }

    pub fn n_deaths(&self) -> usize {
        self.n_deaths
    }

    pub fn n_causes(&self) -> usize {
        self.n_causes
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn death_ids(&self) -> &[String] {
        &self.death_ids
    }

    pub fn domain_ids(&self) -> &[String] {
        &self.domain_ids
    }

    pub fn get(&self, death: usize, cause: usize, model: usize) -> f64 {
        self.row(death, model)[cause]
    }

    pub fn row(&self, death: usize, model: usize) -> &[f64] {
        let start = (death * self.n_models + model) * self.n_causes;
        &self.probs[start..start + self.n_causes]
    }

    /// Top predicted cause of model `m` for death `i`; ties go to the lower index.
    pub fn top(&self, death: usize, model: usize) -> usize {
        argmax(self.row(death, model))
    }
}

/// Run each source model alone on the whole target (with the target's known
/// labels) and record its predictive cause probabilities for every death.
/// Causes a model lacks get probability 0 from that model; the registry need
/// not cover every cause.
pub fn build_predictions(
    reg: &FederationRegistry,
    target: &Dataset,
    cfg: &EnsembleConfig,
) -> Result<PredictionTensor, CalibrationError> {
    let phi = build_phi_uncovered(reg, target)?;
    let ids = target.records().iter().map(|r| r.death_id.clone()).collect();
    if target.is_empty() {
        return PredictionTensor::from_model_rows(&vec![Vec::new(); reg.len()], target.n_causes(), ids, reg.domain_ids());
    }
    let labels = target.labels();
    let labels = labels.iter().any(Option::is_some).then_some(labels.as_slice());
    let per_model = (0..reg.len())
        .map(|m| fit_single_model(&phi, m, labels, cfg).map(|f| f.probs))
        .collect::<Result<Vec<_>, _>>()?;
    PredictionTensor::from_model_rows(&per_model, target.n_causes(), ids, reg.domain_ids())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibConfig {
    /// Gamma shape of the confusion-row concentration.
    pub alpha: f64,
    /// Gamma rate; prior mean of the concentration is `alpha / beta_rate`.
    pub beta_rate: f64,
    /// Off-diagonal leak of the Dirichlet prior on confusion rows.
    pub epsilon: f64,
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            beta_rate: 0.5,
            epsilon: 0.01,
            chains: 3,
            iterations: 4000,
            burn_in: 2000,
            seed: 0,
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        let bad = |m: &str| Err(CalibrationError::InvalidConfig(m.into()));
        if !(self.alpha > 0.0 && self.beta_rate > 0.0 && self.epsilon > 0.0) {
            return bad("alpha, beta_rate and epsilon must be positive");
        }
        if self.chains == 0 {
            return bad("chains must be >= 1");
        }
        if self.burn_in >= self.iterations {
            return bad("burn_in must be below iterations");
        }
        Ok(())
    }

    /// Prior mean of the concentration `gamma`.
    pub fn gamma_prior_mean(&self) -> f64 {
        self.alpha / self.beta_rate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibPosterior {
    pub n_causes: usize,
    pub domain_ids: Vec<String>,
    /// CSMF of the unlabeled deaths, pooled over chains in chain order.
    pub pi_draws: Vec<Vec<f64>>,
    /// Posterior mean confusion matrix per model, rows true cause, columns predicted.
    pub confusion_mean: Vec<Vec<Vec<f64>>>,
    /// Posterior mean concentration per model and cause.
    pub gamma_mean: Vec<Vec<f64>>,
    pub gamma_acceptance: f64,
    pub config: CalibConfig,
}

impl CalibPosterior {
    pub fn pi_mean(&self) -> Vec<f64> {
        (0..self.n_causes)
            .map(|c| mean(&self.pi_draws.iter().map(|d| d[c]).collect::<Vec<_>>()))
            .collect()
    }
}

struct CalibChain {
    pi: Vec<Vec<f64>>,
    confusion_sum: Vec<f64>,
    gamma_sum: Vec<f64>,
    accepted: usize,
    proposed: usize,
}

/// Log density of `log gamma` given one confusion row, up to a constant.
fn log_gamma_target(log_g: f64, row_log: &[f64], c: usize, cfg: &CalibConfig) -> f64 {
    let g = log_g.exp();
    let alpha: Vec<f64> = (0..row_log.len())
        .map(|k| g * (f64::from(u8::from(k == c)) + cfg.epsilon))
        .collect();
    log_dirichlet_density(&alpha, row_log) + cfg.alpha * log_g - cfg.beta_rate * g
}

fn run_chain(
    tops: &[Vec<usize>],
    labels: &[Option<usize>],
    labeled_counts: &[Vec<f64>],
    n_causes: usize,
    cfg: &CalibConfig,
    chain: usize,
) -> CalibChain {
    let n_models = labeled_counts.len() / n_causes;
    let mut rng = stream_rng(cfg.seed, chain as u64);
    let prior_row = |c: usize, g: f64| -> Vec<f64> {
        (0..n_causes)
            .map(|k| g * (f64::from(u8::from(k == c)) + cfg.epsilon))
            .collect()
    };
    let mut log_gamma = vec![cfg.gamma_prior_mean().ln(); n_models * n_causes];
    // [m][c] -> log row over predicted causes
    let mut log_conf: Vec<Vec<f64>> = (0..n_models * n_causes)
        .map(|mc| {
            let c = mc % n_causes;
            let alpha: Vec<f64> = prior_row(c, log_gamma[mc].exp())
                .iter()
                .zip(&labeled_counts[mc])
                .map(|(a, n)| a + n)
                .collect();
            sample_log_dirichlet(&alpha, &mut rng)
        })
        .collect();
    let mut pi = sample_dirichlet(&vec![1.0; n_causes], &mut rng);
    let keep = cfg.iterations - cfg.burn_in;
    let mut out = CalibChain {
        pi: Vec::with_capacity(keep),
        confusion_sum: vec![0.0; n_models * n_causes * n_causes],
        gamma_sum: vec![0.0; n_models * n_causes],
        accepted: 0,
        proposed: 0,
    };
    let mut weights = vec![0.0; n_causes];
    for sweep in 0..cfg.iterations {
        // latent causes of unlabeled deaths
        let mut counts = vec![0usize; n_causes];
        for (i, y) in labels.iter().enumerate() {
            if y.is_some() {
                continue;
            }
            for (c, w) in weights.iter_mut().enumerate() {
                *w = pi[c].ln()
                    + (0..n_models)
                        .map(|m| log_conf[m * n_causes + c][tops[i][m]])
                        .sum::<f64>();
            }
            counts[sample_log_categorical(&weights, &mut rng)] += 1;
        }
        let alpha: Vec<f64> = counts.iter().map(|&n| 1.0 + n as f64).collect();
        pi = sample_dirichlet(&alpha, &mut rng);

        for mc in 0..n_models * n_causes {
            let c = mc % n_causes;
            let alpha: Vec<f64> = prior_row(c, log_gamma[mc].exp())
                .iter()
                .zip(&labeled_counts[mc])
                .map(|(a, n)| a + n)
                .collect();
            log_conf[mc] = sample_log_dirichlet(&alpha, &mut rng);

            let proposal = log_gamma[mc] + LOG_GAMMA_STEP * sample_normal(&mut rng);
            let delta = log_gamma_target(proposal, &log_conf[mc], c, cfg)
                - log_gamma_target(log_gamma[mc], &log_conf[mc], c, cfg);
            let accept = delta >= 0.0 || rng.random::<f64>().ln() < delta;
            if accept {
                log_gamma[mc] = proposal;
            }
            if sweep >= cfg.burn_in {
                out.proposed += 1;
                out.accepted += usize::from(accept);
            }
        }

        if sweep >= cfg.burn_in {
            out.pi.push(pi.clone());
            for (mc, row) in log_conf.iter().enumerate() {
                for (k, l) in row.iter().enumerate() {
                    out.confusion_sum[mc * n_causes + k] += l.exp();
                }
                out.gamma_sum[mc] += log_gamma[mc].exp();
            }
        }
    }
    out
}

/// Posterior draws of the unlabeled deaths' CSMF.
///
/// Confusion rows are learned from the labeled deaths' (true cause, top
/// predicted cause) pairs under `Dir(gamma (e_c + epsilon))` with
/// `gamma ~ Gamma(alpha, beta_rate)`. Unlabeled deaths carry latent causes
/// drawn in proportion to `pi_c * prod_m M^(m)[c, top_i^(m)]`. With no labels
/// the rows stay at the prior, which concentrates near the identity.
pub fn fit_calibration(
    a: &PredictionTensor,
    labels: &[Option<usize>],
    cfg: &CalibConfig,
) -> Result<CalibPosterior, CalibrationError> {
    cfg.validate()?;
    let (n, n_causes, n_models) = (a.n_deaths(), a.n_causes(), a.n_models());
    if n == 0 || n_models == 0 {
        return Err(CalibrationError::EmptyPredictions);
    }
    if labels.len() != n {
        return Err(CalibrationError::InvalidLabels(format!("{} labels for {n} deaths", labels.len())));
    }
    if let Some(bad) = labels.iter().flatten().find(|&&c| c >= n_causes) {
        return Err(CalibrationError::InvalidLabels(format!("cause {bad} out of range")));
    }
    let tops: Vec<Vec<usize>> = (0..n).map(|i| (0..n_models).map(|m| a.top(i, m)).collect()).collect();
    let mut labeled_counts = vec![vec![0.0; n_causes]; n_models * n_causes];
    for (i, y) in labels.iter().enumerate() {
        if let Some(y) = *y {
            for (m, &t) in tops[i].iter().enumerate() {
                labeled_counts[m * n_causes + y][t] += 1.0;
            }
        }
    }
    let chains: Vec<CalibChain> = (0..cfg.chains)
        .into_par_iter()
        .map(|k| run_chain(&tops, labels, &labeled_counts, n_causes, cfg, k))
        .collect();

    let total = (cfg.chains * (cfg.iterations - cfg.burn_in)) as f64;
    let mut confusion = vec![0.0; n_models * n_causes * n_causes];
    let mut gamma = vec![0.0; n_models * n_causes];
    let (mut accepted, mut proposed) = (0, 0);
    let mut pi_draws = Vec::new();
    for ch in chains {
        confusion.iter_mut().zip(&ch.confusion_sum).for_each(|(a, b)| *a += b);
        gamma.iter_mut().zip(&ch.gamma_sum).for_each(|(a, b)| *a += b);
        accepted += ch.accepted;
        proposed += ch.proposed;
        pi_draws.extend(ch.pi);
    }
    let confusion_mean = confusion
        .chunks(n_causes * n_causes)
        .map(|m| m.chunks(n_causes).map(|r| r.iter().map(|v| v / total).collect()).collect())
        .collect();
    let gamma_mean = gamma
        .chunks(n_causes)
        .map(|g| g.iter().map(|v| v / total).collect())
        .collect();
    Ok(CalibPosterior {
        n_causes,
        domain_ids: a.domain_ids().to_vec(),
        pi_draws,
        confusion_mean,
        gamma_mean,
        gamma_acceptance: if proposed > 0 { accepted as f64 / proposed as f64 } else { 0.0 },
        config: cfg.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibCsmfRow {
    pub cause: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibReport {
    pub method: String,
    pub csmf: Vec<CalibCsmfRow>,
    /// Keyed by source domain, rows true cause and columns predicted cause.
    pub confusion: Vec<(String, Vec<Vec<f64>>)>,
    pub gamma_acceptance: f64,
}

impl CalibReport {
    pub fn new(post: &CalibPosterior, causes: &CauseList) -> Self {
        let csmf = (0..post.n_causes)
            .map(|c| {
                let col: Vec<f64> = post.pi_draws.iter().map(|d| d[c]).collect();
                CalibCsmfRow {
                    cause: causes.name(c).to_string(),
                    mean: mean(&col),
                    lower: quantile(&col, 0.025),
                    upper: quantile(&col, 0.975),
                }
            })
            .collect();
        Self {
            method: METHOD_NOTE.into(),
            csmf,
            confusion: post.domain_ids.iter().cloned().zip(post.confusion_mean.iter().cloned()).collect(),
            gamma_acceptance: post.gamma_acceptance,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn one_hot_tensor(tops: &[usize], c: usize) -> PredictionTensor {
        let rows: Vec<Vec<f64>> = tops
            .iter()
            .map(|&t| (0..c).map(|k| f64::from(u8::from(k == t))).collect())
            .collect();
        let ids = (0..tops.len()).map(|i| format!("d{i}")).collect();
        PredictionTensor::from_model_rows(&[rows], c, ids, vec!["m".into()]).unwrap()
    }

    fn small() -> CalibConfig {
        CalibConfig {
            chains: 2,
            iterations: 1500,
            burn_in: 500,
            seed: 5,
            ..Default::default()
        }
    }

    fn freq(tops: &[usize], c: usize) -> Vec<f64> {
        let mut f = vec![0.0; c];
        tops.iter().for_each(|&t| f[t] += 1.0 / tops.len() as f64);
        f
    }

    #[test]
    fn no_labels_reduces_to_top_frequencies() {
        let tops: Vec<usize> = (0..300).map(|i| [0, 0, 1, 2, 0, 1][i % 6]).collect();
        let a = one_hot_tensor(&tops, 3);
        let post = fit_calibration(&a, &vec![None; 300], &small()).unwrap();
        for (p, f) in post.pi_mean().iter().zip(freq(&tops, 3)) {
            assert!((p - f).abs() < 0.05, "{p} vs {f}");
        }
        for pi in &post.pi_draws {
            assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
        for row in &post.confusion_mean[0] {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_labels_track_unlabeled_tops() {
        let tops: Vec<usize> = (0..400).map(|i| if i % 4 == 0 { 1 } else { 0 }).collect();
        let labels: Vec<Option<usize>> = (0..400).map(|i| (i < 100).then_some(tops[i])).collect();
        let post = fit_calibration(&one_hot_tensor(&tops, 2), &labels, &small()).unwrap();
        let f = freq(&tops[100..], 2);
        assert!((post.pi_mean()[0] - f[0]).abs() < 0.05);
    }

    #[test]
    fn constant_classifier_is_uninformative() {
        let tops = vec![0; 200];
        let labels: Vec<Option<usize>> = (0..200).map(|i| (i < 40).then_some(i % 2)).collect();
        // under the default shrinkage the prior itself pulls row 2 toward the
        // identity, which would make the constant prediction informative
        let weak = CalibConfig {
            beta_rate: 50.0,
            ..small()
        };
        let post = fit_calibration(&one_hot_tensor(&tops, 2), &labels, &weak).unwrap();
        for row in &post.confusion_mean[0] {
            assert!(row[0] > 0.95);
        }
        let col: Vec<f64> = post.pi_draws.iter().map(|d| d[0]).collect();
        let width = quantile(&col, 0.975) - quantile(&col, 0.025);
        assert!(width > 0.5, "{width}");
    }

    #[test]
    fn recovers_truth_with_many_labels() {
        let truth_lab = [1.0 / 3.0; 3];
        let truth = [0.6, 0.3, 0.1];
        let confusion = [[0.7, 0.2, 0.1], [0.25, 0.6, 0.15], [0.1, 0.3, 0.6]];
        let mut rng = stream_rng(42, 0);
        let draw = |pi: &[f64], rng: &mut crate::stats::SeededRng| {
            let mut u: f64 = rng.random();
            let mut y = 0;
            while y + 1 < pi.len() && u >= pi[y] {
                u -= pi[y];
                y += 1;
            }
            y
        };
        let mut tops = Vec::new();
        let mut labels = Vec::new();
        for i in 0..4000 {
            let y = if i < 2000 { draw(&truth_lab, &mut rng) } else { draw(&truth, &mut rng) };
            tops.push(draw(&confusion[y], &mut rng));
            labels.push((i < 2000).then_some(y));
        }
        let post = fit_calibration(&one_hot_tensor(&tops, 3), &labels, &small()).unwrap();
        for (p, t) in post.pi_mean().iter().zip(truth) {
            assert!((p - t).abs() < 0.05, "{p} vs {t}");
        }
    }

    #[test]
    fn prior_mean_follows_rate() {
        let weak = CalibConfig {
            beta_rate: 50.0,
            ..Default::default()
        };
        assert_eq!(CalibConfig::default().gamma_prior_mean(), 10.0);
        assert_eq!(weak.gamma_prior_mean(), 0.1);
    }

    #[test]
    fn errors() {
        let a = one_hot_tensor(&[0, 1], 2);
        assert!(matches!(
            fit_calibration(&a, &[None], &small()),
            Err(CalibrationError::InvalidLabels(_))
        ));
        let empty = one_hot_tensor(&[], 2);
        assert!(matches!(
            fit_calibration(&empty, &[], &small()),
            Err(CalibrationError::EmptyPredictions)
        ));
        let bad = CalibConfig {
            epsilon: 0.0,
            ..small()
        };
        assert!(fit_calibration(&a, &[None, None], &bad).is_err());
    }

    #[test]
    fn predictions_delegate_to_single_models() {
        use crate::data::SymptomValue::{No, Yes};
        use crate::testutil::{bernoulli_summary, dataset, summary};
        let b = summary("b", 1, vec![Some((vec![1.0], vec![vec![0.8]])), None, Some((vec![1.0], vec![vec![0.2]]))]);
        let a = bernoulli_summary("a", &[vec![0.9], vec![0.5], vec![0.1]]);
        let reg = FederationRegistry::new(vec![a, b]).unwrap();
        let target = dataset("t", 3, 1, &[(None, vec![Yes]), (None, vec![No]), (Some(0), vec![Yes])]);
        let cfg = EnsembleConfig {
            chains: 1,
            iterations: 200,
            burn_in: 100,
            ..Default::default()
        };
        let pt = build_predictions(&reg, &target, &cfg).unwrap();
        assert_eq!((pt.n_deaths(), pt.n_causes(), pt.n_models()), (3, 3, 2));
        for i in 0..3 {
            assert_eq!(pt.get(i, 1, 1), 0.0);
        }
        let phi = crate::ensemble::build_phi(&reg, &target).unwrap();
        let single = fit_single_model(&phi, 0, Some(&target.labels()), &cfg).unwrap();
        for i in 0..3 {
            assert_eq!(pt.row(i, 0), single.probs[i].as_slice());
        }
        let empty = target.subset(&[]);
        assert_eq!(build_predictions(&reg, &empty, &cfg).unwrap().n_deaths(), 0);
    }
}
