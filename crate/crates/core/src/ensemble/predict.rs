use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_simplex, EnsembleError, GlobalPosterior, PhiTensor};
use crate::stats::{argmax, log_sum_exp};

/// Posterior-predictive cause probabilities per death.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub death_ids: Vec<String>,
    pub probs: Vec<Vec<f64>>,
    /// Most likely cause; ties go to the lower index.
    pub top: Vec<usize>,
}

impl Classification {
    pub fn new(death_ids: Vec<String>, probs: Vec<Vec<f64>>) -> Self {
        let top = probs.iter().map(|p| argmax(p)).collect();
        Self { death_ids, probs, top }
    }

    pub fn len(&self) -> usize {
        self.death_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.death_ids.is_empty()
    }

    /// Average predicted probability per cause.
    pub fn mean_probs(&self) -> Vec<f64> {
        super::sampler::column_means(&self.probs)
    }
}

/// Average over posterior draws of `p(Y_i = c | x_i, pi, lambda)`.
pub fn classify(phi: &PhiTensor, post: &GlobalPosterior) -> Result<Classification, EnsembleError> {
    if phi.n_causes() != post.n_causes || phi.n_models() != post.n_models {
        return Err(EnsembleError::DimensionMismatch(format!(
            "phi is {}x{}, posterior is {}x{}",
            phi.n_causes(),
            phi.n_models(),
            post.n_causes,
            post.n_models
        )));
    }
    let (n_causes, n_models) = (phi.n_causes(), phi.n_models());
    // per draw: log(pi_c * lambda_cm), flattened [c][m]
    let log_weights: Vec<Vec<f64>> = post
        .pi_draws
        .iter()
        .zip(&post.lambda_draws)
        .map(|(pi, lambda)| {
            (0..n_causes * n_models)
                .map(|cm| {
                    let l = lambda[cm];
                    if l > 0.0 {
                        pi[cm / n_models].ln() + l.ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect()
        })
        .collect();
    let n_draws = log_weights.len() as f64;
    let probs: Vec<Vec<f64>> = (0..phi.n_deaths())
        .into_par_iter()
        .map(|i| {
            let row = phi.row(i);
            let mut acc = vec![0.0; n_causes];
            let mut per_cause = vec![0.0; n_causes];
            let mut terms = vec![0.0; n_models];
            for lw in &log_weights {
                for (c, pc) in per_cause.iter_mut().enumerate() {
                    for (m, t) in terms.iter_mut().enumerate() {
                        *t = lw[c * n_models + m] + row[c * n_models + m];
                    }
                    *pc = log_sum_exp(&terms);
                }
                let norm = log_sum_exp(&per_cause);
                for (a, pc) in acc.iter_mut().zip(&per_cause) {
                    *a += (pc - norm).exp();
                }
            }
            acc.iter_mut().for_each(|a| *a /= n_draws);
            acc
        })
        .collect();
    Ok(Classification::new(phi.death_ids().to_vec(), probs))
}

/// Exact log-likelihood of `(pi, pi_tilde, lambda)` with the source indicator
/// summed out. Unlabeled deaths contribute `log sum_c sum_m phi pi_c lambda_cm`;
/// a death labeled `y` contributes `log sum_m phi pi~_y lambda_ym`, with
/// `pi~ = pi` when `pi_tilde` is `None`.
pub fn marginal_loglik(
    phi: &PhiTensor,
    pi: &[f64],
    pi_tilde: Option<&[f64]>,
    lambda: &[Vec<f64>],
    labels: Option<&[Option<usize>]>,
) -> Result<f64, EnsembleError> {
    let (n_causes, n_models) = (phi.n_causes(), phi.n_models());
    if pi.len() != n_causes
        || lambda.len() != n_causes
        || lambda.iter().any(|r| r.len() != n_models)
        || pi_tilde.is_some_and(|p| p.len() != n_causes)
    {
        return Err(EnsembleError::DimensionMismatch(format!(
            "parameters do not match C={n_causes}, M={n_models}"
        )));
    }
    if let Some(l) = labels {
        if l.len() != phi.n_deaths() {
            return Err(EnsembleError::DimensionMismatch(format!(
                "{} labels for {} deaths",
                l.len(),
                phi.n_deaths()
            )));
        }
    }
    let pi_lab = pi_tilde.unwrap_or(pi);
    let log_w = |p: &[f64], c: usize, m: usize| {
        let l = lambda[c][m];
        if l > 0.0 && p[c] > 0.0 {
            p[c].ln() + l.ln()
        } else {
            f64::NEG_INFINITY
        }
    };
    let mut total = 0.0;
    let mut terms = Vec::with_capacity(n_causes * n_models);
    for i in 0..phi.n_deaths() {
        terms.clear();
        match labels.and_then(|l| l[i]) {
            None => {
                for c in 0..n_causes {
                    for m in 0..n_models {
                        terms.push(log_w(pi, c, m) + phi.get(i, c, m));
                    }
                }
            }
            Some(y) => {
                for m in 0..n_models {
                    terms.push(log_w(pi_lab, y, m) + phi.get(i, y, m));
                }
            }
        }
        total += log_sum_exp(&terms);
    }
    Ok(total)
}

/// Fold deaths held out of the global fit back into a CSMF estimate:
/// `((n0 - n_h) / n0) * pi_hat_c + n_hc / n0`.
pub fn adjust_csmf(pi_hat: &[f64], n0: usize, heldout_counts: &[usize]) -> Result<Vec<f64>, EnsembleError> {
    if pi_hat.len() != heldout_counts.len() {
        return Err(EnsembleError::DimensionMismatch(format!(
            "{} causes in estimate, {} in held-out counts",
            pi_hat.len(),
            heldout_counts.len()
        )));
    }
    check_simplex(pi_hat, 1e-8, "pi_hat")?;
    let n_h: usize = heldout_counts.iter().sum();
    if n_h > n0 || n0 == 0 {
        return Err(EnsembleError::CountOverflow { heldout: n_h, n0 });
    }
    let n0f = n0 as f64;
    let scale = (n0 - n_h) as f64 / n0f;
    Ok(pi_hat
        .iter()
        .zip(heldout_counts)
        .map(|(p, &h)| scale * p + h as f64 / n0f)
        .collect())
}
