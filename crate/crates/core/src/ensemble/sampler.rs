//! Data-augmented Gibbs sampler for `(pi, pi_tilde, lambda)`.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{marginal_loglik, EnsembleConfig, EnsembleError, LambdaPrior, PhiTensor};
use crate::stats::{
    log_dirichlet_density, sample_dirichlet, sample_log_categorical, sample_normal, softmax, split_rhat,
    stream_rng,
};
use rand::Rng;

const RHAT_WARN: f64 = 1.1;
const ADAPT_WINDOW: usize = 50;

/// Pooled posterior draws of the global model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalPosterior {
    pub n_causes: usize,
    pub n_models: usize,
    /// Source order, matching the `m` index of `lambda_draws`.
    pub domain_ids: Vec<String>,
    pub pi_draws: Vec<Vec<f64>>,
    /// Cause distribution of the labeled deaths when it is not tied to `pi`.
    pub pi_tilde_draws: Option<Vec<Vec<f64>>>,
    /// Each draw is `C*M`, row-major by cause; exactly 0 where the source lacks the cause.
    pub lambda_draws: Vec<Vec<f64>>,
    pub log_posterior: Vec<f64>,
    /// Post-burn-in Metropolis acceptance rate (logistic-normal prior only).
    pub acceptance_rate: Option<f64>,
    /// Split-chain R-hat per cause of `pi`; `None` when not computable.
    pub rhat: Vec<Option<f64>>,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub config: EnsembleConfig,
}

impl GlobalPosterior {
    pub fn n_draws(&self) -> usize {
        self.pi_draws.len()
    }

    pub fn pi_mean(&self) -> Vec<f64> {
        column_means(&self.pi_draws)
    }

    pub fn pi_tilde_mean(&self) -> Option<Vec<f64>> {
        self.pi_tilde_draws.as_ref().map(|d| column_means(d))
    }

    /// Posterior mean of lambda as `C` rows of `M`.
    pub fn lambda_mean(&self) -> Vec<Vec<f64>> {
        let flat = column_means(&self.lambda_draws);
        flat.chunks(self.n_models).map(<[f64]>::to_vec).collect()
    }

    /// Draws of `pi_c` for one chain.
    pub fn pi_chain(&self, chain: usize, cause: usize) -> Vec<f64> {
        let start = chain * self.draws_per_chain;
        self.pi_draws[start..start + self.draws_per_chain]
            .iter()
            .map(|d| d[cause])
            .collect()
    }
}

pub(crate) fn column_means(draws: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = draws.first() else {
        return Vec::new();
    };
    let mut acc = vec![0.0; first.len()];
    for d in draws {
        for (a, v) in acc.iter_mut().zip(d) {
            *a += v;
        }
    }
    let n = draws.len() as f64;
    acc.into_iter().map(|a| a / n).collect()
}

struct ChainOutput {
    pi: Vec<Vec<f64>>,
    pi_tilde: Option<Vec<Vec<f64>>>,
    lambda: Vec<Vec<f64>>,
    log_post: Vec<f64>,
    accepted: usize,
    proposed: usize,
}

struct Problem<'a> {
    phi: &'a PhiTensor,
    labels: Vec<Option<usize>>,
    /// allowed sources per cause
    allowed: Vec<Vec<usize>>,
    split_pi: bool,
    cfg: &'a EnsembleConfig,
}

impl Problem<'_> {
    fn lambda_log_prior(&self, lambda: &[f64], beta: &[f64]) -> f64 {
        let m = self.phi.n_models();
        let mut total = 0.0;
        for (c, allowed) in self.allowed.iter().enumerate() {
            match self.cfg.lambda_prior {
                LambdaPrior::Dirichlet { concentration } => {
                    if allowed.len() > 1 {
                        let alpha = vec![concentration; allowed.len()];
                        let logs: Vec<f64> = allowed.iter().map(|&k| lambda[c * m + k].ln()).collect();
                        total += log_dirichlet_density(&alpha, &logs);
                    }
                }
                LambdaPrior::LogisticNormal { sigma } => {
                    for &k in allowed {
                        let b = beta[c * m + k];
                        total += -0.5 * (b / sigma).powi(2) - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
                    }
                }
            }
        }
        total
    }

    fn log_posterior(&self, pi: &[f64], pi_tilde: Option<&[f64]>, lambda: &[f64], beta: &[f64]) -> f64 {
        let conc = vec![self.cfg.pi_prior_conc; pi.len()];
        let mut lp = log_dirichlet_density(&conc, &pi.iter().map(|v| v.ln()).collect::<Vec<_>>());
        if let Some(pt) = pi_tilde {
            lp += log_dirichlet_density(&conc, &pt.iter().map(|v| v.ln()).collect::<Vec<_>>());
        }
        lp += self.lambda_log_prior(lambda, beta);
        let m = self.phi.n_models();
        let rows: Vec<Vec<f64>> = lambda.chunks(m).map(<[f64]>::to_vec).collect();
        let labels = self.labels.iter().any(Option::is_some).then_some(self.labels.as_slice());
        lp + marginal_loglik(self.phi, pi, pi_tilde, &rows, labels).expect("shapes checked")
    }

    fn run_chain(&self, chain: usize) -> ChainOutput {
        let cfg = self.cfg;
        let phi = self.phi;
        let (n_causes, n_models) = (phi.n_causes(), phi.n_models());
        let mut rng = stream_rng(cfg.seed, chain as u64);

        let mut pi = sample_dirichlet(&vec![cfg.pi_prior_conc; n_causes], &mut rng);
        let mut pi_tilde = self
            .split_pi
            .then(|| sample_dirichlet(&vec![cfg.pi_prior_conc; n_causes], &mut rng));
        let mut lambda = vec![0.0; n_causes * n_models];
        let mut beta = vec![0.0; n_causes * n_models];
        for (c, allowed) in self.allowed.iter().enumerate() {
            match cfg.lambda_prior {
                LambdaPrior::Dirichlet { concentration } => {
                    let w = sample_dirichlet(&vec![concentration; allowed.len()], &mut rng);
                    for (&m, v) in allowed.iter().zip(w) {
                        lambda[c * n_models + m] = v;
                    }
                }
                LambdaPrior::LogisticNormal { sigma } => {
                    for &m in allowed {
                        beta[c * n_models + m] = sigma * sample_normal(&mut rng);
                    }
                    set_softmax(&mut lambda, &beta, c, allowed, n_models);
                }
            }
        }

        let keep = cfg.draws_per_chain();
        let mut out = ChainOutput {
            pi: Vec::with_capacity(keep),
            pi_tilde: self.split_pi.then(|| Vec::with_capacity(keep)),
            lambda: Vec::with_capacity(keep),
            log_post: Vec::with_capacity(keep),
            accepted: 0,
            proposed: 0,
        };
        let mut step = cfg.mh_step;
        let (mut win_acc, mut win_prop) = (0usize, 0usize);
        let width = n_causes * n_models;
        let mut weights = vec![0.0; width];
        let mut label_weights = vec![0.0; n_models];
        let mut log_joint = vec![0.0; width];

        for sweep in 0..cfg.iterations {
            // allocation step
            let mut n_unlabeled = vec![0usize; n_causes];
            let mut n_labeled = vec![0usize; n_causes];
            let mut h_counts = vec![0usize; width];
            for (c, &pc) in pi.iter().enumerate() {
                let lpc = pc.ln();
                for m in 0..n_models {
                    let l = lambda[c * n_models + m];
                    log_joint[c * n_models + m] = if l > 0.0 { lpc + l.ln() } else { f64::NEG_INFINITY };
                }
            }
            for i in 0..phi.n_deaths() {
                let row = phi.row(i);
                match self.labels[i] {
                    None => {
                        for (w, (a, b)) in weights.iter_mut().zip(log_joint.iter().zip(row)) {
                            *w = a + b;
                        }
                        let cm = sample_log_categorical(&weights, &mut rng);
                        n_unlabeled[cm / n_models] += 1;
                        h_counts[cm] += 1;
                    }
                    Some(y) => {
                        for (m, w) in label_weights.iter_mut().enumerate() {
                            let l = lambda[y * n_models + m];
                            *w = if l > 0.0 { l.ln() + row[y * n_models + m] } else { f64::NEG_INFINITY };
                        }
                        let m = sample_log_categorical(&label_weights, &mut rng);
                        n_labeled[y] += 1;
                        h_counts[y * n_models + m] += 1;
                    }
                }
            }

            // cause distributions
            let alpha: Vec<f64> = (0..n_causes)
                .map(|c| {
                    let labeled = if self.split_pi { 0 } else { n_labeled[c] };
                    cfg.pi_prior_conc + (n_unlabeled[c] + labeled) as f64
                })
                .collect();
            pi = sample_dirichlet(&alpha, &mut rng);
            if let Some(pt) = pi_tilde.as_mut() {
                let alpha: Vec<f64> = n_labeled.iter().map(|&n| cfg.pi_prior_conc + n as f64).collect();
                *pt = sample_dirichlet(&alpha, &mut rng);
            }

            // source weights
            for (c, allowed) in self.allowed.iter().enumerate() {
                let counts: Vec<f64> = allowed.iter().map(|&m| h_counts[c * n_models + m] as f64).collect();
                match cfg.lambda_prior {
                    LambdaPrior::Dirichlet { concentration } => {
                        let alpha: Vec<f64> = counts.iter().map(|h| concentration + h).collect();
                        let w = sample_dirichlet(&alpha, &mut rng);
                        for (&m, v) in allowed.iter().zip(w) {
                            lambda[c * n_models + m] = v;
                        }
                    }
                    LambdaPrior::LogisticNormal { sigma } => {
                        if allowed.len() < 2 {
                            continue;
                        }
                        let current: Vec<f64> = allowed.iter().map(|&m| beta[c * n_models + m]).collect();
                        let proposal: Vec<f64> =
                            current.iter().map(|b| b + step * sample_normal(&mut rng)).collect();
                        let delta = logistic_normal_target(&proposal, &counts, sigma)
                            - logistic_normal_target(&current, &counts, sigma);
                        let accept = delta >= 0.0 || rng.random::<f64>().ln() < delta;
                        if accept {
                            for (&m, b) in allowed.iter().zip(&proposal) {
                                beta[c * n_models + m] = *b;
                            }
                            set_softmax(&mut lambda, &beta, c, allowed, n_models);
                        }
                        if sweep < cfg.burn_in {
                            win_prop += 1;
                            win_acc += usize::from(accept);
                        } else {
                            out.proposed += 1;
                            out.accepted += usize::from(accept);
                        }
                    }
                }
            }

            // tune the random-walk scale toward 20-40% acceptance during burn-in
            if sweep < cfg.burn_in && (sweep + 1) % ADAPT_WINDOW == 0 && win_prop > 0 {
                let rate = win_acc as f64 / win_prop as f64;
                if rate < 0.2 {
                    step *= 0.8;
                } else if rate > 0.4 {
                    step *= 1.25;
                }
                win_acc = 0;
                win_prop = 0;
            }

            if cfg.keeps(sweep) {
                out.log_post
                    .push(self.log_posterior(&pi, pi_tilde.as_deref(), &lambda, &beta));
                out.pi.push(pi.clone());
                if let (Some(store), Some(pt)) = (out.pi_tilde.as_mut(), pi_tilde.as_ref()) {
                    store.push(pt.clone());
                }
                out.lambda.push(lambda.clone());
            }
        }
        out
    }
}

fn set_softmax(lambda: &mut [f64], beta: &[f64], c: usize, allowed: &[usize], n_models: usize) {
    let logits: Vec<f64> = allowed.iter().map(|&m| beta[c * n_models + m]).collect();
    for (&m, v) in allowed.iter().zip(softmax(&logits)) {
        lambda[c * n_models + m] = v;
    }
}

/// Log density of the allocation counts under softmax(beta) plus the Gaussian prior.
fn logistic_normal_target(beta: &[f64], counts: &[f64], sigma: f64) -> f64 {
    let lse = crate::stats::log_sum_exp(beta);
    let mut t = 0.0;
    for (b, h) in beta.iter().zip(counts) {
        t += h * (b - lse) - 0.5 * (b / sigma).powi(2);
    }
    t
}

/// Sample the global posterior.
///
/// `labels`, when given, has one entry per death; `Some(c)` fixes that death's
/// cause. Chains run in parallel, each on its own random stream, and are
/// pooled in chain order, so results do not depend on the thread count.
pub fn fit_global(
    phi: &PhiTensor,
    labels: Option<&[Option<usize>]>,
    cfg: &EnsembleConfig,
) -> Result<GlobalPosterior, EnsembleError> {
    cfg.validate()?;
    let uncovered = phi.uncovered_causes();
    if !uncovered.is_empty() {
        return Err(EnsembleError::IncompletePhi(uncovered));
    }
    let n = phi.n_deaths();
    let (n_causes, n_models) = (phi.n_causes(), phi.n_models());
    let labels: Vec<Option<usize>> = match labels {
        Some(l) if l.len() != n => {
            return Err(EnsembleError::InvalidLabels(format!(
                "{} labels for {n} deaths",
                l.len()
            )))
        }
        Some(l) => l.to_vec(),
        None => vec![None; n],
    };
    for (i, y) in labels.iter().enumerate() {
        if let Some(y) = *y {
            if y >= n_causes {
                return Err(EnsembleError::InvalidLabels(format!("death {i}: cause {y} out of range")));
            }
            if (0..n_models).all(|m| phi.get(i, y, m) == f64::NEG_INFINITY) {
                return Err(EnsembleError::InvalidLabels(format!(
                    "death {i}: no source model covers its cause {y}"
                )));
            }
        }
    }
    let any_labeled = labels.iter().any(Option::is_some);
    let allowed: Vec<Vec<usize>> = (0..n_causes)
        .map(|c| (0..n_models).filter(|&m| phi.is_present(c, m)).collect())
        .collect();
    let problem = Problem {
        phi,
        labels,
        allowed,
        split_pi: any_labeled && !cfg.tie_pi,
        cfg,
    };

    let outputs: Vec<ChainOutput> = (0..cfg.chains).into_par_iter().map(|k| problem.run_chain(k)).collect();

    let per_chain = cfg.draws_per_chain();
    let rhat: Vec<Option<f64>> = (0..n_causes)
        .map(|c| {
            let seqs: Vec<Vec<f64>> = outputs.iter().map(|o| o.pi.iter().map(|d| d[c]).collect()).collect();
            let r = split_rhat(&seqs);
            r.is_finite().then_some(r)
        })
        .collect();
    for (c, r) in rhat.iter().enumerate() {
        if let Some(r) = r {
            if *r > RHAT_WARN {
                warn!("split R-hat for pi[{c}] is {r:.3} (> {RHAT_WARN}); consider more iterations");
            }
        }
    }
    let (accepted, proposed) = outputs
        .iter()
        .fold((0, 0), |(a, p), o| (a + o.accepted, p + o.proposed));
    let acceptance_rate = matches!(cfg.lambda_prior, LambdaPrior::LogisticNormal { .. })
        .then_some(())
        .and((proposed > 0).then(|| accepted as f64 / proposed as f64));

    let mut pi_draws = Vec::with_capacity(per_chain * cfg.chains);
    let mut pi_tilde_draws = problem.split_pi.then(|| Vec::with_capacity(per_chain * cfg.chains));
    let mut lambda_draws = Vec::with_capacity(per_chain * cfg.chains);
    let mut log_posterior = Vec::with_capacity(per_chain * cfg.chains);
    for o in outputs {
        pi_draws.extend(o.pi);
        if let (Some(all), Some(d)) = (pi_tilde_draws.as_mut(), o.pi_tilde) {
            all.extend(d);
        }
        lambda_draws.extend(o.lambda);
        log_posterior.extend(o.log_post);
    }
    Ok(GlobalPosterior {
        n_causes,
        n_models,
        domain_ids: phi.domain_ids().to_vec(),
        pi_draws,
        pi_tilde_draws,
        lambda_draws,
        log_posterior,
        acceptance_rate,
        rhat,
        chains: cfg.chains,
        draws_per_chain: per_chain,
        config: cfg.clone(),
    })
}
