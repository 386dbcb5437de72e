//! Single-domain latent class base model.
//!
//! Within each cause, a death belongs to one of `K` latent classes drawn from
//! truncated stick-breaking weights `nu_c`, and its symptoms are independent
//! Bernoulli draws given the class profile `theta_ck`. Training is a Gibbs
//! sampler over the labeled deaths of one domain; only posterior means of
//! `nu` and `theta` leave the domain, packaged as a [`BaseModelSummary`].
//! The training-domain cause distribution is sampled for completeness but is
//! deliberately not part of the summary.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{cause_counts, Dataset, SymptomValue};
use crate::stats::{ln_gamma, log_sum_exp, sample_beta, sample_dirichlet, sample_log_categorical, SeededRng};
use rand::{Rng, SeedableRng};

/// Profiles are kept away from 0 and 1 so that log-likelihoods stay finite.
pub const THETA_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum LcmError {
    #[error("no labeled deaths to train on")]
    EmptyDataset,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("invalid sampler settings: {0}")]
    InvalidGibbs(String),
    #[error("cause {0} is absent from this model")]
    AbsentCause(usize),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("enumeration needs p <= 20, got {0}")]
    TooManySymptoms(usize),
    #[error("invalid summary: {0}")]
    InvalidSummary(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LcmHyper {
    /// Latent classes per cause.
    pub k: usize,
    pub alpha_sb: f64,
    pub theta_prior: (f64, f64),
    pub pi_prior: f64,
    pub sparse: bool,
    pub spike_omega_prior: (f64, f64),
    /// Minimum training deaths for a cause to be flagged present.
    pub presence_threshold: usize,
}

impl Default for LcmHyper {
    fn default() -> Self {
        Self {
            k: 5,
            alpha_sb: 1.0,
            theta_prior: (1.0, 1.0),
            pi_prior: 1.0,
            sparse: false,
            spike_omega_prior: (1.0, 1.0),
            presence_threshold: 1,
        }
    }
}

impl LcmHyper {
    pub fn validate(&self) -> Result<(), LcmError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.k == 0 {
            return Err(LcmError::InvalidHyper("k must be >= 1".into()));
        }
        if self.presence_threshold == 0 {
            return Err(LcmError::InvalidHyper("presence_threshold must be >= 1".into()));
        }
        let checks = [
            ("alpha_sb", self.alpha_sb),
            ("theta_prior.a", self.theta_prior.0),
            ("theta_prior.b", self.theta_prior.1),
            ("pi_prior", self.pi_prior),
            ("spike_omega_prior.a", self.spike_omega_prior.0),
            ("spike_omega_prior.b", self.spike_omega_prior.1),
        ];
        for (name, v) in checks {
            if !positive(v) {
                return Err(LcmError::InvalidHyper(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GibbsConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            iterations: 4000,
            burn_in: 2000,
            thin: 1,
            seed: 0,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<(), LcmError> {
        if self.burn_in >= self.iterations {
            return Err(LcmError::InvalidGibbs(format!(
                "burn_in ({}) must be below iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(LcmError::InvalidGibbs("thin must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of retained draws.
    pub fn kept_draws(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }

    pub fn keeps(&self, sweep: usize) -> bool {
        sweep >= self.burn_in && (sweep - self.burn_in) % self.thin == 0
    }
}

/// Spike-and-slab extension of the profile prior.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseState {
    /// C×K×p slab inclusion indicators.
    pub delta: Vec<bool>,
    /// C×K×p slab values.
    pub slab: Vec<f64>,
    /// C×p base rates shared across classes.
    pub mu: Vec<f64>,
    /// Per-cause slab probability.
    pub omega: Vec<f64>,
}

/// Full sampler state for one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct LcmState {
    pub pi_m: Vec<f64>,
    /// C rows of K weights.
    pub nu: Vec<Vec<f64>>,
    /// C×K×p, row-major.
    pub theta: Vec<f64>,
    /// Latent class per training death, in canonical (death id) order.
    pub z: Vec<usize>,
    pub sparse: Option<SparseState>,
}

/// Posterior-mean parameters of one present cause.
#[derive(Debug, Clone, PartialEq)]
pub struct CauseProfile {
    pub nu: Vec<f64>,
    /// K rows of p probabilities.
    pub theta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
}

/// Everything a domain shares: enough to evaluate `p(x | cause)`, nothing about
/// its own cause distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseModelSummary {
    pub domain_id: String,
    pub n_causes: usize,
    pub n_classes: usize,
    pub n_symptoms: usize,
    pub present: Vec<bool>,
    pub n_by_cause: Vec<usize>,
    /// `None` for absent causes; those rows are never read.
    pub profiles: Vec<Option<CauseProfile>>,
    pub cause_list_fingerprint: String,
    pub dict_fingerprint: String,
    pub hyper: LcmHyper,
    pub provenance: Provenance,
}

impl BaseModelSummary {
    /// Check shapes and numeric invariants; `tol` bounds the simplex error of
    /// each `nu` row.
    pub fn validate(&self, tol: f64) -> Result<(), LcmError> {
        let bad = |m: String| Err(LcmError::InvalidSummary(m));
        let c = self.n_causes;
        if self.present.len() != c || self.n_by_cause.len() != c || self.profiles.len() != c {
            return bad(format!("per-cause vectors must have length {c}"));
        }
        if self.n_classes == 0 || self.n_symptoms == 0 {
            return bad("K and p must be positive".into());
        }
        for (ci, (present, profile)) in self.present.iter().zip(&self.profiles).enumerate() {
            match (present, profile) {
                (false, None) => {}
                (true, Some(p)) => {
                    if p.nu.len() != self.n_classes || p.theta.len() != self.n_classes {
                        return bad(format!("cause {ci}: expected {} classes", self.n_classes));
                    }
                    if p.nu.iter().any(|v| !v.is_finite() || *v < 0.0) {
                        return bad(format!("cause {ci}: nu has a negative or non-finite entry"));
                    }
                    let sum: f64 = p.nu.iter().sum();
                    if (sum - 1.0).abs() > tol {
                        return bad(format!("cause {ci}: nu sums to {sum}"));
                    }
                    for row in &p.theta {
                        if row.len() != self.n_symptoms {
                            return bad(format!("cause {ci}: expected {} symptoms", self.n_symptoms));
                        }
                        if let Some(v) = row.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
                            return bad(format!("cause {ci}: theta entry {v} outside (0,1)"));
                        }
                    }
                }
                (true, None) => return bad(format!("cause {ci} flagged present without parameters")),
                (false, Some(_)) => return bad(format!("cause {ci} flagged absent but has parameters")),
            }
        }
        Ok(())
    }

    pub fn profile(&self, cause: usize) -> Result<&CauseProfile, LcmError> {
        self.profiles
            .get(cause)
            .and_then(Option::as_ref)
            .ok_or(LcmError::AbsentCause(cause))
    }
}

/// `log p(x | cause)` under the summary's latent class mixture. Missing cells
/// contribute no factor.
pub fn cond_loglik(s: &BaseModelSummary, x: &[SymptomValue], cause: usize) -> Result<f64, LcmError> {
    if x.len() != s.n_symptoms {
        return Err(LcmError::DimensionMismatch {
            expected: s.n_symptoms,
            found: x.len(),
        });
    }
    let profile = s.profile(cause)?;
    let terms: Vec<f64> = profile
        .nu
        .iter()
        .zip(&profile.theta)
        .map(|(&nu, theta)| {
            let mut acc = nu.ln();
            for (v, &t) in x.iter().zip(theta) {
                match v {
                    SymptomValue::Yes => acc += t.ln(),
                    SymptomValue::No => acc += (1.0 - t).ln(),
                    SymptomValue::Missing => {}
                }
            }
            acc
        })
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Precomputed logs of a summary for bulk likelihood evaluation.
#[derive(Debug, Clone)]
pub struct CompiledSummary {
    n_classes: usize,
    n_symptoms: usize,
    // per cause: (log nu [K], log theta [K*p], log 1-theta [K*p])
    causes: Vec<Option<(Vec<f64>, Vec<f64>, Vec<f64>)>>,
}

impl CompiledSummary {
    pub fn new(s: &BaseModelSummary) -> Self {
        let causes = s
            .profiles
            .iter()
            .map(|p| {
                p.as_ref().map(|p| {
                    let log_nu = p.nu.iter().map(|v| v.ln()).collect();
                    let log_t = p.theta.iter().flatten().map(|t| t.ln()).collect();
                    let log_f = p.theta.iter().flatten().map(|t| (1.0 - t).ln()).collect();
                    (log_nu, log_t, log_f)
                })
            })
            .collect();
        Self {
            n_classes: s.n_classes,
            n_symptoms: s.n_symptoms,
            causes,
        }
    }

    pub fn is_present(&self, cause: usize) -> bool {
        self.causes.get(cause).is_some_and(Option::is_some)
    }

    /// Same value as [`cond_loglik`]; `None` for absent causes.
    pub fn loglik(&self, x: &[SymptomValue], cause: usize) -> Option<f64> {
        let (log_nu, log_t, log_f) = self.causes.get(cause)?.as_ref()?;
        let p = self.n_symptoms;
        let mut terms = Vec::with_capacity(self.n_classes);
        for k in 0..self.n_classes {
            let mut acc = log_nu[k];
            let base = k * p;
            for (j, v) in x.iter().enumerate() {
                match v {
                    SymptomValue::Yes => acc += log_t[base + j],
                    SymptomValue::No => acc += log_f[base + j],
                    SymptomValue::Missing => {}
                }
            }
            terms.push(acc);
        }
        Some(log_sum_exp(&terms))
    }
}

/// Total probability mass over all `2^p` fully observed symptom vectors.
pub fn enumerate_mass(s: &BaseModelSummary, cause: usize) -> Result<f64, LcmError> {
    let p = s.n_symptoms;
    if p > 20 {
        return Err(LcmError::TooManySymptoms(p));
    }
    s.profile(cause)?;
    let mut x = vec![SymptomValue::No; p];
    let mut total = 0.0;
    for mask in 0u32..(1u32 << p) {
        for (j, v) in x.iter_mut().enumerate() {
            *v = if mask >> j & 1 == 1 {
                SymptomValue::Yes
            } else {
                SymptomValue::No
            };
        }
        total += cond_loglik(s, &x, cause)?.exp();
    }
    Ok(total)
}

struct Sampler<'a> {
    hyper: &'a LcmHyper,
    n_causes: usize,
    p: usize,
    /// canonical order
    xs: Vec<&'a [SymptomValue]>,
    ys: Vec<usize>,
    state: LcmState,
    // scratch: yes/no counts C×K×p and class counts C×K
    yes: Vec<u32>,
    no: Vec<u32>,
    class_counts: Vec<usize>,
}

impl<'a> Sampler<'a> {
    fn idx(&self, c: usize, k: usize, j: usize) -> usize {
        (c * self.hyper.k + k) * self.p + j
    }

    fn tally(&mut self) {
        self.yes.iter_mut().for_each(|v| *v = 0);
        self.no.iter_mut().for_each(|v| *v = 0);
        self.class_counts.iter_mut().for_each(|v| *v = 0);
        let kk = self.hyper.k;
        for i in 0..self.xs.len() {
            let (c, k) = (self.ys[i], self.state.z[i]);
            self.class_counts[c * kk + k] += 1;
            let base = (c * kk + k) * self.p;
            for (j, v) in self.xs[i].iter().enumerate() {
                match v {
                    SymptomValue::Yes => self.yes[base + j] += 1,
                    SymptomValue::No => self.no[base + j] += 1,
                    SymptomValue::Missing => {}
                }
            }
        }
    }

    fn update_nu(&mut self, rng: &mut SeededRng, active: &[bool]) {
        let kk = self.hyper.k;
        for c in 0..self.n_causes {
            if !active[c] {
                continue;
            }
            let counts = &self.class_counts[c * kk..(c + 1) * kk];
            let mut remaining = 1.0;
            let mut row = vec![0.0; kk];
            for k in 0..kk - 1 {
                let tail: usize = counts[k + 1..].iter().sum();
                let v = sample_beta(1.0 + counts[k] as f64, self.hyper.alpha_sb + tail as f64, rng);
                row[k] = remaining * v;
                remaining *= 1.0 - v;
            }
            row[kk - 1] = remaining;
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= sum);
            self.state.nu[c] = row;
        }
    }

    fn update_theta_plain(&mut self, rng: &mut SeededRng, active: &[bool]) {
        let (a, b) = self.hyper.theta_prior;
        for c in 0..self.n_causes {
            if !active[c] {
                continue;
            }
            for k in 0..self.hyper.k {
                for j in 0..self.p {
                    let i = self.idx(c, k, j);
                    let t = sample_beta(a + self.yes[i] as f64, b + self.no[i] as f64, rng);
                    self.state.theta[i] = t.clamp(THETA_FLOOR, 1.0 - THETA_FLOOR);
                }
            }
        }
    }

    fn update_theta_sparse(&mut self, rng: &mut SeededRng, active: &[bool]) {
        let (a, b) = self.hyper.theta_prior;
        let (oa, ob) = self.hyper.spike_omega_prior;
        let kk = self.hyper.k;
        let p = self.p;
        let mut sp = self.state.sparse.take().expect("sparse state");
        for c in 0..self.n_causes {
            if !active[c] {
                continue;
            }
            let omega = sp.omega[c];
            // delta with the slab value integrated out
            for k in 0..kk {
                for j in 0..p {
                    let i = self.idx(c, k, j);
                    let (s, f) = (self.yes[i] as f64, self.no[i] as f64);
                    let mu = sp.mu[c * p + j];
                    let log_slab = omega.ln() + ln_gamma(a + s) + ln_gamma(b + f)
                        - ln_gamma(a + b + s + f)
                        - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b));
                    let log_spike = (1.0 - omega).ln() + s * mu.ln() + f * (1.0 - mu).ln();
                    let on = sample_log_categorical(&[log_spike, log_slab], rng) == 1;
                    sp.delta[i] = on;
                    sp.slab[i] = if on {
                        sample_beta(a + s, b + f, rng)
                    } else {
                        sample_beta(a, b, rng)
                    }
                    .clamp(THETA_FLOOR, 1.0 - THETA_FLOOR);
                }
            }
            // base rates pool the spike-classes' counts
            for j in 0..p {
                let (mut s, mut f) = (0.0, 0.0);
                for k in 0..kk {
                    let i = self.idx(c, k, j);
                    if !sp.delta[i] {
                        s += self.yes[i] as f64;
                        f += self.no[i] as f64;
                    }
                }
                sp.mu[c * p + j] = sample_beta(a + s, b + f, rng).clamp(THETA_FLOOR, 1.0 - THETA_FLOOR);
            }
            let on = sp.delta[c * kk * p..(c + 1) * kk * p].iter().filter(|d| **d).count() as f64;
            let off = (kk * p) as f64 - on;
            sp.omega[c] = sample_beta(oa + on, ob + off, rng).clamp(THETA_FLOOR, 1.0 - THETA_FLOOR);
            for k in 0..kk {
                for j in 0..p {
                    let i = self.idx(c, k, j);
                    self.state.theta[i] = if sp.delta[i] { sp.slab[i] } else { sp.mu[c * p + j] };
                }
            }
        }
        self.state.sparse = Some(sp);
    }

    fn update_z(&mut self, rng: &mut SeededRng) {
        let kk = self.hyper.k;
        let p = self.p;
        let log_t: Vec<f64> = self.state.theta.iter().map(|t| t.ln()).collect();
        let log_f: Vec<f64> = self.state.theta.iter().map(|t| (1.0 - t).ln()).collect();
        let mut logw = vec![0.0; kk];
        for i in 0..self.xs.len() {
            let c = self.ys[i];
            if kk == 1 {
                self.state.z[i] = 0;
                continue;
            }
            for (k, w) in logw.iter_mut().enumerate() {
                let base = (c * kk + k) * p;
                let mut acc = self.state.nu[c][k].ln();
                for (j, v) in self.xs[i].iter().enumerate() {
                    match v {
                        SymptomValue::Yes => acc += log_t[base + j],
                        SymptomValue::No => acc += log_f[base + j],
                        SymptomValue::Missing => {}
                    }
                }
                *w = acc;
            }
            self.state.z[i] = sample_log_categorical(&logw, rng);
        }
    }
}

/// Train a base model on one domain's labeled deaths.
///
/// Unlabeled records are ignored; a dataset with no labeled records is an
/// error. Records are sorted by death id before sampling, so the output
/// depends only on the set of records, the hyperparameters and the seed.
pub fn train_lcm(labeled: &Dataset, hyper: &LcmHyper, cfg: &GibbsConfig) -> Result<BaseModelSummary, LcmError> {
    train_lcm_with_state(labeled, hyper, cfg).map(|(s, _)| s)
}

/// [`train_lcm`] that also hands back the final sampler state.
pub fn train_lcm_with_state(
    labeled: &Dataset,
    hyper: &LcmHyper,
    cfg: &GibbsConfig,
) -> Result<(BaseModelSummary, LcmState), LcmError> {
    hyper.validate()?;
    cfg.validate()?;
    let mut order: Vec<usize> = (0..labeled.len())
        .filter(|&i| labeled.records()[i].cause.is_some())
        .collect();
    if order.is_empty() {
        return Err(LcmError::EmptyDataset);
    }
    order.sort_by(|&a, &b| labeled.records()[a].death_id.cmp(&labeled.records()[b].death_id));

    let n_causes = labeled.n_causes();
    let p = labeled.n_symptoms();
    let kk = hyper.k;
    let counts = cause_counts(labeled);
    let present: Vec<bool> = counts.iter().map(|&n| n >= hyper.presence_threshold).collect();
    let active: Vec<bool> = counts.iter().map(|&n| n > 0).collect();

    let mut rng = SeededRng::seed_from_u64(cfg.seed);
    let xs: Vec<&[SymptomValue]> = order.iter().map(|&i| labeled.records()[i].symptoms.as_slice()).collect();
    let ys: Vec<usize> = order.iter().map(|&i| labeled.records()[i].cause.unwrap()).collect();
    let z: Vec<usize> = (0..xs.len()).map(|_| rng.random_range(0..kk)).collect();
    let sparse = hyper.sparse.then(|| SparseState {
        delta: vec![true; n_causes * kk * p],
        slab: vec![0.5; n_causes * kk * p],
        mu: vec![0.5; n_causes * p],
        omega: vec![0.5; n_causes],
    });
    let state = LcmState {
        pi_m: vec![1.0 / n_causes as f64; n_causes],
        nu: vec![vec![1.0 / kk as f64; kk]; n_causes],
        theta: vec![0.5; n_causes * kk * p],
        z,
        sparse,
    };
    let mut sampler = Sampler {
        hyper,
        n_causes,
        p,
        xs,
        ys,
        state,
        yes: vec![0; n_causes * kk * p],
        no: vec![0; n_causes * kk * p],
        class_counts: vec![0; n_causes * kk],
    };

    let mut nu_sum = vec![vec![0.0; kk]; n_causes];
    let mut theta_sum = vec![0.0; n_causes * kk * p];
    let mut kept = 0usize;
    let pi_alpha: Vec<f64> = counts.iter().map(|&n| hyper.pi_prior + n as f64).collect();
    for sweep in 0..cfg.iterations {
        sampler.tally();
        sampler.update_nu(&mut rng, &active);
        if hyper.sparse {
            sampler.update_theta_sparse(&mut rng, &active);
        } else {
            sampler.update_theta_plain(&mut rng, &active);
        }
        sampler.update_z(&mut rng);
        sampler.state.pi_m = sample_dirichlet(&pi_alpha, &mut rng);
        if cfg.keeps(sweep) {
            kept += 1;
            for c in 0..n_causes {
                for k in 0..kk {
                    nu_sum[c][k] += sampler.state.nu[c][k];
                }
            }
            for (acc, t) in theta_sum.iter_mut().zip(&sampler.state.theta) {
                *acc += t;
            }
        }
    }

    let d = kept as f64;
    let profiles = (0..n_causes)
        .map(|c| {
            present[c].then(|| {
                let mut nu: Vec<f64> = nu_sum[c].iter().map(|v| v / d).collect();
                let s: f64 = nu.iter().sum();
                nu.iter_mut().for_each(|v| *v /= s);
                let theta = (0..kk)
                    .map(|k| {
                        (0..p)
                            .map(|j| (theta_sum[(c * kk + k) * p + j] / d).clamp(THETA_FLOOR, 1.0 - THETA_FLOOR))
                            .collect()
                    })
                    .collect();
                CauseProfile { nu, theta }
            })
        })
        .collect();
    let summary = BaseModelSummary {
        domain_id: labeled.domain_id().to_string(),
        n_causes,
        n_classes: kk,
        n_symptoms: p,
        present,
        n_by_cause: counts,
        profiles,
        cause_list_fingerprint: labeled.causes().fingerprint().to_string(),
        dict_fingerprint: labeled.dict().fingerprint().to_string(),
        hyper: hyper.clone(),
        provenance: Provenance {
            tool_version: crate::TOOL_VERSION.to_string(),
            seed: cfg.seed,
            iterations: cfg.iterations,
            burn_in: cfg.burn_in,
        },
    };
    Ok((summary, sampler.state))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::{CauseList, Record, SymptomDictionary};
    use std::sync::Arc;

    pub(crate) fn dataset(c: usize, p: usize, rows: &[(Option<usize>, Vec<SymptomValue>)]) -> Dataset {
        let causes = Arc::new(CauseList::new((0..c).map(|i| format!("c{i}")).collect()).unwrap());
        let dict = Arc::new(SymptomDictionary::new((0..p).map(|j| format!("s{j}")).collect()).unwrap());
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, (y, x))| Record {
                death_id: format!("r{i:04}"),
                symptoms: x.clone(),
                cause: *y,
            })
            .collect();
        Dataset::new("dom", records, causes, dict).unwrap()
    }

    pub(crate) fn manual_summary(nu: Vec<f64>, theta: Vec<Vec<f64>>) -> BaseModelSummary {
        let k = nu.len();
        let p = theta[0].len();
        BaseModelSummary {
            domain_id: "m".into(),
            n_causes: 2,
            n_classes: k,
            n_symptoms: p,
            present: vec![true, false],
            n_by_cause: vec![5, 0],
            profiles: vec![Some(CauseProfile { nu, theta }), None],
            cause_list_fingerprint: "c".into(),
            dict_fingerprint: "d".into(),
            hyper: LcmHyper::default(),
            provenance: Provenance {
                tool_version: "t".into(),
                seed: 0,
                iterations: 1,
                burn_in: 0,
            },
        }
    }

    use SymptomValue::{Missing, No, Yes};

    #[test]
    fn single_factor_loglik() {
        let s = manual_summary(vec![1.0], vec![vec![0.7]]);
        assert!((cond_loglik(&s, &[Yes], 0).unwrap() - 0.7f64.ln()).abs() < 1e-15);
        assert!((cond_loglik(&s, &[No], 0).unwrap() - 0.3f64.ln()).abs() < 1e-15);
        assert_eq!(cond_loglik(&s, &[Missing], 0).unwrap(), 0.0);
        assert!((enumerate_mass(&s, 0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_class_mixture_loglik() {
        let s = manual_summary(vec![0.5, 0.5], vec![vec![0.2], vec![0.8]]);
        // 0.5*0.2 + 0.5*0.8
        assert!((cond_loglik(&s, &[Yes], 0).unwrap() - 0.5f64.ln()).abs() < 1e-14);
        let compiled = CompiledSummary::new(&s);
        assert!((compiled.loglik(&[Yes], 0).unwrap() - 0.5f64.ln()).abs() < 1e-14);
        assert_eq!(compiled.loglik(&[Yes], 1), None);
    }

    #[test]
    fn loglik_errors() {
        let s = manual_summary(vec![1.0], vec![vec![0.7]]);
        assert_eq!(cond_loglik(&s, &[Yes], 1), Err(LcmError::AbsentCause(1)));
        assert!(matches!(
            cond_loglik(&s, &[Yes, No], 0),
            Err(LcmError::DimensionMismatch { .. })
        ));
        let mut big = manual_summary(vec![1.0], vec![vec![0.5; 21]]);
        big.n_symptoms = 21;
        assert_eq!(enumerate_mass(&big, 0), Err(LcmError::TooManySymptoms(21)));
    }

    #[test]
    fn hyper_and_gibbs_validation() {
        let bad = LcmHyper {
            k: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = LcmHyper {
            alpha_sb: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let cfg = GibbsConfig {
            iterations: 10,
            burn_in: 10,
            thin: 1,
            seed: 0,
        };
        assert!(cfg.validate().is_err());
        let cfg = GibbsConfig {
            iterations: 10,
            burn_in: 3,
            thin: 3,
            seed: 0,
        };
        assert_eq!(cfg.kept_draws(), (3..10).filter(|&t| cfg.keeps(t)).count());
    }

    fn quick() -> GibbsConfig {
        GibbsConfig {
            iterations: 3000,
            burn_in: 500,
            thin: 1,
            seed: 11,
        }
    }

    #[test]
    fn k1_matches_conjugate_means() {
        let mut rows = vec![];
        rows.extend(std::iter::repeat_n((Some(0), vec![Yes]), 3));
        rows.push((Some(0), vec![No]));
        rows.extend(std::iter::repeat_n((Some(1), vec![No]), 4));
        let d = dataset(2, 1, &rows);
        let hyper = LcmHyper {
            k: 1,
            ..Default::default()
        };
        let s = train_lcm(&d, &hyper, &quick()).unwrap();
        let t0 = s.profile(0).unwrap().theta[0][0];
        let t1 = s.profile(1).unwrap().theta[0][0];
        assert!((t0 - 4.0 / 6.0).abs() < 0.05, "{t0}");
        assert!((t1 - 1.0 / 6.0).abs() < 0.05, "{t1}");
        assert_eq!(s.profile(0).unwrap().nu, vec![1.0]);
    }

    #[test]
    fn absent_cause_flagged() {
        let d = dataset(3, 2, &[(Some(0), vec![Yes, No]), (Some(1), vec![No, No])]);
        let s = train_lcm(&d, &LcmHyper::default(), &quick()).unwrap();
        assert_eq!(s.present, vec![true, true, false]);
        assert!(s.profiles[2].is_none());
        assert_eq!(cond_loglik(&s, &[Yes, Yes], 2), Err(LcmError::AbsentCause(2)));
        s.validate(1e-10).unwrap();
    }

    #[test]
    fn presence_threshold_is_respected() {
        let d = dataset(
            2,
            1,
            &[(Some(0), vec![Yes]), (Some(0), vec![Yes]), (Some(1), vec![No])],
        );
        let hyper = LcmHyper {
            presence_threshold: 2,
            k: 1,
            ..Default::default()
        };
        let s = train_lcm(&d, &hyper, &quick()).unwrap();
        assert_eq!(s.present, vec![true, false]);
        assert_eq!(s.n_by_cause, vec![2, 1]);
    }

    #[test]
    fn missing_cell_leaves_prior() {
        let d = dataset(2, 1, &[(Some(0), vec![Missing])]);
        let hyper = LcmHyper {
            k: 1,
            ..Default::default()
        };
        let s = train_lcm(&d, &hyper, &quick()).unwrap();
        let t = s.profile(0).unwrap().theta[0][0];
        assert!((t - 0.5).abs() < 0.03, "{t}");
    }

    #[test]
    fn empty_and_unlabeled_rejected() {
        let d = dataset(2, 1, &[(None, vec![Yes])]);
        assert_eq!(
            train_lcm(&d, &LcmHyper::default(), &quick()).unwrap_err(),
            LcmError::EmptyDataset
        );
    }

    #[test]
    fn deterministic_and_order_invariant() {
        let rows: Vec<_> = (0..30)
            .map(|i| (Some(i % 2), vec![if i % 3 == 0 { Yes } else { No }, if i % 5 == 0 { Missing } else { Yes }]))
            .collect();
        let d = dataset(2, 2, &rows);
        let cfg = GibbsConfig {
            iterations: 200,
            burn_in: 100,
            thin: 2,
            seed: 5,
        };
        let hyper = LcmHyper {
            k: 3,
            ..Default::default()
        };
        let a = train_lcm(&d, &hyper, &cfg).unwrap();
        let b = train_lcm(&d, &hyper, &cfg).unwrap();
        assert_eq!(a, b);
        let reversed: Vec<usize> = (0..d.len()).rev().collect();
        let c = train_lcm(&d.subset(&reversed), &hyper, &cfg).unwrap();
        assert_eq!(a, c);
        for cause in 0..2 {
            assert!((enumerate_mass(&a, cause).unwrap() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn sparse_variant_normalizes() {
        let rows: Vec<_> = (0..40)
            .map(|i| {
                let x = (0..5).map(|j| if (i * 7 + j * 3) % 4 == 0 { Yes } else { No }).collect();
                (Some(i % 2), x)
            })
            .collect();
        let d = dataset(2, 5, &rows);
        let hyper = LcmHyper {
            k: 3,
            sparse: true,
            ..Default::default()
        };
        let cfg = GibbsConfig {
            iterations: 400,
            burn_in: 200,
            thin: 1,
            seed: 2,
        };
        let (s, state) = train_lcm_with_state(&d, &hyper, &cfg).unwrap();
        s.validate(1e-10).unwrap();
        assert!(state.sparse.is_some());
        for c in 0..2 {
            assert!((enumerate_mass(&s, c).unwrap() - 1.0).abs() < 1e-8);
        }
    }
}
