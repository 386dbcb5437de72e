//! Global ensemble over the federation's class-conditional likelihoods.
//!
//! The target-domain model is a nested latent class model: a death's cause
//! `Y` is drawn from the target cause distribution `pi`, the contributing
//! source model `H` from the cause-specific weights `lambda_c`, and its
//! symptoms from that source model's conditional likelihood. Only
//! `log p_m(x_i | c)` enters inference, precomputed once in a [`PhiTensor`].

mod phi;
mod predict;
mod report;
mod sampler;
mod single;
mod variant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exchange::ExchangeError;
use crate::lcm::LcmError;

pub use phi::{build_phi, build_phi_uncovered, PhiTensor};
pub use predict::{adjust_csmf, classify, marginal_loglik, Classification};
pub use report::{classification_csv, CsmfRow, LambdaMatrix, PosteriorReport};
pub use sampler::{fit_global, GlobalPosterior};
pub use single::{fit_single_model, SingleModelFit};
pub use variant::{run_variant, Estimand, VariantConfig, VariantOutcome, MIX_SPLIT_SALT};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("{what} fingerprint of the target does not match the registry")]
    FingerprintMismatch { what: &'static str },
    #[error("no model covers causes {0:?}")]
    IncompleteRegistry(Vec<usize>),
    #[error("likelihood tensor has no source for causes {0:?}")]
    IncompletePhi(Vec<usize>),
    #[error("invalid labels: {0}")]
    InvalidLabels(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid ensemble config: {0}")]
    InvalidConfig(String),
    #[error("{have} labeled deaths, need at least {need} to train a local model")]
    InsufficientLocalLabels { have: usize, need: usize },
    #[error("held-out count {heldout} exceeds target size {n0}")]
    CountOverflow { heldout: usize, n0: usize },
    #[error("not a simplex: {0}")]
    NotASimplex(String),
    #[error(transparent)]
    Lcm(#[from] LcmError),
    #[error(transparent)]
    Exchange(#[from] ExchangeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleVariant {
    Plain,
    Partial,
    Domain,
    Mix,
}

impl std::str::FromStr for EnsembleVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(Self::Plain),
            "partial" => Ok(Self::Partial),
            "domain" => Ok(Self::Domain),
            "mix" => Ok(Self::Mix),
            other => Err(format!("unknown variant {other:?} (plain, partial, domain, mix)")),
        }
    }
}

impl std::fmt::Display for EnsembleVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Plain => "plain",
            Self::Partial => "partial",
            Self::Domain => "domain",
            Self::Mix => "mix",
        })
    }
}

/// Prior on the cause-specific source weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaPrior {
    /// Symmetric Dirichlet over the sources that contain the cause; conjugate.
    Dirichlet { concentration: f64 },
    /// Softmax of independent `N(0, sigma^2)` logits, sampled by random-walk
    /// Metropolis within Gibbs.
    LogisticNormal { sigma: f64 },
}

impl Default for LambdaPrior {
    fn default() -> Self {
        Self::Dirichlet { concentration: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub variant: EnsembleVariant,
    /// Labeled deaths share the unlabeled cause distribution.
    pub tie_pi: bool,
    pub lambda_prior: LambdaPrior,
    pub pi_prior_conc: f64,
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub mix_split_fraction: f64,
    /// Initial random-walk scale for the logistic-normal sampler.
    pub mh_step: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            variant: EnsembleVariant::Plain,
            tie_pi: true,
            lambda_prior: LambdaPrior::default(),
            pi_prior_conc: 1.0,
            chains: 4,
            iterations: 4000,
            burn_in: 2000,
            thin: 1,
            seed: 0,
            mix_split_fraction: 0.5,
            mh_step: 0.25,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        let bad = |m: String| Err(EnsembleError::InvalidConfig(m));
        if self.chains == 0 {
            return bad("chains must be >= 1".into());
        }
        if self.burn_in >= self.iterations {
            return bad(format!(
                "burn_in ({}) must be below iterations ({})",
                self.burn_in, self.iterations
            ));
        }
        if self.thin == 0 {
            return bad("thin must be >= 1".into());
        }
        if !(self.mix_split_fraction > 0.0 && self.mix_split_fraction < 1.0) {
            return bad(format!("mix_split_fraction {} outside (0,1)", self.mix_split_fraction));
        }
        if !(self.pi_prior_conc > 0.0) {
            return bad("pi_prior_conc must be positive".into());
        }
        if !(self.mh_step > 0.0) {
            return bad("mh_step must be positive".into());
        }
        match self.lambda_prior {
            LambdaPrior::Dirichlet { concentration } if !(concentration > 0.0) => {
                bad("lambda concentration must be positive".into())
            }
            LambdaPrior::LogisticNormal { sigma } if !(sigma > 0.0) => bad("lambda sigma must be positive".into()),
            _ => Ok(()),
        }
    }

    pub(crate) fn keeps(&self, sweep: usize) -> bool {
        sweep >= self.burn_in && (sweep - self.burn_in) % self.thin == 0
    }

    pub fn draws_per_chain(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Check that `v` is a probability vector within `tol`.
pub(crate) fn check_simplex(v: &[f64], tol: f64, what: &str) -> Result<(), EnsembleError> {
    if v.iter().any(|x| !x.is_finite() || *x < -tol) {
        return Err(EnsembleError::NotASimplex(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(EnsembleError::NotASimplex(format!("{what} sums to {s}")));
    }
    Ok(())
}
