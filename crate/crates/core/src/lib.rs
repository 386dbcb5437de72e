//! Federated latent class ensembles for cause-of-death assignment.
//!
//! Each training domain fits a latent class model to its own labeled deaths
//! and shares only the resulting class-conditional likelihood parameters.
//! A target domain combines those likelihoods as a cause-specific convex
//! mixture and infers its own cause distribution, per-death cause
//! probabilities and the mixture weights by Gibbs sampling.

pub mod calibration;
pub mod data;
pub mod ensemble;
pub mod eval;
pub mod exchange;
pub mod lcm;
pub mod simulate;
pub mod stats;

#[cfg(test)]
pub(crate) mod testutil;

pub use calibration::{build_predictions, fit_calibration, CalibConfig, CalibPosterior, CalibReport, PredictionTensor};
pub use data::{load_dataset, CauseList, DataError, Dataset, Record, SymptomDictionary, SymptomValue};
pub use ensemble::{
    adjust_csmf, build_phi, classify, fit_global, run_variant, Classification, EnsembleConfig, EnsembleError,
    EnsembleVariant, GlobalPosterior, LambdaPrior, PhiTensor, PosteriorReport, VariantConfig,
};
pub use eval::{
    balanced_accuracy, csmf_accuracy, make_scenario, run_lodo, top_cause_accuracy, ExperimentReport, LodoConfig,
    Method, ScenarioKind, ScenarioParams,
};
pub use exchange::{build_registry, export_summary, import_summary, ExchangeError, FederationRegistry};
pub use lcm::{train_lcm, BaseModelSummary, GibbsConfig, LcmError, LcmHyper};
pub use simulate::{simulate, GeneratorSpec, GroundTruth, Simulation};

pub const TOOL_VERSION: &str = concat!("bflva ", env!("CARGO_PKG_VERSION"));
