//! Evaluation: accuracy metrics, within-target label-shift scenarios and the
//! leave-one-domain-out driver.

mod lodo;
mod metrics;
mod scenario;

pub use lodo::{
    run_lodo, ComponentRow, ExperimentReport, FailureRow, LodoConfig, LodoError, Method, MethodSummary, Quartiles,
    ReportRow,
};
pub use metrics::{balanced_accuracy, csmf_accuracy, top_cause_accuracy, MetricError};
pub use scenario::{
    make_scenario, Realized, ScenarioError, ScenarioKind, ScenarioParams, ShiftScenario, TruthLedger,
};
