use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{balanced_accuracy, csmf_accuracy, top_cause_accuracy};
use super::scenario::{make_scenario, Realized, ScenarioError, ScenarioKind, ScenarioParams, TruthLedger};
use crate::calibration::{fit_calibration, CalibConfig, PredictionTensor};
use crate::data::Dataset;
use crate::ensemble::{
    adjust_csmf, build_phi_uncovered, fit_single_model, run_variant, EnsembleConfig, EnsembleVariant, Estimand,
    SingleModelFit, VariantConfig,
};
use crate::exchange::FederationRegistry;
use crate::lcm::{train_lcm, BaseModelSummary, GibbsConfig, LcmError, LcmHyper};
use crate::stats::{argmax, derive_seed, mean, quantile};

const BASE_SALT: u64 = 0x6261_7365;
const LOCAL_SALT: u64 = 0x6c6f_6361_6c;

#[derive(Debug, Error)]
pub enum LodoError {
    #[error("leave-one-domain-out needs at least 2 domains, got {0}")]
    TooFewDomains(usize),
    #[error("domain {0} is not fully labeled")]
    NotFullyLabeled(String),
    #[error("domain {0} uses a different cause list or symptom dictionary")]
    CoordinateMismatch(String),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("training base model for {domain}: {source}")]
    BaseModel { domain: String, source: LcmError },
}

/// A method compared in the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Bfl(EnsembleVariant),
    /// Base model trained on the target's own labeled deaths.
    LocalSelf,
    /// Each training-domain model alone, metrics averaged over models.
    LocalAvg,
    /// Calibration baseline at the given Gamma rate.
    Gbql(f64),
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Self::Bfl(v) => format!("bfl-{v}"),
            Self::LocalSelf => "local-self".into(),
            Self::LocalAvg => "local-avg".into(),
            Self::Gbql(rate) => format!("gbql-{rate}"),
        }
    }

    pub fn all_default() -> Vec<Method> {
        vec![
            Self::Bfl(EnsembleVariant::Plain),
            Self::Bfl(EnsembleVariant::Partial),
            Self::Bfl(EnsembleVariant::Domain),
            Self::Bfl(EnsembleVariant::Mix),
            Self::LocalSelf,
            Self::LocalAvg,
            Self::Gbql(0.5),
            Self::Gbql(50.0),
        ]
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "local-self" => Ok(Self::LocalSelf),
            "local-avg" => Ok(Self::LocalAvg),
            _ => {
                if let Some(v) = s.strip_prefix("bfl-") {
                    return v.parse().map(Self::Bfl);
                }
                if let Some(rate) = s.strip_prefix("gbql-") {
                    return match rate.parse::<f64>() {
                        Ok(r) if r > 0.0 && r.is_finite() => Ok(Self::Gbql(r)),
                        _ => Err(format!("bad calibration rate in {s:?}")),
                    };
                }
                Err(format!(
                    "unknown method {s:?} (bfl-plain, bfl-partial, bfl-domain, bfl-mix, local-self, local-avg, gbql-<rate>)"
                ))
            }
        }
    }
}

impl TryFrom<String> for Method {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LodoConfig {
    pub methods: Vec<Method>,
    pub scenario: ScenarioKind,
    pub scenario_params: ScenarioParams,
    pub seeds: Vec<u64>,
    pub lcm_hyper: LcmHyper,
    pub lcm_gibbs: GibbsConfig,
    pub ensemble: EnsembleConfig,
    pub calibration: CalibConfig,
    /// Wall-clock runtimes make reports differ between runs; off by default.
    pub record_runtime: bool,
}

impl Default for LodoConfig {
    fn default() -> Self {
        Self {
            methods: Method::all_default(),
            scenario: ScenarioKind::RandomSample,
            scenario_params: ScenarioParams::default(),
            seeds: vec![1],
            lcm_hyper: LcmHyper::default(),
            lcm_gibbs: GibbsConfig::default(),
            ensemble: EnsembleConfig::default(),
            calibration: CalibConfig::default(),
            record_runtime: false,
        }
    }
}

impl LodoConfig {
    pub fn validate(&self) -> Result<(), LodoError> {
        let bad = |m: String| Err(LodoError::InvalidConfig(m));
        if self.methods.is_empty() {
            return bad("no methods".into());
        }
        if self.seeds.is_empty() {
            return bad("no seeds".into());
        }
        let names: Vec<String> = self.methods.iter().map(Method::name).collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return bad(format!("method {n} listed twice"));
            }
        }
        self.scenario_params.validate()?;
        self.lcm_hyper.validate().map_err(|e| LodoError::InvalidConfig(e.to_string()))?;
        self.lcm_gibbs.validate().map_err(|e| LodoError::InvalidConfig(e.to_string()))?;
        self.ensemble.validate().map_err(|e| LodoError::InvalidConfig(e.to_string()))?;
        self.calibration.validate().map_err(|e| LodoError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub target_domain: String,
    pub method: String,
    pub seed: u64,
    pub scenario: ScenarioKind,
    pub csmf_acc: f64,
    /// Absent for methods that do not classify individual deaths.
    pub top_acc: Option<f64>,
    pub balanced_acc: Option<f64>,
    pub runtime_s: Option<f64>,
}

/// One training-domain model inside `local-avg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRow {
    pub target_domain: String,
    pub seed: u64,
    pub model_domain: String,
    pub csmf_acc: f64,
    pub top_acc: f64,
    pub balanced_acc: f64,
}

/// A fold or method that produced no result, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub target_domain: String,
    pub seed: u64,
    /// `None` when the whole fold was skipped.
    pub method: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    fn of(values: &[f64]) -> Option<Self> {
        (!values.is_empty()).then(|| Self {
            q1: quantile(values, 0.25),
            median: quantile(values, 0.5),
            q3: quantile(values, 0.75),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub target_domain: String,
    pub method: String,
    pub n_seeds: usize,
    pub csmf_acc: Option<Quartiles>,
    pub top_acc: Option<Quartiles>,
    pub balanced_acc: Option<Quartiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: ScenarioKind,
    /// `full_target` or `unlabeled`.
    pub estimand: String,
    /// How `local-avg` combines its per-model metrics.
    pub local_avg_aggregate: String,
    pub rows: Vec<ReportRow>,
    pub components: Vec<ComponentRow>,
    pub failures: Vec<FailureRow>,
    pub config: LodoConfig,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl ExperimentReport {
    pub const CSV_HEADER: &'static str = "target_domain,method,seed,scenario,csmf_acc,top_acc,balanced_acc,runtime_s";

    /// Long-format CSV, one row per target, method and seed.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.target_domain,
                r.method,
                r.seed,
                r.scenario,
                r.csmf_acc,
                fmt_opt(r.top_acc),
                fmt_opt(r.balanced_acc),
                fmt_opt(r.runtime_s)
            ));
        }
        out
    }

    /// Median and quartiles over seeds, per target and method, in row order.
    pub fn summary(&self) -> Vec<MethodSummary> {
        let mut keys: Vec<(String, String)> = Vec::new();
        for r in &self.rows {
            let k = (r.target_domain.clone(), r.method.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(t, m)| {
                let sel: Vec<&ReportRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.target_domain == t && r.method == m)
                    .collect();
                let csmf: Vec<f64> = sel.iter().map(|r| r.csmf_acc).collect();
                let top: Vec<f64> = sel.iter().filter_map(|r| r.top_acc).collect();
                let bal: Vec<f64> = sel.iter().filter_map(|r| r.balanced_acc).collect();
                MethodSummary {
                    target_domain: t,
                    method: m,
                    n_seeds: sel.len(),
                    csmf_acc: Quartiles::of(&csmf),
                    top_acc: Quartiles::of(&top),
                    balanced_acc: Quartiles::of(&bal),
                }
            })
            .collect()
    }
}

/// What a method hands to the metric layer.
struct Estimate {
    csmf: Vec<f64>,
    /// Top cause per unlabeled death, in truth order.
    tops: Option<Vec<usize>>,
    components: Vec<(String, Vec<f64>, Vec<usize>)>,
}

struct Scores {
    csmf: f64,
    top: Option<f64>,
    balanced: Option<f64>,
}

fn score(truth: &TruthLedger, kind: ScenarioKind, csmf: &[f64], tops: Option<&[usize]>) -> Result<Scores, String> {
    let csmf = csmf_accuracy(csmf, truth.estimand(kind)).map_err(|e| e.to_string())?;
    let (top, balanced) = match tops {
        Some(t) if !truth.unlabeled_causes.is_empty() => (
            Some(top_cause_accuracy(t, &truth.unlabeled_causes).map_err(|e| e.to_string())?),
            Some(balanced_accuracy(t, &truth.unlabeled_causes, truth.n_causes).map_err(|e| e.to_string())?),
        ),
        _ => (None, None),
    };
    Ok(Scores { csmf, top, balanced })
}

struct Unit<'a> {
    target: &'a Dataset,
    seed: u64,
    realized: Realized,
    reg: FederationRegistry,
    ens: EnsembleConfig,
    estimand: Estimand,
    cfg: &'a LodoConfig,
    /// Positions of the unlabeled deaths in the masked dataset.
    unlabeled_pos: Vec<usize>,
}

impl Unit<'_> {
    fn labels(&self) -> Option<Vec<Option<usize>>> {
        let l = self.realized.masked.labels();
        l.iter().any(Option::is_some).then_some(l)
    }

    /// Fold labeled deaths back in for a CSMF estimated on unlabeled deaths only.
    fn finish(&self, pi_unlabeled: Vec<f64>) -> Result<Vec<f64>, String> {
        match self.estimand {
            Estimand::Unlabeled => Ok(pi_unlabeled),
            Estimand::FullTarget => adjust_csmf(
                &pi_unlabeled,
                self.realized.masked.len(),
                &self.realized.truth_free_labeled_counts(),
            )
            .map_err(|e| e.to_string()),
        }
    }

    fn single_fits(&self) -> Result<Vec<SingleModelFit>, String> {
        let phi = build_phi_uncovered(&self.reg, &self.realized.masked).map_err(|e| e.to_string())?;
        let labels = self.labels();
        (0..self.reg.len())
            .map(|m| fit_single_model(&phi, m, labels.as_deref(), &self.ens).map_err(|e| e.to_string()))
            .collect()
    }

    fn run(&self, method: &Method, fits: &mut Option<Vec<SingleModelFit>>) -> Result<Estimate, String> {
        let masked = &self.realized.masked;
        match method {
            Method::Bfl(variant) => {
                let vc = VariantConfig {
                    ensemble: EnsembleConfig {
                        variant: *variant,
                        ..self.ens.clone()
                    },
                    local_hyper: self.cfg.lcm_hyper.clone(),
                    local_gibbs: GibbsConfig {
                        seed: derive_seed(self.seed, LOCAL_SALT),
                        ..self.cfg.lcm_gibbs.clone()
                    },
                    estimand: self.estimand,
                };
                let out = run_variant(&self.reg, masked, &vc).map_err(|e| e.to_string())?;
                let by_id: HashMap<&str, usize> = out
                    .classification
                    .death_ids
                    .iter()
                    .zip(&out.classification.top)
                    .map(|(id, &t)| (id.as_str(), t))
                    .collect();
                let tops = self
                    .realized
                    .truth
                    .unlabeled_ids
                    .iter()
                    .map(|id| by_id.get(id.as_str()).copied())
                    .collect::<Option<Vec<_>>>()
                    .ok_or("classification misses unlabeled deaths")?;
                Ok(Estimate {
                    csmf: out.csmf_estimate,
                    tops: Some(tops),
                    components: Vec::new(),
                })
            }
            Method::LocalSelf => {
                let labeled: Vec<usize> = (0..masked.len()).filter(|&i| masked.records()[i].cause.is_some()).collect();
                if labeled.is_empty() {
                    return Err("no labeled deaths to train a local model".into());
                }
                let local = masked.subset(&labeled);
                let gibbs = GibbsConfig {
                    seed: derive_seed(self.seed, LOCAL_SALT),
                    ..self.cfg.lcm_gibbs.clone()
                };
                let summary = train_lcm(&local, &self.cfg.lcm_hyper, &gibbs).map_err(|e| e.to_string())?;
                let reg = FederationRegistry::new(vec![summary]).map_err(|e| e.to_string())?;
                let rest = masked.subset(&self.unlabeled_pos);
                let phi = build_phi_uncovered(&reg, &rest).map_err(|e| e.to_string())?;
                let fit = fit_single_model(&phi, 0, None, &self.ens).map_err(|e| e.to_string())?;
                let tops = fit.probs.iter().map(|p| argmax(p)).collect();
                Ok(Estimate {
                    csmf: self.finish(fit.pi_mean)?,
                    tops: Some(tops),
                    components: Vec::new(),
                })
            }
            Method::LocalAvg => {
                if fits.is_none() {
                    *fits = Some(self.single_fits()?);
                }
                let fits = fits.as_ref().expect("just filled");
                let components = fits
                    .iter()
                    .zip(self.reg.domain_ids())
                    .map(|(f, id)| {
                        let tops = self.unlabeled_pos.iter().map(|&i| argmax(&f.probs[i])).collect();
                        (id, f.pi_mean.clone(), tops)
                    })
                    .collect();
                Ok(Estimate {
                    csmf: Vec::new(),
                    tops: None,
                    components,
                })
            }
            Method::Gbql(rate) => {
                if fits.is_none() {
                    *fits = Some(self.single_fits()?);
                }
                let fits = fits.as_ref().expect("just filled");
                let rows: Vec<Vec<Vec<f64>>> = fits.iter().map(|f| f.probs.clone()).collect();
                let ids = masked.records().iter().map(|r| r.death_id.clone()).collect();
                let preds = PredictionTensor::from_model_rows(&rows, masked.n_causes(), ids, self.reg.domain_ids())
                    .map_err(|e| e.to_string())?;
                let cc = CalibConfig {
                    beta_rate: *rate,
                    seed: self.seed,
                    ..self.cfg.calibration.clone()
                };
                let post = fit_calibration(&preds, &masked.labels(), &cc).map_err(|e| e.to_string())?;
                Ok(Estimate {
                    csmf: self.finish(post.pi_mean())?,
                    tops: None,
                    components: Vec::new(),
                })
            }
        }
    }
}

impl Realized {
    /// Labeled cause counts as visible in the masked dataset.
    fn truth_free_labeled_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.masked.n_causes()];
        self.masked.records().iter().filter_map(|r| r.cause).for_each(|c| counts[c] += 1);
        counts
    }
}

#[derive(Default)]
struct UnitOutput {
    rows: Vec<(usize, ReportRow)>,
    components: Vec<ComponentRow>,
    failures: Vec<FailureRow>,
}

fn run_unit(unit: &Unit) -> UnitOutput {
    let mut out = UnitOutput::default();
    let target_domain = unit.target.domain_id().to_string();
    let kind = unit.cfg.scenario;
    let mut fits = None;
    for (mi, method) in unit.cfg.methods.iter().enumerate() {
        let started = unit.cfg.record_runtime.then(Instant::now);
        let fail = |reason: String| FailureRow {
            target_domain: target_domain.clone(),
            seed: unit.seed,
            method: Some(method.name()),
            reason,
        };
        let est = match unit.run(method, &mut fits) {
            Ok(e) => e,
            Err(reason) => {
                out.failures.push(fail(reason));
                continue;
            }
        };
        let scores = if est.components.is_empty() {
            score(&unit.realized.truth, kind, &est.csmf, est.tops.as_deref())
        } else {
            // local-avg: score each model, then average the metric values
            let mut per = Vec::new();
            let mut err = None;
            for (model, csmf, tops) in &est.components {
                match score(&unit.realized.truth, kind, csmf, Some(tops)) {
                    Ok(s) => {
                        out.components.push(ComponentRow {
                            target_domain: target_domain.clone(),
                            seed: unit.seed,
                            model_domain: model.clone(),
                            csmf_acc: s.csmf,
                            top_acc: s.top.unwrap_or(f64::NAN),
                            balanced_acc: s.balanced.unwrap_or(f64::NAN),
                        });
                        per.push(s);
                    }
                    Err(e) => err = Some(e),
                }
            }
            match err {
                Some(e) => Err(e),
                None => {
                    let avg = |f: fn(&Scores) -> Option<f64>| -> Option<f64> {
                        per.iter().map(f).collect::<Option<Vec<f64>>>().map(|v| mean(&v))
                    };
                    Ok(Scores {
                        csmf: mean(&per.iter().map(|s| s.csmf).collect::<Vec<_>>()),
                        top: avg(|s| s.top),
                        balanced: avg(|s| s.balanced),
                    })
                }
            }
        };
        match scores {
            Ok(s) => out.rows.push((
                mi,
                ReportRow {
                    target_domain: target_domain.clone(),
                    method: method.name(),
                    seed: unit.seed,
                    scenario: kind,
                    csmf_acc: s.csmf,
                    top_acc: s.top,
                    balanced_acc: s.balanced,
                    runtime_s: started.map(|t| t.elapsed().as_secs_f64()),
                },
            )),
            Err(reason) => out.failures.push(fail(reason)),
        }
    }
    out
}

/// Treat each domain in turn as the target and the others as the federation.
///
/// Base models are trained once per domain and seed and reused across folds.
/// A fold whose training domains leave some cause uncovered is skipped and
/// recorded; so is any single method that fails. Units run in parallel and
/// the report is assembled in (target, method, seed) order.
pub fn run_lodo(domains: &[Dataset], cfg: &LodoConfig) -> Result<ExperimentReport, LodoError> {
    cfg.validate()?;
    if domains.len() < 2 {
        return Err(LodoError::TooFewDomains(domains.len()));
    }
    let first = &domains[0];
    for d in domains {
        if d.causes().fingerprint() != first.causes().fingerprint() || d.dict().fingerprint() != first.dict().fingerprint()
        {
            return Err(LodoError::CoordinateMismatch(d.domain_id().into()));
        }
        if !d.is_fully_labeled() {
            return Err(LodoError::NotFullyLabeled(d.domain_id().into()));
        }
    }

    let jobs: Vec<(usize, usize)> = (0..cfg.seeds.len())
        .flat_map(|s| (0..domains.len()).map(move |d| (s, d)))
        .collect();
    let trained: Vec<BaseModelSummary> = jobs
        .par_iter()
        .map(|&(s, d)| {
            let gibbs = GibbsConfig {
                seed: derive_seed(cfg.seeds[s], BASE_SALT + d as u64),
                ..cfg.lcm_gibbs.clone()
            };
            train_lcm(&domains[d], &cfg.lcm_hyper, &gibbs).map_err(|source| LodoError::BaseModel {
                domain: domains[d].domain_id().into(),
                source,
            })
        })
        .collect::<Result<_, _>>()?;
    let base = |s: usize, d: usize| &trained[s * domains.len() + d];

    let estimand = if cfg.scenario.full_target_estimand() {
        Estimand::FullTarget
    } else {
        Estimand::Unlabeled
    };
    let units: Vec<(usize, usize)> = (0..domains.len())
        .flat_map(|t| (0..cfg.seeds.len()).map(move |s| (t, s)))
        .collect();
    let outputs: Vec<(usize, usize, UnitOutput)> = units
        .par_iter()
        .map(|&(t, s)| {
            let seed = cfg.seeds[s];
            let target = &domains[t];
            let skip = |reason: String| UnitOutput {
                failures: vec![FailureRow {
                    target_domain: target.domain_id().into(),
                    seed,
                    method: None,
                    reason,
                }],
                ..Default::default()
            };
            let summaries: Vec<BaseModelSummary> =
                (0..domains.len()).filter(|&d| d != t).map(|d| base(s, d).clone()).collect();
            let reg = match FederationRegistry::new(summaries) {
                Ok(r) => r,
                Err(e) => return (t, s, skip(e.to_string())),
            };
            if !reg.is_complete() {
                let names: Vec<&str> = reg.uncovered_causes().iter().map(|&c| target.causes().name(c)).collect();
                return (t, s, skip(format!("training domains do not cover causes {names:?}")));
            }
            let realized = match make_scenario(target, cfg.scenario, seed, &cfg.scenario_params) {
                Ok(r) => r,
                Err(e) => return (t, s, skip(e.to_string())),
            };
            let unlabeled_pos = (0..realized.masked.len())
                .filter(|&i| realized.masked.records()[i].cause.is_none())
                .collect();
            let unit = Unit {
                target,
                seed,
                realized,
                reg,
                ens: EnsembleConfig {
                    seed,
                    tie_pi: cfg.scenario.full_target_estimand(),
                    ..cfg.ensemble.clone()
                },
                estimand,
                cfg,
                unlabeled_pos,
            };
            (t, s, run_unit(&unit))
        })
        .collect();

    let mut keyed_rows = Vec::new();
    let mut components = Vec::new();
    let mut failures = Vec::new();
    for (t, s, out) in outputs {
        keyed_rows.extend(out.rows.into_iter().map(|(m, r)| ((t, m, s), r)));
        components.extend(out.components);
        failures.extend(out.failures);
    }
    keyed_rows.sort_by_key(|(k, _)| *k);
    Ok(ExperimentReport {
        scenario: cfg.scenario,
        estimand: match estimand {
            Estimand::FullTarget => "full_target".into(),
            Estimand::Unlabeled => "unlabeled".into(),
        },
        local_avg_aggregate: "mean".into(),
        rows: keyed_rows.into_iter().map(|(_, r)| r).collect(),
        components,
        failures,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate, GeneratorSpec, SourceSpec, ThetaPrior};

    fn domains(n: usize, c: usize) -> Vec<Dataset> {
        let spec = GeneratorSpec {
            seed: 4,
            n_causes: c,
            n_classes: 1,
            n_symptoms: 8,
            missing_rate: 0.0,
            theta_prior: ThetaPrior { a: 0.4, b: 0.4 },
            cause_names: None,
            symptom_names: None,
            sources: (0..3)
                .map(|d| SourceSpec {
                    id: format!("d{d}"),
                    n,
                    pi: vec![1.0 / c as f64; c],
                    nu: None,
                    theta: None,
                })
                .collect(),
            mixtures: Vec::new(),
        };
        simulate(&spec).unwrap().datasets
    }

    fn quick(methods: Vec<Method>) -> LodoConfig {
        LodoConfig {
            methods,
            seeds: vec![1, 2],
            lcm_hyper: LcmHyper {
                k: 2,
                ..Default::default()
            },
            lcm_gibbs: GibbsConfig {
                iterations: 120,
                burn_in: 60,
                thin: 1,
                seed: 0,
            },
            ensemble: EnsembleConfig {
                chains: 2,
                iterations: 120,
                burn_in: 60,
                ..Default::default()
            },
            calibration: CalibConfig {
                chains: 1,
                iterations: 120,
                burn_in: 60,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn report_shape_and_order() {
        let methods = vec![
            Method::Bfl(EnsembleVariant::Plain),
            Method::Bfl(EnsembleVariant::Domain),
            Method::LocalAvg,
            Method::Gbql(50.0),
        ];
        let report = run_lodo(&domains(60, 3), &quick(methods)).unwrap();
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        assert_eq!(report.rows.len(), 3 * 2 * 4);
        assert_eq!(report.rows[0].method, "bfl-plain");
        assert_eq!(report.rows[1].method, "bfl-plain");
        assert_eq!(report.rows[1].seed, 2);
        assert_eq!(report.rows[2].method, "bfl-domain");
        for r in &report.rows {
            assert!((0.0..=1.0).contains(&r.csmf_acc));
            assert_eq!(r.top_acc.is_none(), r.method.starts_with("gbql"));
        }
        // local-avg is the mean of its two components
        let la = report.rows.iter().find(|r| r.method == "local-avg").unwrap();
        let comps: Vec<&ComponentRow> = report
            .components
            .iter()
            .filter(|c| c.target_domain == la.target_domain && c.seed == la.seed)
            .collect();
        assert_eq!(comps.len(), 2);
        assert!((la.csmf_acc - (comps[0].csmf_acc + comps[1].csmf_acc) / 2.0).abs() < 1e-12);
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 25);
        assert!(csv.lines().nth(1).unwrap().ends_with(",NA"));
        assert_eq!(report.summary().len(), 12);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let cfg = quick(vec![Method::Bfl(EnsembleVariant::Partial), Method::LocalSelf]);
        let d = domains(40, 2);
        let a = run_lodo(&d, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_lodo(&d, &cfg).unwrap());
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn uncovered_fold_is_skipped() {
        let mut d = domains(30, 3);
        // only d0 has cause 2: the fold targeting d0 cannot be covered
        for k in 1..3 {
            let recs = d[k]
                .records()
                .iter()
                .filter(|r| r.cause != Some(2))
                .cloned()
                .collect();
            d[k] = d[k].with_records(d[k].domain_id(), recs).unwrap();
        }
        let report = run_lodo(&d, &quick(vec![Method::Bfl(EnsembleVariant::Plain)])).unwrap();
        let skipped: Vec<_> = report.failures.iter().filter(|f| f.method.is_none()).collect();
        assert_eq!(skipped.len(), 2);
        assert!(skipped.iter().all(|f| f.target_domain == "d0"));
        assert_eq!(report.rows.len(), 4);
    }

    #[test]
    fn guard_failures_are_recorded() {
        let mut cfg = quick(vec![Method::Bfl(EnsembleVariant::Domain)]);
        cfg.scenario_params.label_fraction = 0.05;
        let report = run_lodo(&domains(40, 3), &cfg).unwrap();
        assert!(report.rows.is_empty());
        assert_eq!(report.failures.len(), 6);
        assert!(report.failures[0].reason.contains("labeled deaths"));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::all_default() {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!(Method::Gbql(0.5).name(), "gbql-0.5");
        assert_eq!(Method::Gbql(50.0).name(), "gbql-50");
        assert!("gbql-x".parse::<Method>().is_err());
        assert!("bfl-nope".parse::<Method>().is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let d = domains(20, 2);
        assert!(matches!(run_lodo(&d[..1], &quick(vec![Method::LocalSelf])), Err(LodoError::TooFewDomains(1))));
        let mut cfg = quick(vec![Method::LocalSelf, Method::LocalSelf]);
        assert!(matches!(run_lodo(&d, &cfg), Err(LodoError::InvalidConfig(_))));
        cfg.methods = vec![Method::LocalSelf];
        cfg.seeds.clear();
        assert!(matches!(run_lodo(&d, &cfg), Err(LodoError::InvalidConfig(_))));
    }
}
