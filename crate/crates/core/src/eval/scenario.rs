use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Record};
use crate::stats::{derive_seed, largest_remainder, sample_beta, sample_dirichlet, stream_rng};

const SCENARIO_SALT: u64 = 0x7363_656e_6172_696f;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("target must be fully labeled to realize a scenario")]
    NotFullyLabeled,
    #[error("cause {0} must be resampled but has no deaths in the target")]
    EmptyCauseForResample(usize),
    #[error("invalid scenario parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// A uniform random subset is labeled.
    RandomSample,
    /// Labeled and unlabeled parts are resampled to independent random CSMFs.
    MildShift,
    /// Each cause's deaths are labeled at a cause-specific `Beta(0.2, 0.2)` rate.
    SevereShift,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::RandomSample => "random_sample",
            Self::MildShift => "mild_shift",
            Self::SevereShift => "severe_shift",
        }
    }

    /// Whether metrics score the whole target (with the labeled deaths folded
    /// back in) rather than the unlabeled part only.
    pub fn full_target_estimand(self) -> bool {
        self == Self::RandomSample
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random_sample" => Ok(Self::RandomSample),
            "mild_shift" => Ok(Self::MildShift),
            "severe_shift" => Ok(Self::SevereShift),
            other => Err(format!(
                "unknown scenario {other:?} (random_sample, mild_shift, severe_shift)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    /// Labeled share for `random_sample`.
    pub label_fraction: f64,
    /// Labeled share of the resampled target for `mild_shift`.
    pub mild_labeled_fraction: f64,
    /// Beta shape of the per-cause labeling rate for `severe_shift`.
    pub severe_beta: f64,
    /// `mild_shift` draws prevalences only over causes present in the target.
    pub mild_present_only: bool,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            label_fraction: 0.2,
            mild_labeled_fraction: 0.2,
            severe_beta: 0.2,
            mild_present_only: true,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.label_fraction) || !open(self.mild_labeled_fraction) {
            return Err(ScenarioError::InvalidParams("label fractions must lie in (0,1)".into()));
        }
        if !(self.severe_beta > 0.0) {
            return Err(ScenarioError::InvalidParams("severe_beta must be positive".into()));
        }
        Ok(())
    }
}

/// Which deaths of the target ended up labeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftScenario {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub params: ScenarioParams,
    /// Ids in the masked dataset; under `mild_shift` copies carry a `#k` suffix.
    pub labeled_ids: Vec<String>,
    pub unlabeled_ids: Vec<String>,
    /// Per-cause labeling rates (`severe_shift`).
    pub realized_q: Option<Vec<f64>>,
    /// Drawn (labeled, unlabeled) CSMFs (`mild_shift`).
    pub realized_pi_pair: Option<(Vec<f64>, Vec<f64>)>,
}

/// Ground truth withheld from methods; only metrics read it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthLedger {
    pub n_causes: usize,
    /// Unlabeled deaths of the masked dataset, in its order.
    pub unlabeled_ids: Vec<String>,
    pub unlabeled_causes: Vec<usize>,
    pub labeled_counts: Vec<usize>,
    pub unlabeled_csmf: Vec<f64>,
    /// CSMF over every death of the masked dataset.
    pub full_csmf: Vec<f64>,
}

impl TruthLedger {
    fn new(n_causes: usize, labeled: &[usize], unlabeled: &[(String, usize)]) -> Self {
        let mut labeled_counts = vec![0; n_causes];
        labeled.iter().for_each(|&c| labeled_counts[c] += 1);
        let mut unl = vec![0usize; n_causes];
        unlabeled.iter().for_each(|(_, c)| unl[*c] += 1);
        let frac = |counts: &[usize]| -> Vec<f64> {
            let n: usize = counts.iter().sum();
            counts.iter().map(|&k| if n > 0 { k as f64 / n as f64 } else { 0.0 }).collect()
        };
        let all: Vec<usize> = labeled_counts.iter().zip(&unl).map(|(a, b)| a + b).collect();
        Self {
            n_causes,
            unlabeled_ids: unlabeled.iter().map(|(id, _)| id.clone()).collect(),
            unlabeled_causes: unlabeled.iter().map(|(_, c)| *c).collect(),
            labeled_counts,
            unlabeled_csmf: frac(&unl),
            full_csmf: frac(&all),
        }
    }

    /// The CSMF a method is scored against under `kind`.
    pub fn estimand(&self, kind: ScenarioKind) -> &[f64] {
        if kind.full_target_estimand() {
            &self.full_csmf
        } else {
            &self.unlabeled_csmf
        }
    }
}

/// A realized scenario. `masked` is what methods see: labeled deaths first,
/// then unlabeled deaths with their causes removed.
#[derive(Debug, Clone)]
pub struct Realized {
    pub scenario: ShiftScenario,
    pub masked: Dataset,
    pub truth: TruthLedger,
}

/// Split a fully labeled target into labeled and unlabeled parts.
pub fn make_scenario(
    target: &Dataset,
    kind: ScenarioKind,
    seed: u64,
    params: &ScenarioParams,
) -> Result<Realized, ScenarioError> {
    params.validate()?;
    if !target.is_fully_labeled() {
        return Err(ScenarioError::NotFullyLabeled);
    }
    let n = target.len();
    let n_causes = target.n_causes();
    let records = target.records();
    let cause_of = |i: usize| records[i].cause.expect("fully labeled");
    let mut rng = stream_rng(derive_seed(seed, SCENARIO_SALT), 0);
    let mut by_cause: Vec<Vec<usize>> = vec![Vec::new(); n_causes];
    (0..n).for_each(|i| by_cause[cause_of(i)].push(i));

    let mut realized_q = None;
    let mut realized_pi_pair = None;
    // (source index, id in masked set)
    let (labeled, unlabeled): (Vec<(usize, String)>, Vec<(usize, String)>) = match kind {
        ScenarioKind::RandomSample => {
            // guard against 0.2 * 100 landing a hair above 20
            let n_lab = ((params.label_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut is_lab = vec![false; n];
            order[..n_lab].iter().for_each(|&i| is_lab[i] = true);
            split_in_order(records, &is_lab)
        }
        ScenarioKind::SevereShift => {
            let q: Vec<f64> = (0..n_causes)
                .map(|_| sample_beta(params.severe_beta, params.severe_beta, &mut rng))
                .collect();
            let mut is_lab = vec![false; n];
            for (c, members) in by_cause.iter().enumerate() {
                let k = (q[c] * members.len() as f64).round() as usize;
                let mut m = members.clone();
                m.shuffle(&mut rng);
                m[..k].iter().for_each(|&i| is_lab[i] = true);
            }
            realized_q = Some(q);
            split_in_order(records, &is_lab)
        }
        ScenarioKind::MildShift => {
            let support: Vec<usize> = (0..n_causes)
                .filter(|&c| !params.mild_present_only || !by_cause[c].is_empty())
                .collect();
            let mut draw = || {
                let w = sample_dirichlet(&vec![1.0; support.len()], &mut rng);
                let mut full = vec![0.0; n_causes];
                support.iter().zip(w).for_each(|(&c, v)| full[c] = v);
                full
            };
            let pi_lab = draw();
            let pi_unl = draw();
            let n_lab = (params.mild_labeled_fraction * n as f64).round() as usize;
            let n_unl = ((1.0 - params.mild_labeled_fraction) * n as f64).round() as usize;
            let lab_counts = largest_remainder(&pi_lab, n_lab);
            let unl_counts = largest_remainder(&pi_unl, n_unl);
            for (c, (&a, &b)) in lab_counts.iter().zip(&unl_counts).enumerate() {
                if a + b > 0 && by_cause[c].is_empty() {
                    return Err(ScenarioError::EmptyCauseForResample(c));
                }
            }
            let mut copies: HashMap<usize, usize> = HashMap::new();
            let mut resample = |counts: &[usize], rng: &mut crate::stats::SeededRng| {
                let mut out = Vec::new();
                for (c, &k) in counts.iter().enumerate() {
                    for _ in 0..k {
                        let i = by_cause[c][rand::Rng::random_range(rng, 0..by_cause[c].len())];
                        let copy = copies.entry(i).or_insert(0);
                        *copy += 1;
                        out.push((i, format!("{}#{}", records[i].death_id, copy)));
                    }
                }
                out
            };
            let lab = resample(&lab_counts, &mut rng);
            let unl = resample(&unl_counts, &mut rng);
            realized_pi_pair = Some((pi_lab, pi_unl));
            (lab, unl)
        }
    };

    let mut masked_records: Vec<Record> = Vec::with_capacity(labeled.len() + unlabeled.len());
    for (i, id) in &labeled {
        masked_records.push(Record {
            death_id: id.clone(),
            symptoms: records[*i].symptoms.clone(),
            cause: records[*i].cause,
        });
    }
    for (i, id) in &unlabeled {
        masked_records.push(Record {
            death_id: id.clone(),
            symptoms: records[*i].symptoms.clone(),
            cause: None,
        });
    }
    let masked = target
        .with_records(target.domain_id(), masked_records).expect("ids are unique by construction");
    let truth = TruthLedger::new(
        n_causes,
        &labeled.iter().map(|(i, _)| cause_of(*i)).collect::<Vec<_>>(),
        &unlabeled
            .iter()
            .map(|(i, id)| (id.clone(), cause_of(*i)))
            .collect::<Vec<_>>(),
    );
    Ok(Realized {
        scenario: ShiftScenario {
            kind,
            seed,
            params: params.clone(),
            labeled_ids: labeled.into_iter().map(|(_, id)| id).collect(),
            unlabeled_ids: unlabeled.into_iter().map(|(_, id)| id).collect(),
            realized_q,
            realized_pi_pair,
        },
        masked,
        truth,
    })
}

type Part = Vec<(usize, String)>;

fn split_in_order(records: &[Record], is_lab: &[bool]) -> (Part, Part) {
    let mut lab = Vec::new();
    let mut unl = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let entry = (i, r.death_id.clone());
        if is_lab[i] {
            lab.push(entry);
        } else {
            unl.push(entry);
        }
    }
    (lab, unl)
}
