//! Synthetic multi-domain data from the latent class generative model.
//!
//! Source domains draw each death's cause from their own `pi`, a latent class
//! from `nu_c` and every symptom independently from `theta_ck`. A mixture
//! domain borrows the symptom model: for cause `c` it picks source `m` with
//! probability `lambda_cm` and then generates exactly as that source would,
//! so its class-conditional distribution is a known convex combination.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CauseList, DataError, Dataset, Record, SymptomDictionary, SymptomValue};
use crate::stats::{derive_seed, sample_beta, sample_dirichlet, stream_rng, SeededRng};

const PROFILE_SALT: u64 = 0x7072_6f66_696c_6573;
const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("invalid generator: {0}")]
    InvalidGenerator(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Beta parameters used to draw `theta` for domains that do not give one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaPrior {
    pub a: f64,
    pub b: f64,
}

impl Default for ThetaPrior {
    fn default() -> Self {
        Self { a: 0.5, b: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub id: String,
    pub n: usize,
    pub pi: Vec<f64>,
    /// `C × K`; drawn from a flat Dirichlet when absent.
    #[serde(default)]
    pub nu: Option<Vec<Vec<f64>>>,
    /// `C × K × p`; drawn from `theta_prior` when absent.
    #[serde(default)]
    pub theta: Option<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub id: String,
    pub n: usize,
    pub pi: Vec<f64>,
    /// Ids of the source domains the mixture borrows from, in `lambda` column order.
    pub sources: Vec<String>,
    /// `C × sources.len()`, rows simplices.
    pub lambda: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n_causes: usize,
    pub n_classes: usize,
    pub n_symptoms: usize,
    #[serde(default)]
    pub missing_rate: f64,
    #[serde(default)]
    pub theta_prior: ThetaPrior,
    #[serde(default)]
    pub cause_names: Option<Vec<String>>,
    #[serde(default)]
    pub symptom_names: Option<Vec<String>>,
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    #[serde(default)]
    pub mixtures: Vec<MixtureSpec>,
}

/// Realized generating parameters of one source domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTruth {
    pub id: String,
    pub pi: Vec<f64>,
    pub nu: Vec<Vec<f64>>,
    pub theta: Vec<Vec<Vec<f64>>>,
    /// Cause fractions of the generated deaths.
    pub realized_csmf: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureTruth {
    pub id: String,
    pub pi: Vec<f64>,
    pub sources: Vec<String>,
    pub lambda: Vec<Vec<f64>>,
    pub realized_csmf: Vec<f64>,
    /// Fraction of each cause's deaths generated by each source, `C × sources`.
    pub realized_lambda: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub sources: Vec<SourceTruth>,
    pub mixtures: Vec<MixtureTruth>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub causes: Arc<CauseList>,
    pub dict: Arc<SymptomDictionary>,
    /// Sources first, then mixtures, each fully labeled.
    pub datasets: Vec<Dataset>,
    pub truth: GroundTruth,
}

fn invalid<T>(msg: String) -> Result<T, SimulateError> {
    Err(SimulateError::InvalidGenerator(msg))
}

fn check_simplex(v: &[f64], len: usize, what: &str) -> Result<(), SimulateError> {
    if v.len() != len {
        return invalid(format!("{what} has length {}, expected {len}", v.len()));
    }
    let s: f64 = v.iter().sum();
    if v.iter().any(|x| !(*x >= 0.0)) || (s - 1.0).abs() > SIMPLEX_TOL {
        return invalid(format!("{what} is not a simplex (sum {s})"));
    }
    Ok(())
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<(), SimulateError> {
        let (c, k, p) = (self.n_causes, self.n_classes, self.n_symptoms);
        if c < 2 || k == 0 || p == 0 {
            return invalid("need n_causes >= 2, n_classes >= 1, n_symptoms >= 1".into());
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return invalid(format!("missing_rate {} outside [0,1)", self.missing_rate));
        }
        if !(self.theta_prior.a > 0.0 && self.theta_prior.b > 0.0) {
            return invalid("theta_prior parameters must be positive".into());
        }
        if self.sources.is_empty() {
            return invalid("at least one source domain is required".into());
        }
        if let Some(names) = &self.cause_names {
            if names.len() != c {
                return invalid(format!("{} cause names for {c} causes", names.len()));
            }
        }
        if let Some(names) = &self.symptom_names {
            if names.len() != p {
                return invalid(format!("{} symptom names for {p} symptoms", names.len()));
            }
        }
        let mut ids = std::collections::HashSet::new();
        for s in &self.sources {
            if !ids.insert(s.id.as_str()) {
                return invalid(format!("duplicate domain id {:?}", s.id));
            }
            check_simplex(&s.pi, c, &format!("pi of {}", s.id))?;
            if let Some(nu) = &s.nu {
                if nu.len() != c {
                    return invalid(format!("nu of {} has {} rows, expected {c}", s.id, nu.len()));
                }
                for (ci, row) in nu.iter().enumerate() {
                    check_simplex(row, k, &format!("nu row {ci} of {}", s.id))?;
                }
            }
            if let Some(theta) = &s.theta {
                let shape_ok = theta.len() == c && theta.iter().all(|t| t.len() == k && t.iter().all(|r| r.len() == p));
                if !shape_ok {
                    return invalid(format!("theta of {} must be {c} x {k} x {p}", s.id));
                }
                if theta.iter().flatten().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                    return invalid(format!("theta of {} has entries outside [0,1]", s.id));
                }
            }
        }
        for mix in &self.mixtures {
            if !ids.insert(mix.id.as_str()) {
                return invalid(format!("duplicate domain id {:?}", mix.id));
            }
            check_simplex(&mix.pi, c, &format!("pi of {}", mix.id))?;
            if mix.sources.is_empty() {
                return invalid(format!("mixture {} names no sources", mix.id));
            }
            for src in &mix.sources {
                if !self.sources.iter().any(|s| &s.id == src) {
                    return invalid(format!("mixture {} refers to unknown source {src:?}", mix.id));
                }
            }
            if mix.lambda.len() != c {
                return invalid(format!("lambda of {} has {} rows, expected {c}", mix.id, mix.lambda.len()));
            }
            for (ci, row) in mix.lambda.iter().enumerate() {
                check_simplex(row, mix.sources.len(), &format!("lambda row {ci} of {}", mix.id))?;
            }
        }
        Ok(())
    }
}

fn draw_index(weights: &[f64], rng: &mut SeededRng) -> usize {
    let mut u: f64 = rng.random();
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    // rounding left a sliver past the last positive weight
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

struct Profiles {
    nu: Vec<Vec<f64>>,
    theta: Vec<Vec<Vec<f64>>>,
}

impl Profiles {
    fn symptoms(&self, cause: usize, missing_rate: f64, rng: &mut SeededRng) -> Vec<SymptomValue> {
        let k = draw_index(&self.nu[cause], rng);
        self.theta[cause][k]
            .iter()
            .map(|&t| {
                let yes = rng.random::<f64>() < t;
                if missing_rate > 0.0 && rng.random::<f64>() < missing_rate {
                    SymptomValue::Missing
                } else if yes {
                    SymptomValue::Yes
                } else {
                    SymptomValue::No
                }
            })
            .collect()
    }
}

fn csmf(causes: &[usize], c: usize) -> Vec<f64> {
    let mut f = vec![0.0; c];
    for &y in causes {
        f[y] += 1.0;
    }
    let n = causes.len().max(1) as f64;
    f.iter_mut().for_each(|v| *v /= n);
    f
}

fn records(id: &str, rows: Vec<(usize, Vec<SymptomValue>)>) -> Vec<Record> {
    rows.into_iter()
        .enumerate()
        .map(|(i, (y, x))| Record {
            death_id: format!("{id}-{:06}", i + 1),
            symptoms: x,
            cause: Some(y),
        })
        .collect()
}

/// Generate every domain of `spec`. Each domain has its own random stream, so
/// adding a domain does not change the others.
pub fn simulate(spec: &GeneratorSpec) -> Result<Simulation, SimulateError> {
    spec.validate()?;
    let (c, k, p) = (spec.n_causes, spec.n_classes, spec.n_symptoms);
    let causes = Arc::new(CauseList::new(
        spec.cause_names
            .clone()
            .unwrap_or_else(|| (1..=c).map(|i| format!("cause_{i:02}")).collect()),
    )?);
    let dict = Arc::new(SymptomDictionary::new(
        spec.symptom_names
            .clone()
            .unwrap_or_else(|| (1..=p).map(|j| format!("s{j:03}")).collect()),
    )?);

    let profiles: Vec<Profiles> = spec
        .sources
        .iter()
        .enumerate()
        .map(|(d, s)| {
            let mut rng = stream_rng(derive_seed(spec.seed, PROFILE_SALT), d as u64);
            let nu = s
                .nu
                .clone()
                .unwrap_or_else(|| (0..c).map(|_| sample_dirichlet(&vec![1.0; k], &mut rng)).collect());
            let theta = s.theta.clone().unwrap_or_else(|| {
                (0..c)
                    .map(|_| {
                        (0..k)
                            .map(|_| {
                                (0..p)
                                    .map(|_| sample_beta(spec.theta_prior.a, spec.theta_prior.b, &mut rng))
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            });
            Profiles { nu, theta }
        })
        .collect();

    let mut datasets = Vec::new();
    let mut source_truth = Vec::new();
    for (d, s) in spec.sources.iter().enumerate() {
        let mut rng = stream_rng(spec.seed, d as u64);
        let rows: Vec<(usize, Vec<SymptomValue>)> = (0..s.n)
            .map(|_| {
                let y = draw_index(&s.pi, &mut rng);
                (y, profiles[d].symptoms(y, spec.missing_rate, &mut rng))
            })
            .collect();
        let ys: Vec<usize> = rows.iter().map(|r| r.0).collect();
        source_truth.push(SourceTruth {
            id: s.id.clone(),
            pi: s.pi.clone(),
            nu: profiles[d].nu.clone(),
            theta: profiles[d].theta.clone(),
            realized_csmf: csmf(&ys, c),
        });
        datasets.push(Dataset::new(&s.id, records(&s.id, rows), causes.clone(), dict.clone())?);
    }

    let mut mixture_truth = Vec::new();
    for (t, mix) in spec.mixtures.iter().enumerate() {
        let src_idx: Vec<usize> = mix
            .sources
            .iter()
            .map(|id| spec.sources.iter().position(|s| &s.id == id).expect("validated"))
            .collect();
        let mut rng = stream_rng(spec.seed, (spec.sources.len() + t) as u64);
        let mut used = vec![vec![0usize; src_idx.len()]; c];
        let rows: Vec<(usize, Vec<SymptomValue>)> = (0..mix.n)
            .map(|_| {
                let y = draw_index(&mix.pi, &mut rng);
                let h = draw_index(&mix.lambda[y], &mut rng);
                used[y][h] += 1;
                (y, profiles[src_idx[h]].symptoms(y, spec.missing_rate, &mut rng))
            })
            .collect();
        let ys: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let realized_lambda = used
            .iter()
            .map(|row| {
                let n: usize = row.iter().sum();
                row.iter().map(|&u| if n > 0 { u as f64 / n as f64 } else { 0.0 }).collect()
            })
            .collect();
        mixture_truth.push(MixtureTruth {
            id: mix.id.clone(),
            pi: mix.pi.clone(),
            sources: mix.sources.clone(),
            lambda: mix.lambda.clone(),
            realized_csmf: csmf(&ys, c),
            realized_lambda,
        });
        datasets.push(Dataset::new(&mix.id, records(&mix.id, rows), causes.clone(), dict.clone())?);
    }

    Ok(Simulation {
        causes,
        dict,
        datasets,
        truth: GroundTruth {
            seed: spec.seed,
            sources: source_truth,
            mixtures: mixture_truth,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GeneratorSpec {
        GeneratorSpec {
            seed: 9,
            n_causes: 3,
            n_classes: 2,
            n_symptoms: 20,
            missing_rate: 0.0,
            theta_prior: ThetaPrior::default(),
            cause_names: None,
            symptom_names: None,
            sources: (0..3)
                .map(|d| SourceSpec {
                    id: format!("site{d}"),
                    n: 2000,
                    pi: vec![0.5, 0.3, 0.2],
                    nu: None,
                    theta: None,
                })
                .collect(),
            mixtures: vec![MixtureSpec {
                id: "target".into(),
                n: 500,
                pi: vec![0.2, 0.3, 0.5],
                sources: vec!["site0".into(), "site2".into()],
                lambda: vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]],
            }],
        }
    }

    #[test]
    fn shapes_and_determinism() {
        let a = simulate(&spec()).unwrap();
        assert_eq!(a.datasets.len(), 4);
        assert_eq!(a.datasets[0].len(), 2000);
        assert_eq!(a.datasets[3].len(), 500);
        assert!(a.datasets.iter().all(Dataset::is_fully_labeled));
        let b = simulate(&spec()).unwrap();
        for (x, y) in a.datasets.iter().zip(&b.datasets) {
            assert_eq!(x.to_csv_string(), y.to_csv_string());
        }
        assert_eq!(a.truth, b.truth);
        let m = &a.truth.mixtures[0];
        assert_eq!(m.realized_lambda[0], vec![1.0, 0.0]);
        assert_eq!(m.realized_lambda[2], vec![0.0, 1.0]);
        assert!((m.realized_lambda[1][0] - 0.5).abs() < 0.15);
    }

    #[test]
    fn empirical_rates_follow_theta() {
        let mut s = spec();
        s.sources[0].n = 20_000;
        let sim = simulate(&s).unwrap();
        let truth = &sim.truth.sources[0];
        let d = &sim.datasets[0];
        // marginal P(s_0 = Y | cause 0) = sum_k nu_0k theta_0k0
        let want: f64 = (0..2).map(|k| truth.nu[0][k] * truth.theta[0][k][0]).sum();
        let rows: Vec<_> = d.records().iter().filter(|r| r.cause == Some(0)).collect();
        let got = rows.iter().filter(|r| r.symptoms[0] == SymptomValue::Yes).count() as f64 / rows.len() as f64;
        assert!((got - want).abs() < 0.03, "{got} vs {want}");
    }

    #[test]
    fn missing_cells_appear_at_rate() {
        let mut s = spec();
        s.missing_rate = 0.2;
        let sim = simulate(&s).unwrap();
        let cells: Vec<_> = sim.datasets[0].records().iter().flat_map(|r| r.symptoms.clone()).collect();
        let frac = cells.iter().filter(|v| **v == SymptomValue::Missing).count() as f64 / cells.len() as f64;
        assert!((frac - 0.2).abs() < 0.01);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = spec();
        s.sources[0].nu = Some(vec![vec![0.5, 0.6]; 3]);
        assert!(matches!(simulate(&s), Err(SimulateError::InvalidGenerator(_))));
        let mut s = spec();
        s.mixtures[0].sources[1] = "nowhere".into();
        assert!(matches!(simulate(&s), Err(SimulateError::InvalidGenerator(_))));
        let mut s = spec();
        s.sources[1].pi = vec![0.5, 0.5];
        assert!(matches!(simulate(&s), Err(SimulateError::InvalidGenerator(_))));
        let mut s = spec();
        s.sources[1].id = "site0".into();
        assert!(matches!(simulate(&s), Err(SimulateError::InvalidGenerator(_))));
    }

    #[test]
    fn spec_parses_from_toml() {
        let text = r#"
seed = 3
n_causes = 2
n_classes = 1
n_symptoms = 2

[[sources]]
id = "a"
n = 10
pi = [0.5, 0.5]
theta = [[[0.9, 0.1]], [[0.2, 0.8]]]
nu = [[1.0], [1.0]]
"#;
        let spec: GeneratorSpec = toml::from_str(text).unwrap();
        assert_eq!(simulate(&spec).unwrap().datasets[0].len(), 10);
    }
}
