//! Summary files and the federation registry.
//!
//! A summary file is a single JSON object with sorted keys and shortest
//! round-trip float formatting, so exporting the same summary twice gives the
//! same bytes. The `checksum` field is the SHA-256 of the compact
//! serialization of every other field.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{CauseList, SymptomDictionary};
use crate::lcm::{BaseModelSummary, CauseProfile, LcmError, LcmHyper, Provenance};

pub const FORMAT_VERSION: &str = "1.0.0";
const SUPPORTED_MAJOR: u64 = 1;

/// Simplex tolerance applied to imported `nu` rows.
pub const IMPORT_SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ExchangeError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(String),
    #[error("{what} fingerprint mismatch: file has {found}, expected {expected}")]
    FingerprintMismatch {
        what: &'static str,
        found: String,
        expected: String,
    },
    #[error("unsupported format version {0}")]
    SchemaVersionUnsupported(String),
    #[error("invalid summary: {0}")]
    InvalidSummary(String),
    #[error("duplicate domain id {0:?}")]
    DuplicateDomainId(String),
    #[error("registry needs at least one summary")]
    EmptyRegistry,
}

impl From<LcmError> for ExchangeError {
    fn from(e: LcmError) -> Self {
        match e {
            LcmError::InvalidSummary(m) => ExchangeError::InvalidSummary(m),
            other => ExchangeError::InvalidSummary(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExchangeError + '_ {
    move |source| ExchangeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn checksum_of(payload: &Map<String, Value>) -> String {
    let compact = serde_json::to_string(payload).expect("json values serialize");
    hex::encode(Sha256::digest(compact.as_bytes()))
}

fn payload(s: &BaseModelSummary) -> Map<String, Value> {
    let nu_bar: Vec<Value> = s
        .profiles
        .iter()
        .map(|p| p.as_ref().map_or(Value::Null, |p| json!(p.nu)))
        .collect();
    let theta_bar: Vec<Value> = s
        .profiles
        .iter()
        .map(|p| p.as_ref().map_or(Value::Null, |p| json!(p.theta)))
        .collect();
    let mut map = Map::new();
    map.insert("format_version".into(), json!(FORMAT_VERSION));
    map.insert("domain_id".into(), json!(s.domain_id));
    map.insert("C".into(), json!(s.n_causes));
    map.insert("K".into(), json!(s.n_classes));
    map.insert("p".into(), json!(s.n_symptoms));
    map.insert("cause_list_fingerprint".into(), json!(s.cause_list_fingerprint));
    map.insert("dict_fingerprint".into(), json!(s.dict_fingerprint));
    map.insert("present".into(), json!(s.present));
    map.insert("n_by_cause".into(), json!(s.n_by_cause));
    map.insert("nu_bar".into(), Value::Array(nu_bar));
    map.insert("theta_bar".into(), Value::Array(theta_bar));
    map.insert("hyper".into(), serde_json::to_value(&s.hyper).expect("hyper serializes"));
    map.insert(
        "provenance".into(),
        serde_json::to_value(&s.provenance).expect("provenance serializes"),
    );
    map
}

/// Canonical file contents for a summary. Refuses invalid summaries (NaN or
/// out-of-range parameters).
pub fn summary_to_string(s: &BaseModelSummary) -> Result<String, ExchangeError> {
    s.validate(IMPORT_SIMPLEX_TOL)?;
    let mut map = payload(s);
    let checksum = checksum_of(&map);
    map.insert("checksum".into(), json!(checksum));
    let mut text = serde_json::to_string_pretty(&Value::Object(map)).expect("json values serialize");
    text.push('\n');
    Ok(text)
}

pub fn export_summary(s: &BaseModelSummary, path: impl AsRef<Path>) -> Result<(), ExchangeError> {
    let path = path.as_ref();
    let text = summary_to_string(s)?;
    std::fs::write(path, text).map_err(io_err(path))
}

fn field<'a>(map: &'a Map<String, Value>, key: &str) -> Result<&'a Value, ExchangeError> {
    map.get(key)
        .ok_or_else(|| ExchangeError::InvalidSummary(format!("missing field {key}")))
}

fn decode<T: serde::de::DeserializeOwned>(map: &Map<String, Value>, key: &str) -> Result<T, ExchangeError> {
    serde_json::from_value(field(map, key)?.clone())
        .map_err(|e| ExchangeError::InvalidSummary(format!("field {key}: {e}")))
}

/// Parse and verify summary text without checking fingerprints.
pub fn summary_from_str(text: &str) -> Result<BaseModelSummary, ExchangeError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| ExchangeError::InvalidSummary(format!("not valid JSON: {e}")))?;
    let Value::Object(mut map) = value else {
        return Err(ExchangeError::InvalidSummary("top level must be an object".into()));
    };
    let version: String = decode(&map, "format_version")?;
    let major = version.split('.').next().and_then(|m| m.parse::<u64>().ok());
    if major != Some(SUPPORTED_MAJOR) {
        return Err(ExchangeError::SchemaVersionUnsupported(version));
    }
    let stored = match map.remove("checksum") {
        Some(Value::String(s)) => s,
        _ => return Err(ExchangeError::InvalidSummary("missing checksum".into())),
    };
    let domain_id: String = decode(&map, "domain_id")?;
    if checksum_of(&map) != stored {
        return Err(ExchangeError::ChecksumMismatch(domain_id));
    }

    let n_causes: usize = decode(&map, "C")?;
    let n_classes: usize = decode(&map, "K")?;
    let n_symptoms: usize = decode(&map, "p")?;
    let present: Vec<bool> = decode(&map, "present")?;
    let nu_bar: Vec<Option<Vec<f64>>> = decode(&map, "nu_bar")?;
    let theta_bar: Vec<Option<Vec<Vec<f64>>>> = decode(&map, "theta_bar")?;
    if nu_bar.len() != n_causes || theta_bar.len() != n_causes {
        return Err(ExchangeError::InvalidSummary(format!(
            "nu_bar/theta_bar must have {n_causes} rows"
        )));
    }
    let profiles = nu_bar
        .into_iter()
        .zip(theta_bar)
        .enumerate()
        .map(|(c, pair)| match pair {
            (Some(nu), Some(theta)) => Ok(Some(CauseProfile { nu, theta })),
            (None, None) => Ok(None),
            _ => Err(ExchangeError::InvalidSummary(format!(
                "cause {c}: nu_bar and theta_bar disagree on presence"
            ))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let hyper: LcmHyper = decode(&map, "hyper")?;
    let provenance: Provenance = decode(&map, "provenance")?;
    let summary = BaseModelSummary {
        domain_id,
        n_causes,
        n_classes,
        n_symptoms,
        present,
        n_by_cause: decode(&map, "n_by_cause")?,
        profiles,
        cause_list_fingerprint: decode(&map, "cause_list_fingerprint")?,
        dict_fingerprint: decode(&map, "dict_fingerprint")?,
        hyper,
        provenance,
    };
    summary.validate(IMPORT_SIMPLEX_TOL)?;
    Ok(summary)
}

pub fn check_fingerprints(
    s: &BaseModelSummary,
    causes: &CauseList,
    dict: &SymptomDictionary,
) -> Result<(), ExchangeError> {
    if s.cause_list_fingerprint != causes.fingerprint() {
        return Err(ExchangeError::FingerprintMismatch {
            what: "cause list",
            found: s.cause_list_fingerprint.clone(),
            expected: causes.fingerprint().to_string(),
        });
    }
    if s.dict_fingerprint != dict.fingerprint() {
        return Err(ExchangeError::FingerprintMismatch {
            what: "symptom dictionary",
            found: s.dict_fingerprint.clone(),
            expected: dict.fingerprint().to_string(),
        });
    }
    Ok(())
}

pub fn import_summary(
    path: impl AsRef<Path>,
    causes: &CauseList,
    dict: &SymptomDictionary,
) -> Result<BaseModelSummary, ExchangeError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let s = summary_from_str(&text)?;
    check_fingerprints(&s, causes, dict)?;
    Ok(s)
}

/// An ordered set of summaries sharing one coordinate system. The order fixes
/// the domain index used for mixture weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationRegistry {
    summaries: Vec<BaseModelSummary>,
    cause_list_fingerprint: String,
    dict_fingerprint: String,
    coverage: Vec<usize>,
}

impl FederationRegistry {
    pub fn new(summaries: Vec<BaseModelSummary>) -> Result<Self, ExchangeError> {
        let first = summaries.first().ok_or(ExchangeError::EmptyRegistry)?;
        let cause_fp = first.cause_list_fingerprint.clone();
        let dict_fp = first.dict_fingerprint.clone();
        let n_causes = first.n_causes;
        let mut ids = HashSet::new();
        let mut coverage = vec![0; n_causes];
        for s in &summaries {
            if s.cause_list_fingerprint != cause_fp {
                return Err(ExchangeError::FingerprintMismatch {
                    what: "cause list",
                    found: s.cause_list_fingerprint.clone(),
                    expected: cause_fp,
                });
            }
            if s.dict_fingerprint != dict_fp {
                return Err(ExchangeError::FingerprintMismatch {
                    what: "symptom dictionary",
                    found: s.dict_fingerprint.clone(),
                    expected: dict_fp,
                });
            }
            if !ids.insert(s.domain_id.clone()) {
                return Err(ExchangeError::DuplicateDomainId(s.domain_id.clone()));
            }
            for (c, &p) in s.present.iter().enumerate() {
                coverage[c] += usize::from(p);
            }
        }
        Ok(Self {
            summaries,
            cause_list_fingerprint: cause_fp,
            dict_fingerprint: dict_fp,
            coverage,
        })
    }

    pub fn summaries(&self) -> &[BaseModelSummary] {
        &self.summaries
    }

    pub fn len(&self) -> usize {
        self.summaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.summaries.is_empty()
    }

    pub fn n_causes(&self) -> usize {
        self.coverage.len()
    }

    pub fn n_symptoms(&self) -> usize {
        self.summaries[0].n_symptoms
    }

    pub fn coverage(&self) -> &[usize] {
        &self.coverage
    }

    pub fn is_complete(&self) -> bool {
        self.coverage.iter().all(|&n| n > 0)
    }

    pub fn uncovered_causes(&self) -> Vec<usize> {
        (0..self.coverage.len()).filter(|&c| self.coverage[c] == 0).collect()
    }

    pub fn cause_list_fingerprint(&self) -> &str {
        &self.cause_list_fingerprint
    }

    pub fn dict_fingerprint(&self) -> &str {
        &self.dict_fingerprint
    }

    pub fn domain_ids(&self) -> Vec<String> {
        self.summaries.iter().map(|s| s.domain_id.clone()).collect()
    }

    /// Registry with one more model appended (the target's local model).
    pub fn with_model(&self, extra: BaseModelSummary) -> Result<Self, ExchangeError> {
        let mut all = self.summaries.clone();
        all.push(extra);
        Self::new(all)
    }

    /// Registry holding only the model at `index`.
    pub fn single(&self, index: usize) -> Self {
        Self::new(vec![self.summaries[index].clone()]).expect("one summary is a valid registry")
    }
}

/// Import every path (in parallel) and assemble a registry in path order.
pub fn build_registry<P: AsRef<Path> + Sync>(
    paths: &[P],
    causes: &CauseList,
    dict: &SymptomDictionary,
) -> Result<FederationRegistry, ExchangeError> {
    if paths.is_empty() {
        return Err(ExchangeError::EmptyRegistry);
    }
    let summaries = paths
        .par_iter()
        .map(|p| import_summary(p, causes, dict))
        .collect::<Result<Vec<_>, _>>()?;
    FederationRegistry::new(summaries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lcm::tests::manual_summary;

    #[test]
    fn export_is_canonical_and_round_trips() {
        let s = manual_summary(vec![0.25, 0.75], vec![vec![0.1, 0.123456789012345], vec![0.9, 1e-9]]);
        let a = summary_to_string(&s).unwrap();
        let b = summary_to_string(&s).unwrap();
        assert_eq!(a, b);
        let back = summary_from_str(&a).unwrap();
        assert_eq!(back, s);
        // keys are sorted
        let c_pos = a.find("\"C\"").unwrap();
        let theta_pos = a.find("\"theta_bar\"").unwrap();
        assert!(c_pos < theta_pos);
        assert!(a.contains("null"));
    }

    #[test]
    fn nan_refused() {
        let mut s = manual_summary(vec![1.0], vec![vec![0.5]]);
        s.profiles[0].as_mut().unwrap().theta[0][0] = f64::NAN;
        assert!(matches!(summary_to_string(&s), Err(ExchangeError::InvalidSummary(_))));
    }

    #[test]
    fn tamper_and_version_detected() {
        let s = manual_summary(vec![1.0], vec![vec![0.5]]);
        let text = summary_to_string(&s).unwrap();
        let tampered = text.replacen("\"domain_id\": \"m\"", "\"domain_id\": \"n\"", 1);
        assert!(matches!(
            summary_from_str(&tampered),
            Err(ExchangeError::ChecksumMismatch(_))
        ));
        let future = text.replacen("\"1.0.0\"", "\"2.0.0\"", 1);
        assert!(matches!(
            summary_from_str(&future),
            Err(ExchangeError::SchemaVersionUnsupported(_))
        ));
    }

    #[test]
    fn registry_rules() {
        let a = manual_summary(vec![1.0], vec![vec![0.5]]);
        let mut b = a.clone();
        b.domain_id = "other".into();
        let reg = FederationRegistry::new(vec![a.clone(), b.clone()]).unwrap();
        assert_eq!(reg.coverage(), &[2, 0]);
        assert!(!reg.is_complete());
        assert_eq!(reg.uncovered_causes(), vec![1]);
        assert!(matches!(
            FederationRegistry::new(vec![a.clone(), a.clone()]),
            Err(ExchangeError::DuplicateDomainId(_))
        ));
        assert!(matches!(FederationRegistry::new(vec![]), Err(ExchangeError::EmptyRegistry)));
        let mut c = b.clone();
        c.domain_id = "third".into();
        c.dict_fingerprint = "zzz".into();
        assert!(matches!(
            FederationRegistry::new(vec![a, c]),
            Err(ExchangeError::FingerprintMismatch { .. })
        ));
    }
}
