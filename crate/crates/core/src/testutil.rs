//! Fixtures shared by unit tests.

use std::sync::Arc;

use crate::data::{CauseList, Dataset, Record, SymptomDictionary, SymptomValue};
use crate::lcm::{BaseModelSummary, CauseProfile, LcmHyper, Provenance};

pub fn coords(c: usize, p: usize) -> (Arc<CauseList>, Arc<SymptomDictionary>) {
    let causes = CauseList::new((0..c).map(|i| format!("c{i}")).collect()).unwrap();
    let dict = SymptomDictionary::new((0..p).map(|j| format!("s{j}")).collect()).unwrap();
    (Arc::new(causes), Arc::new(dict))
}

pub fn dataset(domain: &str, c: usize, p: usize, rows: &[(Option<usize>, Vec<SymptomValue>)]) -> Dataset {
    let (causes, dict) = coords(c, p);
    let records = rows
        .iter()
        .enumerate()
        .map(|(i, (y, x))| Record {
            death_id: format!("{domain}-{i:05}"),
            symptoms: x.clone(),
            cause: *y,
        })
        .collect();
    Dataset::new(domain, records, causes, dict).unwrap()
}

/// Summary over the coordinate system of [`coords`]; `profiles[c] = None`
/// marks an absent cause.
pub fn summary(domain: &str, p: usize, profiles: Vec<Option<(Vec<f64>, Vec<Vec<f64>>)>>) -> BaseModelSummary {
    let c = profiles.len();
    let (causes, dict) = coords(c, p);
    let k = profiles
        .iter()
        .flatten()
        .map(|(nu, _)| nu.len())
        .next()
        .unwrap_or(1);
    BaseModelSummary {
        domain_id: domain.into(),
        n_causes: c,
        n_classes: k,
        n_symptoms: p,
        present: profiles.iter().map(Option::is_some).collect(),
        n_by_cause: profiles.iter().map(|p| usize::from(p.is_some()) * 10).collect(),
        profiles: profiles
            .into_iter()
            .map(|p| p.map(|(nu, theta)| CauseProfile { nu, theta }))
            .collect(),
        cause_list_fingerprint: causes.fingerprint().into(),
        dict_fingerprint: dict.fingerprint().into(),
        hyper: LcmHyper {
            k,
            ..Default::default()
        },
        provenance: Provenance {
            tool_version: crate::TOOL_VERSION.into(),
            seed: 0,
            iterations: 10,
            burn_in: 5,
        },
    }
}

/// K=1 summary with one Bernoulli probability per cause and symptom.
pub fn bernoulli_summary(domain: &str, theta: &[Vec<f64>]) -> BaseModelSummary {
    let p = theta[0].len();
    summary(
        domain,
        p,
        theta.iter().map(|t| Some((vec![1.0], vec![t.clone()]))).collect(),
    )
}
