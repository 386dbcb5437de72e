use std::sync::Arc;

use bflva_core::data::{CauseList, Dataset, Record, SymptomDictionary, SymptomValue};
use bflva_core::exchange::{summary_from_str, summary_to_string};
use bflva_core::{balanced_accuracy, csmf_accuracy, top_cause_accuracy, train_lcm, GibbsConfig, LcmHyper};
use proptest::prelude::*;

fn coords(c: usize, p: usize) -> (Arc<CauseList>, Arc<SymptomDictionary>) {
    (
        Arc::new(CauseList::new((0..c).map(|i| format!("cause {i}")).collect()).unwrap()),
        Arc::new(SymptomDictionary::new((0..p).map(|j| format!("s{j}")).collect()).unwrap()),
    )
}

fn value() -> impl Strategy<Value = SymptomValue> {
    prop_oneof![Just(SymptomValue::Yes), Just(SymptomValue::No), Just(SymptomValue::Missing)]
}

/// (n_causes, rows of (label, symptoms)) with a fixed symptom count.
fn rows(p: usize) -> impl Strategy<Value = (usize, Vec<(Option<usize>, Vec<SymptomValue>)>)> {
    (2usize..5).prop_flat_map(move |c| {
        let row = (proptest::option::of(0..c), proptest::collection::vec(value(), p));
        (Just(c), proptest::collection::vec(row, 1..40))
    })
}

fn build(c: usize, p: usize, rows: &[(Option<usize>, Vec<SymptomValue>)]) -> Dataset {
    let (causes, dict) = coords(c, p);
    let records = rows
        .iter()
        .enumerate()
        .map(|(i, (y, x))| Record {
            death_id: format!("id-{i}"),
            symptoms: x.clone(),
            cause: *y,
        })
        .collect();
    Dataset::new("d", records, causes, dict).unwrap()
}

fn simplex(c: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.01f64..1.0, c).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip((c, rows) in rows(4)) {
        let d = build(c, 4, &rows);
        let text = d.to_csv_string();
        let back = Dataset::read_csv("d", text.as_bytes(), d.causes().clone(), d.dict().clone()).unwrap();
        prop_assert_eq!(back, d);
    }

    #[test]
    fn summary_round_trip((c, rows) in rows(3), seed in 0u64..1000) {
        // guarantee at least one label so training can run
        let mut rows = rows;
        rows[0].0 = Some(0);
        let d = build(c, 3, &rows);
        let gibbs = GibbsConfig { iterations: 40, burn_in: 20, thin: 1, seed };
        let s = train_lcm(&d, &LcmHyper { k: 2, ..Default::default() }, &gibbs).unwrap();
        let text = summary_to_string(&s).unwrap();
        let back = summary_from_str(&text).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(summary_to_string(&back).unwrap(), text);
    }

    #[test]
    fn csmf_accuracy_bounds(pair in (2usize..8).prop_flat_map(|c| (simplex(c), simplex(c)))) {
        let (a, b) = pair;
        let v = csmf_accuracy(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((csmf_accuracy(&b, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn balanced_equals_top_when_classes_balanced(
        c in 2usize..7,
        per in 1usize..15,
        seed_preds in proptest::collection::vec(0usize..1000, 105),
    ) {
        let truth: Vec<usize> = (0..c * per).map(|i| i % c).collect();
        let pred: Vec<usize> = truth.iter().zip(seed_preds.iter().cycle()).map(|(_, s)| s % c).collect();
        let b = balanced_accuracy(&pred, &truth, c).unwrap();
        let t = top_cause_accuracy(&pred, &truth).unwrap();
        prop_assert_eq!(b.to_bits(), t.to_bits());
    }
}
