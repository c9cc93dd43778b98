//! Metrics checked against brute-force recomputation and their algebraic
//! properties.

mod common;

use proptest::prelude::*;

use cdt_core::corpus::{CompositeMultiset, Expansion};
use cdt_core::metrics::{balance, coverage, evaluate_dataset, LogBase};
use cdt_core::taxonomy::CompositeTriplet;

use common::{expanded_triplets, oracle_balance, oracle_coverage, random_labeled_corpus, synthetic_taxonomy};

#[test]
fn metrics_match_oracle_on_randomized_corpora() {
    let taxonomy = synthetic_taxonomy(6, 5, 4);
    for case in 0..100u64 {
        let records = 1 + (case as usize * 13) % 500;
        let corpus = random_labeled_corpus(&taxonomy, records, 3000 + case, 40);
        let expansion = if case % 2 == 0 {
            Expansion::AllCognitionTags
        } else {
            Expansion::FirstCognitionTag
        };
        let multiset = corpus.composites(expansion);
        let expanded = expanded_triplets(&corpus, expansion);

        let got_cov = coverage(&multiset, &taxonomy).unwrap();
        let want_cov = oracle_coverage(&expanded, (6, 5, 4));
        assert!(
            (got_cov - want_cov).abs() <= 1e-9,
            "case {case}: coverage {got_cov} vs {want_cov}"
        );

        let got_bal = balance(&multiset, LogBase::Nats);
        let want_bal = oracle_balance(&expanded);
        assert!(
            (got_bal - want_bal).abs() <= 1e-9,
            "case {case}: balance {got_bal} vs {want_bal}"
        );
    }
}

#[test]
fn metrics_match_oracle_on_200_composite_multiset() {
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand::SeedableRng;

    let taxonomy = synthetic_taxonomy(10, 10, 10);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);

    // 200 distinct cells of the 1000-cell space, random positive counts.
    let mut cells: Vec<(usize, usize, usize)> = (0..10)
        .flat_map(|c| (0..10).flat_map(move |d| (0..10).map(move |t| (c, d, t))))
        .collect();
    cells.shuffle(&mut rng);
    let mut multiset = CompositeMultiset::default();
    let mut expanded: Vec<(String, String, String)> = Vec::new();
    for &(c, d, t) in cells.iter().take(200) {
        let count = rng.random_range(1..50u64);
        let triplet = (format!("C{c}"), format!("D{d}"), format!("T{t}"));
        multiset.add(
            CompositeTriplet::new(triplet.0.clone(), triplet.1.clone(), triplet.2.clone()),
            count,
        );
        for _ in 0..count {
            expanded.push(triplet.clone());
        }
    }

    let cov = coverage(&multiset, &taxonomy).unwrap();
    let bal = balance(&multiset, LogBase::Nats);
    assert!((cov - oracle_coverage(&expanded, (10, 10, 10))).abs() <= 1e-9);
    assert!((cov - 0.2).abs() <= 1e-12);
    assert!((bal - oracle_balance(&expanded)).abs() <= 1e-9);
}

#[test]
fn balance_uniform_equals_log_k() {
    for k in [2u64, 4, 16] {
        let mut multiset = CompositeMultiset::default();
        for i in 0..k {
            multiset.add(CompositeTriplet::new(format!("c{i}"), "d", "t"), 3);
        }
        let b = balance(&multiset, LogBase::Nats);
        assert!(
            (b - (k as f64).ln()).abs() <= 1e-12,
            "k={k}: {b} vs {}",
            (k as f64).ln()
        );
    }
}

fn counts_strategy() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(1u64..50, 1..30)
}

fn multiset_from(counts: &[u64]) -> CompositeMultiset {
    let mut m = CompositeMultiset::default();
    for (i, &count) in counts.iter().enumerate() {
        m.add(CompositeTriplet::new(format!("c{i}"), "d", "t"), count);
    }
    m
}

proptest! {
    /// 0 <= balance <= ln(distinct); 0 iff a single distinct composite.
    #[test]
    fn balance_bounds(counts in counts_strategy()) {
        let m = multiset_from(&counts);
        let b = balance(&m, LogBase::Nats);
        prop_assert!(b >= 0.0);
        prop_assert!(b <= (m.distinct() as f64).ln() + 1e-12);
        if m.distinct() == 1 {
            prop_assert_eq!(b, 0.0);
        } else {
            prop_assert!(b > 0.0);
        }
    }

    /// Scaling every count by a positive integer leaves balance unchanged.
    #[test]
    fn balance_scale_invariant(counts in counts_strategy(), scale in 1u64..10) {
        let m = multiset_from(&counts);
        let scaled: Vec<u64> = counts.iter().map(|c| c * scale).collect();
        let ms = multiset_from(&scaled);
        let a = balance(&m, LogBase::Nats);
        let b = balance(&ms, LogBase::Nats);
        prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }

    /// Balance does not depend on which triplet carries which count.
    #[test]
    fn balance_permutation_invariant(counts in counts_strategy(), seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = counts.clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        shuffled.shuffle(&mut rng);
        let a = balance(&multiset_from(&counts), LogBase::Nats);
        let b = balance(&multiset_from(&shuffled), LogBase::Nats);
        prop_assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn coverage_is_monotone_under_added_records() {
    let taxonomy = synthetic_taxonomy(5, 4, 4);
    let small = random_labeled_corpus(&taxonomy, 30, 5, 40);
    let large = random_labeled_corpus(&taxonomy, 90, 5, 40); // same seed: first 30 identical
    let cov = |corpus: &cdt_core::corpus::LabeledCorpus| {
        coverage(&corpus.composites(Expansion::AllCognitionTags), &taxonomy).unwrap()
    };
    assert!(cov(&small) <= cov(&large));
    assert!(cov(&large) <= 1.0);
}

#[test]
fn evaluation_report_serializes_with_stable_fields() {
    let taxonomy = synthetic_taxonomy(3, 3, 3);
    let corpus = random_labeled_corpus(&taxonomy, 20, 1, 40);
    let report = evaluate_dataset(
        "fixture",
        &corpus,
        &taxonomy,
        Expansion::AllCognitionTags,
        LogBase::Nats,
    )
    .unwrap();
    let json = serde_json::to_value(&report).unwrap();
    for field in [
        "dataset",
        "taxonomy_version",
        "expansion",
        "log_base",
        "records",
        "total_composites",
        "distinct_composites",
        "coverage",
        "balance",
        "balance_normalized",
        "frequency_tables",
        "notes",
    ] {
        assert!(json.get(field).is_some(), "missing field {field}");
    }
    assert_eq!(json["expansion"], "all_cognition_tags");
    assert_eq!(json["log_base"], "nats");
}
