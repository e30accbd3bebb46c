use std::collections::{BTreeMap, HashSet};

use fewshot_core::{rng, sample_indices, split_classes, ClassPool, EpisodeSpec, SplitRatios};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn pool(classes: usize, per_class: usize) -> ClassPool {
    let mut m = BTreeMap::new();
    for c in 0..classes {
        m.insert(
            format!("c{c:02}"),
            (c * per_class..(c + 1) * per_class).collect(),
        );
    }
    ClassPool::new(m)
}

#[test]
fn class_selection_is_uniform() {
    let p = pool(10, 12);
    let spec = EpisodeSpec::new(3, 2, 2);
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    let n = 10_000;
    for i in 0..n {
        let e = sample_indices(&p, &spec, rng::derive(99, i), None).unwrap();
        for c in e.classes {
            *counts.entry(c).or_default() += 1.0;
        }
    }
    let expected = n as f64 * 3.0 / 10.0;
    let stat: f64 = counts
        .values()
        .map(|o| (o - expected).powi(2) / expected)
        .sum();
    let p_value = 1.0 - ChiSquared::new(9.0).unwrap().cdf(stat);
    assert_eq!(counts.len(), 10);
    assert!(p_value > 0.01, "chi2 {stat:.2}, p {p_value:.4}");
}

#[test]
fn split_refuses_too_few_test_classes() {
    let sizes: BTreeMap<String, usize> = (0..4).map(|c| (format!("c{c}"), 20)).collect();
    let r = split_classes(&sizes, SplitRatios::new(0.5, 0.0, 0.5).unwrap(), 10, 5, 0);
    assert!(r.is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn episodes_are_disjoint_and_well_shaped(
        classes in 2usize..8,
        ways in 2usize..8,
        shots in 1usize..4,
        queries in 1usize..4,
        unlabeled in 0usize..6,
        seed in any::<u64>(),
    ) {
        prop_assume!(ways <= classes);
        let per = shots + queries + 3;
        let p = pool(classes, per);
        let spec = EpisodeSpec::new(ways, shots, queries).with_unlabeled(unlabeled);
        let e = sample_indices(&p, &spec, seed, None).unwrap();
        prop_assert_eq!(e.classes.len(), ways);
        prop_assert!(e.support.iter().all(|s| s.len() == shots));
        prop_assert!(e.query.iter().all(|q| q.len() == queries));
        let all: Vec<usize> = e.support_flat().into_iter().chain(e.query_flat()).chain(e.unlabeled.iter().copied()).collect();
        let uniq: HashSet<_> = all.iter().collect();
        prop_assert_eq!(uniq.len(), all.len());
        for (c, name) in e.classes.iter().enumerate() {
            let members: HashSet<_> = p.members(name).unwrap().iter().collect();
            prop_assert!(e.support[c].iter().chain(&e.query[c]).all(|i| members.contains(i)));
        }
        let again = sample_indices(&p, &spec, seed, None).unwrap();
        prop_assert_eq!(e, again);
    }

    #[test]
    fn split_partitions_are_disjoint_and_cover(
        classes in 6usize..30,
        seed in any::<u64>(),
    ) {
        let sizes: BTreeMap<String, usize> = (0..classes).map(|c| (format!("c{c}"), 10)).collect();
        let s = split_classes(&sizes, SplitRatios::new(0.5, 0.2, 0.3).unwrap(), 5, 2, seed).unwrap();
        s.check_disjoint().unwrap();
        prop_assert_eq!(s.train.len() + s.valid.len() + s.test.len(), classes);
    }
}
