mod common;

use std::collections::BTreeSet;

use bft_core::bank::partial_fisher_yates;
use bft_core::experiments::{iterations_to_accuracy, Summary, TaskSpec};
use bft_core::model::{init_net, load_net, save_net, EvalPoint};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn fisher_yates_draws_distinct_in_range(total in 0usize..300, frac in 0.0f64..=1.0, seed: u64) {
        let n = (total as f64 * frac) as usize;
        let picks = partial_fisher_yates(total, n, seed).unwrap();
        prop_assert_eq!(picks.len(), n);
        prop_assert!(picks.iter().all(|&i| i < total));
        prop_assert_eq!(picks.iter().collect::<BTreeSet<_>>().len(), n);
        prop_assert_eq!(&picks, &partial_fisher_yates(total, n, seed).unwrap());
        prop_assert!(partial_fisher_yates(total, total + 1, seed).is_err());
    }

    #[test]
    fn threshold_iterations_are_monotone(accs in prop::collection::vec(0.0f64..1.0, 1..20), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let curve: Vec<EvalPoint> = accs.iter().enumerate().map(|(i, &accuracy)| EvalPoint { iteration: 10 * (i + 1), accuracy }).collect();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let at = |t| iterations_to_accuracy(&curve, t).unwrap_or(usize::MAX);
        prop_assert!(at(lo) <= at(hi));
    }

    #[test]
    fn summary_is_shift_invariant(values in prop::collection::vec(-1.0f64..1.0, 2..30), shift in -10.0f64..10.0) {
        let s = Summary::of(&values);
        let moved: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let t = Summary::of(&moved);
        prop_assert!((t.mean - s.mean - shift).abs() < 1e-9);
        prop_assert!((t.std - s.std).abs() < 1e-9);
    }

    #[test]
    fn inline_task_specs_parse(classes in prop::collection::btree_set(0u8..10, 2..5), train in 1usize..500, test in 1usize..100) {
        let list: Vec<String> = classes.iter().map(|c| c.to_string()).collect();
        let spec = TaskSpec::parse(&format!("some/dir:{}:{train}:{test}", list.join(","))).unwrap();
        prop_assert_eq!(spec.classes, classes.into_iter().collect::<Vec<_>>());
        prop_assert_eq!((spec.train_per_class, spec.test_per_class), (Some(train), Some(test)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_nets_roundtrip_bit_exact(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = common::random_spec(&mut rng, 4);
        let params = init_net(&spec, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.cnn");
        save_net(&spec, &params, &path).unwrap();
        let (spec2, params2) = load_net(&path).unwrap();
        prop_assert_eq!(spec2, spec);
        prop_assert!(params2.bit_eq(&params));
    }
}
