mod common;

use pcdiff::chamfer::{global_cd, per_class_cd};
use pcdiff::rng::{self, Purpose};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn per_class_matches_brute_force_on_random_pairs() {
    for pair in 0..200u64 {
        let mut r = rng::stream(17, Purpose::Synth, &[pair]);
        let (n, m) = (r.random_range(1..=256), r.random_range(1..=256));
        let k = r.random_range(1..=5);
        let p = common::uniform_cloud(&mut r, n, 1.0);
        let q = common::uniform_cloud(&mut r, m, 1.0);
        let pl = common::random_labels(&mut r, n, k);
        let ql = common::random_labels(&mut r, m, k);
        match (per_class_cd(&p, &pl, &q, &ql), common::brute_per_class(&p, &pl, &q, &ql)) {
            (Ok(got), Some(want)) => assert!((got.value - want).abs() < 1e-9, "pair {pair}"),
            (Err(_), None) => {}
            (got, want) => panic!("pair {pair}: {got:?} vs {want:?}"),
        }
        assert!((global_cd(&p, &q).unwrap() - common::brute_cd(&p, &q)).abs() < 1e-9);
    }
}

#[test]
fn cross_class_trap() {
    let r = per_class_cd(&[[0.0; 3]], &[0], &[[0.0; 3], [5.0, 0.0, 0.0]], &[1, 0]).unwrap();
    assert_eq!(r.value, 50.0);
}

proptest! {
    #[test]
    fn single_label_reduces_to_global(seed in 0u64..10_000) {
        let mut r = rng::stream(seed, Purpose::Synth, &[]);
        let p = common::uniform_cloud(&mut r, 50, 2.0);
        let q = common::uniform_cloud(&mut r, 70, 2.0);
        let a = per_class_cd(&p, &[3; 50], &q, &[3; 70]).unwrap().value;
        prop_assert_eq!(a, global_cd(&p, &q).unwrap());
    }

    #[test]
    fn symmetric_nonnegative_translation_invariant(seed in 0u64..10_000, shift in prop::array::uniform3(-10.0..10.0f64)) {
        let mut r = rng::stream(seed, Purpose::Synth, &[1]);
        let p = common::uniform_cloud(&mut r, 40, 1.0);
        let q = common::uniform_cloud(&mut r, 30, 1.0);
        let pl = common::random_labels(&mut r, 40, 3);
        let ql = common::random_labels(&mut r, 30, 3);
        if let Ok(a) = per_class_cd(&p, &pl, &q, &ql) {
            let b = per_class_cd(&q, &ql, &p, &pl).unwrap();
            prop_assert!((a.value - b.value).abs() < 1e-12);
            prop_assert!(a.value >= 0.0);
            let mv = |c: &[[f64; 3]]| c.iter().map(|v| [v[0] + shift[0], v[1] + shift[1], v[2] + shift[2]]).collect::<Vec<_>>();
            let t = per_class_cd(&mv(&p), &pl, &mv(&q), &ql).unwrap();
            prop_assert!((t.value - a.value).abs() < 1e-9);
        }
        prop_assert_eq!(per_class_cd(&p, &pl, &p, &pl).unwrap().value, 0.0);
    }
}
