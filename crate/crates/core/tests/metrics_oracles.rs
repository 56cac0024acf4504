mod common;

use pcdiff::metrics::{build_report, coverage, jsd, jsd_distributions, mmd_cd, one_nna, round2};
use pcdiff::rng::{self, Purpose};
use std::f64::consts::LN_2;

fn single(x: f64) -> Vec<[f64; 3]> {
    vec![[x, 0.0, 0.0]]
}

fn shift(set: &[Vec<[f64; 3]>], d: [f64; 3]) -> Vec<Vec<[f64; 3]>> {
    set.iter().map(|c| c.iter().map(|p| [p[0] + d[0], p[1] + d[1], p[2] + d[2]]).collect()).collect()
}

/// Four single-point references at 0, 10, 20, 30 and four generated points
/// chosen so every count below can be enumerated by hand. Single-point CD is
/// twice the squared gap.
fn four_by_four() -> [Vec<Vec<[f64; 3]>>; 2] {
    let gen = [0.1, 0.25, 10.1, 40.0].map(single).to_vec();
    let reference = [0.0, 10.0, 20.0, 30.0].map(single).to_vec();
    [gen, reference]
}

#[test]
fn constructed_sets_match_hand_counts() {
    let [g, r] = four_by_four();
    // nearest refs of gen: 0, 0, 10, 30
    assert_eq!(coverage(&g, &r).unwrap(), 0.75);
    // g0 -> r0 (wrong), g1 -> g0 (right), g2 -> r1, g3 -> r3,
    // r0 -> g0, r1 -> g2, r2 -> g2 (9.9 < 10), r3 ties g3/r2 and takes g3
    assert_eq!(one_nna(&g, &r).unwrap(), 0.125);
    let want = (0.02 + 0.02 + 2.0 * 9.9 * 9.9 + 200.0) / 4.0;
    assert!((mmd_cd(&g, &r).unwrap() - want).abs() < 1e-12);

    // collapsed gen set covers one reference
    let collapsed = [0.0, 0.1, 0.2, 0.3].map(single).to_vec();
    assert_eq!(coverage(&collapsed, &r).unwrap(), 0.25);

    // separated clusters classify perfectly
    let far = [100.0, 101.0, 102.0, 103.0].map(single).to_vec();
    assert_eq!(one_nna(&far, &r).unwrap(), 1.0);
    assert_eq!(one_nna(&r, &r).unwrap(), 0.0);
    assert_eq!(one_nna(&[single(0.0)], &[single(1.0)]).unwrap(), 0.0);
}

#[test]
fn mmd_hand_example() {
    let r = vec![vec![[0.0, 0.0, 0.0]]];
    let g = vec![vec![[0.5f64.sqrt(), 0.0, 0.0]], vec![[0.1f64.sqrt(), 0.0, 0.0]]];
    // CDs are 1.0 and 0.2
    assert!((mmd_cd(&g, &r).unwrap() - 0.2).abs() < 1e-15);
}

#[test]
fn jsd_analytic_cases() {
    assert_eq!(jsd_distributions(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), LN_2);
    let want = 0.5 * (4.0f64 / 3.0).ln() + 0.25 * ((2.0f64 / 3.0).ln() + LN_2);
    let got = jsd_distributions(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
    assert!((got - want).abs() < 1e-15);
    assert!((got - 0.21576).abs() < 1e-5);

    let a = vec![vec![[-0.9, -0.9, -0.9]; 5]];
    let b = vec![vec![[0.9, 0.9, 0.9]; 3]];
    assert_eq!(jsd(&a, &b, 28).unwrap(), LN_2);
    assert_eq!(jsd(&a, &a, 28).unwrap(), 0.0);
}

#[test]
fn jsd_is_symmetric_and_bounded() {
    for seed in 0..20 {
        let mut r = rng::stream(seed, Purpose::Synth, &[]);
        let a: Vec<_> = (0..3).map(|_| common::uniform_cloud(&mut r, 100, 1.0)).collect();
        let b: Vec<_> = (0..4).map(|_| common::uniform_cloud(&mut r, 80, 0.6)).collect();
        let (x, y) = (jsd(&a, &b, 16).unwrap(), jsd(&b, &a, 16).unwrap());
        assert_eq!(x, y);
        assert!((0.0..=LN_2).contains(&x));
    }
}

#[test]
fn set_metrics_are_translation_invariant() {
    let mut r = rng::stream(5, Purpose::Synth, &[]);
    let g: Vec<_> = (0..6).map(|_| common::uniform_cloud(&mut r, 40, 1.0)).collect();
    let f: Vec<_> = (0..5).map(|_| common::uniform_cloud(&mut r, 40, 1.0)).collect();
    let d = [3.5, -7.25, 11.0];
    let (gs, fs) = (shift(&g, d), shift(&f, d));
    assert!((mmd_cd(&g, &f).unwrap() - mmd_cd(&gs, &fs).unwrap()).abs() < 1e-9);
    assert_eq!(coverage(&g, &f).unwrap(), coverage(&gs, &fs).unwrap());
    assert_eq!(one_nna(&g, &f).unwrap(), one_nna(&gs, &fs).unwrap());
}

#[test]
fn adding_generated_clouds_never_raises_mmd() {
    let mut r = rng::stream(6, Purpose::Synth, &[]);
    let reference: Vec<_> = (0..5).map(|_| common::uniform_cloud(&mut r, 30, 1.0)).collect();
    let mut gen = Vec::new();
    let mut last = f64::INFINITY;
    for _ in 0..10 {
        gen.push(common::uniform_cloud(&mut r, 30, 1.0));
        let m = mmd_cd(&gen, &reference).unwrap();
        assert!(m <= last);
        last = m;
    }
}

#[test]
fn identity_report() {
    let set = common::barbells(6, 64, 2);
    let rep = build_report(&set, &set, 28).unwrap();
    assert_eq!((rep.jsd, rep.mmd, rep.cov), (0.0, 0.0, 1.0));
    assert_eq!(rep.scaled()[2], 100.0);
    assert!(rep.to_key_values().contains("cov_x100=100.00"));
    assert_eq!(round2(3.5400000000000005), 3.54);
    assert_eq!(round2(0.125), 0.12);
    assert_eq!(round2(0.135), 0.14);
}

#[test]
fn empty_sets_are_rejected() {
    let none: Vec<Vec<[f64; 3]>> = Vec::new();
    let one = vec![single(0.0)];
    assert!(mmd_cd(&none, &one).is_err());
    assert!(coverage(&one, &none).is_err());
    assert!(jsd(&none, &one, 4).is_err());
}

/// Two halves of one barbell population look alike to a 1-NN classifier.
#[test]
fn one_nna_same_distribution_band() {
    let mut inside = 0;
    for trial in 0..10 {
        let all = common::barbells(128, 128, 500 + trial);
        let v = one_nna(&all[..64], &all[64..]).unwrap();
        if (0.35..=0.65).contains(&v) {
            inside += 1;
        }
    }
    assert!(inside >= 9, "{inside}/10 in band");
}
