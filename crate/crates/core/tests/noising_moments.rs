mod common;

use pcdiff::cloud::{generate_synthetic, ShapeFamily};
use pcdiff::noising::{forward_step, noise_guided, noise_unguided, DiffusedCloud, LabelEncoding, Mode, NoiseField};
use pcdiff::rng::{self, Purpose};
use pcdiff::schedule::VarianceSchedule;

fn source(mode: Mode) -> DiffusedCloud {
    let cloud = generate_synthetic(ShapeFamily::Chair, 1000, 4).unwrap().normalize().cloud;
    DiffusedCloud::from_cloud(&cloud, mode, LabelEncoding::Centered)
}

#[test]
fn terminal_state_is_standard_normal() {
    let sched = VarianceSchedule::default();
    let t = sched.num_steps();
    let x0 = source(Mode::Guided);
    let mut channels = [Vec::new(), Vec::new(), Vec::new()];
    for rep in 0..100 {
        let noise = NoiseField::sample(&mut rng::stream(1, Purpose::Noise, &[rep]), x0.len(), Mode::Guided);
        let xt = noise_guided(&x0, &sched, t, &noise).unwrap();
        for v in &xt.state {
            for c in 0..3 {
                channels[c].push(v[c]);
            }
        }
        assert_eq!(xt.label_channel(), x0.label_channel());
    }
    for ch in channels {
        assert_eq!(ch.len(), 100_000);
        let (m, v) = common::moments(ch.into_iter());
        assert!(m.abs() < 0.05 && (0.9..=1.1).contains(&v), "mean {m} var {v}");
    }
}

#[test]
fn guided_label_channel_is_bit_identical_at_every_t() {
    let sched = VarianceSchedule::default();
    let x0 = source(Mode::Guided);
    let want: Vec<u64> = x0.label_channel().iter().map(|v| v.to_bits()).collect();
    for t in 1..=sched.num_steps() {
        let noise = NoiseField::sample(&mut rng::stream(2, Purpose::Noise, &[t as u64]), x0.len(), Mode::Guided);
        let xt = noise_guided(&x0, &sched, t, &noise).unwrap();
        let got: Vec<u64> = xt.label_channel().iter().map(|v| v.to_bits()).collect();
        assert_eq!(got, want, "t = {t}");
    }
}

/// Chaining single-step kernels reproduces the closed-form marginal's
/// mean and variance.
#[test]
fn iterated_kernel_matches_marginal() {
    let sched = VarianceSchedule::linear(1e-3, 0.05, 40).unwrap();
    let x0 = source(Mode::Unguided);
    let t = 25;
    let ab = sched.alpha_bar(t).unwrap();
    let reps = 60;
    let mut chained = Vec::new();
    let mut direct = Vec::new();
    for rep in 0..reps {
        let mut x = x0.clone();
        for s in 0..t {
            let noise = NoiseField::sample(&mut rng::stream(3, Purpose::Noise, &[rep, s as u64]), x.len(), Mode::Unguided);
            x = forward_step(&x, &sched, &noise).unwrap();
        }
        assert_eq!(x.t, t);
        let noise = NoiseField::sample(&mut rng::stream(4, Purpose::Noise, &[rep]), x0.len(), Mode::Unguided);
        let d = noise_unguided(&x0, &sched, t, &noise).unwrap();
        for (i, (a, b)) in x.state.iter().zip(&d.state).enumerate() {
            for c in 0..4 {
                let centered = ab.sqrt() * x0.state[i][c];
                chained.push(a[c] - centered);
                direct.push(b[c] - centered);
            }
        }
    }
    let (mc, vc) = common::moments(chained.into_iter());
    let (md, vd) = common::moments(direct.into_iter());
    let want = 1.0 - ab;
    assert!(mc.abs() < 0.01 && md.abs() < 0.01, "{mc} {md}");
    assert!((vc / want - 1.0).abs() < 0.03, "chained var {vc} vs {want}");
    assert!((vd / want - 1.0).abs() < 0.03, "direct var {vd} vs {want}");
}
