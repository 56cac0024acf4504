#![allow(dead_code)]

use pcdiff::cloud::{generate_synthetic, LabeledPointCloud, ShapeFamily};
use pcdiff::nn::NetConfig;
use pcdiff::noising::Mode;
use pcdiff::train::TrainConfig;
use rand::Rng;

/// Small network used wherever the default one would be too slow.
pub fn compact_net() -> NetConfig {
    NetConfig {
        latent_dim: 32,
        time_dim: 16,
        encoder_widths: vec![64, 128, 128],
        decoder_widths: vec![128, 128, 64],
        ..Default::default()
    }
}

pub fn tiny_net() -> NetConfig {
    NetConfig {
        latent_dim: 4,
        time_dim: 6,
        encoder_widths: vec![8, 10],
        decoder_widths: vec![9, 7],
        ..Default::default()
    }
}

pub fn overfit_config(mode: Mode, steps: u64, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        batch_size: 8,
        max_steps: steps,
        seed,
        net: compact_net(),
        ..Default::default()
    }
}

pub fn barbells(count: u64, points: usize, seed: u64) -> Vec<LabeledPointCloud> {
    (0..count)
        .map(|i| generate_synthetic(ShapeFamily::Barbell, points, seed * 1000 + i).unwrap().normalize().cloud)
        .collect()
}

pub fn uniform_cloud<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| [0; 3].map(|_: i32| rng.random_range(-scale..scale)))
        .collect()
}

pub fn random_labels<R: Rng>(rng: &mut R, n: usize, k: u32) -> Vec<u32> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Plain double loop, written without the library's search structures.
pub fn brute_one_sided(p: &[[f64; 3]], q: &[[f64; 3]]) -> f64 {
    p.iter().map(|a| q.iter().map(|b| dist2(a, b)).fold(f64::INFINITY, f64::min)).sum::<f64>() / p.len() as f64
}

pub fn brute_cd(p: &[[f64; 3]], q: &[[f64; 3]]) -> f64 {
    brute_one_sided(p, q) + brute_one_sided(q, p)
}

/// Per-class oracle; `None` when no class is shared.
pub fn brute_per_class(p: &[[f64; 3]], pl: &[u32], q: &[[f64; 3]], ql: &[u32]) -> Option<f64> {
    let k = pl.iter().chain(ql).max().copied().unwrap_or(0);
    let mut sum = 0.0;
    let mut count = 0;
    for c in 0..=k {
        let pc: Vec<[f64; 3]> = p.iter().zip(pl).filter(|(_, &l)| l == c).map(|(x, _)| *x).collect();
        let qc: Vec<[f64; 3]> = q.iter().zip(ql).filter(|(_, &l)| l == c).map(|(x, _)| *x).collect();
        if !pc.is_empty() && !qc.is_empty() {
            sum += brute_cd(&pc, &qc);
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

pub fn moments(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = xs.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}
