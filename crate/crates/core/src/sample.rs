//! Reverse diffusion: generation from a latent and encode-then-sample
//! reconstruction.
//!
//! Two update rules are available. `PaperDirect` subtracts the predicted
//! noise outright (`x_{t-1} = x_t - e`). `Ancestral` takes the usual
//! posterior-mean step `(x_t - beta_t / sqrt(1 - abar_t) e) / sqrt(alpha_t)`
//! and adds `sqrt(beta_t)` noise for `t > 1`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::apportion::largest_remainder;
use crate::cloud::LabeledPointCloud;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::noising::{DiffusedCloud, LabelEncoding, Mode, NoiseField, LABEL_CHANNEL};
use crate::rng::{self, Purpose};
use crate::schedule::VarianceSchedule;

/// How the labels of a guided sample are chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum LabelSpec {
    /// One label per point.
    Explicit(Vec<u32>),
    /// Class fractions summing to one; realized exactly, then shuffled.
    Ratios(Vec<f64>),
}

impl LabelSpec {
    /// Concrete per-point labels for `n` points over `k` classes.
    pub fn realize(&self, n: usize, k: u32, seed: u64) -> Result<Vec<u32>> {
        match self {
            LabelSpec::Explicit(labels) => {
                if labels.len() != n {
                    return Err(Error::invalid(format!("{} explicit labels for {n} points", labels.len())));
                }
                if let Some(l) = labels.iter().find(|&&l| l >= k) {
                    return Err(Error::invalid(format!("label {l} out of range for {k} classes")));
                }
                Ok(labels.clone())
            }
            LabelSpec::Ratios(r) => {
                if r.len() != k as usize {
                    return Err(Error::invalid(format!("{} ratios for {k} classes", r.len())));
                }
                let sum: f64 = r.iter().sum();
                if r.iter().any(|x| x.is_nan() || *x < 0.0) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!("ratios must be non-negative and sum to 1, got {r:?}")));
                }
                let counts = largest_remainder(n, r)?;
                let mut labels: Vec<u32> = counts
                    .iter()
                    .enumerate()
                    .flat_map(|(c, &m)| std::iter::repeat_n(c as u32, m))
                    .collect();
                labels.shuffle(&mut rng::stream(seed, Purpose::Labels, &[]));
                Ok(labels)
            }
        }
    }
}

impl FromStr for LabelSpec {
    type Err = Error;
    /// Comma-separated ratios, e.g. `0.5,0.5`.
    fn from_str(s: &str) -> Result<Self> {
        let r = s
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad ratio {x:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(LabelSpec::Ratios(r))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SamplerVariant {
    #[default]
    PaperDirect,
    Ancestral,
}

impl SamplerVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerVariant::PaperDirect => "paper-direct",
            SamplerVariant::Ancestral => "ancestral",
        }
    }
}

impl fmt::Display for SamplerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-direct" | "direct" => Ok(SamplerVariant::PaperDirect),
            "ancestral" => Ok(SamplerVariant::Ancestral),
            _ => Err(Error::invalid(format!("unknown sampler {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SamplerConfig {
    pub variant: SamplerVariant,
    pub seed: u64,
    /// Keep every intermediate state, `t = T` down to `0`.
    pub trace: bool,
}

/// A generated cloud and, in trace mode, the `T + 1` states that led to it
/// (first element at `t = T`, last at `t = 0`).
#[derive(Clone, Debug)]
pub struct Sample {
    pub cloud: LabeledPointCloud,
    pub trace: Vec<DiffusedCloud>,
}

/// Standard-normal latent for unconditional generation.
pub fn prior_latent(dim: usize, seed: u64) -> Vec<f64> {
    rng::normals(&mut rng::stream(seed, Purpose::Latent, &[u64::MAX]), dim)
}

fn reverse(
    model: &Model,
    schedule: &VarianceSchedule,
    z: &[f64],
    mut x: DiffusedCloud,
    cfg: &SamplerConfig,
) -> Result<(DiffusedCloud, Vec<DiffusedCloud>)> {
    let channels = x.mode.noised_channels();
    let mut trace = Vec::new();
    if cfg.trace {
        trace.push(x.clone());
    }
    for t in (1..=schedule.num_steps()).rev() {
        let e = model.decode(&x.state, t, schedule, z)?;
        match cfg.variant {
            SamplerVariant::PaperDirect => {
                for (s, e) in x.state.iter_mut().zip(&e.values) {
                    for c in 0..channels {
                        s[c] -= e[c];
                    }
                }
            }
            SamplerVariant::Ancestral => {
                let beta = schedule.beta(t)?;
                let alpha = schedule.alpha(t)?;
                let k = beta / (1.0 - schedule.alpha_bar(t)?).sqrt();
                let inv = 1.0 / alpha.sqrt();
                let noise = if t > 1 {
                    NoiseField::sample(&mut rng::stream(cfg.seed, Purpose::Sampler, &[t as u64]), x.len(), x.mode)
                } else {
                    NoiseField::zeros(x.len())
                };
                let sd = beta.sqrt();
                for ((s, e), w) in x.state.iter_mut().zip(&e.values).zip(&noise.values) {
                    for c in 0..channels {
                        s[c] = inv * (s[c] - k * e[c]) + sd * w[c];
                    }
                }
            }
        }
        x.t = t - 1;
        if cfg.trace {
            trace.push(x.clone());
        }
    }
    Ok((x, trace))
}

fn initial_state(n: usize, mode: Mode, seed: u64, labels: Option<&[f64]>) -> DiffusedCloud {
    let noise = NoiseField::sample(&mut rng::stream(seed, Purpose::Sampler, &[0]), n, mode);
    let mut state = noise.values;
    if let Some(l) = labels {
        state.iter_mut().zip(l).for_each(|(s, &v)| s[LABEL_CHANNEL] = v);
    }
    DiffusedCloud { state, t: 0, mode }
}

/// Generates `n` points with labels fixed from `spec` for the whole run.
#[allow(clippy::too_many_arguments)]
pub fn sample_guided(
    model: &Model,
    schedule: &VarianceSchedule,
    z: &[f64],
    n: usize,
    k: u32,
    spec: &LabelSpec,
    encoding: LabelEncoding,
    cfg: &SamplerConfig,
) -> Result<Sample> {
    if n == 0 {
        return Err(Error::invalid("cannot sample zero points"));
    }
    let labels = spec.realize(n, k, cfg.seed)?;
    let encoded: Vec<f64> = labels.iter().map(|&l| encoding.encode(l, k)).collect();
    let mut x0 = initial_state(n, Mode::Guided, cfg.seed, Some(&encoded));
    x0.t = schedule.num_steps();
    let (x, trace) = reverse(model, schedule, z, x0, cfg)?;
    debug_assert!(trace
        .iter()
        .chain(std::iter::once(&x))
        .all(|s| s.state.iter().zip(&encoded).all(|(v, e)| v[LABEL_CHANNEL].to_bits() == e.to_bits())));
    let points = x.state.iter().map(|v| [v[0], v[1], v[2]]).collect();
    Ok(Sample {
        cloud: LabeledPointCloud::new(points, labels, k)?,
        trace,
    })
}

/// Generates `n` points with all four channels denoised jointly; labels are
/// decoded from the final label channel.
pub fn sample_unguided(
    model: &Model,
    schedule: &VarianceSchedule,
    z: &[f64],
    n: usize,
    k: u32,
    encoding: LabelEncoding,
    cfg: &SamplerConfig,
) -> Result<Sample> {
    if n == 0 {
        return Err(Error::invalid("cannot sample zero points"));
    }
    let mut x0 = initial_state(n, Mode::Unguided, cfg.seed, None);
    x0.t = schedule.num_steps();
    let (x, trace) = reverse(model, schedule, z, x0, cfg)?;
    Ok(Sample {
        cloud: x.to_cloud(k, encoding)?,
        trace,
    })
}

/// Encodes `cloud` (using the latent mean) and samples a cloud of the same
/// size from that code. Guided mode reuses the cloud's labels.
pub fn reconstruct(
    model: &Model,
    schedule: &VarianceSchedule,
    cloud: &LabeledPointCloud,
    mode: Mode,
    encoding: LabelEncoding,
    cfg: &SamplerConfig,
) -> Result<Sample> {
    let state = DiffusedCloud::from_cloud(cloud, mode, encoding);
    let z = model.encode(&state.state, None)?.z;
    let (n, k) = (cloud.len(), cloud.num_classes());
    match mode {
        Mode::Guided => sample_guided(
            model,
            schedule,
            &z,
            n,
            k,
            &LabelSpec::Explicit(cloud.labels().to_vec()),
            encoding,
            cfg,
        ),
        Mode::Unguided => sample_unguided(model, schedule, &z, n, k, encoding, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetConfig;
    use crate::schedule::VarianceSchedule;

    fn tiny() -> (Model, VarianceSchedule) {
        let cfg = NetConfig {
            latent_dim: 4,
            time_dim: 4,
            encoder_widths: vec![8],
            decoder_widths: vec![8],
            ..Default::default()
        };
        (Model::new(cfg, 1).unwrap(), VarianceSchedule::linear(1e-4, 0.05, 10).unwrap())
    }

    #[test]
    fn ratios_are_exact() {
        let l = LabelSpec::Ratios(vec![0.5, 0.5]).realize(10, 2, 3).unwrap();
        assert_eq!(l.iter().filter(|&&x| x == 0).count(), 5);
        assert!(LabelSpec::Ratios(vec![0.5, 0.6]).realize(10, 2, 3).is_err());
        assert!(LabelSpec::Ratios(vec![1.0]).realize(10, 2, 3).is_err());
        assert!(LabelSpec::Explicit(vec![0, 2]).realize(2, 2, 0).is_err());
        assert!(LabelSpec::Explicit(vec![0]).realize(2, 2, 0).is_err());
        assert_eq!("0.25, 0.75".parse::<LabelSpec>().unwrap(), LabelSpec::Ratios(vec![0.25, 0.75]));
    }

    #[test]
    fn guided_labels_survive_and_trace_has_all_states() {
        let (m, s) = tiny();
        let z = prior_latent(4, 0);
        for variant in [SamplerVariant::PaperDirect, SamplerVariant::Ancestral] {
            let cfg = SamplerConfig {
                variant,
                seed: 5,
                trace: true,
            };
            let spec = LabelSpec::Ratios(vec![0.3, 0.7]);
            let out = sample_guided(&m, &s, &z, 20, 2, &spec, LabelEncoding::Centered, &cfg).unwrap();
            assert_eq!(out.cloud.labels(), &spec.realize(20, 2, 5).unwrap()[..]);
            assert_eq!(out.trace.len(), 11);
            assert_eq!(out.trace[0].t, 10);
            assert_eq!(out.trace[10].t, 0);
        }
    }

    #[test]
    fn unguided_is_deterministic_and_in_range() {
        let (m, s) = tiny();
        let z = prior_latent(4, 0);
        let cfg = SamplerConfig {
            variant: SamplerVariant::Ancestral,
            seed: 2,
            trace: false,
        };
        let a = sample_unguided(&m, &s, &z, 30, 3, LabelEncoding::Centered, &cfg).unwrap();
        let b = sample_unguided(&m, &s, &z, 30, 3, LabelEncoding::Centered, &cfg).unwrap();
        assert_eq!(a.cloud, b.cloud);
        assert!(a.cloud.labels().iter().all(|&l| l < 3));
        assert!(a.trace.is_empty());
    }

    #[test]
    fn guided_reconstruction_keeps_labels() {
        let (m, s) = tiny();
        let cloud = crate::cloud::generate_synthetic(crate::cloud::ShapeFamily::Barbell, 24, 1)
            .unwrap()
            .normalize()
            .cloud;
        let out = reconstruct(&m, &s, &cloud, Mode::Guided, LabelEncoding::Centered, &SamplerConfig::default()).unwrap();
        assert_eq!(out.cloud.labels(), cloud.labels());
    }
}
