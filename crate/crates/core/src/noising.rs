//! Forward diffusion kernels over the four-channel point state
//! `(x, y, z, c)`, where `c` is the float-encoded part label.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::cloud::LabeledPointCloud;
use crate::error::{Error, Result};
use crate::rng::standard_normal;
use crate::schedule::VarianceSchedule;

/// Channels per point: three spatial plus one label channel.
pub const CHANNELS: usize = 4;
pub const LABEL_CHANNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Labels held fixed; only spatial channels are diffused.
    Guided,
    /// Labels diffused jointly with coordinates.
    Unguided,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Guided => "guided",
            Mode::Unguided => "unguided",
        }
    }

    /// Number of leading channels that receive noise.
    pub fn noised_channels(self) -> usize {
        match self {
            Mode::Guided => 3,
            Mode::Unguided => CHANNELS,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "guided" => Ok(Mode::Guided),
            "unguided" => Ok(Mode::Unguided),
            _ => Err(Error::invalid(format!("unknown mode {s:?}"))),
        }
    }
}

/// How integer labels map onto the continuous label channel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum LabelEncoding {
    /// `c -> (c - (K-1)/2) * 2 / max(K-1, 1)`: labels spread over `[-1, 1]`.
    #[default]
    Centered,
    /// The label value itself.
    Raw,
}

impl LabelEncoding {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelEncoding::Centered => "centered",
            LabelEncoding::Raw => "raw",
        }
    }

    fn half_span(k: u32) -> f64 {
        (k.max(1) - 1).max(1) as f64 / 2.0
    }

    pub fn encode(self, label: u32, k: u32) -> f64 {
        match self {
            LabelEncoding::Centered => {
                let center = (k.max(1) - 1) as f64 / 2.0;
                (label as f64 - center) / Self::half_span(k)
            }
            LabelEncoding::Raw => label as f64,
        }
    }

    /// Inverse map, rounded to the nearest label and clamped to `0..K`.
    pub fn decode(self, value: f64, k: u32) -> u32 {
        let raw = match self {
            LabelEncoding::Centered => value * Self::half_span(k) + (k.max(1) - 1) as f64 / 2.0,
            LabelEncoding::Raw => value,
        };
        let top = (k.max(1) - 1) as f64;
        if raw.is_nan() {
            return 0;
        }
        raw.round().clamp(0.0, top) as u32
    }
}

impl FromStr for LabelEncoding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centered" => Ok(LabelEncoding::Centered),
            "raw" => Ok(LabelEncoding::Raw),
            _ => Err(Error::invalid(format!("unknown label encoding {s:?}"))),
        }
    }
}

/// Centered encoding of a label sequence.
pub fn encode_labels(labels: &[u32], k: u32) -> Vec<f64> {
    labels.iter().map(|&l| LabelEncoding::Centered.encode(l, k)).collect()
}

pub fn decode_labels(values: &[f64], k: u32) -> Vec<u32> {
    values.iter().map(|&v| LabelEncoding::Centered.decode(v, k)).collect()
}

/// Per-point noise over all four channels. Guided fields keep the label
/// channel at exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseField {
    pub values: Vec<[f64; CHANNELS]>,
}

impl NoiseField {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![[0.0; CHANNELS]; n],
        }
    }

    /// Standard-normal draws on the channels `mode` diffuses.
    pub fn sample<R: Rng>(rng: &mut R, n: usize, mode: Mode) -> Self {
        let k = mode.noised_channels();
        let values = (0..n)
            .map(|_| {
                let mut v = [0.0; CHANNELS];
                for c in v.iter_mut().take(k) {
                    *c = standard_normal(rng);
                }
                v
            })
            .collect();
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row-major `n x 4` copy.
    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    /// Row-major `n x 3` copy of the spatial channels.
    pub fn spatial_flat(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| [v[0], v[1], v[2]]).collect()
    }
}

/// A four-channel point state at diffusion step `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusedCloud {
    pub state: Vec<[f64; CHANNELS]>,
    pub t: usize,
    pub mode: Mode,
}

impl DiffusedCloud {
    /// The clean (`t = 0`) state of a cloud.
    pub fn from_cloud(cloud: &LabeledPointCloud, mode: Mode, encoding: LabelEncoding) -> Self {
        let k = cloud.num_classes();
        let state = cloud
            .points()
            .iter()
            .zip(cloud.labels())
            .map(|(p, &l)| [p[0], p[1], p[2], encoding.encode(l, k)])
            .collect();
        Self { state, t: 0, mode }
    }

    pub fn len(&self) -> usize {
        self.state.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state.is_empty()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.state.iter().flatten().copied().collect()
    }

    pub fn label_channel(&self) -> Vec<f64> {
        self.state.iter().map(|v| v[LABEL_CHANNEL]).collect()
    }

    /// Decodes the state into a labeled cloud.
    pub fn to_cloud(&self, k: u32, encoding: LabelEncoding) -> Result<LabeledPointCloud> {
        let points = self.state.iter().map(|v| [v[0], v[1], v[2]]).collect();
        let labels = self.state.iter().map(|v| encoding.decode(v[LABEL_CHANNEL], k)).collect();
        LabeledPointCloud::new(points, labels, k)
    }
}

fn check_lengths(x: &DiffusedCloud, noise: &NoiseField) -> Result<()> {
    if x.len() != noise.len() {
        return Err(Error::Shape {
            op: "noising",
            lhs: vec![x.len(), CHANNELS],
            rhs: vec![noise.len(), CHANNELS],
        });
    }
    Ok(())
}

fn closed_form(x0: &DiffusedCloud, schedule: &VarianceSchedule, t: usize, noise: &NoiseField, channels: usize) -> Result<DiffusedCloud> {
    if x0.t != 0 {
        return Err(Error::invalid(format!("closed-form noising expects a clean state, got t = {}", x0.t)));
    }
    check_lengths(x0, noise)?;
    let ab = schedule.alpha_bar(t)?;
    let (c0, c1) = (ab.sqrt(), (1.0 - ab).sqrt());
    let state = x0
        .state
        .iter()
        .zip(&noise.values)
        .map(|(x, e)| {
            let mut out = *x;
            for c in 0..channels {
                out[c] = c0 * x[c] + c1 * e[c];
            }
            out
        })
        .collect();
    Ok(DiffusedCloud { state, t, mode: x0.mode })
}

/// `x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps` on the spatial channels;
/// the label channel is copied through untouched.
pub fn noise_guided(x0: &DiffusedCloud, schedule: &VarianceSchedule, t: usize, noise: &NoiseField) -> Result<DiffusedCloud> {
    if x0.mode != Mode::Guided {
        return Err(Error::invalid("noise_guided called on an unguided state"));
    }
    if let Some(i) = noise.values.iter().position(|v| v[LABEL_CHANNEL] != 0.0) {
        return Err(Error::invalid(format!("guided noise must have a zero label channel (point {i})")));
    }
    let out = closed_form(x0, schedule, t, noise, 3)?;
    debug_assert!(out
        .state
        .iter()
        .zip(&x0.state)
        .all(|(a, b)| a[LABEL_CHANNEL].to_bits() == b[LABEL_CHANNEL].to_bits()));
    Ok(out)
}

/// Same kernel applied to all four channels.
pub fn noise_unguided(x0: &DiffusedCloud, schedule: &VarianceSchedule, t: usize, noise: &NoiseField) -> Result<DiffusedCloud> {
    if x0.mode != Mode::Unguided {
        return Err(Error::invalid("noise_unguided called on a guided state"));
    }
    closed_form(x0, schedule, t, noise, CHANNELS)
}

/// One step of `q(x_t | x_{t-1}) = N(sqrt(1 - beta_t) x_{t-1}, beta_t I)` on
/// the channels the state's mode diffuses.
pub fn forward_step(prev: &DiffusedCloud, schedule: &VarianceSchedule, noise: &NoiseField) -> Result<DiffusedCloud> {
    check_lengths(prev, noise)?;
    let t = prev.t + 1;
    let beta = schedule.beta(t)?;
    let (a, b) = ((1.0 - beta).sqrt(), beta.sqrt());
    let channels = prev.mode.noised_channels();
    let state = prev
        .state
        .iter()
        .zip(&noise.values)
        .map(|(x, e)| {
            let mut out = *x;
            for c in 0..channels {
                out[c] = a * x[c] + b * e[c];
            }
            out
        })
        .collect();
    Ok(DiffusedCloud { state, t, mode: prev.mode })
}
