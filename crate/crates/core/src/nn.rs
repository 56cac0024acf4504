//! Latent shape encoder and conditional noise-prediction decoder.
//!
//! The encoder is a shared per-point MLP followed by a max-pool over points
//! and two linear heads for the Gaussian latent `(mu, logvar)`. The decoder
//! maps `concat(point state, time embedding, z)` through a per-point MLP to a
//! four-channel noise estimate. Both are expressed on a [`Tape`] so every
//! parameter receives exact gradients.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grad::{Tape, Tensor, Var};
use crate::noising::{NoiseField, CHANNELS};
use crate::rng::{self, Purpose};
use crate::schedule::VarianceSchedule;

/// Reparameterization noise is truncated to `[-EPS_CLAMP, EPS_CLAMP]`.
pub const EPS_CLAMP: f64 = 6.0;

/// The decoder's output layer starts this much smaller than the others, so an
/// untrained model predicts near-zero noise and sampling does not drift.
pub const OUTPUT_INIT_SCALE: f64 = 1e-2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum TimeConditioning {
    /// `beta_t`, `t/T` and sinusoidal features of `t/T`.
    #[default]
    Full,
    /// `beta_t` only; the remaining embedding slots are zero.
    BetaOnly,
}

impl TimeConditioning {
    pub fn as_str(self) -> &'static str {
        match self {
            TimeConditioning::Full => "full",
            TimeConditioning::BetaOnly => "beta-only",
        }
    }
}

impl FromStr for TimeConditioning {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(TimeConditioning::Full),
            "beta-only" | "beta_only" => Ok(TimeConditioning::BetaOnly),
            _ => Err(Error::invalid(format!("unknown time conditioning {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NetConfig {
    pub latent_dim: usize,
    pub time_dim: usize,
    /// Hidden widths of the per-point encoder MLP; the last one is pooled.
    pub encoder_widths: Vec<usize>,
    /// Hidden widths of the decoder MLP (output width 4 is implied).
    pub decoder_widths: Vec<usize>,
    pub time_conditioning: TimeConditioning,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            latent_dim: 128,
            time_dim: 32,
            encoder_widths: vec![128, 256, 512],
            decoder_widths: vec![256, 256, 128],
            time_conditioning: TimeConditioning::Full,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.encoder_widths.is_empty() || self.decoder_widths.is_empty() {
            return Err(Error::invalid("latent dim and layer lists must be non-empty"));
        }
        if self.time_dim < 2 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::invalid(format!("time embedding width {} must be even and >= 2", self.time_dim)));
        }
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(())
    }
}

/// `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn init<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let weight = Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out))
            .expect("sized by construction")
            .requiring_grad();
        let bias = Tensor::vector(draw(fan_out)).requiring_grad();
        Self { weight, bias }
    }

    fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Encoder output.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub z: Vec<f64>,
}

/// All learnable parameters of the encoder/decoder pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: NetConfig,
    encoder: Vec<Linear>,
    mu_head: Linear,
    logvar_head: Linear,
    decoder: Vec<Linear>,
}

/// Model parameters recorded on one tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    encoder: Vec<(Var, Var)>,
    mu_head: (Var, Var),
    logvar_head: (Var, Var),
    decoder: Vec<(Var, Var)>,
    /// Every parameter, in [`Model::params`] order.
    pub params: Vec<Var>,
}

/// Latent vars on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LatentVars {
    pub mu: Var,
    pub logvar: Var,
}

impl Model {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut layer = 0u64;
        let mut next = |fan_in, fan_out| {
            let mut r = rng::stream(seed, Purpose::Init, &[layer]);
            layer += 1;
            Linear::init(&mut r, fan_in, fan_out)
        };
        let mut encoder = Vec::new();
        let mut width = CHANNELS;
        for &w in &config.encoder_widths {
            encoder.push(next(width, w));
            width = w;
        }
        let mu_head = next(width, config.latent_dim);
        let logvar_head = next(width, config.latent_dim);
        let mut decoder = Vec::new();
        let mut width = CHANNELS + config.time_dim + config.latent_dim;
        for &w in config.decoder_widths.iter().chain(std::iter::once(&CHANNELS)) {
            decoder.push(next(width, w));
            width = w;
        }
        if let Some(out) = decoder.last_mut() {
            for v in out.weight.data_mut().iter_mut().chain(out.bias.data_mut()) {
                *v *= OUTPUT_INIT_SCALE;
            }
        }
        Ok(Self {
            config,
            encoder,
            mu_head,
            logvar_head,
            decoder,
        })
    }

    /// Rebuilds a model from a config and parameter tensors in
    /// [`Model::params`] order, validating every shape.
    pub fn from_params(config: NetConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if tensors.len() != model.params().len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                model.params().len(),
                tensors.len()
            )));
        }
        for (slot, t) in model.params_mut().into_iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::Shape {
                    op: "load parameters",
                    lhs: slot.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            *slot = t.requiring_grad();
        }
        Ok(model)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    fn layers(&self) -> impl Iterator<Item = &Linear> {
        self.encoder
            .iter()
            .chain([&self.mu_head, &self.logvar_head])
            .chain(self.decoder.iter())
    }

    /// Parameters in a fixed order: encoder layers, mu head, logvar head,
    /// decoder layers; weight before bias.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.encoder
            .iter_mut()
            .chain([&mut self.mu_head, &mut self.logvar_head])
            .chain(self.decoder.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let vars: Vec<Var> = self.params().into_iter().map(|t| tape.leaf(t)).collect();
        self.bound_from(&vars).expect("one var per parameter")
    }

    /// Interprets vars already on a tape (in [`Model::params`] order) as this
    /// model's parameters.
    pub fn bound_from(&self, vars: &[Var]) -> Result<BoundModel> {
        let expected = self.params().len();
        if vars.len() != expected {
            return Err(Error::invalid(format!("expected {expected} parameter vars, got {}", vars.len())));
        }
        let ne = self.encoder.len();
        let pair = |i: usize| (vars[2 * i], vars[2 * i + 1]);
        Ok(BoundModel {
            encoder: (0..ne).map(pair).collect(),
            mu_head: pair(ne),
            logvar_head: pair(ne + 1),
            decoder: (ne + 2..ne + 2 + self.decoder.len()).map(pair).collect(),
            params: vars.to_vec(),
        })
    }

    /// Encoder forward pass over an `[n, 4]` state.
    pub fn encode_on(&self, tape: &mut Tape, bound: &BoundModel, state: Var) -> Result<LatentVars> {
        let mut h = state;
        for &(w, b) in &bound.encoder {
            let a = tape.affine(h, w, b)?;
            h = tape.leaky_relu(a);
        }
        let pooled = tape.max_reduce(h)?;
        let mu = tape.affine(pooled, bound.mu_head.0, bound.mu_head.1)?;
        let logvar = tape.affine(pooled, bound.logvar_head.0, bound.logvar_head.1)?;
        Ok(LatentVars { mu, logvar })
    }

    /// `z = mu + exp(logvar / 2) * eps`, with `eps` already truncated.
    pub fn reparameterize_on(&self, tape: &mut Tape, latent: LatentVars, eps: &[f64]) -> Result<Var> {
        let half = tape.scale(latent.logvar, 0.5)?;
        let std = tape.exp(half);
        let e = tape.constant(vec![eps.len()], eps.to_vec())?;
        let spread = tape.mul(std, e)?;
        tape.add(latent.mu, spread)
    }

    /// Decoder forward pass: `[n, 4]` state, time embedding and latent to an
    /// `[n, 4]` noise estimate.
    pub fn decode_on(&self, tape: &mut Tape, bound: &BoundModel, state: Var, time_emb: &[f64], z: Var) -> Result<Var> {
        let n = tape.shape(state)[0];
        let temb = tape.constant(vec![time_emb.len()], time_emb.to_vec())?;
        let temb = tape.broadcast_rows(temb, n)?;
        let zr = tape.broadcast_rows(z, n)?;
        let mut h = tape.concat(&[state, temb, zr])?;
        let last = bound.decoder.len() - 1;
        for (i, &(w, b)) in bound.decoder.iter().enumerate() {
            h = tape.affine(h, w, b)?;
            if i < last {
                h = tape.leaky_relu(h);
            }
        }
        Ok(h)
    }

    fn check_state(&self, state: &[[f64; CHANNELS]]) -> Result<()> {
        if state.is_empty() {
            return Err(Error::invalid("cannot encode an empty state"));
        }
        debug_assert_eq!(self.encoder[0].in_dim(), CHANNELS);
        Ok(())
    }

    /// Encodes a clean `n x 4` state. With `eps = None` the latent is the mean.
    pub fn encode(&self, state: &[[f64; CHANNELS]], eps: Option<&[f64]>) -> Result<LatentCode> {
        self.check_state(state)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.constant(vec![state.len(), CHANNELS], state.iter().flatten().copied().collect())?;
        let lat = self.encode_on(&mut tape, &bound, x)?;
        let mu = tape.value(lat.mu).to_vec();
        let logvar = tape.value(lat.logvar).to_vec();
        let z = match eps {
            None => mu.clone(),
            Some(e) => {
                if e.len() != mu.len() {
                    return Err(Error::Shape {
                        op: "reparameterize",
                        lhs: vec![mu.len()],
                        rhs: vec![e.len()],
                    });
                }
                let e = clamp_eps(e);
                let zv = self.reparameterize_on(&mut tape, lat, &e)?;
                tape.value(zv).to_vec()
            }
        };
        Ok(LatentCode { mu, logvar, z })
    }

    /// Predicts the noise in `state` at step `t`, conditioned on `z`.
    pub fn decode(&self, state: &[[f64; CHANNELS]], t: usize, schedule: &VarianceSchedule, z: &[f64]) -> Result<NoiseField> {
        if z.len() != self.config.latent_dim {
            return Err(Error::Shape {
                op: "decode",
                lhs: vec![self.config.latent_dim],
                rhs: vec![z.len()],
            });
        }
        let emb = time_embedding(t, schedule, self.config.time_dim, self.config.time_conditioning)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.constant(vec![state.len(), CHANNELS], state.iter().flatten().copied().collect())?;
        let zv = tape.constant(vec![z.len()], z.to_vec())?;
        let out = self.decode_on(&mut tape, &bound, x, &emb, zv)?;
        let values = tape
            .value(out)
            .chunks_exact(CHANNELS)
            .map(|c| [c[0], c[1], c[2], c[3]])
            .collect();
        Ok(NoiseField { values })
    }
}

/// Truncates reparameterization noise to `[-EPS_CLAMP, EPS_CLAMP]`.
pub fn clamp_eps(eps: &[f64]) -> Vec<f64> {
    eps.iter().map(|e| e.clamp(-EPS_CLAMP, EPS_CLAMP)).collect()
}

/// Draws truncated standard-normal reparameterization noise.
pub fn sample_eps<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    clamp_eps(&rng::normals(rng, dim))
}

/// `[beta_t, t/T, sin(w_k t/T), cos(w_k t/T) for k < d/2 - 1]` with
/// frequencies `w_k` spaced geometrically from `pi` to `pi * T`.
pub fn time_embedding(t: usize, schedule: &VarianceSchedule, dim: usize, mode: TimeConditioning) -> Result<Vec<f64>> {
    let beta = schedule.beta(t)?;
    if dim < 2 || !dim.is_multiple_of(2) {
        return Err(Error::invalid(format!("time embedding width {dim} must be even and >= 2")));
    }
    let mut emb = vec![0.0; dim];
    emb[0] = beta;
    if mode == TimeConditioning::BetaOnly {
        return Ok(emb);
    }
    let big_t = schedule.num_steps() as f64;
    let frac = t as f64 / big_t;
    emb[1] = frac;
    let freqs = dim / 2 - 1;
    for k in 0..freqs {
        let w = PI * big_t.powf(k as f64 / (freqs.max(2) - 1) as f64);
        emb[2 + 2 * k] = (w * frac).sin();
        emb[3 + 2 * k] = (w * frac).cos();
    }
    Ok(emb)
}

/// `0.5 * sum(exp(logvar) + mu^2 - 1 - logvar)`.
pub fn kl_to_prior(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

/// [`kl_to_prior`] recorded on a tape.
pub fn kl_on(tape: &mut Tape, latent: LatentVars) -> Result<Var> {
    let d = tape.shape(latent.mu)[0];
    let ev = tape.exp(latent.logvar);
    let mu2 = tape.square(latent.mu);
    let s = tape.add(ev, mu2)?;
    let neg_lv = tape.scale(latent.logvar, -1.0)?;
    let s = tape.add(s, neg_lv)?;
    let minus_one = tape.constant(vec![d], vec![-1.0; d])?;
    let s = tape.add(s, minus_one)?;
    let total = tape.sum(s);
    tape.scale(total, 0.5)
}

impl fmt::Display for NetConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "d_z={} d_t={} encoder={:?} decoder={:?} time={}",
            self.latent_dim,
            self.time_dim,
            self.encoder_widths,
            self.decoder_widths,
            self.time_conditioning.as_str()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::finite_diff_check;

    fn small() -> NetConfig {
        NetConfig {
            latent_dim: 6,
            time_dim: 8,
            encoder_widths: vec![8, 12],
            decoder_widths: vec![10, 7],
            time_conditioning: TimeConditioning::Full,
        }
    }

    fn random_state(seed: u64, n: usize) -> Vec<[f64; 4]> {
        let mut r = rng::stream(seed, Purpose::Noise, &[]);
        (0..n)
            .map(|_| [0; 4].map(|_: i32| rng::standard_normal(&mut r)))
            .collect()
    }

    #[test]
    fn default_config_is_under_a_million_parameters() {
        let m = Model::new(NetConfig::default(), 0).unwrap();
        assert_eq!(m.num_parameters(), 296_576 + 141_444);
        assert!(m.num_parameters() < 1_000_000);
    }

    #[test]
    fn encoder_is_permutation_invariant_and_duplicate_invariant() {
        let m = Model::new(small(), 1).unwrap();
        let s = random_state(2, 9);
        let base = m.encode(&s, None).unwrap();
        let mut perm = s.clone();
        perm.reverse();
        perm.swap(0, 4);
        let p = m.encode(&perm, None).unwrap();
        assert_eq!(p.mu, base.mu);
        assert_eq!(p.logvar, base.logvar);
        let dup: Vec<_> = s.iter().chain(&s).copied().collect();
        assert_eq!(m.encode(&dup, None).unwrap().mu, base.mu);
    }

    #[test]
    fn distinct_inputs_give_distinct_latents() {
        use crate::cloud::{generate_synthetic, ShapeFamily};
        use crate::noising::{DiffusedCloud, LabelEncoding, Mode};
        let m = Model::new(NetConfig::default(), 5).unwrap();
        let a = generate_synthetic(ShapeFamily::Barbell, 128, 1).unwrap().normalize().cloud;
        let b = generate_synthetic(ShapeFamily::Chair, 128, 1).unwrap().normalize().cloud;
        let sa = DiffusedCloud::from_cloud(&a, Mode::Guided, LabelEncoding::Centered);
        let sb = DiffusedCloud::from_cloud(&b, Mode::Guided, LabelEncoding::Centered);
        let ma = m.encode(&sa.state, None).unwrap().mu;
        let mb = m.encode(&sb.state, None).unwrap().mu;
        let diff: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-3, "{diff}");
    }

    #[test]
    fn reparameterization_respects_truncation() {
        let m = Model::new(small(), 3).unwrap();
        let s = random_state(4, 5);
        let eps = vec![100.0, -100.0, 0.5, 0.0, 6.0, -3.0];
        let lat = m.encode(&s, Some(&eps)).unwrap();
        for i in 0..6 {
            let bound = EPS_CLAMP * (lat.logvar[i] / 2.0).exp();
            assert!((lat.z[i] - lat.mu[i]).abs() <= bound * (1.0 + 1e-12));
        }
        let want0 = lat.mu[0] + 6.0 * (lat.logvar[0] / 2.0).exp();
        assert!((lat.z[0] - want0).abs() < 1e-12);
    }

    #[test]
    fn decoder_is_permutation_equivariant() {
        let m = Model::new(small(), 7).unwrap();
        let sched = VarianceSchedule::default();
        let s = random_state(8, 11);
        let z = vec![0.3, -0.2, 0.1, 0.0, 1.0, -1.0];
        let out = m.decode(&s, 17, &sched, &z).unwrap();
        assert_eq!(out.len(), 11);
        let perm: Vec<usize> = (0..11).map(|i| (i * 7 + 3) % 11).collect();
        let ps: Vec<_> = perm.iter().map(|&i| s[i]).collect();
        let pout = m.decode(&ps, 17, &sched, &z).unwrap();
        for (row, &i) in perm.iter().enumerate() {
            assert_eq!(pout.values[row], out.values[i]);
        }
        assert_eq!(m.decode(&s[..1], 3, &sched, &z).unwrap().len(), 1);
    }

    #[test]
    fn decoder_gradients_match_finite_differences() {
        let m = Model::new(small(), 9).unwrap();
        let sched = VarianceSchedule::default();
        let s = random_state(10, 5);
        let flat: Vec<f64> = s.iter().flatten().copied().collect();
        let emb = time_embedding(42, &sched, 8, TimeConditioning::Full).unwrap();
        let z = Tensor::vector(vec![0.3, -0.2, 0.1, 0.0, 1.0, -1.0]);
        let mut inputs: Vec<Tensor> = m.params().into_iter().cloned().collect();
        inputs.push(z);
        let report = finite_diff_check(
            |tape, vars| {
                let bound = m.bound_from(&vars[..vars.len() - 1])?;
                let x = tape.constant(vec![5, 4], flat.clone())?;
                let out = m.decode_on(tape, &bound, x, &emb, vars[vars.len() - 1])?;
                Ok(tape.sum(out))
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert_eq!(report.checked, m.num_parameters());
    }

    #[test]
    fn time_embedding_properties() {
        let sched = VarianceSchedule::default();
        let embs: Vec<Vec<f64>> = (1..=sched.num_steps())
            .map(|t| time_embedding(t, &sched, 32, TimeConditioning::Full).unwrap())
            .collect();
        for (i, e) in embs.iter().enumerate() {
            assert_eq!(e.len(), 32);
            assert_eq!(e[0], sched.beta(i + 1).unwrap());
            let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm.is_finite() && norm <= 32f64.sqrt() + 1.0);
            for f in &embs[..i] {
                assert_ne!(e, f);
            }
        }
        assert!(time_embedding(0, &sched, 32, TimeConditioning::Full).is_err());
        assert!(time_embedding(201, &sched, 32, TimeConditioning::Full).is_err());
        let b = time_embedding(9, &sched, 8, TimeConditioning::BetaOnly).unwrap();
        assert_eq!(b[0], sched.beta(9).unwrap());
        assert!(b[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn kl_values() {
        assert_eq!(kl_to_prior(&[0.0; 4], &[0.0; 4]), 0.0);
        assert_eq!(kl_to_prior(&[1.0], &[0.0]), 0.5);
        let mut tape = Tape::new();
        let mu = tape.constant(vec![2], vec![0.3, -1.2]).unwrap();
        let lv = tape.constant(vec![2], vec![0.5, -0.7]).unwrap();
        let k = kl_on(&mut tape, LatentVars { mu, logvar: lv }).unwrap();
        assert!((tape.scalar(k) - kl_to_prior(&[0.3, -1.2], &[0.5, -0.7])).abs() < 1e-15);
    }
}
