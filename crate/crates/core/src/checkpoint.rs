//! Versioned binary checkpoints.
//!
//! Layout (little-endian): magic `PCDK`, version `u32`, mode `u8`, then the
//! configuration echo (latent and time widths, time conditioning, layer
//! widths, schedule, class count, label encoding), the parameter tensors as
//! `(rank u32, extents u32 x rank, f64 data)`, and an optional training
//! section holding the optimizer moments so a run can resume exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::nn::{Model, NetConfig, TimeConditioning};
use crate::noising::{LabelEncoding, Mode};
use crate::optim::{Adam, AdamConfig};
use crate::schedule::LinearSchedule;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PCDK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Optimizer and bookkeeping needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainProgress {
    pub step: u64,
    pub seed: u64,
    pub adam: Adam,
    /// Exponential average of the batch loss, if any step has run.
    pub loss_ema: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub mode: Mode,
    pub schedule: LinearSchedule,
    pub num_classes: u32,
    pub encoding: LabelEncoding,
    pub model: Model,
    pub progress: Option<TrainProgress>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn widths(&mut self, w: &[usize]) {
        self.u32(w.len());
        w.iter().for_each(|&x| self.u32(x));
    }
    fn tensor(&mut self, shape: &[usize], data: &[f64]) {
        self.widths(shape);
        data.iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(self.pos as u64, format!("truncated checkpoint: needed {n} more bytes")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn widths(&mut self) -> Result<Vec<usize>> {
        let at = self.pos;
        let n = self.u32()?;
        if n > 64 {
            return Err(Error::format(at as u64, format!("implausible list length {n}")));
        }
        (0..n).map(|_| self.u32()).collect()
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let at = self.pos;
        let shape = self.widths()?;
        let numel: usize = shape.iter().product();
        if numel * 8 > self.buf.len() - self.pos {
            return Err(Error::format(at as u64, format!("tensor {shape:?} exceeds remaining bytes")));
        }
        let data = (0..numel).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::new(shape, data)
    }
    fn bad(&self, at: usize, msg: String) -> Error {
        Error::format(at as u64, msg)
    }
}

fn mode_code(m: Mode) -> u8 {
    match m {
        Mode::Guided => 0,
        Mode::Unguided => 1,
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION as usize);
        w.u8(mode_code(self.mode));
        let cfg = self.model.config();
        w.u32(cfg.latent_dim);
        w.u32(cfg.time_dim);
        w.u8(match cfg.time_conditioning {
            TimeConditioning::Full => 0,
            TimeConditioning::BetaOnly => 1,
        });
        w.widths(&cfg.encoder_widths);
        w.widths(&cfg.decoder_widths);
        w.f64(self.schedule.beta_start);
        w.f64(self.schedule.beta_end);
        w.u32(self.schedule.num_steps);
        w.u32(self.num_classes as usize);
        w.u8(match self.encoding {
            LabelEncoding::Centered => 0,
            LabelEncoding::Raw => 1,
        });
        let params = self.model.params();
        w.u32(params.len());
        for p in &params {
            w.tensor(p.shape(), p.data());
        }
        match &self.progress {
            None => w.u8(0),
            Some(pr) => {
                w.u8(1);
                w.u64(pr.step);
                w.u64(pr.seed);
                let c = pr.adam.config;
                [c.lr, c.beta1, c.beta2, c.eps].into_iter().for_each(|x| w.f64(x));
                w.u64(pr.adam.step);
                for (p, (m, v)) in params.iter().zip(pr.adam.m.iter().zip(&pr.adam.v)) {
                    w.tensor(p.shape(), m);
                    w.tensor(p.shape(), v);
                }
                match pr.loss_ema {
                    None => w.u8(0),
                    Some(e) => {
                        w.u8(1);
                        w.f64(e);
                    }
                }
            }
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION as usize {
            return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
        }
        let at = r.pos;
        let mode = match r.u8()? {
            0 => Mode::Guided,
            1 => Mode::Unguided,
            m => return Err(r.bad(at, format!("unknown mode byte {m}"))),
        };
        let latent_dim = r.u32()?;
        let time_dim = r.u32()?;
        let at = r.pos;
        let time_conditioning = match r.u8()? {
            0 => TimeConditioning::Full,
            1 => TimeConditioning::BetaOnly,
            m => return Err(r.bad(at, format!("unknown time conditioning byte {m}"))),
        };
        let encoder_widths = r.widths()?;
        let decoder_widths = r.widths()?;
        let schedule = LinearSchedule {
            beta_start: r.f64()?,
            beta_end: r.f64()?,
            num_steps: r.u32()?,
        };
        let num_classes = r.u32()? as u32;
        let at = r.pos;
        let encoding = match r.u8()? {
            0 => LabelEncoding::Centered,
            1 => LabelEncoding::Raw,
            m => return Err(r.bad(at, format!("unknown label encoding byte {m}"))),
        };
        let config = NetConfig {
            latent_dim,
            time_dim,
            encoder_widths,
            decoder_widths,
            time_conditioning,
        };
        let at = r.pos;
        let count = r.u32()?;
        if count > 1024 {
            return Err(r.bad(at, format!("implausible parameter count {count}")));
        }
        let tensors = (0..count).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
        let model = Model::from_params(config, tensors).map_err(|e| Error::format(at as u64, e.to_string()))?;
        let at = r.pos;
        let progress = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let seed = r.u64()?;
                let config = AdamConfig {
                    lr: r.f64()?,
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                };
                let adam_step = r.u64()?;
                let mut m = Vec::new();
                let mut v = Vec::new();
                for p in model.params() {
                    let at = r.pos;
                    let (mt, vt) = (r.tensor()?, r.tensor()?);
                    if mt.shape() != p.shape() || vt.shape() != p.shape() {
                        return Err(r.bad(at, "optimizer moment shape differs from its parameter".into()));
                    }
                    m.push(mt.into_data());
                    v.push(vt.into_data());
                }
                let at = r.pos;
                let loss_ema = match r.u8()? {
                    0 => None,
                    1 => Some(r.f64()?),
                    b => return Err(r.bad(at, format!("bad flag byte {b}"))),
                };
                Some(TrainProgress {
                    step,
                    seed,
                    adam: Adam {
                        config,
                        step: adam_step,
                        m,
                        v,
                    },
                    loss_ema,
                })
            }
            b => return Err(r.bad(at, format!("bad flag byte {b}"))),
        };
        if r.pos != buf.len() {
            return Err(r.bad(r.pos, format!("{} trailing bytes", buf.len() - r.pos)));
        }
        schedule.build().map_err(|e| Error::format(0, e.to_string()))?;
        Ok(Self {
            mode,
            schedule,
            num_classes,
            encoding,
            model,
            progress,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetConfig {
        NetConfig {
            latent_dim: 3,
            time_dim: 4,
            encoder_widths: vec![5, 6],
            decoder_widths: vec![7],
            time_conditioning: TimeConditioning::BetaOnly,
        }
    }

    fn sample(progress: bool) -> Checkpoint {
        let model = Model::new(tiny(), 9).unwrap();
        let progress = progress.then(|| {
            let mut adam = Adam::for_params(AdamConfig::default(), &model.params());
            adam.step = 3;
            adam.m[0][0] = 0.125;
            adam.v[1][0] = f64::MIN_POSITIVE;
            TrainProgress {
                step: 3,
                seed: 42,
                adam,
                loss_ema: Some(0.1 + 0.2),
            }
        });
        Checkpoint {
            mode: Mode::Unguided,
            schedule: LinearSchedule {
                beta_start: 1e-4,
                beta_end: 0.05,
                num_steps: 50,
            },
            num_classes: 3,
            encoding: LabelEncoding::Raw,
            model,
            progress,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for with in [false, true] {
            let ck = sample(with);
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample(true).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 4, .. })));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}
