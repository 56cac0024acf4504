//! Training loops for both modes.
//!
//! Each step draws a batch, and for every item: encodes the clean cloud,
//! samples a timestep and noise, noises the cloud, predicts the noise, and
//! differentiates the mode's objective through encoder and decoder. Item
//! gradients are averaged in item order and applied with Adam.
//!
//! Every random draw comes from a stream keyed by `(seed, purpose, step,
//! item)`, so a run is a pure function of its seed, config and data and can
//! resume from a checkpoint without replaying earlier steps.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::checkpoint::{Checkpoint, TrainProgress};
use crate::cloud::LabeledPointCloud;
use crate::error::{Error, Result};
use crate::grad::Tape;
use crate::losses::{self, LossBreakdown, TapedLoss, DEFAULT_KL_WEIGHT};
use crate::nn::{self, BoundModel, Model, NetConfig};
use crate::noising::{self, DiffusedCloud, LabelEncoding, Mode, NoiseField, CHANNELS};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{self, Purpose};
use crate::schedule::{LinearSchedule, VarianceSchedule};

/// Span of the exponential loss average.
pub const LOSS_EMA_WINDOW: f64 = 100.0;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub batch_size: usize,
    pub max_steps: u64,
    pub learning_rate: f64,
    pub kl_weight: f64,
    pub schedule: LinearSchedule,
    pub seed: u64,
    /// Save every this many steps; 0 saves only at the end.
    pub checkpoint_every: u64,
    pub net: NetConfig,
    pub encoding: LabelEncoding,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Guided,
            batch_size: 16,
            max_steps: 2000,
            learning_rate: 1e-3,
            kl_weight: DEFAULT_KL_WEIGHT,
            schedule: LinearSchedule::default(),
            seed: 0,
            checkpoint_every: 500,
            net: NetConfig::default(),
            encoding: LabelEncoding::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::invalid(format!("kl weight {} must be finite and >= 0", self.kl_weight)));
        }
        self.net.validate()?;
        self.schedule.build()?;
        Ok(())
    }
}

/// Model, optimizer state and running statistics of one run.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    model: Model,
    adam: Adam,
    schedule: VarianceSchedule,
    num_classes: u32,
    step: u64,
    loss_ema: Option<f64>,
}

struct ItemResult {
    breakdown: LossBreakdown,
    grads: Vec<Vec<f64>>,
}

impl Trainer {
    pub fn new(config: TrainConfig, num_classes: u32) -> Result<Self> {
        config.validate()?;
        if num_classes == 0 {
            return Err(Error::invalid("need at least one class"));
        }
        let model = Model::new(config.net.clone(), config.seed)?;
        let adam = Adam::for_params(
            AdamConfig {
                lr: config.learning_rate,
                ..Default::default()
            },
            &model.params(),
        );
        Ok(Self {
            schedule: config.schedule.build()?,
            config,
            model,
            adam,
            num_classes,
            step: 0,
            loss_ema: None,
        })
    }

    /// Continues a run. The checkpoint must carry training progress and agree
    /// with `config` on everything that shapes the model or the random
    /// streams; the step budget, cadence and learning rate may change.
    pub fn resume(config: TrainConfig, ck: Checkpoint) -> Result<Self> {
        config.validate()?;
        let progress = ck
            .progress
            .ok_or_else(|| Error::invalid("checkpoint has no training state to resume from"))?;
        let mismatch = |what: &str| Err(Error::invalid(format!("resume: {what} differs between config and checkpoint")));
        if ck.mode != config.mode {
            return mismatch("mode");
        }
        if ck.model.config() != &config.net {
            return mismatch("network config");
        }
        if ck.schedule != config.schedule {
            return mismatch("schedule");
        }
        if ck.encoding != config.encoding {
            return mismatch("label encoding");
        }
        if progress.seed != config.seed {
            return mismatch("seed");
        }
        let mut adam = progress.adam;
        adam.config.lr = config.learning_rate;
        Ok(Self {
            schedule: config.schedule.build()?,
            config,
            model: ck.model,
            adam,
            num_classes: ck.num_classes,
            step: progress.step,
            loss_ema: progress.loss_ema,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            mode: self.config.mode,
            schedule: self.config.schedule,
            num_classes: self.num_classes,
            encoding: self.config.encoding,
            model: self.model.clone(),
            progress: Some(TrainProgress {
                step: self.step,
                seed: self.config.seed,
                adam: self.adam.clone(),
                loss_ema: self.loss_ema,
            }),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn schedule(&self) -> &VarianceSchedule {
        &self.schedule
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    /// Steps completed so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn loss_ema(&self) -> Option<f64> {
        self.loss_ema
    }

    /// Dataset indices of the next batch: positions `step * B .. step * B + B`
    /// of an endless sequence of seeded permutations, one per epoch.
    pub fn batch_indices(&self, dataset_len: usize) -> Vec<usize> {
        let b = self.config.batch_size as u64;
        let n = dataset_len as u64;
        let mut cached: Option<(u64, Vec<usize>)> = None;
        (0..b)
            .map(|j| {
                let g = self.step * b + j;
                let epoch = g / n;
                if cached.as_ref().map(|c| c.0) != Some(epoch) {
                    let mut perm: Vec<usize> = (0..dataset_len).collect();
                    perm.shuffle(&mut rng::stream(self.config.seed, Purpose::Batch, &[epoch]));
                    cached = Some((epoch, perm));
                }
                cached.as_ref().unwrap().1[(g % n) as usize]
            })
            .collect()
    }

    /// Draws the next batch from `data` and applies one update.
    pub fn step_on(&mut self, data: &[LabeledPointCloud]) -> Result<LossBreakdown> {
        if data.is_empty() {
            return Err(Error::invalid("empty training set"));
        }
        let idx = self.batch_indices(data.len());
        let batch: Vec<&LabeledPointCloud> = idx.iter().map(|&i| &data[i]).collect();
        self.step_on_batch(&batch)
    }

    /// One optimizer update from an explicit batch.
    pub fn step_on_batch(&mut self, batch: &[&LabeledPointCloud]) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if let Some(c) = batch.iter().find(|c| c.num_classes() != self.num_classes) {
            return Err(Error::invalid(format!(
                "cloud has {} classes, trainer expects {}",
                c.num_classes(),
                self.num_classes
            )));
        }
        let this = &*self;
        let items: Vec<Result<ItemResult>> = batch
            .par_iter()
            .enumerate()
            .map(|(j, cloud)| this.item(cloud, j as u64))
            .collect();
        let items = items.into_iter().collect::<Result<Vec<_>>>()?;

        let breakdowns: Vec<LossBreakdown> = items.iter().map(|r| r.breakdown).collect();
        let mean = LossBreakdown::mean(&breakdowns);
        let scale = 1.0 / items.len() as f64;
        let mut grads: Vec<Vec<f64>> = self.model.params().iter().map(|p| vec![0.0; p.numel()]).collect();
        for item in &items {
            for (acc, g) in grads.iter_mut().zip(&item.grads) {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
        grads.iter_mut().flatten().for_each(|g| *g *= scale);
        if !mean.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NumericalAbort {
                step: self.step,
                breakdown: mean.to_string(),
            });
        }
        self.adam.update(&mut self.model.params_mut(), &grads)?;
        self.step += 1;
        let alpha = 2.0 / (LOSS_EMA_WINDOW + 1.0);
        self.loss_ema = Some(match self.loss_ema {
            None => mean.total,
            Some(e) => e + alpha * (mean.total - e),
        });
        Ok(mean)
    }

    fn item(&self, cloud: &LabeledPointCloud, item: u64) -> Result<ItemResult> {
        let draws = ItemDraws::new(&self.config, &self.schedule, self.step, item, cloud.len());
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape);
        let loss = loss_on(&mut tape, &self.model, &bound, cloud, &draws, &self.config, &self.schedule)?;
        let g = tape.backward(loss.total)?;
        let grads = bound
            .params
            .iter()
            .zip(self.model.params())
            .map(|(&v, p)| g.wrt(v).map_or_else(|| vec![0.0; p.numel()], <[f64]>::to_vec))
            .collect();
        Ok(ItemResult {
            breakdown: loss.breakdown,
            grads,
        })
    }

    /// Mean loss over `probes` fixed draws, without updating. The draws
    /// depend only on the seed, so values are comparable across steps.
    pub fn probe(&self, cloud: &LabeledPointCloud, probes: u64) -> Result<LossBreakdown> {
        let items = (0..probes)
            .map(|p| {
                let draws = ItemDraws::new(&self.config, &self.schedule, u64::MAX, p, cloud.len());
                let mut tape = Tape::new();
                let bound = self.model.bind(&mut tape);
                Ok(loss_on(&mut tape, &self.model, &bound, cloud, &draws, &self.config, &self.schedule)?.breakdown)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LossBreakdown::mean(&items))
    }

    /// Runs until `max_steps`, calling `on_step` after every update.
    pub fn fit(
        &mut self,
        data: &[LabeledPointCloud],
        mut on_step: impl FnMut(&Trainer, &LossBreakdown) -> Result<()>,
    ) -> Result<()> {
        while self.step < self.config.max_steps {
            let b = self.step_on(data)?;
            on_step(self, &b)?;
        }
        Ok(())
    }

    /// Whether the cadence calls for a checkpoint after the current step.
    pub fn checkpoint_due(&self) -> bool {
        let every = self.config.checkpoint_every;
        self.step == self.config.max_steps || (every > 0 && self.step.is_multiple_of(every))
    }
}

/// The random inputs of one item's loss.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemDraws {
    pub t: usize,
    pub noise: NoiseField,
    /// Truncated reparameterization noise.
    pub eps: Vec<f64>,
}

impl ItemDraws {
    /// Draws for batch position `item` of step `step`.
    pub fn new(cfg: &TrainConfig, schedule: &VarianceSchedule, step: u64, item: u64, n: usize) -> Self {
        let key = [step, item];
        Self {
            t: rng::stream(cfg.seed, Purpose::Timestep, &key).random_range(1..=schedule.num_steps()),
            noise: NoiseField::sample(&mut rng::stream(cfg.seed, Purpose::Noise, &key), n, cfg.mode),
            eps: nn::sample_eps(&mut rng::stream(cfg.seed, Purpose::Latent, &key), cfg.net.latent_dim),
        }
    }
}

/// Records the full objective of one item on `tape`: encode the clean
/// cloud, reparameterize, noise at `draws.t`, predict the noise and score it
/// with the mode's loss.
pub fn loss_on(
    tape: &mut Tape,
    model: &Model,
    bound: &BoundModel,
    cloud: &LabeledPointCloud,
    draws: &ItemDraws,
    cfg: &TrainConfig,
    schedule: &VarianceSchedule,
) -> Result<TapedLoss> {
    let n = cloud.len();
    let x0 = DiffusedCloud::from_cloud(cloud, cfg.mode, cfg.encoding);
    let noised = match cfg.mode {
        Mode::Guided => noising::noise_guided(&x0, schedule, draws.t, &draws.noise)?,
        Mode::Unguided => noising::noise_unguided(&x0, schedule, draws.t, &draws.noise)?,
    };
    let emb = nn::time_embedding(draws.t, schedule, model.config().time_dim, model.config().time_conditioning)?;
    let clean = tape.constant(vec![n, CHANNELS], x0.flat())?;
    let latent = model.encode_on(tape, bound, clean)?;
    let z = model.reparameterize_on(tape, latent, &draws.eps)?;
    let kl = nn::kl_on(tape, latent)?;
    let state = tape.constant(vec![n, CHANNELS], noised.flat())?;
    let e_theta = model.decode_on(tape, bound, state, &emb, z)?;
    match cfg.mode {
        Mode::Guided => {
            let noised_xyz: Vec<f64> = noised.state.iter().flat_map(|v| [v[0], v[1], v[2]]).collect();
            losses::guided_total_on(
                tape,
                e_theta,
                &draws.noise.spatial_flat(),
                &noised_xyz,
                cloud.points(),
                cloud.labels(),
                kl,
                cfg.kl_weight,
            )
        }
        Mode::Unguided => losses::unguided_total_on(tape, e_theta, &draws.noise.flat(), kl, cfg.kl_weight),
    }
}

/// One guided update (labels stay fixed, spatial channels are diffused).
pub fn train_step_guided(trainer: &mut Trainer, batch: &[&LabeledPointCloud]) -> Result<LossBreakdown> {
    if trainer.config.mode != Mode::Guided {
        return Err(Error::invalid("train_step_guided on an unguided trainer"));
    }
    trainer.step_on_batch(batch)
}

/// One unguided update (all four channels diffused).
pub fn train_step_unguided(trainer: &mut Trainer, batch: &[&LabeledPointCloud]) -> Result<LossBreakdown> {
    if trainer.config.mode != Mode::Unguided {
        return Err(Error::invalid("train_step_unguided on a guided trainer"));
    }
    trainer.step_on_batch(batch)
}

/// `step spatial_mse label_mse per_class_cd kl total`, full precision.
pub fn log_line(step: u64, b: &LossBreakdown) -> String {
    format!(
        "{step} {} {} {} {} {}",
        b.spatial_mse, b.label_mse, b.per_class_cd, b.kl, b.total
    )
}

/// Header line for the metrics log.
pub const LOG_HEADER: &str = "# step spatial_mse label_mse per_class_cd kl total";
