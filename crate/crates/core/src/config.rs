//! `key = value` run configuration with `#` comments.
//!
//! Files and command-line flags feed the same keys; unknown keys are
//! rejected. [`RunConfig::to_text`] writes every resolved key back out in the
//! same format, so a logged config replays the run.

use std::path::Path;
use std::str::FromStr;

use crate::cloud::SplitMode;
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_JSD_RESOLUTION;
use crate::sample::SamplerVariant;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub sampler: SamplerVariant,
    /// `None` trains on every shape.
    pub split: Option<SplitMode>,
    pub split_ratio: f64,
    pub jsd_resolution: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            sampler: SamplerVariant::default(),
            split: None,
            split_ratio: 0.8,
            jsd_resolution: DEFAULT_JSD_RESOLUTION,
        }
    }
}

pub const KEYS: &[&str] = &[
    "mode",
    "batch_size",
    "max_steps",
    "learning_rate",
    "kl_weight",
    "beta_start",
    "beta_end",
    "num_steps",
    "seed",
    "checkpoint_every",
    "latent_dim",
    "time_dim",
    "encoder_widths",
    "decoder_widths",
    "time_conditioning",
    "label_encoding",
    "sampler",
    "split",
    "split_ratio",
    "jsd_resolution",
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Usage(format!("bad value {v:?} for {key}")))
}

fn widths(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|w| parse(key, w.trim())).collect()
}

fn join(w: &[usize]) -> String {
    w.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one key. Values are validated as a whole by [`RunConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let v = value.trim();
        let usage = |e: Error| Error::Usage(format!("{key}: {e}"));
        match key {
            "mode" => t.mode = v.parse().map_err(usage)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "max_steps" => t.max_steps = parse(key, v)?,
            "learning_rate" => t.learning_rate = parse(key, v)?,
            "kl_weight" => t.kl_weight = parse(key, v)?,
            "beta_start" => t.schedule.beta_start = parse(key, v)?,
            "beta_end" => t.schedule.beta_end = parse(key, v)?,
            "num_steps" => t.schedule.num_steps = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, v)?,
            "latent_dim" => t.net.latent_dim = parse(key, v)?,
            "time_dim" => t.net.time_dim = parse(key, v)?,
            "encoder_widths" => t.net.encoder_widths = widths(key, v)?,
            "decoder_widths" => t.net.decoder_widths = widths(key, v)?,
            "time_conditioning" => t.net.time_conditioning = v.parse().map_err(usage)?,
            "label_encoding" => t.encoding = v.parse().map_err(usage)?,
            "sampler" => self.sampler = v.parse().map_err(usage)?,
            "split" => {
                self.split = match v {
                    "none" => None,
                    "preset" => Some(SplitMode::Preset),
                    "random" => Some(SplitMode::Random),
                    _ => return Err(Error::Usage(format!("bad value {v:?} for split"))),
                }
            }
            "split_ratio" => self.split_ratio = parse(key, v)?,
            "jsd_resolution" => self.jsd_resolution = parse(key, v)?,
            _ => return Err(Error::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("config line {}: expected key = value, got {raw:?}", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| Error::Usage(e.to_string()))?;
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Usage(format!("split_ratio {} outside (0, 1)", self.split_ratio)));
        }
        if self.jsd_resolution < 2 {
            return Err(Error::Usage("jsd_resolution must be at least 2".into()));
        }
        Ok(())
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let split = match self.split {
            None => "none",
            Some(SplitMode::Preset) => "preset",
            Some(SplitMode::Random) => "random",
        };
        let values: [String; 20] = [
            t.mode.to_string(),
            t.batch_size.to_string(),
            t.max_steps.to_string(),
            t.learning_rate.to_string(),
            t.kl_weight.to_string(),
            t.schedule.beta_start.to_string(),
            t.schedule.beta_end.to_string(),
            t.schedule.num_steps.to_string(),
            t.seed.to_string(),
            t.checkpoint_every.to_string(),
            t.net.latent_dim.to_string(),
            t.net.time_dim.to_string(),
            join(&t.net.encoder_widths),
            join(&t.net.decoder_widths),
            t.net.time_conditioning.as_str().to_string(),
            t.encoding.as_str().to_string(),
            self.sampler.to_string(),
            split.to_string(),
            self.split_ratio.to_string(),
            self.jsd_resolution.to_string(),
        ];
        KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noising::Mode;

    #[test]
    fn parses_comments_and_lists() {
        let c = RunConfig::from_text("# run\nmode = unguided\nencoder_widths = 8, 16 # small\n\nseed=7\n").unwrap();
        assert_eq!(c.train.mode, Mode::Unguided);
        assert_eq!(c.train.net.encoder_widths, vec![8, 16]);
        assert_eq!(c.train.seed, 7);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(RunConfig::from_text("colour = red"), Err(Error::Usage(_))));
        assert!(matches!(RunConfig::from_text("seed"), Err(Error::Usage(_))));
        assert!(matches!(RunConfig::from_text("batch_size = 0"), Err(Error::Usage(_))));
        assert!(matches!(RunConfig::from_text("mode = sideways"), Err(Error::Usage(_))));
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut c = RunConfig::default();
        c.set("learning_rate", "0.0003").unwrap();
        c.set("split", "random").unwrap();
        c.set("label_encoding", "raw").unwrap();
        let text = c.to_text();
        assert_eq!(RunConfig::from_text(&text).unwrap(), c);
        assert_eq!(text.lines().count(), KEYS.len());
    }
}
