//! Variance schedules and the closed-form forward coefficients.

use crate::error::{Error, Result};

pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.05;
pub const DEFAULT_NUM_STEPS: usize = 200;

/// `beta_t`, `alpha_t = 1 - beta_t` and `alpha_bar_t = prod_{s<=t} alpha_s`
/// for `t = 1..=T`. Storage is zero-based; accessors take one-based `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Forward-kernel coefficients at one timestep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coefficients {
    /// `sqrt(alpha_bar_t)`
    pub c0: f64,
    /// `sqrt(1 - alpha_bar_t)`
    pub c1: f64,
    pub beta: f64,
}

impl VarianceSchedule {
    /// Linear interpolation of `beta` over `t = 1..=T`, both endpoints exact.
    pub fn linear(beta_start: f64, beta_end: f64, num_steps: usize) -> Result<Self> {
        let ok = beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0 && num_steps >= 1;
        if !ok {
            return Err(Error::invalid(format!(
                "linear schedule needs 0 < beta_start <= beta_end < 1 and T >= 1, got ({beta_start}, {beta_end}, {num_steps})"
            )));
        }
        let betas: Vec<f64> = (0..num_steps)
            .map(|i| {
                if i == 0 {
                    beta_start
                } else if i == num_steps - 1 {
                    beta_end
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (num_steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Builds the schedule from explicit betas, each in `(0, 1)`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::invalid("betas must be non-empty and lie in (0, 1)"));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.num_steps() {
            return Err(Error::invalid(format!("timestep {t} outside 1..={}", self.num_steps())));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.check(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.check(t)?])
    }

    /// `alpha_bar_t` for `t` in `0..=T`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        Ok(self.alpha_bars[self.check(t)?])
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn coefficients(&self, t: usize) -> Result<Coefficients> {
        let i = self.check(t)?;
        let ab = self.alpha_bars[i];
        Ok(Coefficients {
            c0: ab.sqrt(),
            c1: (1.0 - ab).sqrt(),
            beta: self.betas[i],
        })
    }
}

/// Parameters of a linear schedule, as stored in configs and checkpoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearSchedule {
    pub beta_start: f64,
    pub beta_end: f64,
    pub num_steps: usize,
}

impl Default for LinearSchedule {
    fn default() -> Self {
        Self {
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            num_steps: DEFAULT_NUM_STEPS,
        }
    }
}

impl LinearSchedule {
    pub fn build(&self) -> Result<VarianceSchedule> {
        VarianceSchedule::linear(self.beta_start, self.beta_end, self.num_steps)
    }
}

impl Default for VarianceSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_BETA_START, DEFAULT_BETA_END, DEFAULT_NUM_STEPS)
            .expect("default schedule parameters are valid")
    }
}
