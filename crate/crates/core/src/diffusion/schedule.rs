use serde::{Deserialize, Serialize};

use super::DiffusionError;

/// Per-timestep noise coefficients of a discrete DDPM.
///
/// Timesteps are zero-based: `alpha_bars[t]` is the product of `alphas[0..=t]`.
/// `sigmas[0]` is defined as zero, so the final reverse step is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

pub const DEFAULT_NUM_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

impl Default for DiffusionSchedule {
    fn default() -> Self {
        build_schedule(DEFAULT_NUM_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule parameters are valid")
    }
}

/// Linear beta ramp from `beta_start` to `beta_end` over `num_steps` steps.
pub fn build_schedule(
    num_steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<DiffusionSchedule, DiffusionError> {
    if num_steps < 2 {
        return Err(DiffusionError::Config(format!(
            "schedule needs at least 2 steps, got {num_steps}"
        )));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DiffusionError::Config(format!(
            "beta range must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let betas: Vec<f64> = (0..num_steps)
        .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (num_steps - 1) as f64)
        .collect();
    DiffusionSchedule::from_betas(betas)
}

impl DiffusionSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, DiffusionError> {
        if betas.len() < 2 {
            return Err(DiffusionError::Config("schedule needs at least 2 steps".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(DiffusionError::Config(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let sigmas = (0..alphas.len())
            .map(|t| {
                if t == 0 {
                    0.0
                } else {
                    ((1.0 - alpha_bars[t - 1]) / (1.0 - alpha_bars[t]) * betas[t]).sqrt()
                }
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            sigmas,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub(crate) fn check_timestep(&self, t: usize) -> Result<(), DiffusionError> {
        if t >= self.num_steps() {
            return Err(DiffusionError::Timestep {
                t,
                num_steps: self.num_steps(),
            });
        }
        Ok(())
    }
}
