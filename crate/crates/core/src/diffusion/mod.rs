//! DDPM machinery: noise schedule, forward noising, the one-step posterior,
//! posterior stochastic latents and classifier-free guidance.

mod denoiser;
pub mod remote;
mod schedule;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{ShapeError, Tensor};

pub use denoiser::{
    analytic_gaussian_denoiser, AnalyticDenoiser, AnalyticGaussianDenoiser, Conditioning,
    Denoiser, FnDenoiser, GaussianMixtureDenoiser, GaussianMixturePrior, GaussianPrior, Prior,
    DEFAULT_EMBEDDING_DIM,
};
pub use remote::{remote_denoiser, RemoteDenoiser};
pub use schedule::{
    build_schedule, DiffusionSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_NUM_STEPS,
};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid diffusion configuration: {0}")]
    Config(String),
    #[error("timestep {t} outside [0, {num_steps})")]
    Timestep { t: usize, num_steps: usize },
    #[error("timestep {0} has sigma = 0; the posterior latent is undefined there")]
    DegenerateTimestep(usize),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("denoiser returned shape {actual:?} for input {expected:?}")]
    DenoiserShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("remote denoiser transport failure: {0}")]
    Transport(String),
    #[error("remote denoiser sent a malformed response: {0}")]
    MalformedResponse(String),
}

/// Which rendered image a stochastic latent was extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentRole {
    Source,
    Target,
    Phong,
}

/// Posterior stochastic latent `z` at timestep `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticLatent {
    pub z: Tensor,
    pub t: usize,
    pub role: LatentRole,
}

/// `sqrt(ᾱ_t) x0 + sqrt(1 - ᾱ_t) ε`.
pub fn forward_noise(
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
    schedule: &DiffusionSchedule,
) -> Result<Tensor, DiffusionError> {
    schedule.check_timestep(t)?;
    let ab = schedule.alpha_bar(t);
    Ok(x0.lincomb(ab.sqrt(), eps, (1.0 - ab).sqrt())?)
}

fn predict_checked(
    denoiser: &dyn Denoiser,
    x_t: &Tensor,
    t: usize,
    cond: &Conditioning,
) -> Result<Tensor, DiffusionError> {
    let eps = denoiser.predict_noise(x_t, t, cond)?;
    if eps.shape() != x_t.shape() {
        return Err(DiffusionError::DenoiserShape {
            expected: x_t.shape().to_vec(),
            actual: eps.shape().to_vec(),
        });
    }
    Ok(eps)
}

/// Mean of the one-step reverse transition,
/// `(x_t - (1 - α_t) / sqrt(1 - ᾱ_t) ε̂) / sqrt(α_t)`.
pub fn posterior_mean(
    x_t: &Tensor,
    t: usize,
    cond: &Conditioning,
    denoiser: &dyn Denoiser,
    schedule: &DiffusionSchedule,
) -> Result<Tensor, DiffusionError> {
    schedule.check_timestep(t)?;
    let eps = predict_checked(denoiser, x_t, t, cond)?;
    let a = schedule.alpha(t);
    let inv = 1.0 / a.sqrt();
    let coef = if a == 1.0 {
        0.0
    } else {
        (1.0 - a) / (1.0 - schedule.alpha_bar(t)).sqrt()
    };
    Ok(x_t.lincomb(inv, &eps, -coef * inv)?)
}

/// `μ(x_t, y) + σ_t z`.
pub fn reverse_step(
    x_t: &Tensor,
    t: usize,
    cond: &Conditioning,
    denoiser: &dyn Denoiser,
    z: &Tensor,
    schedule: &DiffusionSchedule,
) -> Result<Tensor, DiffusionError> {
    x_t.check_same_shape(z)?;
    let mu = posterior_mean(x_t, t, cond, denoiser, schedule)?;
    Ok(mu.lincomb(1.0, z, schedule.sigma(t))?)
}

/// Inverts the reverse step: `z = (x_{t-1} - μ(x_t, y)) / σ_t`.
pub fn latent_from_pair(
    x_t: &Tensor,
    x_prev: &Tensor,
    t: usize,
    cond: &Conditioning,
    denoiser: &dyn Denoiser,
    schedule: &DiffusionSchedule,
) -> Result<Tensor, DiffusionError> {
    schedule.check_timestep(t)?;
    let sigma = schedule.sigma(t);
    if t == 0 || sigma <= 0.0 {
        return Err(DiffusionError::DegenerateTimestep(t));
    }
    x_t.check_same_shape(x_prev)?;
    let mu = posterior_mean(x_t, t, cond, denoiser, schedule)?;
    Ok(x_prev.lincomb(1.0 / sigma, &mu, -1.0 / sigma)?)
}

/// Posterior stochastic latent of a clean image: noise it to `t` with `eps_t`
/// and to `t - 1` with `eps_prev`, then invert the reverse step.
#[allow(clippy::too_many_arguments)]
pub fn extract_latent(
    x0: &Tensor,
    t: usize,
    cond: &Conditioning,
    denoiser: &dyn Denoiser,
    eps_t: &Tensor,
    eps_prev: &Tensor,
    schedule: &DiffusionSchedule,
    role: LatentRole,
) -> Result<StochasticLatent, DiffusionError> {
    schedule.check_timestep(t)?;
    if t == 0 || schedule.sigma(t) <= 0.0 {
        return Err(DiffusionError::DegenerateTimestep(t));
    }
    let x_t = forward_noise(x0, t, eps_t, schedule)?;
    let x_prev = forward_noise(x0, t - 1, eps_prev, schedule)?;
    let z = latent_from_pair(&x_t, &x_prev, t, cond, denoiser, schedule)?;
    Ok(StochasticLatent { z, t, role })
}

/// Classifier-free guidance: `ε(x, ∅) + s (ε(x, y) - ε(x, ∅))`.
///
/// A null `cond` short-circuits to the unconditional prediction.
pub fn cfg_epsilon(
    x_t: &Tensor,
    t: usize,
    cond: &Conditioning,
    denoiser: &dyn Denoiser,
    guidance_scale: f64,
) -> Result<Tensor, DiffusionError> {
    if !(guidance_scale >= 0.0) {
        return Err(DiffusionError::Config(format!(
            "guidance scale must be non-negative, got {guidance_scale}"
        )));
    }
    let null = Conditioning::null(cond.embedding().len());
    let uncond = predict_checked(denoiser, x_t, t, &null)?;
    if cond.is_null() {
        return Ok(uncond);
    }
    let conditional = predict_checked(denoiser, x_t, t, cond)?;
    Ok(uncond.lincomb(1.0 - guidance_scale, &conditional, guidance_scale)?)
}

/// A denoiser whose predictions are classifier-free guided.
pub struct Guided<D> {
    pub inner: D,
    pub guidance_scale: f64,
}

impl<D: Denoiser> Denoiser for Guided<D> {
    fn predict_noise(
        &self,
        x_t: &Tensor,
        t: usize,
        cond: &Conditioning,
    ) -> Result<Tensor, DiffusionError> {
        cfg_epsilon(x_t, t, cond, &self.inner, self.guidance_scale)
    }
}
