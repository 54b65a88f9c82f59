//! Score-distillation losses and their Jacobian-free image-space gradients.

use serde::{Deserialize, Serialize};

use crate::diffusion::{
    cfg_epsilon, extract_latent, forward_noise, Conditioning, Denoiser, DiffusionError,
    DiffusionSchedule, Guided, LatentRole,
};
use crate::tensor::Tensor;

/// Timestep weighting `w(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `1 − ᾱ_t`.
    OneMinusAlphaBar,
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_pds: f64,
    pub lambda_pe: f64,
    pub weighting: Weighting,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_pds: 1.0,
            lambda_pe: 0.2,
            weighting: Weighting::OneMinusAlphaBar,
        }
    }
}

impl LossWeights {
    pub fn w(&self, t: usize, schedule: &DiffusionSchedule) -> f64 {
        match self.weighting {
            Weighting::OneMinusAlphaBar => 1.0 - schedule.alpha_bar(t),
            Weighting::Constant(c) => c,
        }
    }
}

/// Everything one distillation step needs. The single `(t, ε_t, ε_{t−1})`
/// draw is shared by all latent extractions of the step.
#[derive(Debug, Clone)]
pub struct DistillStep {
    pub t: usize,
    pub eps_t: Tensor,
    pub eps_prev: Tensor,
    pub x0_src: Tensor,
    pub x0_tgt: Tensor,
    pub phong_tgt: Option<Tensor>,
    pub y_src: Conditioning,
    pub y_tgt: Conditioning,
    pub guidance_scale: f64,
}

/// `w(t)·(ε̂(x_t^tgt, y_tgt) − ε_t)`.
pub fn sds_gradient(
    step: &DistillStep,
    denoiser: &dyn Denoiser,
    schedule: &DiffusionSchedule,
    weights: &LossWeights,
) -> Result<Tensor, DiffusionError> {
    let x_t = forward_noise(&step.x0_tgt, step.t, &step.eps_t, schedule)?;
    let eps = cfg_epsilon(&x_t, step.t, &step.y_tgt, denoiser, step.guidance_scale)?;
    Ok(eps.lincomb(1.0, &step.eps_t, -1.0)?.scale(weights.w(step.t, schedule)))
}

/// `w(t)·(ε̂(x_t^tgt, y_tgt) − ε̂(x_t^src, y_src))` with shared `ε_t`.
pub fn dds_gradient(
    step: &DistillStep,
    denoiser: &dyn Denoiser,
    schedule: &DiffusionSchedule,
    weights: &LossWeights,
) -> Result<Tensor, DiffusionError> {
    let xt_tgt = forward_noise(&step.x0_tgt, step.t, &step.eps_t, schedule)?;
    let xt_src = forward_noise(&step.x0_src, step.t, &step.eps_t, schedule)?;
    let e_tgt = cfg_epsilon(&xt_tgt, step.t, &step.y_tgt, denoiser, step.guidance_scale)?;
    let e_src = cfg_epsilon(&xt_src, step.t, &step.y_src, denoiser, step.guidance_scale)?;
    Ok(e_tgt.lincomb(1.0, &e_src, -1.0)?.scale(weights.w(step.t, schedule)))
}

/// Source, target and (if a Phong image is given) Phong latents.
#[derive(Debug, Clone)]
pub struct LatentTriple {
    pub z_src: Tensor,
    pub z_tgt: Tensor,
    pub z_phong: Option<Tensor>,
}

pub fn pds_pair(
    step: &DistillStep,
    denoiser: &dyn Denoiser,
    schedule: &DiffusionSchedule,
) -> Result<LatentTriple, DiffusionError> {
    let guided = Guided {
        inner: denoiser,
        guidance_scale: step.guidance_scale,
    };
    let latent = |x0: &Tensor, y: &Conditioning, role| {
        extract_latent(x0, step.t, y, &guided, &step.eps_t, &step.eps_prev, schedule, role)
            .map(|l| l.z)
    };
    let z_src = latent(&step.x0_src, &step.y_src, LatentRole::Source)?;
    let z_tgt = latent(&step.x0_tgt, &step.y_tgt, LatentRole::Target)?;
    let z_phong = match &step.phong_tgt {
        Some(p) => Some(latent(p, &step.y_tgt, LatentRole::Phong)?),
        None => None,
    };
    Ok(LatentTriple {
        z_src,
        z_tgt,
        z_phong,
    })
}

/// `‖z_tgt − z_src‖²`.
pub fn pds_loss(z_src: &Tensor, z_tgt: &Tensor) -> Result<f64, DiffusionError> {
    Ok(z_tgt.sub(z_src)?.squared_norm())
}

/// `‖ẑ_tgt − z_src‖²`.
pub fn pe_loss(z_src: &Tensor, z_phong: &Tensor) -> Result<f64, DiffusionError> {
    Ok(z_phong.sub(z_src)?.squared_norm())
}

/// `λ_PDS·L_PDS + λ_PE·L_PE`.
pub fn pepds_loss(l_pds: f64, l_pe: f64, weights: &LossWeights) -> f64 {
    weights.lambda_pds * l_pds + weights.lambda_pe * l_pe
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    #[serde(rename = "L_PDS")]
    pub pds: f64,
    #[serde(rename = "L_PE")]
    pub pe: f64,
    #[serde(rename = "L_PEPDS")]
    pub pepds: f64,
}

#[derive(Debug, Clone)]
pub struct PepdsGradient {
    /// Gradient with respect to the target image.
    pub g_img: Tensor,
    /// Gradient with respect to the target Phong image.
    pub g_phong: Option<Tensor>,
    pub losses: LossValues,
}

/// Image-space gradients with the denoiser treated as a constant:
/// `g_img = λ_PDS·w(t)·(z_tgt − z_src)`, `g_phong = λ_PE·w(t)·(ẑ_tgt − z_src)`.
pub fn pepds_gradient(
    step: &DistillStep,
    denoiser: &dyn Denoiser,
    schedule: &DiffusionSchedule,
    weights: &LossWeights,
) -> Result<PepdsGradient, DiffusionError> {
    let z = pds_pair(step, denoiser, schedule)?;
    let w = weights.w(step.t, schedule);
    let d_img = z.z_tgt.sub(&z.z_src)?;
    let pds = d_img.squared_norm();
    let (g_phong, pe) = match &z.z_phong {
        Some(zp) => {
            let d = zp.sub(&z.z_src)?;
            let pe = d.squared_norm();
            (Some(d.scale(weights.lambda_pe * w)), pe)
        }
        None => (None, 0.0),
    };
    Ok(PepdsGradient {
        g_img: d_img.scale(weights.lambda_pds * w),
        g_phong,
        losses: LossValues {
            pds,
            pe,
            pepds: pepds_loss(pds, pe, weights),
        },
    })
}
