use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DiffusionError, DiffusionSchedule};
use crate::tensor::Tensor;

/// Default embedding width for locally synthesized prompt embeddings.
pub const DEFAULT_EMBEDDING_DIM: usize = 16;

/// Text conditioning handed to a denoiser.
///
/// The null prompt carries the canonical zero embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    embedding: Vec<f64>,
    null: bool,
    prompt: Option<String>,
}

impl Conditioning {
    pub fn null(dim: usize) -> Self {
        Self {
            embedding: vec![0.0; dim],
            null: true,
            prompt: None,
        }
    }

    pub fn from_embedding(embedding: Vec<f64>) -> Self {
        Self {
            embedding,
            null: false,
            prompt: None,
        }
    }

    /// Deterministic synthetic embedding of a prompt: a unit vector seeded by the
    /// SHA-256 of the text. Real text encoders live behind the remote denoiser.
    pub fn from_prompt(prompt: &str, dim: usize) -> Self {
        let digest = Sha256::digest(prompt.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let raw = Tensor::randn(&[dim], &mut rng).into_data();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        Self {
            embedding: raw.into_iter().map(|v| v / norm).collect(),
            null: false,
            prompt: Some(prompt.to_owned()),
        }
    }

    pub fn embedding(&self) -> &[f64] {
        &self.embedding
    }

    pub fn is_null(&self) -> bool {
        self.null
    }

    pub fn prompt(&self) -> Option<&str> {
        self.prompt.as_deref()
    }

    /// Replaces the embedding, keeping the prompt text and null flag.
    pub(crate) fn with_embedding(&self, embedding: Vec<f64>) -> Self {
        Self {
            embedding,
            null: self.null,
            prompt: self.prompt.clone(),
        }
    }
}

/// Noise predictor `ε(x_t, t, y)`.
///
/// Implementations must be pure: identical inputs give identical outputs.
pub trait Denoiser: Send + Sync {
    fn predict_noise(
        &self,
        x_t: &Tensor,
        t: usize,
        cond: &Conditioning,
    ) -> Result<Tensor, DiffusionError>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict_noise(
        &self,
        x_t: &Tensor,
        t: usize,
        cond: &Conditioning,
    ) -> Result<Tensor, DiffusionError> {
        (**self).predict_noise(x_t, t, cond)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn predict_noise(
        &self,
        x_t: &Tensor,
        t: usize,
        cond: &Conditioning,
    ) -> Result<Tensor, DiffusionError> {
        (**self).predict_noise(x_t, t, cond)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for std::sync::Arc<D> {
    fn predict_noise(
        &self,
        x_t: &Tensor,
        t: usize,
        cond: &Conditioning,
    ) -> Result<Tensor, DiffusionError> {
        (**self).predict_noise(x_t, t, cond)
    }
}

/// A data distribution with a closed-form posterior mean `E[x0 | x_t]`.
pub trait Prior: Send + Sync {
    fn posterior_mean(&self, x_t: &Tensor, alpha_bar: f64) -> Result<Tensor, DiffusionError>;
}

/// Isotropic Gaussian `N(mean, variance * I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    pub mean: Tensor,
    pub variance: f64,
}

impl GaussianPrior {
    pub fn new(mean: Tensor, variance: f64) -> Result<Self, DiffusionError> {
        if !(variance >= 0.0) {
            return Err(DiffusionError::Config(format!(
                "prior variance must be non-negative, got {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }
}

impl Prior for GaussianPrior {
    fn posterior_mean(&self, x_t: &Tensor, alpha_bar: f64) -> Result<Tensor, DiffusionError> {
        let denom = alpha_bar * self.variance + 1.0 - alpha_bar;
        let a = alpha_bar.sqrt() * self.variance / denom;
        let b = (1.0 - alpha_bar) / denom;
        Ok(x_t.lincomb(a, &self.mean, b)?)
    }
}

/// Weighted mixture of isotropic Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixturePrior {
    pub components: Vec<(f64, GaussianPrior)>,
}

impl GaussianMixturePrior {
    pub fn new(components: Vec<(f64, GaussianPrior)>) -> Result<Self, DiffusionError> {
        if components.is_empty() {
            return Err(DiffusionError::Config("mixture needs a component".into()));
        }
        if components.iter().any(|(w, _)| !(*w > 0.0)) {
            return Err(DiffusionError::Config("mixture weights must be positive".into()));
        }
        Ok(Self { components })
    }

    /// Posterior responsibilities of each component given `x_t`.
    pub fn responsibilities(&self, x_t: &Tensor, alpha_bar: f64) -> Result<Vec<f64>, DiffusionError> {
        let dim = x_t.len() as f64;
        let sa = alpha_bar.sqrt();
        let mut logs = Vec::with_capacity(self.components.len());
        for (w, c) in &self.components {
            x_t.check_same_shape(&c.mean)?;
            let v = alpha_bar * c.variance + 1.0 - alpha_bar;
            let sq: f64 = x_t
                .data()
                .iter()
                .zip(c.mean.data())
                .map(|(x, m)| (x - sa * m).powi(2))
                .sum();
            logs.push(w.ln() - 0.5 * dim * v.ln() - sq / (2.0 * v));
        }
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / total).collect())
    }
}

impl Prior for GaussianMixturePrior {
    fn posterior_mean(&self, x_t: &Tensor, alpha_bar: f64) -> Result<Tensor, DiffusionError> {
        let resp = self.responsibilities(x_t, alpha_bar)?;
        let mut out = Tensor::zeros(x_t.shape());
        for (r, (_, c)) in resp.iter().zip(&self.components) {
            let m = c.posterior_mean(x_t, alpha_bar)?;
            out = out.lincomb(1.0, &m, *r)?;
        }
        Ok(out)
    }
}

/// Bayes-optimal noise predictor for a known data distribution.
///
/// The conditional prior answers non-null prompts and the unconditional prior
/// answers the null prompt, which makes classifier-free guidance meaningful.
pub struct AnalyticDenoiser<P> {
    conditional: P,
    unconditional: P,
    alpha_bars: Vec<f64>,
}

pub type AnalyticGaussianDenoiser = AnalyticDenoiser<GaussianPrior>;
pub type GaussianMixtureDenoiser = AnalyticDenoiser<GaussianMixturePrior>;

/// Denoiser for `x0 ~ N(mean, variance * I)` regardless of the prompt.
pub fn analytic_gaussian_denoiser(
    mean: Tensor,
    variance: f64,
    schedule: &DiffusionSchedule,
) -> Result<AnalyticGaussianDenoiser, DiffusionError> {
    let prior = GaussianPrior::new(mean, variance)?;
    Ok(AnalyticDenoiser::new(prior.clone(), prior, schedule))
}

impl<P: Prior> AnalyticDenoiser<P> {
    pub fn new(conditional: P, unconditional: P, schedule: &DiffusionSchedule) -> Self {
        Self {
            conditional,
            unconditional,
            alpha_bars: schedule.alpha_bars().to_vec(),
        }
    }

    pub fn prior_for(&self, cond: &Conditioning) -> &P {
        if cond.is_null() {
            &self.unconditional
        } else {
            &self.conditional
        }
    }
}

impl<P: Prior> Denoiser for AnalyticDenoiser<P> {
    fn predict_noise(
        &self,
        x_t: &Tensor,
        t: usize,
        cond: &Conditioning,
    ) -> Result<Tensor, DiffusionError> {
        let alpha_bar = *self.alpha_bars.get(t).ok_or(DiffusionError::Timestep {
            t,
            num_steps: self.alpha_bars.len(),
        })?;
        let x0 = self.prior_for(cond).posterior_mean(x_t, alpha_bar)?;
        let inv = 1.0 / (1.0 - alpha_bar).sqrt();
        Ok(x_t.lincomb(inv, &x0, -alpha_bar.sqrt() * inv)?)
    }
}

/// Wraps a closure as a denoiser; convenient for tests and adapters.
pub struct FnDenoiser<F>(pub F);

impl<F> Denoiser for FnDenoiser<F>
where
    F: Fn(&Tensor, usize, &Conditioning) -> Result<Tensor, DiffusionError> + Send + Sync,
{
    fn predict_noise(
        &self,
        x_t: &Tensor,
        t: usize,
        cond: &Conditioning,
    ) -> Result<Tensor, DiffusionError> {
        (self.0)(x_t, t, cond)
    }
}
