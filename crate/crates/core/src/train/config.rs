use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::diffusion::{
    build_schedule, DiffusionSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_EMBEDDING_DIM,
    DEFAULT_NUM_STEPS,
};
use crate::distill::LossWeights;
use crate::fields::ModelConfig;
use crate::geometry::DatasetFormat;
use crate::render::RenderSettings;

/// Identity-learning hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    pub iterations: usize,
    pub rays_per_batch: usize,
    /// Learning rate of the MLP blocks.
    pub lr: f64,
    pub lr_encoding: f64,
    pub lr_sharpness: f64,
    pub lambda_eik: f64,
    pub eikonal_points: usize,
    /// Std of the depth offset used for near-surface eikonal samples.
    pub near_surface_std: f64,
    pub progressive: bool,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            iterations: 800,
            rays_per_batch: 512,
            lr: 1e-3,
            lr_encoding: 1e-2,
            lr_sharpness: 1e-2,
            lambda_eik: 0.1,
            eikonal_points: 256,
            near_surface_std: 0.05,
            progressive: true,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lambda_eik > 0.0) {
            return Err(TrainError::Config(format!("stage1.lambda_eik must be > 0, got {}", self.lambda_eik)));
        }
        if self.rays_per_batch == 0 {
            return Err(TrainError::Config("stage1.rays_per_batch must be positive".into()));
        }
        for (name, v) in [("lr", self.lr), ("lr_encoding", self.lr_encoding), ("lr_sharpness", self.lr_sharpness)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TrainError::Config(format!("stage1.{name} must be finite and >= 0")));
            }
        }
        if !(self.near_surface_std >= 0.0) {
            return Err(TrainError::Config("stage1.near_surface_std must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EditMode {
    /// Optimize the target foreground residual.
    #[default]
    Foreground,
    /// Optimize the background field only.
    Background,
}

/// Editing hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditConfig {
    pub prompt: Option<String>,
    /// `None` uses the null prompt for the source latent.
    pub source_prompt: Option<String>,
    pub guidance_scale: f64,
    pub weights: LossWeights,
    pub t_min_frac: f64,
    pub t_max_frac: f64,
    pub iterations: usize,
    /// Indices of the cameras to sample from; empty means all.
    pub camera_pool: Vec<usize>,
    pub prompt_noise_sigma: f64,
    /// Redraw the source-prompt noise every step instead of once per run.
    pub prompt_noise_per_step: bool,
    pub mode: EditMode,
    /// Longest side of the rendered view fed to the denoiser.
    pub patch: usize,
    pub lr_encoding: f64,
    pub lr_mlp: f64,
    pub embedding_dim: usize,
    pub progressive: bool,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            prompt: None,
            source_prompt: None,
            guidance_scale: 350.0,
            weights: LossWeights::default(),
            t_min_frac: 0.05,
            t_max_frac: 0.95,
            iterations: 300,
            camera_pool: Vec::new(),
            prompt_noise_sigma: 0.0,
            prompt_noise_per_step: false,
            mode: EditMode::Foreground,
            patch: 64,
            lr_encoding: 1e-2,
            lr_mlp: 1e-3,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            progressive: true,
        }
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(0.0 < self.t_min_frac && self.t_min_frac < self.t_max_frac && self.t_max_frac < 1.0) {
            return bad(format!(
                "edit timestep range needs 0 < t_min_frac < t_max_frac < 1, got ({}, {})",
                self.t_min_frac, self.t_max_frac
            ));
        }
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return bad(format!("edit.guidance_scale must be finite and >= 0, got {}", self.guidance_scale));
        }
        if !(self.prompt_noise_sigma >= 0.0 && self.prompt_noise_sigma.is_finite()) {
            return bad(format!("edit.prompt_noise_sigma must be >= 0, got {}", self.prompt_noise_sigma));
        }
        if self.patch == 0 || self.embedding_dim == 0 {
            return bad("edit.patch and edit.embedding_dim must be positive".into());
        }
        let w = &self.weights;
        if !(w.lambda_pds >= 0.0 && w.lambda_pe >= 0.0) {
            return bad("loss weights must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DenoiserKind {
    #[default]
    Analytic,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub num_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            num_steps: DEFAULT_NUM_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule, TrainError> {
        Ok(build_schedule(self.num_steps, self.beta_start, self.beta_end)?)
    }
}

/// Denoiser selection. The analytic denoiser models flat-colour images:
/// `mean_rgb` for prompted queries and `uncond_rgb` for the null prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub kind: DenoiserKind,
    pub endpoint: Option<String>,
    pub retries: usize,
    pub mean_rgb: [f64; 3],
    pub uncond_rgb: [f64; 3],
    pub variance: f64,
    pub schedule: ScheduleConfig,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            kind: DenoiserKind::Analytic,
            endpoint: None,
            retries: 3,
            mean_rgb: [0.8, 0.2, 0.2],
            uncond_rgb: [0.5, 0.5, 0.5],
            variance: 0.01,
            schedule: ScheduleConfig::default(),
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.variance >= 0.0) {
            return Err(TrainError::Config("denoiser.variance must be >= 0".into()));
        }
        if self.kind == DenoiserKind::Remote && self.endpoint.is_none() {
            return Err(TrainError::Config("denoiser.endpoint is required for kind = \"remote\"".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub path: PathBuf,
    /// `blender_transforms` or `pose_txt`.
    pub format: String,
    /// View indices excluded from training and used for validation.
    pub holdout: Vec<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("data"),
            format: "blender_transforms".into(),
            holdout: Vec::new(),
        }
    }
}

impl DatasetConfig {
    pub fn format(&self) -> Result<DatasetFormat, TrainError> {
        self.format.parse().map_err(|e| TrainError::Config(format!("dataset.format: {e}")))
    }
}

/// A whole run, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub stage1: Stage1Config,
    pub edit: EditConfig,
    pub denoiser: DenoiserConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub render: RenderSettings,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.stage1.validate()?;
        self.edit.validate()?;
        self.denoiser.validate()?;
        self.dataset.format()?;
        self.model.validate().map_err(TrainError::Config)?;
        if self.render.fg_samples == 0 {
            return Err(TrainError::Config("render.fg_samples must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[stage1]\nitterations = 3\n").is_err());
        assert!(RunConfig::from_toml("[bogus]\n").is_err());
    }

    #[test]
    fn partial_tables_fill_defaults() {
        let c = RunConfig::from_toml("seed = 4\n[edit]\nguidance_scale = 7.5\nmode = \"background\"\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.edit.guidance_scale, 7.5);
        assert_eq!(c.edit.mode, EditMode::Background);
        assert_eq!(c.stage1, Stage1Config::default());
    }

    #[test]
    fn invariants_are_checked() {
        assert!(RunConfig::from_toml("[stage1]\nlambda_eik = 0.0\n").is_err());
        assert!(RunConfig::from_toml("[edit]\nt_min_frac = 0.5\nt_max_frac = 0.5\n").is_err());
        assert!(RunConfig::from_toml("[edit]\nt_max_frac = 1.0\n").is_err());
        assert!(RunConfig::from_toml("[edit]\nprompt_noise_sigma = -0.1\n").is_err());
        assert!(RunConfig::from_toml("[denoiser]\nkind = \"remote\"\n").is_err());
        assert!(RunConfig::from_toml("[dataset]\nformat = \"colmap\"\n").is_err());
    }
}
