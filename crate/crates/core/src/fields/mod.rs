//! Neural and analytic fields consumed by the renderer.

pub mod bundle;
pub mod checkpoint;
pub mod hashgrid;
pub mod mlp;
pub mod neural;
pub mod scenes;

pub use bundle::{FieldBundle, Part};
pub use hashgrid::{progressive_schedule, HashGrid, HashGridConfig};
pub use mlp::{HeadInit, Mlp, MlpTape};
pub use neural::{BackgroundField, SourceField, SourceOutputs, TargetField, TargetView};
pub use scenes::{analytic_scene, central_difference, AnalyticScene};

use serde::{Deserialize, Serialize};

/// How much of a foreground sample to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Signed distance only.
    SdfOnly,
    /// Signed distance and its spatial gradient.
    Geometry,
    /// Distance, gradient and color.
    Full,
}

/// How surface normals for shading are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormalMode {
    Analytic,
    Numerical { h: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FgSample {
    pub sdf: f64,
    /// Unnormalized spatial gradient of the SDF (zero in `SdfOnly` mode).
    pub normal: [f64; 3],
    /// Emitted color (zero unless `Full` mode).
    pub rgb: [f64; 3],
}

/// A foreground (SDF) field as seen by the renderer.
pub trait Foreground: Sync {
    type Tape: Send;

    fn sample(&self, x: &[f64; 3], d: &[f64; 3], mode: EvalMode) -> (FgSample, Self::Tape);

    /// Accumulates parameter gradients for upstream gradients of one sample.
    fn backward(
        &self,
        tape: &Self::Tape,
        d_sdf: f64,
        d_normal: &[f64; 3],
        d_rgb: &[f64; 3],
        grad: &mut [f64],
    );

    /// NeuS sharpness `s > 0`.
    fn sharpness(&self) -> f64;

    /// Accumulates the gradient of a loss with respect to `s`.
    fn backward_sharpness(&self, d_s: f64, grad: &mut [f64]);

    /// Length of the flat gradient buffer.
    fn grad_len(&self) -> usize;

    fn normal_mode(&self) -> NormalMode {
        NormalMode::Analytic
    }

    fn sdf(&self, x: &[f64; 3]) -> f64 {
        self.sample(x, &[0.0, 0.0, 1.0], EvalMode::SdfOnly).0.sdf
    }
}

/// A background density field over points outside the unit sphere.
pub trait Background: Sync {
    type Tape: Send;

    /// Returns (density, color).
    fn sample(&self, x: &[f64; 3], d: &[f64; 3]) -> (f64, [f64; 3], Self::Tape);

    fn backward(&self, tape: &Self::Tape, d_density: f64, d_rgb: &[f64; 3], grad: &mut [f64]);

    fn grad_len(&self) -> usize;
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("numerical gradient step must be positive, got {0}")]
pub struct StepError(pub f64);

/// Spatial SDF gradient: reverse-mode for `Analytic`, per-axis central
/// differences `(δ(x + h e_i) − δ(x − h e_i)) / 2h` for `Numerical`.
pub fn sdf_gradient<F: Foreground + ?Sized>(field: &F, x: &[f64; 3], mode: NormalMode) -> Result<[f64; 3], StepError> {
    match mode {
        NormalMode::Analytic => Ok(field.sample(x, &[0.0, 0.0, 1.0], EvalMode::Geometry).0.normal),
        NormalMode::Numerical { h } if h > 0.0 => Ok(central_difference(|p| field.sdf(p), x, h)),
        NormalMode::Numerical { h } => Err(StepError(h)),
    }
}

/// Constant-color emissive foreground defined by a closed-form SDF.
#[derive(Debug, Clone)]
pub struct AnalyticForeground {
    pub scene: AnalyticScene,
    pub rgb: [f64; 3],
    pub sharpness: f64,
}

impl Foreground for AnalyticForeground {
    type Tape = ();

    fn sample(&self, x: &[f64; 3], _d: &[f64; 3], mode: EvalMode) -> (FgSample, ()) {
        let mut s = FgSample {
            sdf: self.scene.sdf(x),
            ..Default::default()
        };
        if mode != EvalMode::SdfOnly {
            s.normal = self.scene.gradient(x);
        }
        if mode == EvalMode::Full {
            s.rgb = self.rgb;
        }
        (s, ())
    }

    fn backward(&self, _: &(), _: f64, _: &[f64; 3], _: &[f64; 3], _: &mut [f64]) {}

    fn sharpness(&self) -> f64 {
        self.sharpness
    }

    fn backward_sharpness(&self, _: f64, _: &mut [f64]) {}

    fn grad_len(&self) -> usize {
        0
    }
}

/// Analytic sky: constant density and a vertical color gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkyBackground {
    pub density: f64,
    pub horizon: [f64; 3],
    pub zenith: [f64; 3],
}

impl SkyBackground {
    pub fn constant(density: f64, rgb: [f64; 3]) -> Self {
        Self {
            density,
            horizon: rgb,
            zenith: rgb,
        }
    }

    pub fn color(&self, d: &[f64; 3]) -> [f64; 3] {
        let k = 0.5 * (d[2] + 1.0);
        std::array::from_fn(|c| self.horizon[c] + k * (self.zenith[c] - self.horizon[c]))
    }
}

impl Background for SkyBackground {
    type Tape = ();

    fn sample(&self, _x: &[f64; 3], d: &[f64; 3]) -> (f64, [f64; 3], ()) {
        (self.density, self.color(d), ())
    }

    fn backward(&self, _: &(), _: f64, _: &[f64; 3], _: &mut [f64]) {}

    fn grad_len(&self) -> usize {
        0
    }
}

/// Network sizes and initialization of a [`FieldBundle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub fg_encoding: HashGridConfig,
    pub target_encoding: HashGridConfig,
    pub bg_encoding: HashGridConfig,
    pub geometry_hidden: Vec<usize>,
    pub color_hidden: Vec<usize>,
    pub target_hidden: Vec<usize>,
    pub target_color_hidden: Vec<usize>,
    pub bg_hidden: Vec<usize>,
    pub bg_color_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub bg_feature_dim: usize,
    pub softplus_beta: f64,
    pub init_sharpness: f64,
    /// Radius of the sphere the source SDF starts from.
    pub sphere_radius: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            fg_encoding: HashGridConfig::default(),
            target_encoding: HashGridConfig::default(),
            bg_encoding: HashGridConfig {
                levels: 4,
                features_per_level: 2,
                log2_table_size: 12,
                base_resolution: 4,
                growth_factor: 2.0,
                initial_levels: 4,
            },
            geometry_hidden: vec![64, 64],
            color_hidden: vec![64, 64],
            target_hidden: vec![64],
            target_color_hidden: vec![64],
            bg_hidden: vec![32],
            bg_color_hidden: vec![32],
            feature_dim: 8,
            bg_feature_dim: 4,
            softplus_beta: 100.0,
            init_sharpness: 20.0,
            sphere_radius: 0.5,
        }
    }
}

impl ModelConfig {
    /// Small networks used by tests and desk-scale runs.
    pub fn tiny() -> Self {
        let enc = HashGridConfig {
            levels: 4,
            features_per_level: 2,
            log2_table_size: 12,
            base_resolution: 8,
            growth_factor: 1.6,
            initial_levels: 2,
        };
        Self {
            fg_encoding: enc.clone(),
            target_encoding: enc,
            bg_encoding: HashGridConfig {
                levels: 2,
                features_per_level: 2,
                log2_table_size: 10,
                base_resolution: 4,
                growth_factor: 2.0,
                initial_levels: 2,
            },
            geometry_hidden: vec![32],
            color_hidden: vec![16],
            target_hidden: vec![16],
            target_color_hidden: vec![16],
            bg_hidden: vec![16],
            bg_color_hidden: vec![16],
            feature_dim: 4,
            bg_feature_dim: 2,
            softplus_beta: 20.0,
            init_sharpness: 20.0,
            sphere_radius: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for e in [&self.fg_encoding, &self.target_encoding, &self.bg_encoding] {
            e.validate()?;
        }
        if !(self.softplus_beta > 0.0 && self.init_sharpness > 0.0) {
            return Err("softplus_beta and init_sharpness must be positive".into());
        }
        if !(self.sphere_radius > 0.0 && self.sphere_radius < 1.0) {
            return Err("sphere_radius must lie in (0, 1)".into());
        }
        Ok(())
    }
}
