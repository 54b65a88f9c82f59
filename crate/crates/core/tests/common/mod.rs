#![allow(dead_code)]

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use neused::fields::{AnalyticForeground, AnalyticScene, FieldBundle, HashGridConfig, ModelConfig, SkyBackground};
use neused::geometry::{orbit_cameras, synthetic_dataset, CalibratedDataset};
use neused::render::{Intrinsics, RenderSettings};
use neused::train::{stage1_fit, Stage1Config};

/// Networks small enough for exhaustive finite differences (each field well
/// under 10³ parameters).
pub fn micro_config() -> ModelConfig {
    let enc = HashGridConfig {
        levels: 2,
        features_per_level: 2,
        log2_table_size: 5,
        base_resolution: 2,
        growth_factor: 2.0,
        initial_levels: 2,
    };
    ModelConfig {
        fg_encoding: enc.clone(),
        target_encoding: enc.clone(),
        bg_encoding: enc,
        geometry_hidden: vec![8],
        color_hidden: vec![8],
        target_hidden: vec![8],
        target_color_hidden: vec![8],
        bg_hidden: vec![8],
        bg_color_hidden: vec![8],
        feature_dim: 2,
        bg_feature_dim: 2,
        softplus_beta: 10.0,
        init_sharpness: 10.0,
        sphere_radius: 0.5,
    }
}

pub fn fast_settings() -> RenderSettings {
    RenderSettings {
        fg_samples: 32,
        bg_samples: 16,
        ..Default::default()
    }
}

pub const SPHERE_RADIUS: f64 = 0.5;
pub const TRAIN_VIEWS: usize = 16;
pub const HOLDOUT: usize = 16;
pub const RES: usize = 64;

pub fn sphere_truth() -> (AnalyticForeground, SkyBackground) {
    (
        AnalyticForeground {
            scene: AnalyticScene::sphere(SPHERE_RADIUS),
            rgb: [0.9, 0.5, 0.2],
            sharpness: 200.0,
        },
        SkyBackground::constant(2.0, [0.1, 0.2, 0.3]),
    )
}

/// 16 training views plus one held-out view of the analytic sphere.
pub fn sphere_dataset() -> CalibratedDataset {
    let (fg, bg) = sphere_truth();
    let cams = orbit_cameras(TRAIN_VIEWS + 1, 3.0, Intrinsics::from_fov(RES, RES, 0.6));
    synthetic_dataset(&fg, &bg, cams, &RenderSettings::default()).unwrap()
}

pub struct Fitted {
    pub dataset: CalibratedDataset,
    pub bundle: FieldBundle,
    pub photometric: Vec<f64>,
    pub elapsed: Duration,
}

pub const STAGE1_ITERATIONS: usize = 400;

/// The stage-1 fit of the sphere dataset, computed once per test binary.
pub fn fitted_sphere() -> &'static Fitted {
    static FIT: OnceLock<Fitted> = OnceLock::new();
    FIT.get_or_init(|| {
        let start = Instant::now();
        let dataset = sphere_dataset();
        let mut bundle = FieldBundle::new(ModelConfig::tiny(), 0);
        let cfg = Stage1Config {
            iterations: STAGE1_ITERATIONS,
            ..Default::default()
        };
        let views: Vec<usize> = (0..TRAIN_VIEWS).collect();
        let report = stage1_fit(&mut bundle, &dataset, &views, &cfg, &fast_settings(), 0).unwrap();
        Fitted {
            dataset,
            bundle,
            photometric: report.photometric,
            elapsed: start.elapsed(),
        }
    })
}

/// Writes one result line straight to stderr so it shows up even for passing
/// tests.
pub fn report(label: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{label}: {status} ({detail})");
}

/// Relative difference with an absolute floor for values near zero.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central differences of `loss` with respect to every entry of the flat
/// parameter vector exposed by `params`.
pub fn finite_differences<T>(
    state: &mut T,
    len: usize,
    h: f64,
    param: impl Fn(&mut T, usize) -> &mut f64,
    loss: impl Fn(&T) -> f64,
) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let orig = *param(state, i);
            *param(state, i) = orig + h;
            let lp = loss(state);
            *param(state, i) = orig - h;
            let lm = loss(state);
            *param(state, i) = orig;
            (lp - lm) / (2.0 * h)
        })
        .collect()
}
