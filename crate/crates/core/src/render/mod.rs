//! Ray generation, NeuS volume rendering, background compositing and Phong
//! shading.

pub mod camera;
pub mod phong;
pub mod ray;
pub mod volume;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use camera::{check_rigid, generate_rays, Camera, Intrinsics, Ray};
pub use phong::{phong_shade, phong_shade_grad, PhongMaterial};
pub use ray::{background_samples, backward_ray, foreground_depths, render_ray, RayGrad, RayTape};
pub use volume::{composite, neus_alpha, volume_render, Composited, EPS_DIV};

use crate::fields::{Background, FieldBundle, Foreground};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RenderError {
    #[error("camera: {0}")]
    Camera(String),
    #[error("NeuS sharpness must be positive, got {0}")]
    Sharpness(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSettings {
    /// Number of foreground intervals per ray.
    pub fg_samples: usize,
    pub bg_samples: usize,
    /// Smallest inverse distance sampled by the background.
    pub bg_min_inv: f64,
    /// Foreground marching stops once transmittance falls below this.
    pub early_stop: f64,
    pub material: PhongMaterial,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            fg_samples: 64,
            bg_samples: 32,
            bg_min_inv: 1e-3,
            early_stop: 1e-4,
            material: PhongMaterial::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RenderOutput {
    /// Foreground color normalized by the mask (zero when the mask is zero).
    pub rgb_fg: [f64; 3],
    pub rgb_bg: [f64; 3],
    /// `mask·rgb_fg + (1 − mask)·rgb_bg`.
    pub rgb: [f64; 3],
    /// Accumulated foreground opacity.
    pub mask: f64,
    /// Accumulated background opacity.
    pub bg_mask: f64,
    pub depth: f64,
    /// Unit surface normal at the depth point (zero without Phong).
    pub normal: [f64; 3],
    /// `mask·shade`, identical in all channels.
    pub phong: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Source,
    Target,
}

/// Renders one pixel of the source or target scene of a bundle.
pub fn render_pixel(
    bundle: &FieldBundle,
    ray: &Ray,
    which: Which,
    want_phong: bool,
    settings: &RenderSettings,
) -> RenderOutput {
    let none: Option<&mut rand_chacha::ChaCha8Rng> = None;
    match which {
        Which::Source => render_ray(&bundle.source, &bundle.background, ray, settings, want_phong, none).0,
        Which::Target => {
            render_ray(&bundle.target_view(), &bundle.background, ray, settings, want_phong, none).0
        }
    }
}

/// All render layers of one image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<RenderOutput>,
}

impl RenderedImage {
    /// Planar `[3, H, W]` tensor data of a per-pixel RGB layer.
    pub fn planar(&self, layer: impl Fn(&RenderOutput) -> [f64; 3]) -> Vec<f64> {
        let n = self.width * self.height;
        let mut out = vec![0.0; 3 * n];
        for (i, p) in self.pixels.iter().enumerate() {
            let v = layer(p);
            for c in 0..3 {
                out[c * n + i] = v[c];
            }
        }
        out
    }

    pub fn mean_rgb(&self) -> [f64; 3] {
        let n = self.pixels.len().max(1) as f64;
        let mut m = [0.0; 3];
        for p in &self.pixels {
            for c in 0..3 {
                m[c] += p.rgb[c] / n;
            }
        }
        m
    }
}

/// Renders every pixel of `camera` (deterministic sample positions).
pub fn render_image<F: Foreground, B: Background>(
    fg: &F,
    bg: &B,
    camera: &Camera,
    settings: &RenderSettings,
    want_phong: bool,
) -> RenderedImage {
    let (w, h) = (camera.width(), camera.height());
    let pixels = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let none: Option<&mut rand_chacha::ChaCha8Rng> = None;
            render_ray(fg, bg, &camera.ray(i % w, i / w), settings, want_phong, none).0
        })
        .collect();
    RenderedImage {
        width: w,
        height: h,
        pixels,
    }
}
