//! Self-rendered datasets of analytic scenes.

use crate::fields::{Background, Foreground};
use crate::imageio::RgbImage;
use crate::render::{render_image, Camera, Intrinsics, RenderSettings};

use super::{CalibratedDataset, GeometryError};

/// `n` cameras on a Fibonacci lattice of the sphere of `radius`, all looking
/// at the origin with +z up.
pub fn orbit_cameras(n: usize, radius: f64, intrinsics: Intrinsics) -> Vec<Camera> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            // Keep away from the poles so the +z up vector is never parallel.
            let z = 0.9 * (1.0 - 2.0 * (i as f64 + 0.5) / n as f64);
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let eye = [radius * r * phi.cos(), radius * r * phi.sin(), radius * z];
            Camera::look_at(intrinsics, eye, [0.0; 3], [0.0, 0.0, 1.0])
        })
        .collect()
}

/// Renders every camera with `fg` over `bg`; pixels are clamped to [0, 1].
pub fn synthetic_dataset<F: Foreground, B: Background>(
    fg: &F,
    bg: &B,
    cameras: Vec<Camera>,
    settings: &RenderSettings,
) -> Result<CalibratedDataset, GeometryError> {
    let images = cameras
        .iter()
        .map(|cam| {
            let img = render_image(fg, bg, cam, settings, false);
            RgbImage {
                width: img.width,
                height: img.height,
                pixels: img.pixels.iter().map(|p| p.rgb.map(|v| v.clamp(0.0, 1.0))).collect(),
            }
        })
        .collect();
    CalibratedDataset::new(images, cameras)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AnalyticForeground, AnalyticScene, SkyBackground};

    #[test]
    fn orbit_cameras_face_the_origin() {
        for c in orbit_cameras(16, 3.0, Intrinsics::from_fov(8, 8, 0.7)) {
            assert!((c.position.norm() - 3.0).abs() < 1e-12);
            let d = c.ray(4, 4).dir;
            let to_origin = -c.position.normalize();
            let cos = d[0] * to_origin.x + d[1] * to_origin.y + d[2] * to_origin.z;
            assert!(cos > 0.99);
        }
    }

    #[test]
    fn sphere_dataset_has_object_in_the_middle() {
        let fg = AnalyticForeground {
            scene: AnalyticScene::sphere(0.5),
            rgb: [0.9, 0.5, 0.2],
            sharpness: 200.0,
        };
        let bg = SkyBackground::constant(2.0, [0.1, 0.1, 0.1]);
        let cams = orbit_cameras(2, 3.0, Intrinsics::from_fov(16, 16, 0.7));
        let ds = synthetic_dataset(&fg, &bg, cams, &RenderSettings::default()).unwrap();
        let centre = ds.images[0].get(8, 8);
        let corner = ds.images[0].get(0, 0);
        assert!((centre[0] - 0.9).abs() < 0.02, "{centre:?}");
        assert!(corner[0] < 0.2, "{corner:?}");
    }
}
