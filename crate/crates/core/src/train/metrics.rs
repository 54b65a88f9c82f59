use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::fields::FieldBundle;
use crate::geometry::CameraPath;
use crate::render::{render_image, RenderSettings, RenderedImage};

/// Proxy evaluation of an edited bundle along a camera path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    /// PSNR of the target renders against the source renders over all frames.
    /// Identical images give `inf`, serialized as the string `"inf"`.
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub psnr_vs_source: f64,
    /// Mean per-pixel L2 distance between consecutive target frames.
    pub frame_consistency: f64,
    /// Mean target mask over all rays.
    pub mask_coverage: f64,
    pub frames: usize,
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_db<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Str(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Str(s) if s == "inf" => Ok(f64::INFINITY),
        Db::Str(s) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
    }
}

/// Peak signal-to-noise ratio in dB for signals in [0, 1]; `inf` when equal.
pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "psnr of different lengths");
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Mean over consecutive frame pairs of the mean per-pixel RGB distance.
pub fn frame_consistency(frames: &[RenderedImage]) -> f64 {
    if frames.len() < 2 {
        return 0.0;
    }
    let per_pair: Vec<f64> = frames
        .windows(2)
        .map(|w| {
            let n = w[0].pixels.len().max(1) as f64;
            w[0].pixels
                .iter()
                .zip(&w[1].pixels)
                .map(|(p, q)| (0..3).map(|c| (p.rgb[c] - q.rgb[c]).powi(2)).sum::<f64>().sqrt())
                .sum::<f64>()
                / n
        })
        .collect();
    per_pair.iter().sum::<f64>() / per_pair.len() as f64
}

fn rgb(img: &RenderedImage) -> impl Iterator<Item = f64> + '_ {
    img.pixels.iter().flat_map(|p| p.rgb)
}

/// Renders source and target along `path` and computes the proxy metrics.
pub fn evaluate(bundle: &FieldBundle, path: &CameraPath, settings: &RenderSettings) -> MetricsReport {
    let tv = bundle.target_view();
    let mut src_px = Vec::new();
    let mut tgt_px = Vec::new();
    let mut targets = Vec::with_capacity(path.cameras.len());
    for cam in &path.cameras {
        let s = render_image(&bundle.source, &bundle.background, cam, settings, false);
        let t = render_image(&tv, &bundle.background, cam, settings, false);
        src_px.extend(rgb(&s));
        tgt_px.extend(rgb(&t));
        targets.push(t);
    }
    let rays: usize = targets.iter().map(|t| t.pixels.len()).sum();
    let mask: f64 = targets.iter().flat_map(|t| t.pixels.iter().map(|p| p.mask)).sum();
    MetricsReport {
        psnr_vs_source: psnr(&tgt_px, &src_px),
        frame_consistency: frame_consistency(&targets),
        mask_coverage: mask / rays.max(1) as f64,
        frames: path.cameras.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::ModelConfig;
    use crate::render::{Camera, Intrinsics};

    #[test]
    fn psnr_values() {
        assert_eq!(psnr(&[0.2, 0.4], &[0.2, 0.4]), f64::INFINITY);
        // mse = 0.01 → 20 dB.
        assert!((psnr(&[0.0, 0.0], &[0.1, 0.1]) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn report_serializes_inf_as_string() {
        let r = MetricsReport {
            psnr_vs_source: f64::INFINITY,
            frame_consistency: 0.0,
            mask_coverage: 0.5,
            frames: 2,
        };
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"psnr_vs_source\":\"inf\""), "{s}");
        assert_eq!(serde_json::from_str::<MetricsReport>(&s).unwrap(), r);
    }

    #[test]
    fn unedited_bundle_and_repeated_camera() {
        let b = FieldBundle::new(ModelConfig::tiny(), 1);
        let cam = Camera::look_at(Intrinsics::from_fov(6, 6, 0.8), [0.0, -2.5, 0.5], [0.0; 3], [0.0, 0.0, 1.0]);
        let path = CameraPath {
            intrinsics: cam.intrinsics,
            cameras: vec![cam; 3],
        };
        let settings = RenderSettings {
            fg_samples: 8,
            bg_samples: 4,
            ..Default::default()
        };
        let r = evaluate(&b, &path, &settings);
        assert_eq!(r.psnr_vs_source, f64::INFINITY);
        assert_eq!(r.frame_consistency, 0.0);
        assert!((0.0..=1.0).contains(&r.mask_coverage));
    }
}
