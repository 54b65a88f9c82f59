//! Calibrated multi-view image datasets.
//!
//! Two on-disk layouts are understood.
//!
//! `transforms.json` (Blender NeRF convention): a top-level `camera_angle_x`
//! (horizontal field of view, radians) and a `frames` array whose entries
//! carry `file_path` (relative, extension optional, `.png` assumed) and a
//! camera-to-world `transform_matrix` (4×4, camera looks down −z, +y up).
//! Frames may override intrinsics with `fl_x`, `fl_y`, `cx`, `cy`, `w`, `h`.
//!
//! `poses.txt`: blank lines and lines starting with `#` are ignored. The first
//! line is `fx fy cx cy width height count`; each following line is an image
//! path relative to the directory followed by the 12 row-major entries of
//! the 3×4 camera-to-world matrix. Exactly `count` such lines must follow.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4};
use serde_json::{json, Value};

use super::GeometryError;
use crate::imageio::{read_image, write_image, RgbImage};
use crate::render::{check_rigid, Camera, Intrinsics};

/// Rotation tolerance for loaded poses (single-precision exports included).
pub const RIGID_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    BlenderTransforms,
    PoseTxt,
}

impl DatasetFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            Self::BlenderTransforms => "transforms.json",
            Self::PoseTxt => "poses.txt",
        }
    }
}

impl std::str::FromStr for DatasetFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "blender_transforms" | "blender" => Ok(Self::BlenderTransforms),
            "pose_txt" => Ok(Self::PoseTxt),
            _ => Err(format!("unknown dataset format {s:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CalibratedDataset {
    pub images: Vec<RgbImage>,
    pub cameras: Vec<Camera>,
    /// Image file names relative to the dataset directory.
    pub names: Vec<String>,
}

impl CalibratedDataset {
    pub fn new(images: Vec<RgbImage>, cameras: Vec<Camera>) -> Result<Self, GeometryError> {
        let names = (0..images.len()).map(|i| format!("r_{i:03}.png")).collect();
        let ds = Self { images, cameras, names };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        for (what, n) in [("cameras", self.cameras.len()), ("names", self.names.len())] {
            if n != self.images.len() {
                return Err(GeometryError::CountMismatch {
                    what,
                    expected: self.images.len(),
                    found: n,
                });
            }
        }
        for (i, (img, cam)) in self.images.iter().zip(&self.cameras).enumerate() {
            check_rigid(&cam.rotation, RIGID_TOL).map_err(|e| GeometryError::NonRigid {
                index: i,
                reason: e.to_string(),
            })?;
            cam.intrinsics
                .validate()
                .map_err(|e| GeometryError::Invalid(format!("camera {i}: {e}")))?;
            if (img.width, img.height) != (cam.intrinsics.width, cam.intrinsics.height) {
                return Err(GeometryError::Invalid(format!(
                    "image {i} is {}x{} but its camera expects {}x{}",
                    img.width, img.height, cam.intrinsics.width, cam.intrinsics.height
                )));
            }
        }
        Ok(())
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.cameras.iter().map(|c| c.position.into()).collect()
    }
}

fn read_text(path: &Path) -> Result<String, GeometryError> {
    std::fs::read_to_string(path).map_err(|e| GeometryError::io(path, e))
}

fn rigid_pose(index: usize, m: Matrix4<f64>) -> Result<Matrix4<f64>, GeometryError> {
    let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    check_rigid(&r, RIGID_TOL).map_err(|e| GeometryError::NonRigid {
        index,
        reason: e.to_string(),
    })?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonRigid {
            index,
            reason: "non-finite entries".into(),
        });
    }
    Ok(m)
}

fn make_camera(index: usize, k: Intrinsics, m: &Matrix4<f64>) -> Result<Camera, GeometryError> {
    k.validate()
        .map_err(|e| GeometryError::Invalid(format!("camera {index}: {e}")))?;
    let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    Ok(Camera {
        intrinsics: k,
        rotation: r,
        position: m.fixed_view::<3, 1>(0, 3).into_owned(),
    })
}

fn load_image(dir: &Path, name: &str) -> Result<RgbImage, GeometryError> {
    let mut p = dir.join(name);
    if p.extension().is_none() {
        p.set_extension("png");
    }
    if !p.exists() {
        return Err(GeometryError::Missing(p.display().to_string()));
    }
    Ok(read_image(&p)?)
}

/// Loads a dataset directory in the given layout, enforcing every invariant.
pub fn load_dataset(dir: &Path, format: DatasetFormat) -> Result<CalibratedDataset, GeometryError> {
    if !dir.is_dir() {
        return Err(GeometryError::Missing(dir.display().to_string()));
    }
    let ds = match format {
        DatasetFormat::BlenderTransforms => load_blender(dir)?,
        DatasetFormat::PoseTxt => load_pose_txt(dir)?,
    };
    ds.validate()?;
    Ok(ds)
}

fn load_blender(dir: &Path) -> Result<CalibratedDataset, GeometryError> {
    let path = dir.join(DatasetFormat::BlenderTransforms.file_name());
    let root: Value = serde_json::from_str(&read_text(&path)?)
        .map_err(|e| GeometryError::Parse(format!("{}: {e}", path.display())))?;
    let perr = |m: String| GeometryError::Parse(format!("{}: {m}", path.display()));
    let fov = root.get("camera_angle_x").and_then(Value::as_f64);
    let frames = root
        .get("frames")
        .and_then(Value::as_array)
        .ok_or_else(|| perr("missing frames array".into()))?;
    let mut out = CalibratedDataset {
        images: Vec::new(),
        cameras: Vec::new(),
        names: Vec::new(),
    };
    for (i, f) in frames.iter().enumerate() {
        let name = f
            .get("file_path")
            .and_then(Value::as_str)
            .ok_or_else(|| perr(format!("frame {i}: missing file_path")))?;
        let rows = f
            .get("transform_matrix")
            .and_then(Value::as_array)
            .ok_or_else(|| perr(format!("frame {i}: missing transform_matrix")))?;
        if rows.len() != 4 {
            return Err(perr(format!("frame {i}: transform_matrix needs 4 rows")));
        }
        let mut m = Matrix4::zeros();
        for (r, row) in rows.iter().enumerate() {
            let row = row.as_array().filter(|a| a.len() == 4);
            let row = row.ok_or_else(|| perr(format!("frame {i}: row {r} needs 4 numbers")))?;
            for (c, v) in row.iter().enumerate() {
                m[(r, c)] = v.as_f64().ok_or_else(|| perr(format!("frame {i}: non-numeric entry")))?;
            }
        }
        if m.row(3).iter().zip([0.0, 0.0, 0.0, 1.0]).any(|(a, b)| (a - b).abs() > RIGID_TOL) {
            return Err(GeometryError::NonRigid {
                index: i,
                reason: "last row is not [0 0 0 1]".into(),
            });
        }
        let m = rigid_pose(i, m)?;
        let img = load_image(dir, name)?;
        let num = |k: &str| f.get(k).and_then(Value::as_f64);
        let k = match num("fl_x") {
            Some(fx) => Intrinsics {
                fx,
                fy: num("fl_y").unwrap_or(fx),
                cx: num("cx").unwrap_or(0.5 * img.width as f64),
                cy: num("cy").unwrap_or(0.5 * img.height as f64),
                width: num("w").map(|v| v as usize).unwrap_or(img.width),
                height: num("h").map(|v| v as usize).unwrap_or(img.height),
            },
            None => {
                let fov = fov.ok_or_else(|| perr("missing camera_angle_x".into()))?;
                Intrinsics::from_fov(img.width, img.height, fov)
            }
        };
        out.cameras.push(make_camera(i, k, &m)?);
        out.images.push(img);
        out.names.push(name.to_string());
    }
    Ok(out)
}

fn load_pose_txt(dir: &Path) -> Result<CalibratedDataset, GeometryError> {
    let path = dir.join(DatasetFormat::PoseTxt.file_name());
    let text = read_text(&path)?;
    let perr = |ln: usize, m: &str| GeometryError::Parse(format!("{}:{}: {m}", path.display(), ln + 1));
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (hl, header) = lines.next().ok_or_else(|| perr(0, "missing intrinsics header"))?;
    let h: Vec<f64> = header
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| perr(hl, "bad number in header")))
        .collect::<Result<_, _>>()?;
    if h.len() != 7 {
        return Err(perr(hl, "header must be `fx fy cx cy width height count`"));
    }
    let k = Intrinsics {
        fx: h[0],
        fy: h[1],
        cx: h[2],
        cy: h[3],
        width: h[4] as usize,
        height: h[5] as usize,
    };
    let count = h[6] as usize;
    let mut out = CalibratedDataset {
        images: Vec::new(),
        cameras: Vec::new(),
        names: Vec::new(),
    };
    for (ln, line) in lines {
        let i = out.images.len();
        let mut it = line.split_whitespace();
        let name = it.next().ok_or_else(|| perr(ln, "missing image name"))?;
        let vals: Vec<f64> = it
            .map(|t| t.parse::<f64>().map_err(|_| perr(ln, "bad number")))
            .collect::<Result<_, _>>()?;
        if vals.len() != 12 {
            return Err(perr(ln, "expected 12 matrix entries"));
        }
        let mut m = Matrix4::identity();
        for r in 0..3 {
            for c in 0..4 {
                m[(r, c)] = vals[r * 4 + c];
            }
        }
        let m = rigid_pose(i, m)?;
        out.cameras.push(make_camera(i, k, &m)?);
        out.images.push(load_image(dir, name)?);
        out.names.push(name.to_string());
    }
    if out.images.len() != count {
        return Err(GeometryError::CountMismatch {
            what: "pose lines",
            expected: count,
            found: out.images.len(),
        });
    }
    Ok(out)
}

/// Writes a dataset (images under their `names`) in the given layout.
/// PoseTxt requires shared intrinsics.
pub fn write_dataset(ds: &CalibratedDataset, dir: &Path, format: DatasetFormat) -> Result<(), GeometryError> {
    ds.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| GeometryError::io(dir, e))?;
    for (img, name) in ds.images.iter().zip(&ds.names) {
        let p: PathBuf = dir.join(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| GeometryError::io(parent, e))?;
        }
        write_image(img, &p)?;
    }
    let text = match format {
        DatasetFormat::BlenderTransforms => {
            let frames: Vec<Value> = ds
                .cameras
                .iter()
                .zip(&ds.names)
                .map(|(c, name)| {
                    let m = c.pose();
                    let rows: Vec<Vec<f64>> = (0..4).map(|r| (0..4).map(|k| m[(r, k)]).collect()).collect();
                    let k = &c.intrinsics;
                    json!({
                        "file_path": name,
                        "transform_matrix": rows,
                        "fl_x": k.fx, "fl_y": k.fy, "cx": k.cx, "cy": k.cy,
                        "w": k.width, "h": k.height,
                    })
                })
                .collect();
            let fov = ds
                .cameras
                .first()
                .map(|c| 2.0 * (0.5 * c.intrinsics.width as f64 / c.intrinsics.fx).atan())
                .unwrap_or(0.0);
            serde_json::to_string_pretty(&json!({ "camera_angle_x": fov, "frames": frames }))
                .expect("JSON values serialize")
        }
        DatasetFormat::PoseTxt => {
            let Some(first) = ds.cameras.first() else {
                return Err(GeometryError::Invalid("cannot write an empty pose_txt dataset".into()));
            };
            let k = first.intrinsics;
            if ds.cameras.iter().any(|c| c.intrinsics != k) {
                return Err(GeometryError::Invalid("pose_txt needs shared intrinsics".into()));
            }
            let mut s = format!("{} {} {} {} {} {} {}\n", k.fx, k.fy, k.cx, k.cy, k.width, k.height, ds.len());
            for (c, name) in ds.cameras.iter().zip(&ds.names) {
                let m = c.pose();
                s.push_str(name);
                for r in 0..3 {
                    for col in 0..4 {
                        s.push_str(&format!(" {}", m[(r, col)]));
                    }
                }
                s.push('\n');
            }
            s
        }
    };
    let p = dir.join(format.file_name());
    std::fs::write(&p, text).map_err(|e| GeometryError::io(&p, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_view() -> CalibratedDataset {
        let k = Intrinsics::from_fov(4, 3, 0.7);
        let cams = vec![
            Camera::look_at(k, [0.0, -3.0, 0.5], [0.0; 3], [0.0, 0.0, 1.0]),
            Camera::look_at(k, [2.0, 2.0, 1.0], [0.0; 3], [0.0, 0.0, 1.0]),
        ];
        let imgs = (0..2)
            .map(|i| RgbImage::from_fn(4, 3, |x, y| [x as f64 / 4.0, y as f64 / 3.0, i as f64 * 0.5]))
            .collect();
        let mut ds = CalibratedDataset::new(imgs, cams).unwrap();
        ds.names = vec!["a.pfm".into(), "b.pfm".into()];
        ds
    }

    #[test]
    fn round_trip_both_formats() {
        for fmt in [DatasetFormat::BlenderTransforms, DatasetFormat::PoseTxt] {
            let dir = tempfile::tempdir().unwrap();
            let ds = two_view();
            write_dataset(&ds, dir.path(), fmt).unwrap();
            let back = load_dataset(dir.path(), fmt).unwrap();
            assert_eq!(back.len(), 2);
            for (a, b) in back.cameras.iter().zip(&ds.cameras) {
                assert_eq!(a.pose(), b.pose());
                assert_eq!(a.intrinsics, b.intrinsics);
                assert!((a.rotation.determinant() - 1.0).abs() < 1e-12);
            }
            for (a, b) in back.images.iter().zip(&ds.images) {
                for (p, q) in a.pixels.iter().zip(&b.pixels) {
                    for c in 0..3 {
                        assert!((p[c] - q[c]).abs() < 1e-7);
                    }
                }
            }
        }
    }

    #[test]
    fn missing_directory_and_file() {
        let dir = tempfile::tempdir().unwrap();
        let gone = dir.path().join("nope");
        assert!(matches!(
            load_dataset(&gone, DatasetFormat::PoseTxt),
            Err(GeometryError::Missing(_))
        ));
        assert!(matches!(
            load_dataset(dir.path(), DatasetFormat::BlenderTransforms),
            Err(GeometryError::Missing(_))
        ));
    }
}
