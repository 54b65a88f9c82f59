use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use super::RenderError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Pinhole intrinsics from a horizontal field of view in radians.
    pub fn from_fov(width: usize, height: usize, fov_x: f64) -> Self {
        let fx = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Self {
            fx,
            fy: fx,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx.is_finite()
            && self.cy.is_finite()
            && self.width > 0
            && self.height > 0;
        if ok {
            Ok(())
        } else {
            Err(RenderError::Camera(format!("invalid intrinsics {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + t * self.dir[a])
    }

    /// Parameter interval inside the unit sphere, clipped to `t >= 0`.
    pub fn unit_sphere_interval(&self) -> Option<(f64, f64)> {
        let o = &self.origin;
        let d = &self.dir;
        let b = o[0] * d[0] + o[1] * d[1] + o[2] * d[2];
        let c = o[0] * o[0] + o[1] * o[1] + o[2] * o[2] - 1.0;
        let disc = b * b - c;
        if disc <= 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let t1 = -b + s;
        if t1 <= 0.0 {
            return None;
        }
        Some(((-b - s).max(0.0), t1))
    }
}

/// Pinhole camera; the pose maps camera to world coordinates and the camera
/// looks down its local −z axis with +y up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
}

pub fn check_rigid(r: &Matrix3<f64>, tol: f64) -> Result<(), RenderError> {
    let e = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if e > tol || (det - 1.0).abs() > tol {
        return Err(RenderError::Camera(format!(
            "pose is not rigid (orthogonality error {e:.3e}, det {det:.6})"
        )));
    }
    Ok(())
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: &Matrix4<f64>) -> Result<Self, RenderError> {
        intrinsics.validate()?;
        let rotation: Matrix3<f64> = pose.fixed_view::<3, 3>(0, 0).into_owned();
        check_rigid(&rotation, 1e-6)?;
        Ok(Self {
            intrinsics,
            rotation,
            position: pose.fixed_view::<3, 1>(0, 3).into_owned(),
        })
    }

    /// Camera at `eye` looking at `target`.
    pub fn look_at(intrinsics: Intrinsics, eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> Self {
        let eye = Vector3::from(eye);
        let back = (eye - Vector3::from(target)).normalize();
        let mut side = Vector3::from(up).cross(&back);
        if side.norm() < 1e-9 {
            side = Vector3::new(0.0, 1.0, 0.0).cross(&back);
        }
        let side = side.normalize();
        let up = back.cross(&side);
        Self {
            intrinsics,
            rotation: Matrix3::from_columns(&[side, up, back]),
            position: eye,
        }
    }

    pub fn pose(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.position);
        m
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Ray through the center of pixel (`px`, `py`).
    pub fn ray(&self, px: usize, py: usize) -> Ray {
        self.ray_at(px as f64 + 0.5, py as f64 + 0.5)
    }

    /// Ray through continuous image coordinates.
    pub fn ray_at(&self, u: f64, v: f64) -> Ray {
        let k = &self.intrinsics;
        let local = Vector3::new((u - k.cx) / k.fx, -(v - k.cy) / k.fy, -1.0);
        let d = (self.rotation * local).normalize();
        Ray {
            origin: self.position.into(),
            dir: d.into(),
            t_near: 0.0,
            t_far: f64::INFINITY,
        }
    }
}

/// Rays for a batch of pixel coordinates.
pub fn generate_rays(camera: &Camera, pixels: &[(usize, usize)]) -> Result<Vec<Ray>, RenderError> {
    camera.intrinsics.validate()?;
    check_rigid(&camera.rotation, 1e-6)?;
    Ok(pixels.iter().map(|&(x, y)| camera.ray(x, y)).collect())
}
