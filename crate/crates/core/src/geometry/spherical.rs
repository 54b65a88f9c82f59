//! Spherical camera path around the origin from a set of camera positions.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::render::{Camera, Intrinsics};

/// Ordered camera poses sharing one set of intrinsics.
#[derive(Debug, Clone)]
pub struct CameraPath {
    pub intrinsics: Intrinsics,
    pub cameras: Vec<Camera>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PathError {
    #[error("at least one camera position is required")]
    NoCameras,
    #[error("n_steps must be at least 1")]
    NoSteps,
}

/// Evenly spaced values including both ends; a single value is `start`.
pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// The vertical axis: second eigenvector (eigenvalues descending) of
/// `camsᵀ·cams` on raw positions, signed to point along +z. Falls back to
/// +z when the second eigenvalue vanishes (cameras collinear with the origin).
pub fn up_vector(cams: &[Vector3<f64>]) -> Vector3<f64> {
    let mut gram = Matrix3::zeros();
    for c in cams {
        gram += c * c.transpose();
    }
    let eig = SymmetricEigen::new(gram);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    let second = eig.eigenvalues[order[1]];
    if !(top > 0.0) || second <= 1e-12 * top {
        log::debug!("degenerate camera distribution; using +z as up");
        return Vector3::z();
    }
    let mut up: Vector3<f64> = eig.eigenvectors.column(order[1]).into_owned();
    if up.z < 0.0 {
        up = -up;
    }
    up
}

pub fn spherical_poses(
    positions: &[[f64; 3]],
    n_steps: usize,
    intrinsics: Intrinsics,
) -> Result<CameraPath, PathError> {
    if positions.is_empty() {
        return Err(PathError::NoCameras);
    }
    if n_steps == 0 {
        return Err(PathError::NoSteps);
    }
    let cams: Vec<Vector3<f64>> = positions.iter().map(|p| Vector3::from(*p)).collect();
    let cam_center = cams.iter().sum::<Vector3<f64>>() / cams.len() as f64;
    let up = up_vector(&cams);
    let rot_dir = up.cross(&cam_center);
    let cc_norm = cam_center.norm();
    let max_angle = cams
        .iter()
        .map(|c| {
            let denom = c.norm() * cc_norm;
            if denom == 0.0 {
                0.0
            } else {
                (c.dot(&cam_center) / denom).clamp(-1.0, 1.0).acos()
            }
        })
        .fold(0.0, f64::max);
    let cameras = linspace(-max_angle, max_angle, n_steps)
        .into_iter()
        .map(|theta| {
            let cam_pos = cam_center * theta.cos() + rot_dir * theta.sin();
            let look_dir = (-cam_pos).normalize();
            let mut side = look_dir.cross(&up);
            if side.norm() < 1e-9 {
                side = look_dir.cross(&Vector3::y());
            }
            let side = side.normalize();
            let up_vec = side.cross(&look_dir).normalize();
            Camera {
                intrinsics,
                rotation: Matrix3::from_columns(&[side, up_vec, -look_dir]),
                position: cam_pos,
            }
        })
        .collect();
    Ok(CameraPath {
        intrinsics,
        cameras,
    })
}
