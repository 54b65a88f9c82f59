//! Closed-form signed distance functions used as ground truth.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnalyticScene {
    Sphere { center: [f64; 3], radius: f64 },
    Box { center: [f64; 3], half_extents: [f64; 3] },
    /// Torus around the z axis.
    Torus { center: [f64; 3], major: f64, minor: f64 },
    /// `n · x - offset` with unit `n`.
    Plane { normal: [f64; 3], offset: f64 },
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid scene parameters: {0}")]
pub struct SceneError(String);

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: &[f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Builds a scene after checking its parameters.
pub fn analytic_scene(scene: AnalyticScene) -> Result<AnalyticScene, SceneError> {
    match scene {
        AnalyticScene::Sphere { radius, .. } if !(radius > 0.0) => {
            Err(SceneError(format!("sphere radius {radius} must be positive")))
        }
        AnalyticScene::Box { half_extents, .. } if half_extents.iter().any(|h| !(*h > 0.0)) => {
            Err(SceneError("box half extents must be positive".into()))
        }
        AnalyticScene::Torus { major, minor, .. } if !(minor > 0.0 && major > minor) => Err(
            SceneError(format!("torus needs 0 < minor < major, got {minor}, {major}")),
        ),
        AnalyticScene::Plane { normal, .. } if (norm(&normal) - 1.0).abs() > 1e-9 => {
            Err(SceneError("plane normal must be unit length".into()))
        }
        s => Ok(s),
    }
}

impl AnalyticScene {
    pub fn unit_sphere() -> Self {
        AnalyticScene::Sphere {
            center: [0.0; 3],
            radius: 1.0,
        }
    }

    pub fn sphere(radius: f64) -> Self {
        AnalyticScene::Sphere {
            center: [0.0; 3],
            radius,
        }
    }

    pub fn sdf(&self, x: &[f64; 3]) -> f64 {
        match *self {
            AnalyticScene::Sphere { center, radius } => norm(&sub(x, &center)) - radius,
            AnalyticScene::Box {
                center,
                half_extents,
            } => {
                let p = sub(x, &center);
                let q: [f64; 3] = std::array::from_fn(|a| p[a].abs() - half_extents[a]);
                let outside = norm(&q.map(|v| v.max(0.0)));
                let inside = q[0].max(q[1]).max(q[2]).min(0.0);
                outside + inside
            }
            AnalyticScene::Torus {
                center,
                major,
                minor,
            } => {
                let p = sub(x, &center);
                let ring = (p[0] * p[0] + p[1] * p[1]).sqrt() - major;
                (ring * ring + p[2] * p[2]).sqrt() - minor
            }
            AnalyticScene::Plane { normal, offset } => {
                normal[0] * x[0] + normal[1] * x[1] + normal[2] * x[2] - offset
            }
        }
    }

    /// Exact spatial gradient. At medial-axis points (sphere center, torus
    /// axis) an arbitrary unit vector is returned.
    pub fn gradient(&self, x: &[f64; 3]) -> [f64; 3] {
        match *self {
            AnalyticScene::Sphere { center, .. } => {
                let p = sub(x, &center);
                let r = norm(&p);
                if r == 0.0 {
                    [0.0, 0.0, 1.0]
                } else {
                    p.map(|v| v / r)
                }
            }
            AnalyticScene::Box {
                center,
                half_extents,
            } => {
                let p = sub(x, &center);
                let q: [f64; 3] = std::array::from_fn(|a| p[a].abs() - half_extents[a]);
                let sign: [f64; 3] = p.map(|v| if v < 0.0 { -1.0 } else { 1.0 });
                let pos = q.map(|v| v.max(0.0));
                let outside = norm(&pos);
                if outside > 0.0 {
                    std::array::from_fn(|a| sign[a] * pos[a] / outside)
                } else {
                    let mut a_max = 0;
                    for a in 1..3 {
                        if q[a] > q[a_max] {
                            a_max = a;
                        }
                    }
                    let mut g = [0.0; 3];
                    g[a_max] = sign[a_max];
                    g
                }
            }
            AnalyticScene::Torus {
                center,
                major,
                minor: _,
            } => {
                let p = sub(x, &center);
                let rho = (p[0] * p[0] + p[1] * p[1]).sqrt();
                let ring = rho - major;
                let len = (ring * ring + p[2] * p[2]).sqrt();
                if len == 0.0 || rho == 0.0 {
                    return [0.0, 0.0, 1.0];
                }
                [
                    ring * p[0] / (rho * len),
                    ring * p[1] / (rho * len),
                    p[2] / len,
                ]
            }
            AnalyticScene::Plane { normal, .. } => normal,
        }
    }
}

/// Central-difference gradient of any scalar field.
pub fn central_difference<F: Fn(&[f64; 3]) -> f64>(f: F, x: &[f64; 3], h: f64) -> [f64; 3] {
    std::array::from_fn(|a| {
        let mut xp = *x;
        let mut xm = *x;
        xp[a] += h;
        xm[a] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    })
}
