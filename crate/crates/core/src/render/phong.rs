use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhongMaterial {
    pub ambient: f64,
    pub diffuse: f64,
    pub specular: f64,
    pub shininess: f64,
}

impl Default for PhongMaterial {
    fn default() -> Self {
        Self {
            ambient: 0.1,
            diffuse: 0.7,
            specular: 0.2,
            shininess: 32.0,
        }
    }
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Scalar Phong shade for a (not necessarily unit) normal, and its gradient
/// with respect to that normal. A zero normal gets ambient light only.
pub fn phong_shade_grad(
    n: &[f64; 3],
    l: &[f64; 3],
    v: &[f64; 3],
    m: &PhongMaterial,
) -> (f64, [f64; 3]) {
    let len = dot(n, n).sqrt();
    if len == 0.0 || !len.is_finite() {
        log::debug!("zero-length normal, ambient shading only");
        return (m.ambient.clamp(0.0, 1.0), [0.0; 3]);
    }
    let u = n.map(|c| c / len);
    let nl = dot(&u, l);
    let nv = dot(&u, v);
    let rv = 2.0 * nl * nv - dot(l, v);
    let mut shade = m.ambient;
    let mut d_u = [0.0; 3];
    if nl > 0.0 {
        shade += m.diffuse * nl;
        for a in 0..3 {
            d_u[a] += m.diffuse * l[a];
        }
    }
    if rv > 0.0 {
        shade += m.specular * rv.powf(m.shininess);
        let k = m.specular * m.shininess * rv.powf(m.shininess - 1.0) * 2.0;
        for a in 0..3 {
            d_u[a] += k * (nv * l[a] + nl * v[a]);
        }
    }
    if !(0.0..=1.0).contains(&shade) {
        return (shade.clamp(0.0, 1.0), [0.0; 3]);
    }
    let proj = dot(&d_u, &u);
    let d_n = std::array::from_fn(|a| (d_u[a] - proj * u[a]) / len);
    (shade, d_n)
}

/// Phong shade replicated to three channels.
pub fn phong_shade(n: &[f64; 3], l: &[f64; 3], v: &[f64; 3], m: &PhongMaterial) -> [f64; 3] {
    [phong_shade_grad(n, l, v, m).0; 3]
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Standalone shading evaluation with explicit reflection vector.
    fn oracle(n: [f64; 3], l: [f64; 3], v: [f64; 3]) -> f64 {
        let nl = n[0] * l[0] + n[1] * l[1] + n[2] * l[2];
        let r = [2.0 * nl * n[0] - l[0], 2.0 * nl * n[1] - l[1], 2.0 * nl * n[2] - l[2]];
        let rv = r[0] * v[0] + r[1] * v[1] + r[2] * v[2];
        (0.1 + 0.7 * nl.max(0.0) + 0.2 * rv.max(0.0).powf(32.0)).clamp(0.0, 1.0)
    }

    #[test]
    fn examples() {
        let m = PhongMaterial::default();
        let z = [0.0, 0.0, 1.0];
        assert_eq!(phong_shade(&z, &z, &z, &m), [1.0; 3]);
        assert_eq!(phong_shade(&z, &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &m), [0.1; 3]);
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let l = [c, 0.0, c];
        let s = phong_shade(&z, &l, &l, &m);
        assert!((s[0] - oracle(z, l, l)).abs() < 1e-15);
        assert!((s[0] - (0.1 + 0.7 * c)).abs() < 1e-12);
        assert_eq!(phong_shade(&[0.0; 3], &l, &l, &m), [0.1; 3]);
    }

    #[test]
    fn gradient_matches_differences() {
        let m = PhongMaterial::default();
        let l = [0.3, -0.2, 0.932_737_905_308_881_5];
        let n = [0.2, -0.1, 1.3];
        let (_, g) = phong_shade_grad(&n, &l, &l, &m);
        for a in 0..3 {
            let mut p = n;
            let mut q = n;
            p[a] += 1e-6;
            q[a] -= 1e-6;
            let fd = (phong_shade_grad(&p, &l, &l, &m).0 - phong_shade_grad(&q, &l, &l, &m).0) / 2e-6;
            assert!((fd - g[a]).abs() < 1e-7);
        }
    }
}
