//! SDF-to-opacity conversion and alpha compositing.

use super::RenderError;

/// Denominator guard for depth normalization.
pub const EPS_DIV: f64 = 1e-8;

#[inline]
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Discrete NeuS opacity between consecutive SDF samples.
pub fn neus_alpha(sdf_i: f64, sdf_next: f64, s: f64) -> Result<f64, RenderError> {
    if !(s > 0.0) {
        return Err(RenderError::Sharpness(s));
    }
    Ok(neus_alpha_grad(sdf_i, sdf_next, s).0)
}

/// NeuS opacity and its partials with respect to both SDF values and `s`.
pub(crate) fn neus_alpha_grad(a: f64, b: f64, s: f64) -> (f64, f64, f64, f64) {
    let q = (log_sigmoid(s * b) - log_sigmoid(s * a)).exp();
    let raw = 1.0 - q;
    if !(raw > 0.0) {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let ca = 1.0 - sigmoid(s * a);
    let cb = 1.0 - sigmoid(s * b);
    let alpha = raw.min(1.0);
    (alpha, q * s * ca, -q * s * cb, -q * (b * cb - a * ca))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Composited {
    pub rgb: [f64; 3],
    pub mask: f64,
    pub depth: f64,
    pub weights: Vec<f64>,
    /// Transmittance before each sample.
    pub transmittance: Vec<f64>,
}

/// Front-to-back compositing of opacities, colors and depths.
pub fn volume_render(alphas: &[f64], colors: &[[f64; 3]], depths: &[f64]) -> Composited {
    let n = alphas.len();
    let mut out = Composited {
        rgb: [0.0; 3],
        mask: 0.0,
        depth: 0.0,
        weights: Vec::with_capacity(n),
        transmittance: Vec::with_capacity(n),
    };
    let mut t = 1.0;
    let mut depth_acc = 0.0;
    for i in 0..n {
        let w = t * alphas[i];
        out.transmittance.push(t);
        out.weights.push(w);
        for c in 0..3 {
            out.rgb[c] += w * colors[i][c];
        }
        out.mask += w;
        depth_acc += w * depths[i];
        t *= 1.0 - alphas[i];
    }
    out.depth = depth_acc / out.mask.max(EPS_DIV);
    out
}

/// Gradients of a loss with respect to each opacity, given its gradients
/// with respect to the compositing weights.
pub(crate) fn alpha_backward(alphas: &[f64], transmittance: &[f64], d_w: &[f64]) -> Vec<f64> {
    let n = alphas.len();
    let mut d_alpha = vec![0.0; n];
    let mut r = 0.0;
    for i in (0..n).rev() {
        d_alpha[i] = transmittance[i] * (d_w[i] - r);
        r = d_w[i] * alphas[i] + (1.0 - alphas[i]) * r;
    }
    d_alpha
}

/// `M·fg + (1−M)·bg`; `M` outside [0, 1] is clamped.
pub fn composite(fg: &[f64; 3], bg: &[f64; 3], mask: f64) -> [f64; 3] {
    let m = if (0.0..=1.0).contains(&mask) {
        mask
    } else {
        log::debug!("composite mask {mask} outside [0, 1], clamped");
        mask.clamp(0.0, 1.0)
    };
    std::array::from_fn(|c| m * fg[c] + (1.0 - m) * bg[c])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_examples() {
        assert_eq!(neus_alpha(0.3, 0.3, 10.0).unwrap(), 0.0);
        let oracle = (sigmoid(1.0) - sigmoid(-1.0)) / sigmoid(1.0);
        let a = neus_alpha(0.1, -0.1, 10.0).unwrap();
        assert!((a - oracle).abs() < 1e-12);
        assert!((a - 0.6321).abs() < 1e-4);
        assert!(neus_alpha(0.2, -0.2, 1e4).unwrap() > 1.0 - 1e-12);
        assert!(neus_alpha(0.0, 1.0, 0.0).is_err());
        // Outgoing crossings are clamped to zero.
        assert_eq!(neus_alpha(-0.1, 0.1, 10.0).unwrap(), 0.0);
    }

    #[test]
    fn alpha_partials_match_differences() {
        let h = 1e-6;
        for &(a, b, s) in &[(0.1, -0.05, 12.0), (0.4, 0.1, 3.0), (-0.2, -0.5, 30.0)] {
            let (_, da, db, ds) = neus_alpha_grad(a, b, s);
            let f = |a: f64, b: f64, s: f64| neus_alpha_grad(a, b, s).0;
            assert!((da - (f(a + h, b, s) - f(a - h, b, s)) / (2.0 * h)).abs() < 1e-6);
            assert!((db - (f(a, b + h, s) - f(a, b - h, s)) / (2.0 * h)).abs() < 1e-6);
            assert!((ds - (f(a, b, s + h) - f(a, b, s - h)) / (2.0 * h)).abs() < 1e-6);
        }
    }

    #[test]
    fn compositing_examples() {
        let one = volume_render(&[1.0], &[[0.2, 0.4, 0.6]], &[1.0]);
        assert_eq!(one.rgb, [0.2, 0.4, 0.6]);
        assert_eq!(one.mask, 1.0);
        let none = volume_render(&[0.0, 0.0], &[[1.0; 3], [1.0; 3]], &[1.0, 2.0]);
        assert_eq!(none.rgb, [0.0; 3]);
        assert_eq!(none.mask, 0.0);
        let two = volume_render(&[0.5, 0.5], &[[1.0; 3], [0.0; 3]], &[1.0, 2.0]);
        assert_eq!(two.weights, vec![0.5, 0.25]);
        assert_eq!(two.rgb[0], 0.5);
        assert_eq!(two.mask, 0.75);
    }

    #[test]
    fn alpha_backward_matches_differences() {
        let alphas = [0.3, 0.6, 0.2, 0.9];
        let g = [0.7, -0.4, 1.3, 0.5];
        let loss = |a: &[f64]| {
            let c = volume_render(a, &[[0.0; 3]; 4], &[0.0; 4]);
            c.weights.iter().zip(&g).map(|(w, g)| w * g).sum::<f64>()
        };
        let c = volume_render(&alphas, &[[0.0; 3]; 4], &[0.0; 4]);
        let d = alpha_backward(&alphas, &c.transmittance, &g);
        for i in 0..4 {
            let mut p = alphas;
            let mut m = alphas;
            p[i] += 1e-6;
            m[i] -= 1e-6;
            assert!((d[i] - (loss(&p) - loss(&m)) / 2e-6).abs() < 1e-8);
        }
    }

    #[test]
    fn composite_examples() {
        let fg = [1.0, 0.0, 0.0];
        let bg = [0.0, 0.0, 1.0];
        assert_eq!(composite(&fg, &bg, 1.0), fg);
        assert_eq!(composite(&fg, &bg, 0.0), bg);
        assert_eq!(composite(&fg, &bg, 0.5), [0.5, 0.0, 0.5]);
    }
}
