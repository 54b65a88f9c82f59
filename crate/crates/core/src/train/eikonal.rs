use crate::fields::{EvalMode, Foreground};

const D: [f64; 3] = [0.0, 0.0, 1.0];

fn residual(g: &[f64; 3]) -> f64 {
    (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt() - 1.0
}

/// `mean (‖∇δ(x)‖ − 1)²` over `points`, with reverse-mode spatial gradients.
pub fn eikonal_loss<F: Foreground + ?Sized>(field: &F, points: &[[f64; 3]]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let sum: f64 = points
        .iter()
        .map(|x| residual(&field.sample(x, &D, EvalMode::Geometry).0.normal).powi(2))
        .sum();
    sum / points.len() as f64
}

/// Accumulates `scale · ∂/∂θ (‖∇δ(x)‖ − 1)²` for every point into `grad` and
/// returns the summed (unscaled) loss. Divide `scale` by the point count for
/// the gradient of the mean.
pub fn eikonal_backward<F: Foreground + ?Sized>(
    field: &F,
    points: &[[f64; 3]],
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let mut sum = 0.0;
    for x in points {
        let (s, tape) = field.sample(x, &D, EvalMode::Geometry);
        let g = s.normal;
        let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        let r = n - 1.0;
        sum += r * r;
        if n > 0.0 {
            let k = scale * 2.0 * r / n;
            field.backward(&tape, 0.0, &g.map(|v| k * v), &[0.0; 3], grad);
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AnalyticForeground, AnalyticScene, ModelConfig, SourceField};
    use crate::train::Adam;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn points(n: usize, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect()
    }

    #[test]
    fn sphere_is_an_exact_distance_field() {
        let f = AnalyticForeground {
            scene: AnalyticScene::sphere(0.5),
            rgb: [1.0; 3],
            sharpness: 10.0,
        };
        assert!(eikonal_loss(&f, &points(500, 1)) < 1e-10);
    }

    #[test]
    fn doubled_plane_has_unit_loss() {
        let n = [0.0, 0.6, 0.8];
        let f = AnalyticForeground {
            scene: AnalyticScene::Plane {
                normal: n.map(|v| 2.0 * v),
                offset: 0.0,
            },
            rgb: [1.0; 3],
            sharpness: 10.0,
        };
        assert!((eikonal_loss(&f, &points(50, 2)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cfg = ModelConfig::tiny();
        cfg.softplus_beta = 5.0;
        let mut f = SourceField::new(&cfg, &mut rng);
        let pts = points(4, 4);
        let mut grad = vec![0.0; f.num_params()];
        eikonal_backward(&f, &pts, 1.0, &mut grad);
        let h = 1e-6;
        let (offs, sizes): (Vec<usize>, Vec<usize>) = {
            let b = f.blocks();
            let mut o = 0;
            b.iter()
                .map(|(_, s)| {
                    let r = (o, s.len());
                    o += s.len();
                    r
                })
                .unzip()
        };
        // Probe a few entries of the geometry MLP block.
        let (o, n) = (offs[1], sizes[1]);
        for k in [0, n / 3, n / 2, n - 2] {
            let orig = f.blocks_mut()[1][k];
            f.blocks_mut()[1][k] = orig + h;
            let lp = eikonal_loss(&f, &pts) * pts.len() as f64;
            f.blocks_mut()[1][k] = orig - h;
            let lm = eikonal_loss(&f, &pts) * pts.len() as f64;
            f.blocks_mut()[1][k] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = grad[o + k];
            assert!((fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-4), "{k}: fd {fd} an {an}");
        }
    }

    #[test]
    fn minimizing_alone_lowers_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cfg = ModelConfig::tiny();
        cfg.sphere_radius = 0.3;
        let mut f = SourceField::new(&cfg, &mut rng);
        // Start from a distorted field so there is something to fix.
        for v in f.blocks_mut()[1].iter_mut() {
            *v *= 3.0;
        }
        let sizes: Vec<usize> = f.blocks().iter().map(|(_, b)| b.len()).collect();
        let mut opt = Adam::new(&sizes, vec![1e-2, 1e-3, 0.0, 0.0]);
        let mut losses = Vec::new();
        for step in 0..500 {
            let pts = points(64, 100 + step);
            let mut g = vec![0.0; f.num_params()];
            let l = eikonal_backward(&f, &pts, 1.0 / 64.0, &mut g) / 64.0;
            losses.push(l);
            opt.step(f.blocks_mut(), &g);
        }
        let avg = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let windows: Vec<f64> = losses.chunks(100).map(avg).collect();
        for w in windows.windows(2) {
            assert!(w[1] < w[0], "moving averages {windows:?}");
        }
    }
}
