//! Single-ray rendering with an optional tape for reverse-mode gradients.

use rand::Rng;

use super::phong::phong_shade_grad;
use super::volume::{alpha_backward, composite, neus_alpha_grad, EPS_DIV};
use super::{Ray, RenderOutput, RenderSettings};
use crate::fields::{Background, EvalMode, Foreground, NormalMode};

enum NormalTape<T> {
    None,
    Analytic(T),
    /// Tapes at `x ± h e_a`, ordered (+x, −x, +y, −y, +z, −z).
    Numerical { h: f64, tapes: Vec<T> },
}

/// Intermediate values of one rendered ray.
pub struct RayTape<FT, BT> {
    fg: Vec<FT>,
    fg_rgb: Vec<[f64; 3]>,
    alpha: Vec<f64>,
    alpha_partials: Vec<(f64, f64, f64)>,
    trans: Vec<f64>,
    bg: Vec<BT>,
    bg_rgb: Vec<[f64; 3]>,
    bg_alpha: Vec<f64>,
    bg_trans: Vec<f64>,
    bg_delta: f64,
    mask: f64,
    rgb_bg: [f64; 3],
    shade: f64,
    d_shade_d_n: [f64; 3],
    normal: NormalTape<FT>,
}

/// Inverse-distance sample positions beyond the unit sphere along a ray.
/// Returns `(points, delta)`; `delta` is the bin width in inverse distance.
pub fn background_samples<R: Rng + ?Sized>(
    ray: &Ray,
    n: usize,
    min_inv: f64,
    mut jitter: Option<&mut R>,
) -> (Vec<[f64; 3]>, f64) {
    let o = &ray.origin;
    let d = &ray.dir;
    let tc = -(o[0] * d[0] + o[1] * d[1] + o[2] * d[2]);
    let oo = o[0] * o[0] + o[1] * o[1] + o[2] * o[2];
    let p2 = (oo - tc * tc).max(0.0);
    let r_start = if tc > 0.0 { p2.sqrt() } else { oo.sqrt() }.max(1.0);
    let max_inv = 1.0 / r_start;
    if !(max_inv > min_inv) || n == 0 {
        log::debug!("ray {ray:?} has no background segment");
        return (Vec::new(), 0.0);
    }
    let delta = (max_inv - min_inv) / n as f64;
    let pts = (0..n)
        .map(|k| {
            let j = match jitter.as_deref_mut() {
                Some(r) => r.gen::<f64>(),
                None => 0.5,
            };
            let w = max_inv - (k as f64 + j) * delta;
            let r = 1.0 / w;
            let t = tc + (r * r - p2).max(0.0).sqrt();
            ray.at(t)
        })
        .collect();
    (pts, delta)
}

/// Depths of the `n + 1` foreground sample points inside the unit sphere.
pub fn foreground_depths<R: Rng + ?Sized>(
    ray: &Ray,
    n: usize,
    mut jitter: Option<&mut R>,
) -> Vec<f64> {
    let Some((t0, t1)) = ray.unit_sphere_interval() else {
        return Vec::new();
    };
    let bins = n + 1;
    let width = (t1 - t0) / bins as f64;
    (0..bins)
        .map(|k| {
            let j = match jitter.as_deref_mut() {
                Some(r) => r.gen::<f64>(),
                None => 0.5,
            };
            t0 + (k as f64 + j) * width
        })
        .collect()
}

/// Renders one ray. With `record`, a tape for [`backward_ray`] is returned.
pub fn render_ray<F: Foreground, B: Background, R: Rng + ?Sized>(
    fg: &F,
    bg: &B,
    ray: &Ray,
    settings: &RenderSettings,
    want_phong: bool,
    mut jitter: Option<&mut R>,
) -> (RenderOutput, RayTape<F::Tape, B::Tape>) {
    let d = ray.dir;
    let s = fg.sharpness();

    // Foreground.
    let depths = foreground_depths(ray, settings.fg_samples, jitter.as_deref_mut());
    let mut tape = RayTape {
        fg: Vec::with_capacity(depths.len()),
        fg_rgb: Vec::with_capacity(depths.len()),
        alpha: Vec::new(),
        alpha_partials: Vec::new(),
        trans: Vec::new(),
        bg: Vec::new(),
        bg_rgb: Vec::new(),
        bg_alpha: Vec::new(),
        bg_trans: Vec::new(),
        bg_delta: 0.0,
        mask: 0.0,
        rgb_bg: [0.0; 3],
        shade: 0.0,
        d_shade_d_n: [0.0; 3],
        normal: NormalTape::None,
    };
    let mut fg_acc = [0.0; 3];
    let mut mask = 0.0;
    let mut depth_acc = 0.0;
    let mut trans = 1.0;
    let mut prev_sdf = 0.0;
    for (k, &t) in depths.iter().enumerate() {
        let (smp, st) = fg.sample(&ray.at(t), &d, EvalMode::Full);
        tape.fg.push(st);
        tape.fg_rgb.push(smp.rgb);
        if k > 0 {
            let (a, da, db, ds) = neus_alpha_grad(prev_sdf, smp.sdf, s);
            let w = trans * a;
            let prev_rgb = tape.fg_rgb[k - 1];
            for c in 0..3 {
                fg_acc[c] += w * 0.5 * (prev_rgb[c] + smp.rgb[c]);
            }
            mask += w;
            depth_acc += w * 0.5 * (depths[k - 1] + t);
            tape.alpha.push(a);
            tape.alpha_partials.push((da, db, ds));
            tape.trans.push(trans);
            trans *= 1.0 - a;
            if trans < settings.early_stop {
                break;
            }
        }
        prev_sdf = smp.sdf;
    }
    let depth = depth_acc / mask.max(EPS_DIV);

    // Background.
    let (pts, delta) = background_samples(ray, settings.bg_samples, settings.bg_min_inv, jitter);
    tape.bg_delta = delta;
    let mut rgb_bg = [0.0; 3];
    let mut bg_trans = 1.0;
    let mut bg_mask = 0.0;
    for x in &pts {
        let (sigma, rgb, bt) = bg.sample(x, &d);
        let a = 1.0 - (-sigma * delta).exp();
        let w = bg_trans * a;
        for c in 0..3 {
            rgb_bg[c] += w * rgb[c];
        }
        bg_mask += w;
        tape.bg.push(bt);
        tape.bg_rgb.push(rgb);
        tape.bg_alpha.push(a);
        tape.bg_trans.push(bg_trans);
        bg_trans *= 1.0 - a;
    }
    tape.mask = mask;
    tape.rgb_bg = rgb_bg;

    let rgb_fg = if mask > 0.0 {
        fg_acc.map(|v| v / mask)
    } else {
        [0.0; 3]
    };
    let mut out = RenderOutput {
        rgb_fg,
        rgb_bg,
        rgb: composite(&rgb_fg, &rgb_bg, mask),
        mask,
        bg_mask,
        depth,
        normal: [0.0; 3],
        phong: [0.0; 3],
    };

    if want_phong && mask > 0.0 {
        let xs = ray.at(depth);
        let l = d.map(|v| -v);
        let (n, ntape) = match fg.normal_mode() {
            NormalMode::Analytic => {
                let (smp, st) = fg.sample(&xs, &d, EvalMode::Geometry);
                (smp.normal, NormalTape::Analytic(st))
            }
            NormalMode::Numerical { h } => {
                let mut n = [0.0; 3];
                let mut tapes = Vec::with_capacity(6);
                for a in 0..3 {
                    let mut xp = xs;
                    let mut xm = xs;
                    xp[a] += h;
                    xm[a] -= h;
                    let (sp, tp) = fg.sample(&xp, &d, EvalMode::SdfOnly);
                    let (sm, tm) = fg.sample(&xm, &d, EvalMode::SdfOnly);
                    n[a] = (sp.sdf - sm.sdf) / (2.0 * h);
                    tapes.push(tp);
                    tapes.push(tm);
                }
                (n, NormalTape::Numerical { h, tapes })
            }
        };
        let (shade, d_n) = phong_shade_grad(&n, &l, &l, &settings.material);
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if len > 0.0 {
            out.normal = n.map(|v| v / len);
        }
        out.phong = [mask * shade; 3];
        tape.shade = shade;
        tape.d_shade_d_n = d_n;
        tape.normal = ntape;
    }
    (out, tape)
}

/// Upstream gradients of a loss with respect to one ray's outputs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RayGrad {
    pub rgb: [f64; 3],
    /// Gradient with respect to the scalar Phong value (sum over channels).
    pub phong: f64,
    pub mask: f64,
}

/// Accumulates parameter gradients of one ray into the foreground and/or
/// background buffers. The Phong surface point is treated as a constant.
pub fn backward_ray<F: Foreground, B: Background>(
    fg: &F,
    bg: &B,
    tape: &RayTape<F::Tape, B::Tape>,
    g: &RayGrad,
    fg_grad: Option<&mut [f64]>,
    bg_grad: Option<&mut [f64]>,
) {
    let m = tape.mask;
    if let Some(grad) = bg_grad {
        let d_rgb_bg: [f64; 3] = std::array::from_fn(|c| (1.0 - m) * g.rgb[c]);
        let n = tape.bg_alpha.len();
        let mut d_w = vec![0.0; n];
        for i in 0..n {
            d_w[i] = (0..3).map(|c| d_rgb_bg[c] * tape.bg_rgb[i][c]).sum();
        }
        let d_alpha = alpha_backward(&tape.bg_alpha, &tape.bg_trans, &d_w);
        for i in 0..n {
            let w = tape.bg_trans[i] * tape.bg_alpha[i];
            let d_rgb = d_rgb_bg.map(|v| v * w);
            let d_sigma = d_alpha[i] * tape.bg_delta * (1.0 - tape.bg_alpha[i]);
            bg.backward(&tape.bg[i], d_sigma, &d_rgb, grad);
        }
    }
    let Some(grad) = fg_grad else {
        return;
    };
    let n = tape.alpha.len();
    if n == 0 {
        return;
    }
    let d_mask: f64 = g.mask + g.phong * tape.shade
        - (0..3).map(|c| g.rgb[c] * tape.rgb_bg[c]).sum::<f64>();
    let mut d_w = vec![0.0; n];
    let mut d_rgb = vec![[0.0; 3]; n + 1];
    for i in 0..n {
        let w = tape.trans[i] * tape.alpha[i];
        let mut dw = d_mask;
        for c in 0..3 {
            let cbar = 0.5 * (tape.fg_rgb[i][c] + tape.fg_rgb[i + 1][c]);
            dw += g.rgb[c] * cbar;
            d_rgb[i][c] += 0.5 * w * g.rgb[c];
            d_rgb[i + 1][c] += 0.5 * w * g.rgb[c];
        }
        d_w[i] = dw;
    }
    let d_alpha = alpha_backward(&tape.alpha, &tape.trans, &d_w);
    let mut d_sdf = vec![0.0; n + 1];
    let mut d_s = 0.0;
    for i in 0..n {
        let (da, db, ds) = tape.alpha_partials[i];
        d_sdf[i] += d_alpha[i] * da;
        d_sdf[i + 1] += d_alpha[i] * db;
        d_s += d_alpha[i] * ds;
    }
    for k in 0..=n {
        fg.backward(&tape.fg[k], d_sdf[k], &[0.0; 3], &d_rgb[k], grad);
    }
    fg.backward_sharpness(d_s, grad);

    let d_shade = g.phong * m;
    if d_shade != 0.0 {
        let d_n = tape.d_shade_d_n.map(|v| v * d_shade);
        match &tape.normal {
            NormalTape::None => {}
            NormalTape::Analytic(t) => fg.backward(t, 0.0, &d_n, &[0.0; 3], grad),
            NormalTape::Numerical { h, tapes } => {
                for a in 0..3 {
                    let k = d_n[a] / (2.0 * h);
                    fg.backward(&tapes[2 * a], k, &[0.0; 3], &[0.0; 3], grad);
                    fg.backward(&tapes[2 * a + 1], -k, &[0.0; 3], &[0.0; 3], grad);
                }
            }
        }
    }
}
