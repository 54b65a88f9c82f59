use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use super::{accumulate, all_finite, CHUNK, perturb_prompt, stream_seed, Adam, EditConfig, EditMode, TrainError};
use crate::diffusion::{Conditioning, Denoiser, DiffusionSchedule};
use crate::distill::{pepds_gradient, DistillStep, LossValues};
use crate::fields::{progressive_schedule, FieldBundle};
use crate::render::{
    backward_ray, render_image, render_ray, Camera, Intrinsics, RayGrad, RenderOutput, RenderSettings, RenderedImage,
};
use crate::tensor::Tensor;

/// One line of the editing loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub t: usize,
    pub camera: usize,
    #[serde(flatten)]
    pub losses: LossValues,
    /// Mean colour of the target render the step's gradient was taken at.
    pub mean_rgb: [f64; 3],
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Stage2Report {
    pub steps: Vec<StepLog>,
}

/// Inclusive discrete timestep range `[max(1, ⌊lo·T⌋), ⌊hi·T⌋]`, clipped to `T − 1`.
pub fn timestep_range(num_steps: usize, t_min_frac: f64, t_max_frac: f64) -> (usize, usize) {
    let t = num_steps as f64;
    let lo = ((t_min_frac * t).floor() as usize).max(1);
    let hi = ((t_max_frac * t).floor() as usize).min(num_steps.saturating_sub(1)).max(lo);
    (lo, hi)
}

pub fn sample_timestep<R: Rng + ?Sized>(rng: &mut R, range: (usize, usize)) -> usize {
    rng.gen_range(range.0..=range.1)
}

/// Rescales a camera so its longer side is at most `patch` pixels while
/// keeping the same field of view.
pub fn patch_camera(cam: &Camera, patch: usize) -> Camera {
    let k = cam.intrinsics;
    let longest = k.width.max(k.height);
    if longest <= patch {
        return *cam;
    }
    let s = patch as f64 / longest as f64;
    let w = ((k.width as f64 * s).round() as usize).max(1);
    let h = ((k.height as f64 * s).round() as usize).max(1);
    let (sx, sy) = (w as f64 / k.width as f64, h as f64 / k.height as f64);
    Camera {
        intrinsics: Intrinsics {
            fx: k.fx * sx,
            fy: k.fy * sy,
            cx: k.cx * sx,
            cy: k.cy * sy,
            width: w,
            height: h,
        },
        ..*cam
    }
}

fn planar(img: &RenderedImage, layer: impl Fn(&RenderOutput) -> [f64; 3]) -> Tensor {
    Tensor::new(vec![3, img.height, img.width], img.planar(layer)).expect("planar image shape")
}

/// Edits the target (foreground mode) or the background (background mode)
/// with the Phong-enhanced posterior distillation gradient. Every step draws
/// one camera from the pool, one timestep and one pair of noise tensors shared
/// by all latents of the step. Source views are rendered with the background
/// as it was on entry. `on_step` sees each log line as it is produced.
#[allow(clippy::too_many_arguments)]
pub fn stage2_edit(
    bundle: &mut FieldBundle,
    cfg: &EditConfig,
    denoiser: &dyn Denoiser,
    schedule: &DiffusionSchedule,
    cameras: &[Camera],
    settings: &RenderSettings,
    seed: u64,
    mut on_step: impl FnMut(&StepLog),
) -> Result<Stage2Report, TrainError> {
    cfg.validate()?;
    let prompt = cfg
        .prompt
        .as_deref()
        .ok_or_else(|| TrainError::Config("edit.prompt is required".into()))?;
    let pool: Vec<usize> = if cfg.camera_pool.is_empty() {
        (0..cameras.len()).collect()
    } else {
        cfg.camera_pool.clone()
    };
    if pool.is_empty() {
        return Err(TrainError::EmptyPool);
    }
    if let Some(&c) = pool.iter().find(|&&c| c >= cameras.len()) {
        return Err(TrainError::Config(format!("camera {c} outside a pool of {}", cameras.len())));
    }

    let dim = cfg.embedding_dim;
    let y_tgt = Conditioning::from_prompt(prompt, dim);
    let y_src_base = match &cfg.source_prompt {
        Some(p) => Conditioning::from_prompt(p, dim),
        None => Conditioning::null(dim),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, u64::MAX, 0));
    let y_src_run = perturb_prompt(&y_src_base, cfg.prompt_noise_sigma, &mut rng);
    let range = timestep_range(schedule.num_steps(), cfg.t_min_frac, cfg.t_max_frac);
    let want_phong = cfg.weights.lambda_pe > 0.0;

    let frozen_bg = bundle.background.clone();
    let mut source_cache: HashMap<usize, Tensor> = HashMap::new();
    let (le, lm) = (cfg.lr_encoding, cfg.lr_mlp);
    let mut opt = match cfg.mode {
        EditMode::Foreground => {
            let sizes: Vec<usize> = bundle.target.blocks().iter().map(|(_, b)| b.len()).collect();
            Adam::new(&sizes, vec![le, lm, lm, lm])
        }
        EditMode::Background => {
            let sizes: Vec<usize> = bundle.background.blocks().iter().map(|(_, b)| b.len()).collect();
            Adam::new(&sizes, vec![le, lm, lm])
        }
    };
    let tgt_levels = bundle.config.target_encoding.clone();
    let mut report = Stage2Report::default();

    for step in 0..cfg.iterations {
        if cfg.progressive && cfg.mode == EditMode::Foreground {
            bundle
                .target
                .encoding_mut()
                .set_active_levels(progressive_schedule(step, cfg.iterations, &tgt_levels));
        }
        let cam_idx = pool[rng.gen_range(0..pool.len())];
        let cam = patch_camera(&cameras[cam_idx], cfg.patch);
        let t = sample_timestep(&mut rng, range);
        let shape = [3, cam.height(), cam.width()];
        let eps_t = Tensor::randn(&shape, &mut rng);
        let eps_prev = Tensor::randn(&shape, &mut rng);
        let y_src = if cfg.prompt_noise_per_step {
            perturb_prompt(&y_src_base, cfg.prompt_noise_sigma, &mut rng)
        } else {
            y_src_run.clone()
        };

        let b = &*bundle;
        let x0_src = source_cache
            .entry(cam_idx)
            .or_insert_with(|| planar(&render_image(&b.source, &frozen_bg, &cam, settings, false), |p| p.rgb))
            .clone();
        let tv = b.target_view();
        let (w, h) = (cam.width(), cam.height());
        let n = w * h;
        // Keep the tapes: re-rendering for the backward pass costs more than the memory.
        let traced: Vec<_> = (0..n)
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(|i| {
                let none: Option<&mut ChaCha8Rng> = None;
                render_ray(&tv, &b.background, &cam.ray(i % w, i / w), settings, want_phong, none)
            })
            .collect();
        let img = RenderedImage {
            width: w,
            height: h,
            pixels: traced.iter().map(|(o, _)| *o).collect(),
        };
        let mean_rgb = img.mean_rgb();
        let st = DistillStep {
            t,
            eps_t,
            eps_prev,
            x0_src,
            x0_tgt: planar(&img, |p| p.rgb),
            phong_tgt: want_phong.then(|| planar(&img, |p| p.phong)),
            y_src,
            y_tgt: y_tgt.clone(),
            guidance_scale: cfg.guidance_scale,
        };
        let g = pepds_gradient(&st, denoiser, schedule, &cfg.weights)?;
        let l = g.losses;
        if !(l.pepds.is_finite() && all_finite(g.g_img.data())) {
            return Err(TrainError::Diverged {
                stage: "stage 2",
                step,
                detail: format!("L_PDS {} L_PE {}", l.pds, l.pe),
            });
        }

        let gi = g.g_img.data();
        let gp = g.g_phong.as_ref().map(|p| p.data());
        let fg_mode = cfg.mode == EditMode::Foreground;
        let grad_len = if fg_mode { b.target.num_params() } else { b.background.num_params() };
        let (_, grad) = accumulate(n, grad_len, |range, buf| {
            for i in range {
                let rg = RayGrad {
                    rgb: [gi[i], gi[n + i], gi[2 * n + i]],
                    phong: gp.map_or(0.0, |p| p[i] + p[n + i] + p[2 * n + i]),
                    mask: 0.0,
                };
                let tape = &traced[i].1;
                if fg_mode {
                    backward_ray(&tv, &b.background, tape, &rg, Some(buf), None);
                } else {
                    backward_ray(&tv, &b.background, tape, &rg, None, Some(buf));
                }
            }
            0.0
        });
        drop(traced);
        if !all_finite(&grad) {
            return Err(TrainError::Diverged {
                stage: "stage 2",
                step,
                detail: "non-finite parameter gradient".into(),
            });
        }
        let blocks = if fg_mode {
            bundle.target.blocks_mut()
        } else {
            bundle.background.blocks_mut()
        };
        opt.step(blocks, &grad);

        let entry = StepLog {
            step,
            t,
            camera: cam_idx,
            losses: l,
            mean_rgb,
        };
        if step % 25 == 0 || step + 1 == cfg.iterations {
            log::info!("stage 2 step {step}: t {t} L_PDS {:.3e} L_PE {:.3e}", l.pds, l.pe);
        }
        on_step(&entry);
        report.steps.push(entry);
    }
    if cfg.progressive && cfg.mode == EditMode::Foreground {
        bundle.target.encoding_mut().set_active_levels(tgt_levels.levels);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestep_range_endpoints() {
        assert_eq!(timestep_range(1000, 0.05, 0.95), (50, 950));
        assert_eq!(timestep_range(1000, 1e-6, 0.999_9), (1, 999));
        assert_eq!(timestep_range(10, 0.01, 0.02), (1, 1));
    }

    #[test]
    fn timesteps_are_uniform() {
        // Chi-square with 901 - 1 = 900 dof over 1e4 draws; the 1% critical
        // value is about 1000.6 (Wilson-Hilferty).
        let range = timestep_range(1000, 0.05, 0.95);
        let k = range.1 - range.0 + 1;
        let mut counts = vec![0usize; k];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000;
        for _ in 0..n {
            counts[sample_timestep(&mut rng, range) - range.0] += 1;
        }
        let e = n as f64 / k as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        assert!(chi2 < 1000.6, "chi2 {chi2}");
    }

    #[test]
    fn patch_keeps_field_of_view() {
        let cam = Camera::look_at(Intrinsics::from_fov(200, 100, 0.9), [0.0, -3.0, 0.0], [0.0; 3], [0.0, 0.0, 1.0]);
        let p = patch_camera(&cam, 64);
        assert_eq!((p.width(), p.height()), (64, 32));
        let (a, b) = (cam.ray_at(0.0, 0.0).dir, p.ray_at(0.0, 0.0).dir);
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-12);
        }
        assert_eq!(patch_camera(&p, 64), p);
    }
}
