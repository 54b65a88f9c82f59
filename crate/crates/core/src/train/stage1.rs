use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::{accumulate, accumulate_with, all_finite, eikonal_backward, stream_seed, Adam, Stage1Config, TrainError};
use crate::fields::{progressive_schedule, FieldBundle};
use crate::geometry::CalibratedDataset;
use crate::render::{backward_ray, render_ray, RayGrad, RenderSettings};

/// Per-iteration losses of an identity-learning run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Stage1Report {
    pub photometric: Vec<f64>,
    pub eikonal: Vec<f64>,
}

/// Seed offset of the target residual created when stage 1 completes.
const TARGET_SEED: u64 = 0x7461_7267;

/// Fits background and source to the `views` of `dataset` with an L2
/// photometric loss plus `λ_eik`·eikonal, then resets the target to a zero
/// residual on the fitted source. Zero iterations leave the bundle untouched.
pub fn stage1_fit(
    bundle: &mut FieldBundle,
    dataset: &CalibratedDataset,
    views: &[usize],
    cfg: &Stage1Config,
    settings: &RenderSettings,
    seed: u64,
) -> Result<Stage1Report, TrainError> {
    cfg.validate()?;
    let mut report = Stage1Report::default();
    if cfg.iterations == 0 {
        return Ok(report);
    }
    if views.is_empty() {
        return Err(TrainError::EmptyPool);
    }
    if let Some(&v) = views.iter().find(|&&v| v >= dataset.len()) {
        return Err(TrainError::Config(format!("view {v} outside a dataset of {}", dataset.len())));
    }

    let nb = bundle.background.num_params();
    let sizes: Vec<usize> = bundle
        .background
        .blocks()
        .iter()
        .chain(bundle.source.blocks().iter())
        .map(|(_, b)| b.len())
        .collect();
    let (lr, le) = (cfg.lr, cfg.lr_encoding);
    let mut opt = Adam::new(&sizes, vec![le, lr, lr, le, lr, lr, cfg.lr_sharpness]);
    let fg_levels = bundle.config.fg_encoding.clone();
    let near = Normal::new(0.0, cfg.near_surface_std).expect("validated std");
    let batch = cfg.rays_per_batch;
    let n_eik = cfg.eikonal_points;

    for it in 0..cfg.iterations {
        if cfg.progressive {
            bundle
                .source
                .encoding_mut()
                .set_active_levels(progressive_schedule(it, cfg.iterations, &fg_levels));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, it as u64, u64::MAX));
        let rays: Vec<_> = (0..batch)
            .map(|_| {
                let v = views[rng.gen_range(0..views.len())];
                let cam = &dataset.cameras[v];
                let (px, py) = (rng.gen_range(0..cam.width()), rng.gen_range(0..cam.height()));
                (cam.ray(px, py), dataset.images[v].get(px, py))
            })
            .collect();

        let b = &*bundle;
        let norm = 1.0 / (3.0 * batch as f64);
        let (photo, mut grad, hits) = accumulate_with(batch, nb + b.source.num_params(), |range, g| {
            let (gb, gs) = g.split_at_mut(nb);
            let mut loss = 0.0;
            let mut hits = Vec::with_capacity(range.len());
            for i in range {
                let (ray, gt) = &rays[i];
                let mut jitter = ChaCha8Rng::seed_from_u64(stream_seed(seed, it as u64, i as u64));
                let (out, tape) = render_ray(&b.source, &b.background, ray, settings, false, Some(&mut jitter));
                let mut rg = RayGrad::default();
                for c in 0..3 {
                    let r = out.rgb[c] - gt[c];
                    loss += r * r * norm;
                    rg.rgb[c] = 2.0 * r * norm;
                }
                backward_ray(&b.source, &b.background, &tape, &rg, Some(&mut *gs), Some(&mut *gb));
                hits.push((out.mask > 0.5).then(|| (ray.at(out.depth), ray.dir)));
            }
            (loss, hits)
        });

        // Half uniform in the box, half jittered around the rendered surface.
        let surface: Vec<([f64; 3], [f64; 3])> = hits.into_iter().flatten().collect();
        let pts: Vec<[f64; 3]> = (0..n_eik)
            .map(|k| {
                if k % 2 == 1 && !surface.is_empty() {
                    let (p, d) = surface[(k / 2) % surface.len()];
                    let dt = near.sample(&mut rng);
                    std::array::from_fn(|a| p[a] + dt * d[a])
                } else {
                    std::array::from_fn(|_| rng.gen_range(-1.0..1.0))
                }
            })
            .collect();
        let scale = cfg.lambda_eik / n_eik.max(1) as f64;
        let (eik, g_eik) = accumulate(pts.len(), b.source.num_params(), |range, g| {
            eikonal_backward(&b.source, &pts[range], scale, g)
        });
        for (a, e) in grad[nb..].iter_mut().zip(&g_eik) {
            *a += e;
        }
        let eik = eik / n_eik.max(1) as f64;

        if !(photo.is_finite() && eik.is_finite() && all_finite(&grad)) {
            return Err(TrainError::Diverged {
                stage: "stage 1",
                step: it,
                detail: format!("photometric {photo}, eikonal {eik}"),
            });
        }
        report.photometric.push(photo);
        report.eikonal.push(eik);
        if it % 50 == 0 || it + 1 == cfg.iterations {
            log::info!("stage 1 step {it}: photometric {photo:.3e} eikonal {eik:.3e}");
        }
        let mut blocks = bundle.background.blocks_mut();
        blocks.extend(bundle.source.blocks_mut());
        opt.step(blocks, &grad);
    }

    let levels = bundle.config.fg_encoding.levels;
    bundle.source.encoding_mut().set_active_levels(levels);
    bundle.reset_target(seed ^ TARGET_SEED);
    Ok(report)
}
