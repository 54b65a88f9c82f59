//! Identity learning, distillation-driven editing and proxy metrics.

pub mod adam;
pub mod config;
pub mod eikonal;
pub mod metrics;
pub mod prompt;
pub mod stage1;
pub mod stage2;

pub use adam::Adam;
pub use config::{
    DatasetConfig, DenoiserConfig, DenoiserKind, EditConfig, EditMode, RunConfig, ScheduleConfig, Stage1Config,
};
pub use eikonal::{eikonal_backward, eikonal_loss};
pub use metrics::{evaluate, frame_consistency, psnr, MetricsReport};
pub use prompt::perturb_prompt;
pub use stage1::{stage1_fit, Stage1Report};
pub use stage2::{patch_camera, sample_timestep, stage2_edit, timestep_range, Stage2Report, StepLog};

use rayon::prelude::*;

use crate::diffusion::DiffusionError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{stage} diverged at step {step}: {detail}")]
    Diverged {
        stage: &'static str,
        step: usize,
        detail: String,
    },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error("render: {0}")]
    Render(String),
    #[error("camera pool is empty")]
    EmptyPool,
}

/// Items per work unit in [`accumulate`]. Fixed so sums do not depend on the
/// number of worker threads.
pub const CHUNK: usize = 64;

/// Runs `f` over `0..n` in fixed chunks of [`CHUNK`] items, each chunk writing
/// into its own zeroed gradient buffer, and sums the buffers and the returned
/// losses in chunk order.
pub fn accumulate<F>(n: usize, grad_len: usize, f: F) -> (f64, Vec<f64>)
where
    F: Fn(std::ops::Range<usize>, &mut [f64]) -> f64 + Sync,
{
    let (l, g, _) = accumulate_with(n, grad_len, |r, g| (f(r, g), Vec::<()>::new()));
    (l, g)
}

/// [`accumulate`] where each chunk also returns per-item values, concatenated
/// in item order.
pub fn accumulate_with<T: Send, F>(n: usize, grad_len: usize, f: F) -> (f64, Vec<f64>, Vec<T>)
where
    F: Fn(std::ops::Range<usize>, &mut [f64]) -> (f64, Vec<T>) + Sync,
{
    let chunks: Vec<(f64, Vec<f64>, Vec<T>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut g = vec![0.0; grad_len];
            let (l, items) = f(c * CHUNK..((c + 1) * CHUNK).min(n), &mut g);
            (l, g, items)
        })
        .collect();
    let mut grad = vec![0.0; grad_len];
    let mut loss = 0.0;
    let mut out = Vec::with_capacity(n);
    for (l, g, items) in chunks {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
        out.extend(items);
    }
    (loss, grad, out)
}

/// Mixes a run seed with a step and item index into an independent stream seed.
pub(crate) fn stream_seed(seed: u64, step: u64, item: u64) -> u64 {
    let mut z = seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ item.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulate_is_independent_of_thread_count() {
        let f = |r: std::ops::Range<usize>, g: &mut [f64]| {
            let mut l = 0.0;
            for i in r {
                let v = (i as f64 * 0.37).sin();
                g[i % 5] += v;
                l += v * v;
            }
            l
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| accumulate(1000, 5, f));
        let b = four.install(|| accumulate(1000, 5, f));
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn stream_seeds_differ() {
        let s: std::collections::HashSet<u64> =
            (0..100).flat_map(|i| (0..100).map(move |j| stream_seed(3, i, j))).collect();
        assert_eq!(s.len(), 10_000);
    }
}
