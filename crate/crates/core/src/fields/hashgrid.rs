//! Multiresolution hash-grid encoding over the cube `[-1, 1]^3`.
//!
//! Each level stores `features_per_level` values per grid vertex. Coarse levels
//! whose vertex count fits in the table are indexed densely; finer levels use
//! the spatial hash of instant-NGP. The encoding of a point is the
//! concatenation of trilinearly interpolated features, level by level.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

const PRIMES: [u64; 3] = [1, 2_654_435_761, 805_459_861];

static CLAMPED_QUERIES: AtomicUsize = AtomicUsize::new(0);

/// Number of encoder queries that fell outside `[-1, 1]^3` and were clamped.
pub fn clamped_queries() -> usize {
    CLAMPED_QUERIES.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashGridConfig {
    pub levels: usize,
    pub features_per_level: usize,
    pub log2_table_size: u32,
    pub base_resolution: usize,
    pub growth_factor: f64,
    /// Levels enabled at the start of a progressive schedule.
    pub initial_levels: usize,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            features_per_level: 2,
            log2_table_size: 14,
            base_resolution: 16,
            growth_factor: 1.5,
            initial_levels: 2,
        }
    }
}

impl HashGridConfig {
    pub fn output_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    pub fn resolution(&self, level: usize) -> usize {
        ((self.base_resolution as f64) * self.growth_factor.powi(level as i32)).floor() as usize
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.levels == 0 || self.features_per_level == 0 {
            return Err("hash grid needs at least one level and one feature".into());
        }
        if !(self.growth_factor > 1.0) {
            return Err(format!("growth factor must exceed 1, got {}", self.growth_factor));
        }
        if self.base_resolution < 1 || self.log2_table_size == 0 || self.log2_table_size > 30 {
            return Err("invalid base resolution or table size".into());
        }
        if self.initial_levels > self.levels {
            return Err("initial levels exceed total levels".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Level {
    resolution: usize,
    dense: bool,
    entries: usize,
    offset: usize,
}

#[derive(Debug, Clone)]
pub struct HashGrid {
    config: HashGridConfig,
    levels: Vec<Level>,
    params: Vec<f64>,
    active_levels: usize,
}

/// Corner indices and interpolation weights of one level for one query.
struct Cell {
    index: [usize; 8],
    weight: [f64; 8],
    /// d weight / d x along each axis.
    dweight: [[f64; 8]; 3],
}

impl HashGrid {
    pub fn new<R: Rng + ?Sized>(config: HashGridConfig, rng: &mut R) -> Self {
        let mut grid = Self::zeros(config);
        for p in grid.params.iter_mut() {
            *p = rng.gen_range(-1e-4..1e-4);
        }
        grid
    }

    pub fn zeros(config: HashGridConfig) -> Self {
        let table = 1usize << config.log2_table_size;
        let mut offset = 0;
        let levels = (0..config.levels)
            .map(|l| {
                let resolution = config.resolution(l).max(1);
                let vertices = (resolution + 1).pow(3);
                let dense = vertices <= table;
                let entries = if dense { vertices } else { table };
                let level = Level {
                    resolution,
                    dense,
                    entries,
                    offset,
                };
                offset += entries * config.features_per_level;
                level
            })
            .collect();
        let active_levels = config.levels;
        Self {
            config,
            levels,
            params: vec![0.0; offset],
            active_levels,
        }
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn active_levels(&self) -> usize {
        self.active_levels
    }

    pub fn set_active_levels(&mut self, active: usize) {
        self.active_levels = active.min(self.config.levels);
    }

    pub fn is_dense(&self, level: usize) -> bool {
        self.levels[level].dense
    }

    pub fn level_resolution(&self, level: usize) -> usize {
        self.levels[level].resolution
    }

    /// Finest resolution among the currently active levels.
    pub fn finest_active_resolution(&self) -> usize {
        if self.active_levels == 0 {
            return self.levels[0].resolution;
        }
        self.levels[self.active_levels - 1].resolution
    }

    /// Parameter offset of the feature vector stored at a dense-level vertex.
    pub fn vertex_offset(&self, level: usize, ix: usize, iy: usize, iz: usize) -> usize {
        let lv = &self.levels[level];
        lv.offset + self.vertex_index(lv, [ix, iy, iz]) * self.config.features_per_level
    }

    fn vertex_index(&self, lv: &Level, v: [usize; 3]) -> usize {
        if lv.dense {
            let n = lv.resolution + 1;
            (v[2] * n + v[1]) * n + v[0]
        } else {
            let h = (v[0] as u64).wrapping_mul(PRIMES[0])
                ^ (v[1] as u64).wrapping_mul(PRIMES[1])
                ^ (v[2] as u64).wrapping_mul(PRIMES[2]);
            (h as usize) & (lv.entries - 1)
        }
    }

    fn cell(&self, lv: &Level, x: &[f64; 3], clamped: &[bool; 3]) -> Cell {
        let res = lv.resolution;
        let scale = 0.5 * res as f64;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let pos = (x[a] + 1.0) * scale;
            let i = (pos.floor().max(0.0) as usize).min(res - 1);
            base[a] = i;
            frac[a] = pos - i as f64;
        }
        let mut cell = Cell {
            index: [0; 8],
            weight: [0.0; 8],
            dweight: [[0.0; 8]; 3],
        };
        for c in 0..8 {
            let bits = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let mut w = [0.0; 3];
            let mut dw = [0.0; 3];
            for a in 0..3 {
                if bits[a] == 1 {
                    w[a] = frac[a];
                    dw[a] = scale;
                } else {
                    w[a] = 1.0 - frac[a];
                    dw[a] = -scale;
                }
                if clamped[a] {
                    dw[a] = 0.0;
                }
            }
            cell.index[c] = self.vertex_index(
                lv,
                [base[0] + bits[0], base[1] + bits[1], base[2] + bits[2]],
            );
            cell.weight[c] = w[0] * w[1] * w[2];
            cell.dweight[0][c] = dw[0] * w[1] * w[2];
            cell.dweight[1][c] = w[0] * dw[1] * w[2];
            cell.dweight[2][c] = w[0] * w[1] * dw[2];
        }
        cell
    }

    fn clamp_query(x: &[f64; 3]) -> ([f64; 3], [bool; 3]) {
        let mut out = *x;
        let mut clamped = [false; 3];
        for a in 0..3 {
            if !(-1.0..=1.0).contains(&x[a]) {
                out[a] = x[a].clamp(-1.0, 1.0);
                clamped[a] = true;
            }
        }
        if clamped.iter().any(|c| *c) {
            CLAMPED_QUERIES.fetch_add(1, Ordering::Relaxed);
            log::debug!("hash-grid query {x:?} outside [-1, 1]^3, clamped");
        }
        (out, clamped)
    }

    /// Writes the encoding of `x` into `out` (length `output_dim`). When
    /// `tangents` is given (length `3 * output_dim`, axis-major) it receives the
    /// spatial derivatives of the encoding.
    pub fn encode(&self, x: &[f64; 3], out: &mut [f64], mut tangents: Option<&mut [f64]>) {
        let f = self.config.features_per_level;
        let dim = self.output_dim();
        out[..dim].fill(0.0);
        if let Some(t) = tangents.as_deref_mut() {
            t[..3 * dim].fill(0.0);
        }
        let (xc, clamped) = Self::clamp_query(x);
        for (l, lv) in self.levels.iter().enumerate().take(self.active_levels) {
            let cell = self.cell(lv, &xc, &clamped);
            for c in 0..8 {
                let base = lv.offset + cell.index[c] * f;
                let w = cell.weight[c];
                for k in 0..f {
                    let v = self.params[base + k];
                    out[l * f + k] += w * v;
                    if let Some(t) = tangents.as_deref_mut() {
                        for a in 0..3 {
                            t[a * dim + l * f + k] += cell.dweight[a][c] * v;
                        }
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients given upstream gradients of the
    /// encoding values and, optionally, of its spatial tangents.
    pub fn backward(
        &self,
        x: &[f64; 3],
        d_out: &[f64],
        d_tangents: Option<&[f64]>,
        grad: &mut [f64],
    ) {
        let f = self.config.features_per_level;
        let dim = self.output_dim();
        let (xc, clamped) = Self::clamp_query(x);
        for (l, lv) in self.levels.iter().enumerate().take(self.active_levels) {
            let cell = self.cell(lv, &xc, &clamped);
            for c in 0..8 {
                let base = lv.offset + cell.index[c] * f;
                for k in 0..f {
                    let mut g = cell.weight[c] * d_out[l * f + k];
                    if let Some(dt) = d_tangents {
                        for a in 0..3 {
                            g += cell.dweight[a][c] * dt[a * dim + l * f + k];
                        }
                    }
                    grad[base + k] += g;
                }
            }
        }
    }
}

/// Number of active levels at `step` of `total`: a linear ramp from the
/// configured initial count to all levels over the first half of training.
pub fn progressive_schedule(step: usize, total: usize, config: &HashGridConfig) -> usize {
    let start = config.initial_levels.min(config.levels);
    let ramp = total / 2;
    if ramp == 0 || step >= ramp {
        return config.levels;
    }
    let extra = (config.levels - start) as f64 * step as f64 / ramp as f64;
    (start + extra.floor() as usize).min(config.levels)
}
