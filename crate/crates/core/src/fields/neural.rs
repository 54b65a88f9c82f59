//! Learned source, target and background fields.
//!
//! Gradient buffers are flat and follow the order of `blocks()`.

use rand::Rng;

use super::{
    Background, EvalMode, FgSample, Foreground, HashGrid, HeadInit, Mlp, MlpTape, ModelConfig,
    NormalMode,
};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn norm(x: &[f64; 3]) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = Vec::with_capacity(hidden.len() + 2);
    d.push(input);
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

/// Builds the channel-major network input `[x, H(x), extra...]` for a point,
/// with identity tangents for `x` and encoder tangents for `H`.
fn point_input(enc: &HashGrid, x: &[f64; 3], prefix: &[f64], prefix_tangents: &[f64], nt: usize) -> Vec<f64> {
    let e = enc.output_dim();
    let p = prefix.len();
    let w = p + 3 + e;
    let mut input = vec![0.0; (1 + nt) * w];
    input[..p].copy_from_slice(prefix);
    input[p..p + 3].copy_from_slice(x);
    if nt == 0 {
        enc.encode(x, &mut input[p + 3..w], None);
        return input;
    }
    let mut tan = vec![0.0; 3 * e];
    enc.encode(x, &mut input[p + 3..w], Some(&mut tan));
    for a in 0..3 {
        let row = &mut input[(a + 1) * w..(a + 2) * w];
        row[..p].copy_from_slice(&prefix_tangents[a * p..(a + 1) * p]);
        row[p + a] = 1.0;
        row[p + 3..].copy_from_slice(&tan[a * e..(a + 1) * e]);
    }
    input
}

/// Routes the gradient of a channel-major network input back into the encoder.
fn encoder_backward(enc: &HashGrid, x: &[f64; 3], d_in: &[f64], prefix: usize, nt: usize, grad: &mut [f64]) {
    let e = enc.output_dim();
    let w = prefix + 3 + e;
    let d_vals = &d_in[prefix + 3..w];
    if nt == 0 {
        enc.backward(x, d_vals, None, grad);
    } else {
        let mut d_tan = vec![0.0; 3 * e];
        for a in 0..3 {
            d_tan[a * e..(a + 1) * e].copy_from_slice(&d_in[(a + 1) * w + prefix + 3..(a + 2) * w]);
        }
        enc.backward(x, d_vals, Some(&d_tan), grad);
    }
}

/// Everything the target field reads from the source at one sample.
#[derive(Debug, Clone, Default)]
pub struct SourceOutputs {
    pub sdf: f64,
    pub grad: [f64; 3],
    pub feature: Vec<f64>,
    /// Axis-major spatial derivatives of `feature` (empty without tangents).
    pub feature_grad: Vec<f64>,
    /// Pre-sigmoid color (zero unless evaluated in `Full` mode).
    pub logits: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct SourceField {
    pub(crate) enc: HashGrid,
    pub(crate) geo: Mlp,
    pub(crate) color: Mlp,
    pub(crate) log_s: f64,
    sphere_radius: f64,
    feature_dim: usize,
}

#[derive(Debug, Clone)]
pub struct SourceTape {
    x: [f64; 3],
    nt: usize,
    geo: MlpTape,
    color: Option<(MlpTape, [f64; 3])>,
}

impl SourceField {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let enc = HashGrid::new(cfg.fg_encoding.clone(), rng);
        let df = cfg.feature_dim;
        let geo = Mlp::new(
            &dims(3 + enc.output_dim(), &cfg.geometry_hidden, 1 + df),
            cfg.softplus_beta,
            HeadInit::Scaled(0.1),
            rng,
        );
        let color = Mlp::new(
            &dims(df + 6, &cfg.color_hidden, 3),
            cfg.softplus_beta,
            HeadInit::Default,
            rng,
        );
        Self {
            enc,
            geo,
            color,
            log_s: cfg.init_sharpness.ln(),
            sphere_radius: cfg.sphere_radius,
            feature_dim: df,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn encoding(&self) -> &HashGrid {
        &self.enc
    }

    pub fn encoding_mut(&mut self) -> &mut HashGrid {
        &mut self.enc
    }

    pub fn log_sharpness(&self) -> f64 {
        self.log_s
    }

    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("src.encoding", self.enc.params()),
            ("src.geometry", self.geo.params()),
            ("src.color", self.color.params()),
            ("src.log_s", std::slice::from_ref(&self.log_s)),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.enc.params_mut(),
            self.geo.params_mut(),
            self.color.params_mut(),
            std::slice::from_mut(&mut self.log_s),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    fn offsets(&self) -> [usize; 4] {
        let a = self.enc.params().len();
        let b = a + self.geo.params().len();
        let c = b + self.color.params().len();
        [0, a, b, c]
    }

    /// Evaluates the source at `x`. Feature tangents are produced unless
    /// `mode` is `SdfOnly`; color logits only in `Full` mode.
    pub fn eval(&self, x: &[f64; 3], d: &[f64; 3], mode: EvalMode) -> (SourceOutputs, SourceTape) {
        let nt = if mode == EvalMode::SdfOnly { 0 } else { 3 };
        let df = self.feature_dim;
        let wo = 1 + df;
        let input = point_input(&self.enc, x, &[], &[], nt);
        let geo = self.geo.forward(&input, nt);
        let out = geo.output();
        let r = norm(x);
        let mut o = SourceOutputs {
            sdf: r - self.sphere_radius + out[0],
            feature: out[1..wo].to_vec(),
            ..Default::default()
        };
        if nt > 0 {
            for a in 0..3 {
                let prior = if r > 0.0 { x[a] / r } else { 0.0 };
                o.grad[a] = prior + out[(a + 1) * wo];
            }
            o.feature_grad = vec![0.0; 3 * df];
            for a in 0..3 {
                o.feature_grad[a * df..(a + 1) * df]
                    .copy_from_slice(&out[(a + 1) * wo + 1..(a + 2) * wo]);
            }
        }
        let color = if mode == EvalMode::Full {
            let mut cin = Vec::with_capacity(df + 6);
            cin.extend_from_slice(&o.feature);
            cin.extend_from_slice(d);
            cin.extend_from_slice(&o.grad);
            let t = self.color.forward(&cin, 0);
            let l = t.output();
            o.logits = [l[0], l[1], l[2]];
            let rgb = o.logits.map(sigmoid);
            Some((t, rgb))
        } else {
            None
        };
        (
            o,
            SourceTape {
                x: *x,
                nt,
                geo,
                color,
            },
        )
    }
}

impl Foreground for SourceField {
    type Tape = SourceTape;

    fn sample(&self, x: &[f64; 3], d: &[f64; 3], mode: EvalMode) -> (FgSample, SourceTape) {
        let (o, tape) = self.eval(x, d, mode);
        let rgb = tape.color.as_ref().map(|c| c.1).unwrap_or_default();
        (
            FgSample {
                sdf: o.sdf,
                normal: o.grad,
                rgb,
            },
            tape,
        )
    }

    fn backward(
        &self,
        tape: &SourceTape,
        d_sdf: f64,
        d_normal: &[f64; 3],
        d_rgb: &[f64; 3],
        grad: &mut [f64],
    ) {
        let [o_enc, o_geo, o_col, _] = self.offsets();
        let df = self.feature_dim;
        let wo = 1 + df;
        let mut d_feature = vec![0.0; df];
        let mut d_n = *d_normal;
        if let Some((ct, rgb)) = &tape.color {
            let d_logits: Vec<f64> = (0..3).map(|c| d_rgb[c] * rgb[c] * (1.0 - rgb[c])).collect();
            let d_in = self
                .color
                .backward(ct, &d_logits, Some(&mut grad[o_col..o_col + self.color.params().len()]));
            for k in 0..df {
                d_feature[k] += d_in[k];
            }
            for a in 0..3 {
                d_n[a] += d_in[df + 3 + a];
            }
        }
        let ch = 1 + tape.nt;
        let mut d_out = vec![0.0; ch * wo];
        d_out[0] = d_sdf;
        d_out[1..wo].copy_from_slice(&d_feature);
        if tape.nt > 0 {
            for a in 0..3 {
                d_out[(a + 1) * wo] = d_n[a];
            }
        }
        let d_in = self
            .geo
            .backward(&tape.geo, &d_out, Some(&mut grad[o_geo..o_col]));
        encoder_backward(&self.enc, &tape.x, &d_in, 0, tape.nt, &mut grad[o_enc..o_geo]);
    }

    fn sharpness(&self) -> f64 {
        self.log_s.exp()
    }

    fn backward_sharpness(&self, d_s: f64, grad: &mut [f64]) {
        let i = self.offsets()[3];
        grad[i] += d_s * self.log_s.exp();
    }

    fn grad_len(&self) -> usize {
        self.num_params()
    }
}

/// Residual field on top of a frozen source.
#[derive(Debug, Clone)]
pub struct TargetField {
    pub(crate) enc: HashGrid,
    pub(crate) geo: Mlp,
    pub(crate) color: Mlp,
    pub(crate) log_s: f64,
    feature_dim: usize,
}

#[derive(Debug, Clone)]
pub struct TargetTape {
    x: [f64; 3],
    nt: usize,
    geo: MlpTape,
    color: Option<(MlpTape, [f64; 3])>,
}

impl TargetField {
    /// Zero-residual target: evaluates identically to `source`.
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, source: &SourceField, rng: &mut R) -> Self {
        let enc = HashGrid::new(cfg.target_encoding.clone(), rng);
        let df = source.feature_dim();
        let geo = Mlp::new(
            &dims(1 + df + 3 + enc.output_dim(), &cfg.target_hidden, 1 + df),
            cfg.softplus_beta,
            HeadInit::Zero,
            rng,
        );
        let color = Mlp::new(
            &dims(df + 9, &cfg.target_color_hidden, 3),
            cfg.softplus_beta,
            HeadInit::Zero,
            rng,
        );
        Self {
            enc,
            geo,
            color,
            log_s: source.log_s,
            feature_dim: df,
        }
    }

    pub fn encoding(&self) -> &HashGrid {
        &self.enc
    }

    pub fn encoding_mut(&mut self) -> &mut HashGrid {
        &mut self.enc
    }

    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("tgt.encoding", self.enc.params()),
            ("tgt.geometry", self.geo.params()),
            ("tgt.color", self.color.params()),
            ("tgt.log_s", std::slice::from_ref(&self.log_s)),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.enc.params_mut(),
            self.geo.params_mut(),
            self.color.params_mut(),
            std::slice::from_mut(&mut self.log_s),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    fn offsets(&self) -> [usize; 4] {
        let a = self.enc.params().len();
        let b = a + self.geo.params().len();
        let c = b + self.color.params().len();
        [0, a, b, c]
    }

    /// Evaluates the target given the source outputs at the same point
    /// (which must carry tangents unless `mode` is `SdfOnly`).
    pub fn eval_with(
        &self,
        src: &SourceOutputs,
        x: &[f64; 3],
        d: &[f64; 3],
        mode: EvalMode,
    ) -> (FgSample, TargetTape) {
        let nt = if mode == EvalMode::SdfOnly { 0 } else { 3 };
        let df = self.feature_dim;
        let wo = 1 + df;
        let mut prefix = Vec::with_capacity(wo);
        prefix.push(src.sdf);
        prefix.extend_from_slice(&src.feature);
        let mut prefix_t = Vec::new();
        if nt > 0 {
            prefix_t = vec![0.0; 3 * wo];
            for a in 0..3 {
                prefix_t[a * wo] = src.grad[a];
                prefix_t[a * wo + 1..(a + 1) * wo]
                    .copy_from_slice(&src.feature_grad[a * df..(a + 1) * df]);
            }
        }
        let input = point_input(&self.enc, x, &prefix, &prefix_t, nt);
        let geo = self.geo.forward(&input, nt);
        let out = geo.output();
        let mut s = FgSample {
            sdf: src.sdf + out[0],
            ..Default::default()
        };
        if nt > 0 {
            for a in 0..3 {
                s.normal[a] = src.grad[a] + out[(a + 1) * wo];
            }
        }
        let color = if mode == EvalMode::Full {
            let src_rgb = src.logits.map(sigmoid);
            let mut cin = Vec::with_capacity(df + 9);
            for k in 0..df {
                cin.push(src.feature[k] + out[1 + k]);
            }
            cin.extend_from_slice(d);
            cin.extend_from_slice(&s.normal);
            cin.extend_from_slice(&src_rgb);
            let t = self.color.forward(&cin, 0);
            let r = t.output();
            s.rgb = std::array::from_fn(|c| sigmoid(src.logits[c] + r[c]));
            Some((t, s.rgb))
        } else {
            None
        };
        (
            s,
            TargetTape {
                x: *x,
                nt,
                geo,
                color,
            },
        )
    }

    /// Target signed distance and feature given the source outputs at `x`.
    pub fn sdf_feature(&self, src: &SourceOutputs, x: &[f64; 3]) -> (f64, Vec<f64>) {
        let (s, tape) = self.eval_with(src, x, &[0.0, 0.0, 1.0], EvalMode::SdfOnly);
        let out = tape.geo.output();
        let feature = (0..self.feature_dim).map(|k| src.feature[k] + out[1 + k]).collect();
        (s.sdf, feature)
    }

    pub fn backward_sample(
        &self,
        tape: &TargetTape,
        d_sdf: f64,
        d_normal: &[f64; 3],
        d_rgb: &[f64; 3],
        grad: &mut [f64],
    ) {
        let [o_enc, o_geo, o_col, _] = self.offsets();
        let df = self.feature_dim;
        let wo = 1 + df;
        let mut d_feature = vec![0.0; df];
        let mut d_n = *d_normal;
        if let Some((ct, rgb)) = &tape.color {
            let d_r: Vec<f64> = (0..3).map(|c| d_rgb[c] * rgb[c] * (1.0 - rgb[c])).collect();
            let d_in = self
                .color
                .backward(ct, &d_r, Some(&mut grad[o_col..o_col + self.color.params().len()]));
            d_feature.copy_from_slice(&d_in[..df]);
            for a in 0..3 {
                d_n[a] += d_in[df + 3 + a];
            }
        }
        let ch = 1 + tape.nt;
        let mut d_out = vec![0.0; ch * wo];
        d_out[0] = d_sdf;
        d_out[1..wo].copy_from_slice(&d_feature);
        if tape.nt > 0 {
            for a in 0..3 {
                d_out[(a + 1) * wo] = d_n[a];
            }
        }
        let d_in = self
            .geo
            .backward(&tape.geo, &d_out, Some(&mut grad[o_geo..o_col]));
        encoder_backward(&self.enc, &tape.x, &d_in, wo, tape.nt, &mut grad[o_enc..o_geo]);
    }

    pub fn sharpness(&self) -> f64 {
        self.log_s.exp()
    }

    /// Central-difference step: half the finest active cell of the encoder.
    pub fn numerical_step(&self) -> f64 {
        1.0 / self.enc.finest_active_resolution().max(1) as f64
    }
}

/// The target field evaluated on top of its source.
#[derive(Clone, Copy)]
pub struct TargetView<'a> {
    pub source: &'a SourceField,
    pub target: &'a TargetField,
    pub normals: NormalMode,
}

impl<'a> TargetView<'a> {
    /// Numerical normals with the encoder-derived step.
    pub fn new(source: &'a SourceField, target: &'a TargetField) -> Self {
        Self {
            source,
            target,
            normals: NormalMode::Numerical {
                h: target.numerical_step(),
            },
        }
    }

    pub fn with_normals(mut self, normals: NormalMode) -> Self {
        self.normals = normals;
        self
    }
}

impl Foreground for TargetView<'_> {
    type Tape = TargetTape;

    fn sample(&self, x: &[f64; 3], d: &[f64; 3], mode: EvalMode) -> (FgSample, TargetTape) {
        let (src, _) = self.source.eval(x, d, mode);
        self.target.eval_with(&src, x, d, mode)
    }

    fn backward(
        &self,
        tape: &TargetTape,
        d_sdf: f64,
        d_normal: &[f64; 3],
        d_rgb: &[f64; 3],
        grad: &mut [f64],
    ) {
        self.target.backward_sample(tape, d_sdf, d_normal, d_rgb, grad);
    }

    fn sharpness(&self) -> f64 {
        self.target.sharpness()
    }

    fn backward_sharpness(&self, d_s: f64, grad: &mut [f64]) {
        let i = self.target.offsets()[3];
        grad[i] += d_s * self.target.sharpness();
    }

    fn grad_len(&self) -> usize {
        self.target.num_params()
    }

    fn normal_mode(&self) -> NormalMode {
        self.normals
    }
}

/// Density field over the inverted exterior of the unit sphere.
#[derive(Debug, Clone)]
pub struct BackgroundField {
    pub(crate) enc: HashGrid,
    pub(crate) density: Mlp,
    pub(crate) color: Mlp,
    feature_dim: usize,
}

#[derive(Debug, Clone)]
pub struct BackgroundTape {
    u: [f64; 3],
    raw: f64,
    density: MlpTape,
    color: MlpTape,
    rgb: [f64; 3],
}

/// Maps a point outside the unit sphere to `(x / |x|, 1 / |x|)`.
pub fn inverted_sphere(x: &[f64; 3]) -> [f64; 4] {
    let r = norm(x);
    [x[0] / r, x[1] / r, x[2] / r, 1.0 / r]
}

impl BackgroundField {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let enc = HashGrid::new(cfg.bg_encoding.clone(), rng);
        let db = cfg.bg_feature_dim;
        let density = Mlp::new(
            &dims(4 + enc.output_dim(), &cfg.bg_hidden, 1 + db),
            cfg.softplus_beta.min(10.0),
            HeadInit::Default,
            rng,
        );
        let color = Mlp::new(
            &dims(db + 3, &cfg.bg_color_hidden, 3),
            cfg.softplus_beta.min(10.0),
            HeadInit::Default,
            rng,
        );
        Self {
            enc,
            density,
            color,
            feature_dim: db,
        }
    }

    pub fn encoding_mut(&mut self) -> &mut HashGrid {
        &mut self.enc
    }

    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("bg.encoding", self.enc.params()),
            ("bg.density", self.density.params()),
            ("bg.color", self.color.params()),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.enc.params_mut(),
            self.density.params_mut(),
            self.color.params_mut(),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }
}

impl Background for BackgroundField {
    type Tape = BackgroundTape;

    fn sample(&self, x: &[f64; 3], d: &[f64; 3]) -> (f64, [f64; 3], BackgroundTape) {
        let p = inverted_sphere(x);
        let inv = p[3];
        let u = [p[0] * inv, p[1] * inv, p[2] * inv];
        let e = self.enc.output_dim();
        let mut input = vec![0.0; 4 + e];
        input[..4].copy_from_slice(&p);
        self.enc.encode(&u, &mut input[4..], None);
        let dt = self.density.forward(&input, 0);
        let out = dt.output();
        let raw = out[0];
        let mut cin = out[1..1 + self.feature_dim].to_vec();
        cin.extend_from_slice(d);
        let ct = self.color.forward(&cin, 0);
        let l = ct.output();
        let rgb = [sigmoid(l[0]), sigmoid(l[1]), sigmoid(l[2])];
        (
            softplus(raw),
            rgb,
            BackgroundTape {
                u,
                raw,
                density: dt,
                color: ct,
                rgb,
            },
        )
    }

    fn backward(&self, tape: &BackgroundTape, d_density: f64, d_rgb: &[f64; 3], grad: &mut [f64]) {
        let a = self.enc.params().len();
        let b = a + self.density.params().len();
        let db = self.feature_dim;
        let d_logits: Vec<f64> = (0..3)
            .map(|c| d_rgb[c] * tape.rgb[c] * (1.0 - tape.rgb[c]))
            .collect();
        let d_cin = self.color.backward(&tape.color, &d_logits, Some(&mut grad[b..]));
        let mut d_out = vec![0.0; 1 + db];
        d_out[0] = d_density * sigmoid(tape.raw);
        d_out[1..].copy_from_slice(&d_cin[..db]);
        let d_in = self.density.backward(&tape.density, &d_out, Some(&mut grad[a..b]));
        self.enc.backward(&tape.u, &d_in[4..], None, &mut grad[..a]);
    }

    fn grad_len(&self) -> usize {
        self.num_params()
    }
}
