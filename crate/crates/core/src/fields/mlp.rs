//! Fully connected network with softplus hidden activations and a linear head.
//!
//! Evaluation optionally propagates `nt` forward-mode tangent channels
//! alongside the values (used for spatial gradients of the SDF). Vectors with
//! tangents are laid out channel-major: `[values | tangent 0 | tangent 1 | ..]`.
//! The backward pass differentiates through both values and tangents, so a
//! loss on the spatial gradient yields exact parameter gradients.

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadInit {
    /// Uniform fan-in initialization like the hidden layers.
    Default,
    /// All-zero final layer: the network outputs exactly zero.
    Zero,
    /// Default initialization with the final layer's weights scaled down.
    Scaled(f64),
}

#[derive(Debug, Clone)]
pub struct Mlp {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    beta: f64,
}

/// Intermediate values recorded during a forward pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    nt: usize,
    /// Per layer: the layer input (with channels).
    inputs: Vec<Vec<f64>>,
    /// Per layer: the pre-activation (with channels). The last entry is the output.
    pre: Vec<Vec<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &[f64] {
        self.pre.last().expect("network has at least one layer")
    }

    pub fn tangent_channels(&self) -> usize {
        self.nt
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

/// `(softplus_β(x), sigmoid(βx))` from a single exponential.
#[inline]
fn softplus_and_slope(x: f64, beta: f64) -> (f64, f64) {
    let bx = beta * x;
    let e = (-bx.abs()).exp();
    let sp = (bx.max(0.0) + e.ln_1p()) / beta;
    let s = if bx >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (sp, s)
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(dims: &[usize], beta: f64, head: HeadInit, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let mut offsets = Vec::with_capacity(dims.len() - 1);
        let mut total = 0;
        for w in dims.windows(2) {
            offsets.push(total);
            total += w[0] * w[1] + w[1];
        }
        let mut params = vec![0.0; total];
        let layers = dims.len() - 1;
        for l in 0..layers {
            if l == layers - 1 && head == HeadInit::Zero {
                continue;
            }
            let (n_in, n_out) = (dims[l], dims[l + 1]);
            let mut bound = (6.0 / (n_in + n_out) as f64).sqrt();
            if let (true, HeadInit::Scaled(k)) = (l == layers - 1, head) {
                bound *= k;
            }
            let off = offsets[l];
            for p in &mut params[off..off + n_in * n_out] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Self {
            dims: dims.to_vec(),
            offsets,
            params,
            beta,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Mutable view of the final layer's weights and bias.
    pub fn head_mut(&mut self) -> &mut [f64] {
        let off = *self.offsets.last().unwrap();
        &mut self.params[off..]
    }

    /// `input` holds `(1 + nt) * input_dim` values.
    pub fn forward(&self, input: &[f64], nt: usize) -> MlpTape {
        let ch = 1 + nt;
        debug_assert_eq!(input.len(), ch * self.input_dim());
        let layers = self.num_layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers);
        let mut act = input.to_vec();
        for l in 0..layers {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let off = self.offsets[l];
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut h = vec![0.0; ch * n_out];
            h[..n_out].copy_from_slice(b);
            for c in 0..ch {
                let a = &act[c * n_in..(c + 1) * n_in];
                let hc = &mut h[c * n_out..(c + 1) * n_out];
                for (i, &ai) in a.iter().enumerate() {
                    if ai == 0.0 {
                        continue;
                    }
                    let row = &w[i * n_out..(i + 1) * n_out];
                    for (ho, wo) in hc.iter_mut().zip(row) {
                        *ho += ai * wo;
                    }
                }
            }
            let next = if l + 1 < layers {
                let mut out = vec![0.0; ch * n_out];
                for o in 0..n_out {
                    let (sp, d1) = softplus_and_slope(h[o], self.beta);
                    out[o] = sp;
                    for c in 1..ch {
                        out[c * n_out + o] = d1 * h[c * n_out + o];
                    }
                }
                Some(out)
            } else {
                None
            };
            inputs.push(std::mem::take(&mut act));
            pre.push(h);
            if let Some(n) = next {
                act = n;
            }
        }
        MlpTape { nt, inputs, pre }
    }

    /// Back-propagates `d_out` (same channel layout as the output). Parameter
    /// gradients are accumulated into `grad` when given; the gradient with
    /// respect to the input (with channels) is returned.
    pub fn backward(&self, tape: &MlpTape, d_out: &[f64], mut grad: Option<&mut [f64]>) -> Vec<f64> {
        let ch = 1 + tape.nt;
        let layers = self.num_layers();
        let mut g = d_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            // g holds the gradient w.r.t. this layer's output activation;
            // convert to the pre-activation for hidden layers.
            if l + 1 < layers {
                let h = &tape.pre[l];
                let mut gh = vec![0.0; ch * n_out];
                for o in 0..n_out {
                    let s = sigmoid(self.beta * h[o]);
                    let d2 = self.beta * s * (1.0 - s);
                    let mut g0 = s * g[o];
                    for c in 1..ch {
                        g0 += d2 * h[c * n_out + o] * g[c * n_out + o];
                        gh[c * n_out + o] = s * g[c * n_out + o];
                    }
                    gh[o] = g0;
                }
                g = gh;
            }
            let off = self.offsets[l];
            let a = &tape.inputs[l];
            if let Some(gr) = grad.as_deref_mut() {
                let (gw, gb) = gr[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for (gbo, go) in gb.iter_mut().zip(&g[..n_out]) {
                    *gbo += go;
                }
                for c in 0..ch {
                    let ac = &a[c * n_in..(c + 1) * n_in];
                    let gc = &g[c * n_out..(c + 1) * n_out];
                    for (i, &ai) in ac.iter().enumerate() {
                        if ai == 0.0 {
                            continue;
                        }
                        let row = &mut gw[i * n_out..(i + 1) * n_out];
                        for (r, go) in row.iter_mut().zip(gc) {
                            *r += ai * go;
                        }
                    }
                }
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut ga = vec![0.0; ch * n_in];
            for c in 0..ch {
                let gc = &g[c * n_out..(c + 1) * n_out];
                if gc.iter().all(|v| *v == 0.0) {
                    continue;
                }
                for i in 0..n_in {
                    let row = &w[i * n_out..(i + 1) * n_out];
                    ga[c * n_in + i] = row.iter().zip(gc).map(|(a, b)| a * b).sum();
                }
            }
            g = ga;
        }
        g
    }
}
