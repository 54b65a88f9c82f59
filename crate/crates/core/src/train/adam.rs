/// Adam over a list of parameter blocks, each with its own learning rate.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    lrs: Vec<f64>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: u64,
}

impl Adam {
    pub fn new(block_sizes: &[usize], lrs: Vec<f64>) -> Self {
        assert_eq!(block_sizes.len(), lrs.len(), "one learning rate per block");
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-15,
            lrs,
            m: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. `grad` is the concatenation of all block gradients.
    pub fn step(&mut self, blocks: Vec<&mut [f64]>, grad: &[f64]) {
        assert_eq!(blocks.len(), self.lrs.len());
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps as i32);
        let c2 = 1.0 - self.beta2.powi(self.steps as i32);
        let mut off = 0;
        for (b, block) in blocks.into_iter().enumerate() {
            let n = block.len();
            assert_eq!(n, self.m[b].len(), "block {b} changed size");
            let g = &grad[off..off + n];
            let lr = self.lrs[b];
            let (m, v) = (&mut self.m[b], &mut self.v[b]);
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                block[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
            off += n;
        }
        assert_eq!(off, grad.len(), "gradient length does not match blocks");
    }
}
