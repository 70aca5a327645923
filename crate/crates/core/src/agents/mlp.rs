//! Dense networks with tanh hidden layers and a linear output, plus Adam.

use rand::Rng;

use super::AgentError;

/// Parameters live in one flat vector: for each layer the weights
/// (row-major, `out x in`) followed by the biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Cache {
    /// Input followed by each layer's output (post-activation).
    acts: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("non-empty")
    }
}

fn n_params(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&n| n > 0), "bad layer sizes {sizes:?}");
        let mut params = Vec::with_capacity(n_params(sizes));
        for w in sizes.windows(2) {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                params.push(rng.random_range(-limit..limit));
            }
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self, AgentError> {
        if sizes.len() < 2 || sizes.contains(&0) || params.len() != n_params(&sizes) {
            return Err(AgentError::Shape(format!(
                "{} parameters do not fit layers {sizes:?}",
                params.len()
            )));
        }
        Ok(Self { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn zero_grad(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, AgentError> {
        Ok(self.forward_cached(x)?.acts.pop().expect("non-empty"))
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<Cache, AgentError> {
        if x.len() != self.n_inputs() {
            return Err(AgentError::Shape(format!(
                "input has {} values, network expects {}",
                x.len(),
                self.n_inputs()
            )));
        }
        let n_layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = &acts[l];
            let mut out: Vec<f64> = (0..n_out)
                .map(|j| {
                    let row = &w[j * n_in..(j + 1) * n_in];
                    b[j] + row.iter().zip(input).map(|(a, c)| a * c).sum::<f64>()
                })
                .collect();
            if l + 1 < n_layers {
                out.iter_mut().for_each(|z| *z = z.tanh());
            }
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        Ok(Cache { acts })
    }

    /// Accumulate dL/dparams into `grad` given dL/doutput; returns dL/dinput.
    pub fn backward(&self, cache: &Cache, grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < n_layers {
                // through tanh: d tanh = 1 - y^2
                for (d, y) in delta.iter_mut().zip(&cache.acts[l + 1]) {
                    *d *= 1.0 - y * y;
                }
            }
            let off = offsets[l];
            let input = &cache.acts[l];
            let mut next = vec![0.0; n_in];
            for j in 0..n_out {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                let row = off + j * n_in;
                for i in 0..n_in {
                    grad[row + i] += dj * input[i];
                    next[i] += dj * self.params[row + i];
                }
                grad[off + n_in * n_out + j] += dj;
            }
            delta = next;
        }
        delta
    }

    /// Polyak averaging toward `src`: θ ← τ·θ_src + (1−τ)·θ.
    pub fn soft_update(&mut self, src: &Mlp, tau: f64) {
        for (t, s) in self.params.iter_mut().zip(&src.params) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
