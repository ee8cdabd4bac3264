use rand::Rng;

use crate::error::{Error, Result};

/// Fully connected network with ReLU on every hidden layer and a linear
/// output. All parameters live in one flat vector: for each layer, the
/// `out x in` weight matrix (row-major) followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a batched forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// `acts[0]` is the input; `acts[l]` the post-activation output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("non-empty cache")
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Usage(format!("invalid layer dims {dims:?}")));
        }
        Ok(Self {
            dims: dims.to_vec(),
            params: vec![0.0; param_count(dims)],
        })
    }

    /// He-uniform weights for ReLU layers, uniform +-1e-3 on the output layer, zero biases.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        let n_layers = net.n_layers();
        for l in 0..n_layers {
            let (n_in, _) = net.layer_shape(l);
            let limit = if l + 1 == n_layers {
                1e-3
            } else {
                (6.0 / n_in as f64).sqrt()
            };
            let (w, _) = net.layer_range(l);
            for p in &mut net.params[w] {
                *p = rng.random_range(-limit..=limit);
            }
        }
        Ok(net)
    }

    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<Self> {
        let net = Self::zeros(dims)?;
        if params.len() != net.params.len() {
            return Err(Error::Model(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Model("non-finite parameter".into()));
        }
        Ok(Self { params, ..net })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("dims non-empty")
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_shape(&self, l: usize) -> (usize, usize) {
        (self.dims[l], self.dims[l + 1])
    }

    /// Index ranges of layer `l`'s weights and biases in the flat vector.
    fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let start = param_count(&self.dims[..=l]);
        let (n_in, n_out) = self.layer_shape(l);
        let w = start..start + n_in * n_out;
        let b = w.end..w.end + n_out;
        (w, b)
    }

    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.input_dim() {
            return Err(Error::Usage(format!(
                "state has {} entries, network expects {}",
                state.len(),
                self.input_dim()
            )));
        }
        let mut x = state.to_vec();
        for l in 0..self.n_layers() {
            x = self.layer_forward(l, &x, 1);
        }
        Ok(x)
    }

    fn layer_forward(&self, l: usize, input: &[f64], batch: usize) -> Vec<f64> {
        let (n_in, n_out) = self.layer_shape(l);
        let (wr, br) = self.layer_range(l);
        let (w, b) = (&self.params[wr], &self.params[br]);
        let relu = l + 1 < self.n_layers();
        let mut out = vec![0.0; batch * n_out];
        for (x, y) in input.chunks_exact(n_in).zip(out.chunks_exact_mut(n_out)) {
            for (o, y) in y.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                let z = b[o] + dot(row, x);
                *y = if relu { z.max(0.0) } else { z };
            }
        }
        out
    }

    /// Forward pass over `batch` row-major inputs, keeping activations.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<ForwardCache> {
        if inputs.len() != batch * self.input_dim() {
            return Err(Error::Usage("batch input has the wrong length".into()));
        }
        let mut acts = Vec::with_capacity(self.dims.len());
        acts.push(inputs.to_vec());
        for l in 0..self.n_layers() {
            let next = self.layer_forward(l, &acts[l], batch);
            acts.push(next);
        }
        Ok(ForwardCache { batch, acts })
    }

    /// Gradient of a loss with respect to all parameters, given the loss
    /// gradient with respect to the outputs (`batch x out`, row-major).
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = grad_out.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = self.layer_shape(l);
            let (wr, br) = self.layer_range(l);
            let input = &cache.acts[l];
            {
                let (gw, gb) = grad[wr.start..br.end].split_at_mut(n_in * n_out);
                for (d, x) in delta.chunks_exact(n_out).zip(input.chunks_exact(n_in)) {
                    for o in 0..n_out {
                        if d[o] == 0.0 {
                            continue;
                        }
                        gb[o] += d[o];
                        for (g, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                            *g += d[o] * xi;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[wr];
            let mut prev = vec![0.0; cache.batch * n_in];
            for ((d, p), a) in delta
                .chunks_exact(n_out)
                .zip(prev.chunks_exact_mut(n_in))
                .zip(input.chunks_exact(n_in))
            {
                for o in 0..n_out {
                    if d[o] == 0.0 {
                        continue;
                    }
                    for (pi, wi) in p.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *pi += d[o] * wi;
                    }
                }
                // ReLU derivative from the stored post-activation
                for (pi, ai) in p.iter_mut().zip(a) {
                    if *ai <= 0.0 {
                        *pi = 0.0;
                    }
                }
            }
            delta = prev;
        }
        grad
    }

    /// `self <- (1 - tau) * self + tau * other`.
    pub fn soft_update_from(&mut self, other: &Mlp, tau: f64) {
        debug_assert_eq!(self.dims, other.dims);
        for (t, o) in self.params.iter_mut().zip(&other.params) {
            *t = (1.0 - tau) * *t + tau * o;
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
