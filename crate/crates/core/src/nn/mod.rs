//! Minimal fp64 dense-network engine.
//!
//! Fixed-topology fully-connected networks with exact reverse-mode gradients.
//! Three output heads cover every network in the crate: plain linear,
//! softmax (log-sum-exp stabilized), and a Gaussian head that splits the
//! final layer into mean / log-variance halves with a smooth tanh clamp on
//! the log-variance.
//!
//! Networks are plain data: forward passes never mutate, updates go through
//! [`adam::adam_step`], and a frozen net can be shared across readers.

pub mod adam;
pub mod ckpt;
pub mod gradcheck;
pub mod loss;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, LossHead};
pub use loss::gaussian_nll;

use rand::Rng;

use crate::error::{Error, Result};

/// Default smooth-clamp bounds for Gaussian-head log-variances.
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn forward(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    /// Gradient expressed in terms of the post-activation value.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Parse(format!("unknown activation {other:?}"))),
        }
    }
}

/// Smooth log-variance bounds: `clamp(z) = mid + half·tanh((z − mid)/half)`.
///
/// The clamp is the identity near the midpoint and saturates at the bounds
/// with a gradient that decays but never cuts off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogVarBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for LogVarBounds {
    fn default() -> Self {
        LogVarBounds { min: LOGVAR_MIN, max: LOGVAR_MAX }
    }
}

impl LogVarBounds {
    #[inline]
    pub fn clamp(&self, z: f64) -> f64 {
        let mid = 0.5 * (self.min + self.max);
        let half = 0.5 * (self.max - self.min);
        mid + half * ((z - mid) / half).tanh()
    }

    /// d clamp / d z, computed from the clamped output.
    #[inline]
    fn grad_from_output(&self, y: f64) -> f64 {
        let mid = 0.5 * (self.min + self.max);
        let half = 0.5 * (self.max - self.min);
        let t = (y - mid) / half;
        1.0 - t * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputHead {
    Linear,
    Softmax,
    GaussianHead(LogVarBounds),
}

impl OutputHead {
    pub fn name(&self) -> &'static str {
        match self {
            OutputHead::Linear => "linear",
            OutputHead::Softmax => "softmax",
            OutputHead::GaussianHead(_) => "gaussian_head",
        }
    }
}

/// One dense layer, weights row-major with shape (out_dim, in_dim).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub(crate) w: Vec<f64>,
    pub(crate) b: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl DenseLayer {
    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut sum = self.b[o];
            for (wi, xi) in row.iter().zip(x.iter()) {
                sum += wi * xi;
            }
            out.push(sum);
        }
    }
}

/// Fixed-topology fully-connected network with fp64 parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layer_sizes: Vec<usize>,
    layers: Vec<DenseLayer>,
    hidden_activation: Activation,
    output_head: OutputHead,
}

/// Cached activations from one forward pass; feeds exactly one backward call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    /// Post-activation values of each hidden layer.
    hidden: Vec<Vec<f64>>,
    /// Network output (post-head).
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Per-layer parameter gradients plus the gradient w.r.t. the input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_w: Vec<Vec<f64>>,
    pub d_b: Vec<Vec<f64>>,
    pub d_input: Vec<f64>,
}

impl Gradients {
    /// A zero gradient matching `net`'s shapes; used to accumulate batches.
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            d_w: net.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            d_b: net.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
            d_input: vec![0.0; net.in_dim()],
        }
    }

    /// Accumulate `other` into `self` (input gradient included).
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.d_w.iter_mut().zip(&other.d_w) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.d_b.iter_mut().zip(&other.d_b) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.d_input.iter_mut().zip(&other.d_input) {
            *x += y;
        }
    }

    /// Scale every component by `s`.
    pub fn scale(&mut self, s: f64) {
        for a in self.d_w.iter_mut().chain(self.d_b.iter_mut()) {
            for x in a.iter_mut() {
                *x *= s;
            }
        }
        for x in self.d_input.iter_mut() {
            *x *= s;
        }
    }

    /// Euclidean norm over all parameter gradients (input gradient excluded).
    pub fn param_norm(&self) -> f64 {
        let mut s = 0.0;
        for a in self.d_w.iter().chain(self.d_b.iter()) {
            for x in a {
                s += x * x;
            }
        }
        s.sqrt()
    }
}

impl DenseNet {
    /// He-style uniform initialization from a seeded RNG; biases start at zero.
    pub fn new<R: Rng>(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_head: OutputHead,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, hidden_activation, output_head)?;
        for layer in &mut net.layers {
            let limit = (6.0 / layer.in_dim as f64).sqrt();
            for w in &mut layer.w {
                *w = rng.gen_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// All-zero parameters; mostly for tests and hand-set topologies.
    pub fn zeros(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_head: OutputHead,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Shape(format!(
                "need at least 2 layer sizes, got {}",
                layer_sizes.len()
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Shape("layer sizes must be positive".into()));
        }
        if matches!(output_head, OutputHead::GaussianHead(_)) && layer_sizes.last().unwrap() % 2 != 0 {
            return Err(Error::Shape(
                "gaussian head needs an even output width (mean ⊕ log_var)".into(),
            ));
        }
        let layers = layer_sizes
            .windows(2)
            .map(|w| DenseLayer {
                w: vec![0.0; w[0] * w[1]],
                b: vec![0.0; w[1]],
                in_dim: w[0],
                out_dim: w[1],
            })
            .collect();
        Ok(DenseNet {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            hidden_activation,
            output_head,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn in_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_head(&self) -> &OutputHead {
        &self.output_head
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.layers[layer].w
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.layers[layer].b
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.layers[layer].w
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.layers[layer].b
    }

    /// Forward pass; returns the output along with the cache one backward
    /// call needs.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input length {} != expected {}",
                input.len(),
                self.in_dim()
            )));
        }
        let n_hidden = self.layers.len() - 1;
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(n_hidden);
        let mut cur = input.to_vec();
        let mut z = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&cur, &mut z);
            if li < n_hidden {
                for v in z.iter_mut() {
                    *v = self.hidden_activation.forward(*v);
                }
                hidden.push(z.clone());
                std::mem::swap(&mut cur, &mut z);
            }
        }
        let output = self.apply_head(&z);
        let cache = ForwardCache { input: input.to_vec(), hidden, output: output.clone() };
        Ok((output, cache))
    }

    /// Forward pass discarding the cache.
    pub fn output(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.0)
    }

    fn apply_head(&self, z: &[f64]) -> Vec<f64> {
        match &self.output_head {
            OutputHead::Linear => z.to_vec(),
            OutputHead::Softmax => softmax(z),
            OutputHead::GaussianHead(bounds) => {
                let half = z.len() / 2;
                let mut out = z.to_vec();
                for v in out[half..].iter_mut() {
                    *v = bounds.clamp(*v);
                }
                out
            }
        }
    }

    /// Reverse-mode gradients for the forward pass that produced `cache`.
    ///
    /// `upstream` is dLoss/dOutput (post-head). Returns gradients for every
    /// parameter block plus the input.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_accumulate(cache, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Like [`backward`](Self::backward) but accumulates (`+=`) into an
    /// existing gradient buffer; used on batch hot paths to avoid
    /// per-sample allocation of parameter-sized buffers.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut Gradients,
    ) -> Result<()> {
        if upstream.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "upstream length {} != output width {}",
                upstream.len(),
                self.out_dim()
            )));
        }
        if cache.input.len() != self.in_dim() || cache.hidden.len() != self.layers.len() - 1 {
            return Err(Error::State("forward cache does not match this network".into()));
        }
        if grads.d_w.len() != self.layers.len() {
            return Err(Error::Shape("gradient buffer layer count mismatch".into()));
        }

        // Head backward: dLoss/d(final pre-head).
        let mut dz: Vec<f64> = match &self.output_head {
            OutputHead::Linear => upstream.to_vec(),
            OutputHead::Softmax => {
                let p = &cache.output;
                let dot: f64 = upstream.iter().zip(p.iter()).map(|(u, pi)| u * pi).sum();
                p.iter().zip(upstream.iter()).map(|(pi, u)| pi * (u - dot)).collect()
            }
            OutputHead::GaussianHead(bounds) => {
                let half = upstream.len() / 2;
                let mut dz = upstream.to_vec();
                for (d, y) in dz[half..].iter_mut().zip(&cache.output[half..]) {
                    *d *= bounds.grad_from_output(*y);
                }
                dz
            }
        };

        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let x: &[f64] = if li == 0 { &cache.input } else { &cache.hidden[li - 1] };
            let d_w = &mut grads.d_w[li];
            let d_b = &mut grads.d_b[li];
            let mut dx = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let g = dz[o];
                d_b[o] += g;
                let row = o * layer.in_dim;
                for i in 0..layer.in_dim {
                    d_w[row + i] += g * x[i];
                    dx[i] += layer.w[row + i] * g;
                }
            }
            if li > 0 {
                for (d, y) in dx.iter_mut().zip(&cache.hidden[li - 1]) {
                    *d *= self.hidden_activation.grad_from_output(*y);
                }
            }
            dz = dx;
        }
        for (d, g) in grads.d_input.iter_mut().zip(&dz) {
            *d += g;
        }
        Ok(())
    }
}

/// Log-sum-exp stabilized softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}
