//! Dense-network substrate shared by every learner in the crate.
//!
//! A [`DenseNet`] is a stack of affine layers, each followed by an
//! element-wise [`Activation`]. Parameters live in 64-bit floats and are laid
//! out layer by layer (row-major weights, then bias) whenever they are viewed
//! as one flat vector; [`Gradient`] uses the same layout.

mod checkpoint;
mod gradcheck;
mod loss;
mod optim;

pub use checkpoint::{read_net, write_net, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::softmax_xent;
pub use optim::{sgd_step, Sgd};

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
            Activation::Softplus => softplus(z),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Softplus => sigmoid(z),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
            Activation::Softplus => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Identity),
            3 => Some(Activation::Softplus),
            _ => None,
        }
    }
}

/// `ln(1 + e^z)` without overflow for large `z`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One affine layer `y = act(W x + b)` with `W` stored row-major as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot bound");
        let weights = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Self {
            in_dim,
            out_dim,
            activation,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Shape(format!(
                "layer {in_dim}->{out_dim} needs {} weights and {out_dim} biases, got {} and {}",
                in_dim * out_dim,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            weights,
            bias,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).fold(*b, |acc, (w, xi)| acc + w * xi))
            .collect()
    }
}

/// Cached activations from one [`DenseNet::forward`] call.
#[derive(Debug, Clone)]
pub struct Tape {
    dims: Vec<usize>,
    version: u64,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

/// Flat parameter-space vector congruent with one [`DenseNet`] (or with a
/// concatenation of several, when a learner owns more than one network).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl Gradient {
    pub fn zeros(len: usize) -> Self {
        Gradient(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &Gradient) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn concat(parts: &[&Gradient]) -> Gradient {
        Gradient(parts.iter().flat_map(|g| g.0.iter().copied()).collect())
    }

    /// Split into consecutive pieces of the given lengths.
    pub fn split(&self, lens: &[usize]) -> Vec<Gradient> {
        debug_assert_eq!(lens.iter().sum::<usize>(), self.len());
        let mut out = Vec::with_capacity(lens.len());
        let mut start = 0;
        for &n in lens {
            out.push(Gradient(self.0[start..start + n].to_vec()));
            start += n;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
    // Bumped on every parameter mutation so stale tapes are detectable.
    version: u64,
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        if layers.iter().any(|l| l.in_dim == 0 || l.out_dim == 0) {
            return Err(Error::Shape("layer widths must be positive".into()));
        }
        Ok(Self { layers, version: 0 })
    }

    /// Glorot-initialised network over `dims` (input width first). One
    /// activation per layer.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::Shape(format!(
                "{} dims need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| Dense::glorot(w[0], w[1], act, rng))
            .collect();
        Self::from_layers(layers)
    }

    /// Zero the weights and bias of the final layer.
    pub fn zero_last_layer(&mut self) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        last.bias.iter_mut().for_each(|b| *b = 0.0);
        self.version += 1;
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    /// Layer widths, input first.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        self.version += 1;
        Ok(())
    }

    pub fn same_shape(&self, other: &DenseNet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim && a.activation == b.activation)
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "network expects input of length {}, got {}",
                self.in_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l.affine(&h);
            for v in &mut h {
                *v = l.activation.apply(*v);
            }
        }
        Ok(h)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut tape = Tape {
            dims: self.dims(),
            version: self.version,
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            post: Vec::with_capacity(n),
        };
        let mut h = x.to_vec();
        for l in &self.layers {
            let z = l.affine(&h);
            let y: Vec<f64> = z.iter().map(|&v| l.activation.apply(v)).collect();
            tape.inputs.push(std::mem::replace(&mut h, y.clone()));
            tape.pre.push(z);
            tape.post.push(y);
        }
        Ok((h, tape))
    }

    /// Reverse-mode derivative of `<upstream, forward(x)>` with respect to the
    /// parameters and to `x`.
    pub fn backward(&self, tape: &Tape, upstream: &[f64]) -> Result<(Gradient, Vec<f64>)> {
        if tape.dims != self.dims() || tape.version != self.version {
            return Err(Error::Usage(
                "tape was not produced by this network's current parameters".into(),
            ));
        }
        if upstream.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "upstream has length {}, network output is {}",
                upstream.len(),
                self.out_dim()
            )));
        }
        let mut grad = vec![0.0; self.num_params()];
        let mut offset = self.num_params();
        let mut delta = upstream.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            offset -= l.num_params();
            // dL/dz
            for ((d, &z), &y) in delta.iter_mut().zip(&tape.pre[li]).zip(&tape.post[li]) {
                *d *= l.activation.derivative(z, y);
            }
            let input = &tape.inputs[li];
            let (gw, gb) = grad[offset..offset + l.num_params()].split_at_mut(l.weights.len());
            for (o, &d) in delta.iter().enumerate() {
                gb[o] = d;
                let row = &mut gw[o * l.in_dim..(o + 1) * l.in_dim];
                for (g, &xi) in row.iter_mut().zip(input) {
                    *g = d * xi;
                }
            }
            let mut dx = vec![0.0; l.in_dim];
            for (row, &d) in l.weights.chunks_exact(l.in_dim).zip(&delta) {
                for (acc, &w) in dx.iter_mut().zip(row) {
                    *acc += w * d;
                }
            }
            delta = dx;
        }
        Ok((Gradient(grad), delta))
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense] {
        self.version += 1;
        &mut self.layers
    }
}

impl Dense {
    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}
