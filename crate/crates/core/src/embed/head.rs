//! Dense embedding head: affine layers with a smooth nonlinearity between
//! consecutive layers (none after the last).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::Matrix;
use crate::error::{arg, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Softplus,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(x),
            Activation::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    libm::log1p(libm::exp(x))
                }
            }
        }
    }

    /// Derivative expressed through the pre-activation value.
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = libm::tanh(x);
                1.0 - t * t
            }
            Activation::Softplus => 1.0 / (1.0 + libm::exp(-x)),
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Activation::Tanh => 1,
            Activation::Softplus => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Softplus),
            _ => None,
        }
    }
}

/// `y = W x + b` with `W` stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut l = Self::zeros(dim, dim);
        for i in 0..dim {
            l.weight[i * dim + i] = 1.0;
        }
        l
    }

    /// Glorot-uniform weights, zero bias.
    pub fn random<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = libm::sqrt(6.0 / (in_dim + out_dim) as f64);
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    fn forward_row(&self, x: &[f64], out: &mut [f64]) {
        for (o, (w, b)) in out
            .iter_mut()
            .zip(self.weight.chunks_exact(self.in_dim).zip(&self.bias))
        {
            *o = math::dot(w, x) + b;
        }
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingHead {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

/// Per-layer parameter gradients, same shapes as the head's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub layers: Vec<DenseLayer>,
}

impl HeadGrads {
    pub fn zeros_like(head: &EmbeddingHead) -> Self {
        Self {
            layers: head
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    /// Flattened in the same order as [`EmbeddingHead::params`].
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= c);
        }
    }
}

fn flatten_layers(layers: &[DenseLayer]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weight.iter().chain(&l.bias).copied())
        .collect()
}

impl EmbeddingHead {
    pub fn new(layers: Vec<DenseLayer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(arg("embedding head needs at least one layer"));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(arg(format!("layer {k} has a zero dimension")));
            }
            if l.weight.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(arg(format!("layer {k} parameter sizes do not match its shape")));
            }
            if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(arg(format!("layer {k} has non-finite parameters")));
            }
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(arg(format!(
                    "layer {k} outputs {} values but layer {} expects {}",
                    pair[0].out_dim,
                    k + 1,
                    pair[1].in_dim
                )));
            }
        }
        Ok(Self { layers, activation })
    }

    /// Two-layer head `d_raw -> hidden -> d_emb` with Glorot initialization.
    pub fn random(d_raw: usize, hidden: usize, d_emb: usize, seed: u64) -> Result<Self> {
        let mut rng = math::rng(seed);
        let l1 = DenseLayer::random(d_raw, hidden, &mut rng);
        let l2 = DenseLayer::random(hidden, d_emb, &mut rng);
        Self::new(vec![l1, l2], Activation::Tanh)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(arg(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Embeds a single feature vector.
    pub fn embed(&self, feature: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, feature.len(), feature.to_vec())?;
        Ok(head_forward(self, &m)?.row(0).to_vec())
    }

    /// Pre-activations of every layer for every row.
    fn forward_cached(&self, features: &Matrix) -> Vec<Matrix> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut input = features.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Matrix::zeros(input.rows(), layer.out_dim);
            for i in 0..input.rows() {
                layer.forward_row(input.row(i), z.row_mut(i));
            }
            if k + 1 < self.layers.len() {
                let mut a = z.clone();
                a.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = self.activation.apply(*v));
                input = a;
            }
            pre.push(z);
        }
        pre
    }
}

fn check_width(head: &EmbeddingHead, features: &Matrix) -> Result<()> {
    if features.cols() != head.input_dim() {
        return Err(arg(format!(
            "features have width {}, head expects {}",
            features.cols(),
            head.input_dim()
        )));
    }
    Ok(())
}

/// Maps `N x d_raw` features to `N x d_emb` embeddings.
pub fn head_forward(head: &EmbeddingHead, features: &Matrix) -> Result<Matrix> {
    check_width(head, features)?;
    Ok(head.forward_cached(features).pop().expect("head has layers"))
}

/// Chain rule through [`head_forward`]: gradients of `sum(upstream * out)`
/// with respect to every weight and bias.
pub fn backprop_head(head: &EmbeddingHead, features: &Matrix, upstream: &Matrix) -> Result<HeadGrads> {
    check_width(head, features)?;
    if upstream.rows() != features.rows() || upstream.cols() != head.output_dim() {
        return Err(arg(format!(
            "upstream gradient is {}x{}, expected {}x{}",
            upstream.rows(),
            upstream.cols(),
            features.rows(),
            head.output_dim()
        )));
    }
    let pre = head.forward_cached(features);
    let mut grads = HeadGrads::zeros_like(head);
    let mut delta = upstream.clone();
    for k in (0..head.layers.len()).rev() {
        let layer = &head.layers[k];
        let g = &mut grads.layers[k];
        let act = head.activation;
        let input_row = |i: usize| -> Vec<f64> {
            if k == 0 {
                features.row(i).to_vec()
            } else {
                pre[k - 1].row(i).iter().map(|&z| act.apply(z)).collect()
            }
        };
        let mut next = Matrix::zeros(features.rows(), layer.in_dim);
        for i in 0..features.rows() {
            let x = input_row(i);
            let d = delta.row(i);
            for (o, &dv) in d.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                g.bias[o] += dv;
                let wrow = &mut g.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (w, &xv) in wrow.iter_mut().zip(&x) {
                    *w += dv * xv;
                }
            }
            if k > 0 {
                let out = next.row_mut(i);
                for (o, &dv) in d.iter().enumerate() {
                    let wrow = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (n, &w) in out.iter_mut().zip(wrow) {
                        *n += dv * w;
                    }
                }
                for (n, &z) in out.iter_mut().zip(pre[k - 1].row(i)) {
                    *n *= act.derivative(z);
                }
            }
        }
        delta = next;
    }
    Ok(grads)
}
