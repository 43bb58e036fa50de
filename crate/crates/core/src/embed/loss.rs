//! Temperature-scaled contrastive loss over cosine similarities, with its
//! analytic gradient.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Matrix;
use crate::error::{arg, Error, Result};
use crate::math;

/// Softmax temperature, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature(f64);

impl Temperature {
    pub const DEFAULT: Temperature = Temperature(0.07);

    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Self(tau))
        } else {
            Err(crate::error::config("tau", format!("{tau} must be > 0")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Embeddings with their instance labels and view of origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub embeddings: Matrix,
    pub instance_ids: Vec<u64>,
    /// 1 or 2.
    pub view_ids: Vec<u8>,
}

impl ContrastiveBatch {
    pub fn new(embeddings: Matrix, instance_ids: Vec<u64>, view_ids: Vec<u8>) -> Result<Self> {
        let n = embeddings.rows();
        if instance_ids.len() != n || view_ids.len() != n {
            return Err(arg(format!(
                "{n} embeddings but {} ids and {} view ids",
                instance_ids.len(),
                view_ids.len()
            )));
        }
        Ok(Self {
            embeddings,
            instance_ids,
            view_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The positive of each anchor: the first proposal carrying the same
    /// instance id in the other view.
    pub fn positives(&self) -> Vec<Option<usize>> {
        (0..self.len())
            .map(|i| {
                (0..self.len()).find(|&j| {
                    self.instance_ids[j] == self.instance_ids[i] && self.view_ids[j] != self.view_ids[i]
                })
            })
            .collect()
    }
}

/// Loss value with its normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    /// Sum over anchors.
    pub total: f64,
    /// Number of anchors that had a positive.
    pub anchors: usize,
}

impl LossValue {
    /// Set when no anchor had a positive; the loss is then 0.
    pub fn is_empty(&self) -> bool {
        self.anchors == 0
    }

    pub fn mean(&self) -> f64 {
        if self.anchors == 0 {
            0.0
        } else {
            self.total / self.anchors as f64
        }
    }
}

struct Normalized {
    units: Matrix,
    norms: Vec<f64>,
}

fn normalize(e: &Matrix) -> Result<Normalized> {
    let mut units = e.clone();
    let mut norms = Vec::with_capacity(e.rows());
    for i in 0..e.rows() {
        let n = math::norm(e.row(i));
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::NumericalDomain(format!("embedding row {i} has norm {n}")));
        }
        units.row_mut(i).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok(Normalized { units, norms })
}

/// Walks every anchor with a positive; `visit` receives the anchor, its
/// candidate list (positive first, then negatives in index order) and the
/// scaled logits.
fn for_each_anchor(
    batch: &ContrastiveBatch,
    units: &Matrix,
    tau: Temperature,
    mut visit: impl FnMut(usize, &[usize], &[f64]),
) {
    let n = batch.len();
    let positives = batch.positives();
    let mut cand = Vec::with_capacity(n);
    let mut logits = Vec::with_capacity(n);
    for (i, pos) in positives.iter().enumerate() {
        let Some(p) = *pos else { continue };
        cand.clear();
        cand.push(p);
        cand.extend((0..n).filter(|&j| batch.instance_ids[j] != batch.instance_ids[i]));
        logits.clear();
        logits.extend(
            cand.iter()
                .map(|&j| math::dot(units.row(i), units.row(j)) / tau.get()),
        );
        visit(i, &cand, &logits);
    }
}

/// Sum over anchors `q` of `-log(e^{s+/τ} / (e^{s+/τ} + Σ e^{s-/τ}))`.
pub fn contrastive_loss(batch: &ContrastiveBatch, tau: Temperature) -> Result<LossValue> {
    let norm = normalize(&batch.embeddings)?;
    let mut total = 0.0;
    let mut anchors = 0;
    for_each_anchor(batch, &norm.units, tau, |_, _, logits| {
        total += (math::log_sum_exp(logits) - logits[0]).max(0.0);
        anchors += 1;
    });
    Ok(LossValue { total, anchors })
}

/// Loss and its exact gradient with respect to the embedding matrix.
pub fn contrastive_loss_and_grad(batch: &ContrastiveBatch, tau: Temperature) -> Result<(LossValue, Matrix)> {
    let Normalized { units, norms } = normalize(&batch.embeddings)?;
    let n = batch.len();
    // dL/dcos(i, j), dense since batches are small
    let mut dcos = vec![0.0; n * n];
    let mut total = 0.0;
    let mut anchors = 0;
    for_each_anchor(batch, &units, tau, |i, cand, logits| {
        let lse = math::log_sum_exp(logits);
        total += (lse - logits[0]).max(0.0);
        anchors += 1;
        for (k, (&j, &l)) in cand.iter().zip(logits).enumerate() {
            let p = libm::exp(l - lse);
            let target = if k == 0 { 1.0 } else { 0.0 };
            dcos[i * n + j] += (p - target) / tau.get();
        }
    });

    // d cos(a, b) / da = (u_b - cos * u_a) / |a|
    let d = batch.embeddings.cols();
    let mut grad = Matrix::zeros(n, d);
    for i in 0..n {
        let ui = units.row(i);
        let mut acc = vec![0.0; d];
        for j in 0..n {
            let g = dcos[i * n + j] + dcos[j * n + i];
            if g == 0.0 {
                continue;
            }
            let uj = units.row(j);
            let c = math::dot(ui, uj);
            for ((a, &x), &y) in acc.iter_mut().zip(uj).zip(ui) {
                *a += g * (x - c * y);
            }
        }
        for (out, a) in grad.row_mut(i).iter_mut().zip(acc) {
            *out = a / norms[i];
        }
    }
    Ok((LossValue { total, anchors }, grad))
}

/// Gradient of [`contrastive_loss`] (the summed loss).
pub fn contrastive_grad(batch: &ContrastiveBatch, tau: Temperature) -> Result<Matrix> {
    contrastive_loss_and_grad(batch, tau).map(|(_, g)| g)
}
