use alloc::format;
use alloc::vec::Vec;

use super::{EmbeddingHead, HeadGrads};
use crate::error::{arg, config, Result};

/// SGD with classic momentum and weight decay folded into the gradient:
/// `v <- momentum * v + g + weight_decay * p`, `p <- p - lr * v`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(config("lr", format!("{learning_rate} must be > 0")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(config("momentum", format!("{momentum} is not in [0, 1)")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(config("weight_decay", format!("{weight_decay} must be >= 0")));
        }
        Ok(Self {
            learning_rate,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }
}

impl Default for OptimizerState {
    fn default() -> Self {
        Self::new(0.04, 0.9, 1e-4).expect("defaults are valid")
    }
}

/// One in-place SGD update of `head`.
pub fn sgd_step(head: &mut EmbeddingHead, grads: &HeadGrads, state: &mut OptimizerState) -> Result<()> {
    let g = grads.flatten();
    if g.len() != head.param_count() {
        return Err(arg(format!(
            "{} gradients for {} parameters",
            g.len(),
            head.param_count()
        )));
    }
    if state.velocity.len() != g.len() {
        state.velocity = alloc::vec![0.0; g.len()];
    }
    let (lr, mu, wd) = (state.learning_rate, state.momentum, state.weight_decay);
    for ((p, v), gi) in head.params_mut().zip(state.velocity.iter_mut()).zip(g) {
        *v = mu * *v + gi + wd * *p;
        *p -= lr * *v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{Activation, DenseLayer};

    fn head() -> EmbeddingHead {
        let mut l = DenseLayer::zeros(2, 1);
        l.weight = alloc::vec![0.5, -0.25];
        l.bias = alloc::vec![1.0];
        EmbeddingHead::new(alloc::vec![l], Activation::Tanh).unwrap()
    }

    fn grads(g: f64) -> HeadGrads {
        let mut gr = HeadGrads::zeros_like(&head());
        gr.layers[0].weight = alloc::vec![g, g];
        gr.layers[0].bias = alloc::vec![g];
        gr
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut h = head();
        let mut s = OptimizerState::new(0.1, 0.9, 0.0).unwrap();
        sgd_step(&mut h, &grads(0.0), &mut s).unwrap();
        assert_eq!(h, head());
    }

    #[test]
    fn plain_step() {
        let mut h = head();
        let mut s = OptimizerState::new(0.1, 0.0, 0.0).unwrap();
        sgd_step(&mut h, &grads(2.0), &mut s).unwrap();
        for (a, b) in h.params().iter().zip(head().params()) {
            assert!((b - a - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn momentum_unrolls() {
        let mut h = head();
        let mut s = OptimizerState::new(0.1, 0.9, 0.0).unwrap();
        sgd_step(&mut h, &grads(1.0), &mut s).unwrap();
        sgd_step(&mut h, &grads(1.0), &mut s).unwrap();
        for (a, b) in h.params().iter().zip(head().params()) {
            // lr * (g + 1.9 g)
            assert!((b - a - 0.1 * 2.9).abs() < 1e-14);
        }
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(OptimizerState::new(0.0, 0.9, 0.0).is_err());
        assert!(OptimizerState::new(0.1, 1.0, 0.0).is_err());
        assert!(OptimizerState::new(0.1, 0.5, -1.0).is_err());
        let d = OptimizerState::default();
        assert_eq!((d.learning_rate, d.momentum, d.weight_decay), (0.04, 0.9, 1e-4));
    }
}
