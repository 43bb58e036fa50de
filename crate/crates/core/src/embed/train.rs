use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::{
    backprop_head, contrastive_loss_and_grad, head_forward, sgd_step, ContrastiveBatch, EmbeddingHead, Matrix,
    OptimizerState, Temperature,
};
use crate::error::{arg, config, Result};
use crate::math;
use crate::sim::{make_view_pair, sample_proposals, AugmentationConfig, Scene};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub tau: Temperature,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    /// View pairs pooled into one batch before the proposal cap applies.
    pub pairs_per_batch: usize,
    /// Upper bound on proposals per batch.
    pub cap: usize,
    /// The learning rate is multiplied by `lr_decay` once this many epochs
    /// have completed, for each entry.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: Temperature::DEFAULT,
            epochs: 12,
            batches_per_epoch: 25,
            pairs_per_batch: 16,
            cap: 256,
            lr_milestones: alloc::vec![8, 11],
            lr_decay: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(config("epochs", "must be >= 1"));
        }
        if self.batches_per_epoch == 0 {
            return Err(config("batches_per_epoch", "must be >= 1"));
        }
        if self.pairs_per_batch == 0 {
            return Err(config("pairs_per_batch", "must be >= 1"));
        }
        if self.cap < 2 {
            return Err(config("cap", "must be >= 2"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(config("lr_decay", format!("{} is not in (0, 1]", self.lr_decay)));
        }
        Ok(())
    }
}

/// One optimization step's loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    /// Summed loss over anchors.
    pub total: f64,
    /// Per-anchor mean; this is what the optimizer minimizes.
    pub mean: f64,
    pub anchors: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub head: EmbeddingHead,
    pub history: Vec<LossRecord>,
}

impl TrainOutcome {
    /// Mean of the per-batch mean losses of each epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let epochs = self.history.last().map_or(0, |r| r.epoch + 1);
        (0..epochs)
            .map(|e| {
                let (s, n) = self
                    .history
                    .iter()
                    .filter(|r| r.epoch == e)
                    .fold((0.0, 0usize), |(s, n), r| (s + r.mean, n + 1));
                s / n.max(1) as f64
            })
            .collect()
    }
}

/// Trains `head0` with the contrastive loss on view pairs drawn from
/// `scenes`. Fully determined by the inputs and `cfg.seed`.
pub fn train(
    scenes: &[Scene],
    aug: &AugmentationConfig,
    head0: &EmbeddingHead,
    opt: &OptimizerState,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if scenes.is_empty() {
        return Err(arg("training needs at least one scene"));
    }
    cfg.validate()?;
    aug.validate()?;
    if let Some(s) = scenes.iter().find(|s| s.feature_dim() != head0.input_dim()) {
        return Err(arg(format!(
            "scene {} has feature dimension {}, head expects {}",
            s.seed,
            s.feature_dim(),
            head0.input_dim()
        )));
    }
    let mut head = head0.clone();
    let mut state = opt.clone();
    let base_lr = state.learning_rate;
    let mut rng = math::rng(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs * cfg.batches_per_epoch);

    for epoch in 0..cfg.epochs {
        let decays = cfg.lr_milestones.iter().filter(|&&m| epoch >= m).count();
        state.learning_rate = base_lr * libm::pow(cfg.lr_decay, decays as f64);
        for batch_idx in 0..cfg.batches_per_epoch {
            let pairs = (0..cfg.pairs_per_batch)
                .map(|_| {
                    let scene = &scenes[rng.gen_range(0..scenes.len())];
                    make_view_pair(scene, aug, rng.gen())
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = sample_proposals(&pairs, cfg.cap, rng.gen())?;
            let features = Matrix::from_rows(
                &batch
                    .proposals
                    .iter()
                    .map(|p| p.proposal.raw_feature.as_slice())
                    .collect::<Vec<_>>(),
            )?;
            let record = |total, mean, anchors| LossRecord {
                epoch,
                batch: batch_idx,
                total,
                mean,
                anchors,
                learning_rate: state.learning_rate,
            };
            if features.rows() == 0 {
                history.push(record(0.0, 0.0, 0));
                continue;
            }
            let embeddings = head_forward(&head, &features)?;
            let cb = ContrastiveBatch::new(
                embeddings,
                batch.proposals.iter().map(|p| p.label()).collect(),
                batch.proposals.iter().map(|p| p.proposal.view_id).collect(),
            )?;
            let (loss, mut grad) = contrastive_loss_and_grad(&cb, cfg.tau)?;
            history.push(record(loss.total, loss.mean(), loss.anchors));
            if loss.is_empty() {
                continue;
            }
            let scale = 1.0 / loss.anchors as f64;
            grad.as_mut_slice().iter_mut().for_each(|g| *g *= scale);
            let grads = backprop_head(&head, &features, &grad)?;
            sgd_step(&mut head, &grads, &mut state)?;
        }
    }
    Ok(TrainOutcome { head, history })
}
