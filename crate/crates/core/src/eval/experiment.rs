//! End-to-end harness: train a head on synthetic view pairs, track held-out
//! sequences with it, and score the result.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::metrics::{evaluate_sequence, MatchReport};
use crate::embed::{head_forward, train, EmbeddingHead, LossRecord, Matrix, OptimizerState, TrainConfig};
use crate::error::{config, Result};
use crate::math::mix_seed;
use crate::sim::{generate_scene, simulate_sequence, AugmentationConfig, Observation, Sequence, SequenceConfig};
use crate::tracker::{run_sequence, Detection, TrackerConfig};

/// Source of tracking embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedderKind {
    /// Raw features are used as embeddings.
    Identity,
    /// Freshly initialized head, no training.
    Random,
    /// Head trained with the contrastive loss.
    Trained,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train_scenes: usize,
    pub train_instances: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub augmentation: AugmentationConfig,
    pub optimizer: OptimizerState,
    pub training: TrainConfig,
    pub sequence: SequenceConfig,
    pub eval_sequences: usize,
    pub tracker: TrackerConfig,
    pub iou_thresh: f64,
    pub embedder: EmbedderKind,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train_scenes: 64,
            train_instances: 12,
            hidden_dim: 64,
            embed_dim: 32,
            augmentation: AugmentationConfig::full(),
            optimizer: OptimizerState::default(),
            training: TrainConfig::default(),
            sequence: SequenceConfig::default(),
            eval_sequences: 5,
            tracker: TrackerConfig::default(),
            iou_thresh: 0.5,
            embedder: EmbedderKind::Trained,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_scenes == 0 {
            return Err(config("train_scenes", "must be >= 1"));
        }
        if self.train_instances == 0 {
            return Err(config("train_instances", "must be >= 1"));
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(config("embed_dim", "head dimensions must be >= 1"));
        }
        if self.eval_sequences == 0 {
            return Err(config("eval_sequences", "must be >= 1"));
        }
        if !(self.iou_thresh > 0.0 && self.iou_thresh <= 1.0) {
            return Err(config("iou_thresh", format!("{} is not in (0, 1]", self.iou_thresh)));
        }
        self.augmentation.validate()?;
        self.training.validate()?;
        self.sequence.validate()?;
        self.tracker.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub report: MatchReport,
    pub history: Vec<LossRecord>,
    pub head: Option<EmbeddingHead>,
}

/// Salts that keep the training and evaluation seed streams apart.
const TRAIN_SCENE_SALT: u64 = 0x7261_696e;
const EVAL_SEQUENCE_SALT: u64 = 0x6576_616c;
const HEAD_INIT_SALT: u64 = 0x6865_6164;
const TRAIN_LOOP_SALT: u64 = 0x6c6f_6f70;

/// Held-out evaluation sequences of an experiment.
pub fn eval_sequences(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Sequence>> {
    (0..cfg.eval_sequences as u64)
        .map(|k| simulate_sequence(&cfg.sequence, mix_seed(mix_seed(seed, EVAL_SEQUENCE_SALT), k)))
        .collect()
}

/// Builds the head for `cfg.embedder`; `None` for the identity embedder.
pub fn prepare_head(cfg: &ExperimentConfig, seed: u64) -> Result<(Option<EmbeddingHead>, Vec<LossRecord>)> {
    let d_raw = cfg.sequence.d_raw;
    let init = || EmbeddingHead::random(d_raw, cfg.hidden_dim, cfg.embed_dim, mix_seed(seed, HEAD_INIT_SALT));
    match cfg.embedder {
        EmbedderKind::Identity => Ok((None, Vec::new())),
        EmbedderKind::Random => Ok((Some(init()?), Vec::new())),
        EmbedderKind::Trained => {
            let scenes = (0..cfg.train_scenes as u64)
                .map(|k| generate_scene(mix_seed(mix_seed(seed, TRAIN_SCENE_SALT), k), cfg.train_instances, d_raw))
                .collect::<Result<Vec<_>>>()?;
            let tc = TrainConfig {
                seed: mix_seed(seed, TRAIN_LOOP_SALT),
                ..cfg.training.clone()
            };
            let out = train(&scenes, &cfg.augmentation, &init()?, &cfg.optimizer, &tc)?;
            Ok((Some(out.head), out.history))
        }
    }
}

/// Converts observations into tracker detections, embedding them with
/// `head` when given.
pub fn embed_observations(obs: &[Observation], head: Option<&EmbeddingHead>) -> Result<Vec<Detection>> {
    let embeddings: Vec<Vec<f64>> = match head {
        None => obs.iter().map(|o| o.feature.clone()).collect(),
        Some(_) if obs.is_empty() => Vec::new(),
        Some(h) => {
            let m = Matrix::from_rows(&obs.iter().map(|o| o.feature.as_slice()).collect::<Vec<_>>())?;
            head_forward(h, &m)?.iter_rows().map(<[f64]>::to_vec).collect()
        }
    };
    Ok(obs
        .iter()
        .zip(embeddings)
        .map(|(o, embedding)| Detection {
            frame: o.frame,
            bbox: o.bbox,
            score: o.score,
            embedding,
        })
        .collect())
}

/// Tracks one sequence and returns its counts.
pub fn track_and_score(
    seq: &Sequence,
    head: Option<&EmbeddingHead>,
    tracker: &TrackerConfig,
    iou_thresh: f64,
) -> Result<super::SequenceCounts> {
    let frames = seq
        .frames
        .iter()
        .enumerate()
        .map(|(t, obs)| Ok((t as u64 + 1, embed_observations(obs, head)?)))
        .collect::<Result<Vec<_>>>()?;
    let out = run_sequence(frames, tracker)?;
    Ok(evaluate_sequence(&seq.ground_truth, &out.trajectories, iou_thresh))
}

/// Trains (if requested), tracks every held-out sequence, and evaluates.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (head, history) = prepare_head(cfg, seed)?;
    let per_sequence = eval_sequences(cfg, seed)?
        .iter()
        .map(|s| track_and_score(s, head.as_ref(), &cfg.tracker, cfg.iou_thresh))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        report: MatchReport::from_sequences(per_sequence),
        history,
        head,
    })
}

/// Which ablation to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    /// Proposal caps 64, 128 and 256.
    Proposals,
    /// Basic versus full augmentation.
    Augmentation,
}

pub const PROPOSAL_CAPS: [usize; 3] = [64, 128, 256];

/// Labelled configurations of one ablation axis.
pub fn ablation_variants(axis: AblationAxis, base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
    match axis {
        AblationAxis::Proposals => PROPOSAL_CAPS
            .iter()
            .map(|&cap| {
                let mut c = base.clone();
                c.training.cap = cap;
                (format!("cap{cap}"), c)
            })
            .collect(),
        AblationAxis::Augmentation => vec![
            (
                String::from("basic"),
                ExperimentConfig {
                    augmentation: AugmentationConfig::basic(),
                    ..base.clone()
                },
            ),
            (
                String::from("full"),
                ExperimentConfig {
                    augmentation: AugmentationConfig::full(),
                    ..base.clone()
                },
            ),
        ],
    }
}

/// One ablation result row.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub seed: u64,
    pub report: MatchReport,
    pub final_loss: f64,
}

/// Runs every variant of `axis` for every seed, sequentially.
pub fn run_ablation(axis: AblationAxis, base: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (label, cfg) in ablation_variants(axis, base) {
        for &seed in seeds {
            let r = run_experiment(&cfg, seed)?;
            rows.push(AblationRow {
                label: label.clone(),
                seed,
                final_loss: r.history.last().map_or(0.0, |h| h.mean),
                report: r.report,
            });
        }
    }
    Ok(rows)
}

/// Mean IDF1 per label, in first-appearance order.
pub fn mean_idf1_by_label(rows: &[AblationRow]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(l, _, _)| *l == r.label) {
            Some(e) => {
                e.1 += r.report.idf1;
                e.2 += 1;
            }
            None => out.push((r.label.clone(), r.report.idf1, 1)),
        }
    }
    out.into_iter().map(|(l, s, n)| (l, s / n as f64)).collect()
}
