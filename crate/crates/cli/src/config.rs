//! Run configuration: a TOML file with `[sim]`, `[augment]`, `[train]`,
//! `[tracker]` and `[eval]` tables. Every key is optional and falls back
//! to the documented default; unknown sections and keys are rejected.

use std::path::Path;

use instassoc_core::embed::{OptimizerState, Temperature, TrainConfig};
use instassoc_core::eval::{EmbedderKind, ExperimentConfig};
use instassoc_core::sim::{AugmentationConfig, SequenceConfig};
use instassoc_core::tracker::{Aggregation, TrackerConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax error: {message}")]
    Syntax { message: String },
    #[error("line {line}: unknown section [{section}]")]
    UnknownSection { section: String, line: usize },
    #[error("line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey { section: String, key: String, line: usize },
    #[error("{}`{key}` in [{section}] has the wrong type: {message}", at(*.line))]
    Type {
        section: String,
        key: String,
        line: Option<usize>,
        message: String,
    },
    #[error("{}`{key}` in [{section}] is out of range: {reason}", at(*.line))]
    Range {
        section: String,
        key: String,
        line: Option<usize>,
        reason: String,
    },
}

fn at(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    /// Seed of the evaluation sequences.
    pub seed: u64,
    pub n_instances: usize,
    pub d_raw: usize,
    pub frames: usize,
    pub sequences: usize,
    pub appearance_noise: f64,
    pub brightness: f64,
    pub blur: f64,
    pub box_noise: f64,
    pub score_range: [f64; 2],
    pub max_pair_iou: f64,
    pub train_scenes: usize,
    pub train_instances: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SequenceConfig::default();
        let e = ExperimentConfig::default();
        Self {
            seed: 0,
            n_instances: s.n_instances,
            d_raw: s.d_raw,
            frames: s.frames,
            sequences: e.eval_sequences,
            appearance_noise: s.appearance_noise,
            brightness: s.brightness,
            blur: s.blur,
            box_noise: s.box_noise,
            score_range: [s.score_range.0, s.score_range.1],
            max_pair_iou: s.max_pair_iou,
            train_scenes: e.train_scenes,
            train_instances: e.train_instances,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub rotation: f64,
    pub scale: [f64; 2],
    pub shear: f64,
    pub translation: f64,
    pub jitter_scale: [f64; 2],
    pub crop_fraction: [f64; 2],
    pub flip_prob: f64,
    pub mixup_prob: f64,
    pub mixup_weight: [f64; 2],
    pub noise: f64,
    pub brightness: f64,
    pub blur: f64,
    pub visibility: f64,
}

impl From<&AugmentationConfig> for AugmentSection {
    fn from(a: &AugmentationConfig) -> Self {
        Self {
            rotation: a.rotation,
            scale: [a.scale.0, a.scale.1],
            shear: a.shear,
            translation: a.translation,
            jitter_scale: [a.jitter_scale.0, a.jitter_scale.1],
            crop_fraction: [a.crop_fraction.0, a.crop_fraction.1],
            flip_prob: a.flip_prob,
            mixup_prob: a.mixup_prob,
            mixup_weight: [a.mixup_weight.0, a.mixup_weight.1],
            noise: a.noise,
            brightness: a.brightness,
            blur: a.blur,
            visibility: a.visibility,
        }
    }
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self::from(&AugmentationConfig::full())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Embedder {
    Identity,
    Random,
    Trained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub seed: u64,
    pub tau: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub pairs_per_batch: usize,
    pub cap: usize,
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub embedder: Embedder,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let o = OptimizerState::default();
        let e = ExperimentConfig::default();
        Self {
            seed: 0,
            tau: t.tau.get(),
            lr: o.learning_rate,
            momentum: o.momentum,
            weight_decay: o.weight_decay,
            epochs: t.epochs,
            batches_per_epoch: t.batches_per_epoch,
            pairs_per_batch: t.pairs_per_batch,
            cap: t.cap,
            lr_milestones: t.lr_milestones,
            lr_decay: t.lr_decay,
            hidden_dim: e.hidden_dim,
            embed_dim: e.embed_dim,
            embedder: Embedder::Trained,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationName {
    Ewa,
    Latest,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSection {
    pub beta: f64,
    pub beta_obj: f64,
    pub gamma: f64,
    pub nms_iou: f64,
    pub memory_len: usize,
    pub max_age: u64,
    pub score_mix: f64,
    pub aggregation: AggregationName,
    /// Only used by `ewa`.
    pub decay: f64,
}

impl Default for TrackerSection {
    fn default() -> Self {
        let t = TrackerConfig::default();
        let decay = match t.aggregation {
            Aggregation::Ewa { decay } => decay,
            _ => 0.9,
        };
        Self {
            beta: t.beta,
            beta_obj: t.beta_obj,
            gamma: t.gamma,
            nms_iou: t.nms_iou,
            memory_len: t.memory_len,
            max_age: t.max_age,
            score_mix: t.score_mix,
            aggregation: AggregationName::Ewa,
            decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub iou_thresh: f64,
    /// Seeds averaged over by `ablate`.
    pub seeds: Vec<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            iou_thresh: 0.5,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim: SimSection,
    pub augment: AugmentSection,
    pub train: TrainSection,
    pub tracker: TrackerSection,
    pub eval: EvalSection,
}

const SECTIONS: [&str; 5] = ["sim", "augment", "train", "tracker", "eval"];

/// Field names of each section, taken from a serialized default.
fn known_keys(section: &str) -> Vec<String> {
    let table = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
    table
        .get(section)
        .and_then(|v| v.as_table())
        .map(|t| t.keys().cloned().collect())
        .unwrap_or_default()
}

/// 1-based line of `key` inside `[section]`, or of the section header when
/// `key` is `None`.
fn locate(source: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = name.trim().to_string();
            if key.is_none() && current == section {
                return Some(i + 1);
            }
            continue;
        }
        if let Some(k) = key {
            if current == section && line.split('=').next().map(str::trim) == Some(k) {
                return Some(i + 1);
            }
        }
    }
    None
}

/// Deserializes one section, defaults filled in. On a type error the
/// offending key is found by deserializing each key on its own, since the
/// decoder's message does not name it.
fn section<T: serde::de::DeserializeOwned + Default>(
    text: &str,
    table: &toml::Table,
    name: &str,
) -> Result<T, ConfigError> {
    let Some(v) = table.get(name) else {
        return Ok(T::default());
    };
    v.clone().try_into::<T>().map_err(|e| {
        let key = v
            .as_table()
            .and_then(|t| {
                t.iter().find_map(|(k, x)| {
                    let mut one = toml::Table::new();
                    one.insert(k.clone(), x.clone());
                    toml::Value::Table(one).try_into::<T>().is_err().then(|| k.clone())
                })
            })
            .unwrap_or_default();
        ConfigError::Type {
            section: name.into(),
            line: locate(text, name, Some(&key)),
            key,
            message: e.message().trim_end().to_string(),
        }
    })
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses and validates configuration text.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax {
            message: e.to_string().trim_end().to_string(),
        })?;
        for (section, value) in &table {
            if !SECTIONS.contains(&section.as_str()) || !value.is_table() {
                return Err(ConfigError::UnknownSection {
                    section: section.clone(),
                    line: locate(text, section, None).or_else(|| locate(text, "", Some(section))).unwrap_or(0),
                });
            }
            let known = known_keys(section);
            for key in value.as_table().expect("checked").keys() {
                if !known.contains(key) {
                    return Err(ConfigError::UnknownKey {
                        section: section.clone(),
                        key: key.clone(),
                        line: locate(text, section, Some(key)).unwrap_or(0),
                    });
                }
            }
        }
        let cfg = RunConfig {
            sim: section(text, &table, "sim")?,
            augment: section(text, &table, "augment")?,
            train: section(text, &table, "train")?,
            tracker: section(text, &table, "tracker")?,
            eval: section(text, &table, "eval")?,
        };
        cfg.validate_with_source(text)?;
        Ok(cfg)
    }

    /// TOML text that parses back to an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_with_source("")
    }

    fn validate_with_source(&self, text: &str) -> Result<(), ConfigError> {
        let wrap = |section: &'static str| {
            move |e: instassoc_core::Error| match e {
                instassoc_core::Error::Config { key, reason } => ConfigError::Range {
                    section: section.into(),
                    key: key.into(),
                    line: locate(text, section, Some(key)),
                    reason,
                },
                other => ConfigError::Range {
                    section: section.into(),
                    key: String::new(),
                    line: None,
                    reason: other.to_string(),
                },
            }
        };
        let range = |section: &'static str, key: &'static str, reason: String| ConfigError::Range {
            section: section.into(),
            key: key.into(),
            line: locate(text, section, Some(key)),
            reason,
        };
        self.sequence_config().validate().map_err(wrap("sim"))?;
        if self.sim.sequences == 0 {
            return Err(range("sim", "sequences", "must be >= 1".into()));
        }
        if self.sim.train_scenes == 0 {
            return Err(range("sim", "train_scenes", "must be >= 1".into()));
        }
        if self.sim.train_instances == 0 {
            return Err(range("sim", "train_instances", "must be >= 1".into()));
        }
        self.augmentation().validate().map_err(wrap("augment"))?;
        Temperature::new(self.train.tau).map_err(wrap("train"))?;
        self.optimizer().map_err(wrap("train"))?;
        self.train_config().validate().map_err(wrap("train"))?;
        if self.train.hidden_dim == 0 {
            return Err(range("train", "hidden_dim", "must be >= 1".into()));
        }
        if self.train.embed_dim == 0 {
            return Err(range("train", "embed_dim", "must be >= 1".into()));
        }
        self.tracker_config().validate().map_err(wrap("tracker"))?;
        let t = self.eval.iou_thresh;
        if !(t > 0.0 && t <= 1.0) {
            return Err(range("eval", "iou_thresh", format!("{t} is not in (0, 1]")));
        }
        if self.eval.seeds.is_empty() {
            return Err(range("eval", "seeds", "needs at least one seed".into()));
        }
        Ok(())
    }

    pub fn sequence_config(&self) -> SequenceConfig {
        let s = &self.sim;
        SequenceConfig {
            n_instances: s.n_instances,
            d_raw: s.d_raw,
            frames: s.frames,
            appearance_noise: s.appearance_noise,
            brightness: s.brightness,
            blur: s.blur,
            box_noise: s.box_noise,
            score_range: (s.score_range[0], s.score_range[1]),
            max_pair_iou: s.max_pair_iou,
        }
    }

    pub fn augmentation(&self) -> AugmentationConfig {
        let a = &self.augment;
        AugmentationConfig {
            rotation: a.rotation,
            scale: (a.scale[0], a.scale[1]),
            shear: a.shear,
            translation: a.translation,
            jitter_scale: (a.jitter_scale[0], a.jitter_scale[1]),
            crop_fraction: (a.crop_fraction[0], a.crop_fraction[1]),
            flip_prob: a.flip_prob,
            mixup_prob: a.mixup_prob,
            mixup_weight: (a.mixup_weight[0], a.mixup_weight[1]),
            noise: a.noise,
            brightness: a.brightness,
            blur: a.blur,
            visibility: a.visibility,
        }
    }

    pub fn optimizer(&self) -> instassoc_core::Result<OptimizerState> {
        OptimizerState::new(self.train.lr, self.train.momentum, self.train.weight_decay)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            tau: Temperature::new(t.tau).unwrap_or_default(),
            epochs: t.epochs,
            batches_per_epoch: t.batches_per_epoch,
            pairs_per_batch: t.pairs_per_batch,
            cap: t.cap,
            lr_milestones: t.lr_milestones.clone(),
            lr_decay: t.lr_decay,
            seed: t.seed,
        }
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        let t = &self.tracker;
        TrackerConfig {
            beta: t.beta,
            beta_obj: t.beta_obj,
            gamma: t.gamma,
            nms_iou: t.nms_iou,
            memory_len: t.memory_len,
            max_age: t.max_age,
            score_mix: t.score_mix,
            aggregation: match t.aggregation {
                AggregationName::Ewa => Aggregation::Ewa { decay: t.decay },
                AggregationName::Latest => Aggregation::Latest,
                AggregationName::Mean => Aggregation::Mean,
            },
        }
    }

    /// The experiment-harness view of this config. Call [`validate`](Self::validate) first.
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            train_scenes: self.sim.train_scenes,
            train_instances: self.sim.train_instances,
            hidden_dim: self.train.hidden_dim,
            embed_dim: self.train.embed_dim,
            augmentation: self.augmentation(),
            optimizer: self.optimizer().unwrap_or_default(),
            training: self.train_config(),
            sequence: self.sequence_config(),
            eval_sequences: self.sim.sequences,
            tracker: self.tracker_config(),
            iou_thresh: self.eval.iou_thresh,
            embedder: match self.train.embedder {
                Embedder::Identity => EmbedderKind::Identity,
                Embedder::Random => EmbedderKind::Random,
                Embedder::Trained => EmbedderKind::Trained,
            },
        }
    }
}
