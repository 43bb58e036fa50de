//! Online association: duplicate removal, bi-softmax and cosine matching
//! scores, and greedy track management with per-track embedding queues.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::embed::Matrix;
use crate::error::{arg, config, Error, Result};
use crate::eval::TrajectorySet;
use crate::geometry::BBox;
use crate::math;

pub use crate::geometry::iou;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: u64,
    pub bbox: BBox,
    /// Detector confidence in `[0, 1]`.
    pub score: f64,
    pub embedding: Vec<f64>,
}

impl Detection {
    pub fn validate(&self) -> Result<()> {
        if !self.bbox.is_valid() {
            return Err(arg(format!("detection box {:?} is degenerate", self.bbox)));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(arg(format!("detection score {} is not in [0, 1]", self.score)));
        }
        if self.embedding.iter().all(|&v| v == 0.0) || self.embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalDomain("detection embedding is zero or non-finite".into()));
        }
        Ok(())
    }
}

/// How a track's memory queue is reduced to one embedding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aggregation {
    /// Weighted mean with weight `decay^age`, newest entry age 0.
    Ewa { decay: f64 },
    Latest,
    Mean,
}

impl Default for Aggregation {
    fn default() -> Self {
        Aggregation::Ewa { decay: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    /// `(frame, embedding)`, oldest first.
    pub memory: VecDeque<(u64, Vec<f64>)>,
    pub last_frame: u64,
    pub hit_count: u64,
}

impl Track {
    fn new(id: u64, frame: u64, embedding: Vec<f64>) -> Self {
        let mut memory = VecDeque::new();
        memory.push_back((frame, embedding));
        Self {
            id,
            memory,
            last_frame: frame,
            hit_count: 1,
        }
    }

    fn update(&mut self, frame: u64, embedding: Vec<f64>, capacity: usize) {
        self.memory.push_back((frame, embedding));
        while self.memory.len() > capacity {
            self.memory.pop_front();
        }
        self.last_frame = frame;
        self.hit_count += 1;
    }
}

/// Reduces the memory queue to a single embedding.
pub fn track_embedding(track: &Track, aggregation: Aggregation) -> Result<Vec<f64>> {
    let (_, newest) = track
        .memory
        .back()
        .ok_or_else(|| Error::State(format!("track {} has an empty memory", track.id)))?;
    let weighted = |weight: &dyn Fn(usize) -> f64| {
        let mut acc = vec![0.0; newest.len()];
        let mut total = 0.0;
        for (age, (_, e)) in track.memory.iter().rev().enumerate() {
            let w = weight(age);
            total += w;
            for (a, v) in acc.iter_mut().zip(e) {
                *a += w * v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= total);
        acc
    };
    Ok(match aggregation {
        Aggregation::Latest => newest.clone(),
        Aggregation::Mean => weighted(&|_| 1.0),
        Aggregation::Ewa { decay } => weighted(&|age| libm::pow(decay, age as f64)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Match-score threshold.
    pub beta: f64,
    /// Detection confidence needed to update a matched track.
    pub beta_obj: f64,
    /// Detection confidence needed to start a new track.
    pub gamma: f64,
    pub nms_iou: f64,
    pub memory_len: usize,
    /// Frames a track survives without an update.
    pub max_age: u64,
    /// Weight of the bi-softmax score; the cosine score gets the rest.
    pub score_mix: f64,
    pub aggregation: Aggregation,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            beta: 0.3,
            beta_obj: 0.5,
            gamma: 0.7,
            nms_iou: 0.5,
            memory_len: 10,
            max_age: 30,
            score_mix: 0.5,
            aggregation: Aggregation::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("beta", self.beta),
            ("beta_obj", self.beta_obj),
            ("gamma", self.gamma),
            ("nms_iou", self.nms_iou),
            ("score_mix", self.score_mix),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(config(key, format!("{v} is not in [0, 1]")));
            }
        }
        if self.memory_len == 0 {
            return Err(config("memory_len", "must be >= 1"));
        }
        match self.aggregation {
            Aggregation::Ewa { decay } if !(decay > 0.0 && decay <= 1.0) => {
                Err(config("decay", format!("{decay} is not in (0, 1]")))
            }
            _ => Ok(()),
        }
    }

    /// True when the creation threshold sits below the update threshold,
    /// which lets weak detections spawn tracks they could never extend.
    pub fn has_inverted_thresholds(&self) -> bool {
        self.gamma < self.beta_obj
    }
}

/// Detection order used everywhere: score descending, then box, then
/// embedding, then input index. Independent of input order for distinct
/// detections.
fn canonical_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        db.score
            .total_cmp(&da.score)
            .then_with(|| {
                [da.bbox.x, da.bbox.y, da.bbox.w, da.bbox.h]
                    .iter()
                    .zip([db.bbox.x, db.bbox.y, db.bbox.w, db.bbox.h].iter())
                    .map(|(p, q)| p.total_cmp(q))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
            .then_with(|| {
                da.embedding
                    .iter()
                    .zip(&db.embedding)
                    .map(|(p, q)| p.total_cmp(q))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
            .then(a.cmp(&b))
    });
    order
}

/// Greedy NMS. Returns the kept indices in canonical order.
pub fn duplicate_removal(dets: &[Detection], nms_iou: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in canonical_order(dets) {
        if kept.iter().all(|&k| iou(&dets[k].bbox, &dets[i].bbox) < nms_iou) {
            kept.push(i);
        }
    }
    kept
}

fn check_dims(dets: &[&[f64]], tracks: &[&[f64]]) -> Result<()> {
    let d = dets.first().or(tracks.first()).map_or(0, |v| v.len());
    if dets.iter().chain(tracks).any(|v| v.len() != d) {
        return Err(arg("embeddings of detections and tracks differ in dimension"));
    }
    Ok(())
}

/// Bi-softmax score `s1[r][t]`: mean of the softmax of `exp(q_r·q_t)` over
/// detections and over tracks. Raw dot products, no normalization.
pub fn bi_softmax_scores(dets: &[&[f64]], tracks: &[&[f64]]) -> Result<Matrix> {
    check_dims(dets, tracks)?;
    let (n, m) = (dets.len(), tracks.len());
    if n == 0 || m == 0 {
        return Ok(Matrix::zeros(n, m));
    }
    let mut dots = Matrix::zeros(n, m);
    for (r, d) in dets.iter().enumerate() {
        for (t, q) in tracks.iter().enumerate() {
            dots.set(r, t, math::dot(d, q));
        }
    }
    // log-normalizers over detections (per track) and over tracks (per detection)
    let col_lse: Vec<f64> = (0..m)
        .map(|t| math::log_sum_exp(&(0..n).map(|r| dots.get(r, t)).collect::<Vec<_>>()))
        .collect();
    let row_lse: Vec<f64> = (0..n).map(|r| math::log_sum_exp(dots.row(r))).collect();
    let mut s1 = Matrix::zeros(n, m);
    for r in 0..n {
        for t in 0..m {
            let x = dots.get(r, t);
            s1.set(r, t, 0.5 * (libm::exp(x - col_lse[t]) + libm::exp(x - row_lse[r])));
        }
    }
    Ok(s1)
}

/// Cosine similarity of every detection/track pair.
pub fn cosine_scores(dets: &[&[f64]], tracks: &[&[f64]]) -> Result<Matrix> {
    check_dims(dets, tracks)?;
    let mut s2 = Matrix::zeros(dets.len(), tracks.len());
    for (r, d) in dets.iter().enumerate() {
        for (t, q) in tracks.iter().enumerate() {
            s2.set(r, t, math::cosine_sim(d, q)?);
        }
    }
    Ok(s2)
}

/// `mix · s1 + (1 - mix) · s2`.
pub fn match_scores(s1: &Matrix, s2: &Matrix, score_mix: f64) -> Result<Matrix> {
    if s1.rows() != s2.rows() || s1.cols() != s2.cols() {
        return Err(arg(format!(
            "score matrices differ in shape: {}x{} vs {}x{}",
            s1.rows(),
            s1.cols(),
            s2.rows(),
            s2.cols()
        )));
    }
    let data = s1
        .as_slice()
        .iter()
        .zip(s2.as_slice())
        .map(|(a, b)| score_mix * a + (1.0 - score_mix) * b)
        .collect();
    Matrix::from_vec(s1.rows(), s1.cols(), data)
}

/// Tracker state for one sequence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackerState {
    /// Active tracks keyed by id.
    pub tracks: BTreeMap<u64, Track>,
    pub next_id: u64,
    /// Last processed frame, `None` before the first call.
    pub frame_cursor: Option<u64>,
}

impl TrackerState {
    pub fn new() -> Self {
        Self {
            tracks: BTreeMap::new(),
            next_id: 1,
            frame_cursor: None,
        }
    }
}

/// Outcome for one input detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    /// Removed as a duplicate of a higher-scoring detection.
    Suppressed,
    /// Below both the update and the creation guard.
    Unassigned,
    Matched(u64),
    Created(u64),
}

impl Assignment {
    pub fn track_id(self) -> Option<u64> {
        match self {
            Assignment::Matched(id) | Assignment::Created(id) => Some(id),
            _ => None,
        }
    }
}

/// Processes all detections of `frame`. The returned assignments are
/// indexed like `dets`.
pub fn associate_frame(
    state: &mut TrackerState,
    frame: u64,
    dets: &[Detection],
    cfg: &TrackerConfig,
) -> Result<Vec<Assignment>> {
    cfg.validate()?;
    if let Some(last) = state.frame_cursor {
        if frame <= last {
            return Err(Error::Sequencing { last, got: frame });
        }
    }
    for d in dets {
        if d.frame != frame {
            return Err(arg(format!(
                "detection of frame {} passed with frame {frame}",
                d.frame
            )));
        }
        d.validate()?;
    }

    let kept = duplicate_removal(dets, cfg.nms_iou);
    let mut out = vec![Assignment::Suppressed; dets.len()];

    let track_ids: Vec<u64> = state.tracks.keys().copied().collect();
    let track_embs = state
        .tracks
        .values()
        .map(|t| track_embedding(t, cfg.aggregation))
        .collect::<Result<Vec<_>>>()?;
    let scores = if kept.is_empty() || track_ids.is_empty() {
        Matrix::zeros(kept.len(), track_ids.len())
    } else {
        let det_embs: Vec<&[f64]> = kept.iter().map(|&i| dets[i].embedding.as_slice()).collect();
        let trk: Vec<&[f64]> = track_embs.iter().map(Vec::as_slice).collect();
        let s1 = bi_softmax_scores(&det_embs, &trk)?;
        let s2 = cosine_scores(&det_embs, &trk)?;
        match_scores(&s1, &s2, cfg.score_mix)?
    };

    let mut consumed = vec![false; track_ids.len()];
    for (row, &i) in kept.iter().enumerate() {
        let det = &dets[i];
        // best unconsumed track; ties go to the smaller id (ids ascend with column)
        let mut best: Option<(usize, f64)> = None;
        for (col, _) in track_ids.iter().enumerate() {
            if consumed[col] {
                continue;
            }
            let s = scores.get(row, col);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((col, s));
            }
        }
        let c = best.map_or(f64::NEG_INFINITY, |(_, s)| s);
        out[i] = match best {
            Some((col, _)) if c > cfg.beta && det.score > cfg.beta_obj => {
                consumed[col] = true;
                let id = track_ids[col];
                state
                    .tracks
                    .get_mut(&id)
                    .expect("active track")
                    .update(frame, det.embedding.clone(), cfg.memory_len);
                Assignment::Matched(id)
            }
            _ if det.score > cfg.gamma => {
                let id = state.next_id;
                state.next_id += 1;
                state.tracks.insert(id, Track::new(id, frame, det.embedding.clone()));
                Assignment::Created(id)
            }
            _ => Assignment::Unassigned,
        };
    }

    state.tracks.retain(|_, t| frame - t.last_frame <= cfg.max_age);
    state.frame_cursor = Some(frame);
    Ok(out)
}

/// One emitted track record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub frame: u64,
    pub id: u64,
    pub bbox: BBox,
    pub score: f64,
}

/// Result of running the tracker over a sequence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceOutput {
    pub records: Vec<TrackRecord>,
    pub trajectories: TrajectorySet,
}

/// Drives [`associate_frame`] over `(frame, detections)` pairs in order.
pub fn run_sequence<I>(frames: I, cfg: &TrackerConfig) -> Result<SequenceOutput>
where
    I: IntoIterator<Item = (u64, Vec<Detection>)>,
{
    let mut state = TrackerState::new();
    let mut out = SequenceOutput::default();
    for (frame, dets) in frames {
        let assigned = associate_frame(&mut state, frame, &dets, cfg)?;
        let mut rows: Vec<TrackRecord> = assigned
            .iter()
            .zip(&dets)
            .filter_map(|(a, d)| {
                a.track_id().map(|id| TrackRecord {
                    frame,
                    id,
                    bbox: d.bbox,
                    score: d.score,
                })
            })
            .collect();
        rows.sort_by_key(|r| r.id);
        for r in rows {
            out.trajectories.push(r.id, r.frame, r.bbox)?;
            out.records.push(r);
        }
    }
    Ok(out)
}
