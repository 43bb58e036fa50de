//! Identity metrics: IDF1 under a global trajectory matching, identity
//! switches, and link-level association accuracy.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::hungarian::hungarian;
use super::TrajectorySet;
use crate::embed::Matrix;
use crate::geometry::{iou, BBox};

/// Frames where both trajectories have a box and the boxes overlap at
/// `IoU >= iou_thresh`. Both inputs must be frame-sorted.
pub fn frame_overlap(gt: &[(u64, BBox)], pred: &[(u64, BBox)], iou_thresh: f64) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < gt.len() && j < pred.len() {
        match gt[i].0.cmp(&pred[j].0) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                if iou(&gt[i].1, &pred[j].1) >= iou_thresh {
                    n += 1;
                }
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Counts of one evaluated sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SequenceCounts {
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
    pub id_switches: usize,
    /// Consecutive-frame pairs of ground-truth trajectories.
    pub links: usize,
    /// Links whose two frames are matched to the same predicted id.
    pub correct_links: usize,
}

impl SequenceCounts {
    /// `2 IDTP / (2 IDTP + IDFP + IDFN)`; 1 when there is nothing to match.
    pub fn idf1(&self) -> f64 {
        let denom = 2 * self.idtp + self.idfp + self.idfn;
        if denom == 0 {
            1.0
        } else {
            (2 * self.idtp) as f64 / denom as f64
        }
    }

    pub fn assoc_accuracy(&self) -> f64 {
        if self.links == 0 {
            1.0
        } else {
            self.correct_links as f64 / self.links as f64
        }
    }

    fn add(&mut self, o: &SequenceCounts) {
        self.idtp += o.idtp;
        self.idfp += o.idfp;
        self.idfn += o.idfn;
        self.id_switches += o.id_switches;
        self.links += o.links;
        self.correct_links += o.correct_links;
    }
}

/// Metrics over one or more sequences; totals are pooled counts.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    pub idf1: f64,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
    pub id_switches: usize,
    pub assoc_accuracy: f64,
    pub per_sequence: Vec<SequenceCounts>,
}

impl MatchReport {
    pub fn from_sequences(per_sequence: Vec<SequenceCounts>) -> Self {
        let mut t = SequenceCounts::default();
        per_sequence.iter().for_each(|s| t.add(s));
        Self {
            idf1: t.idf1(),
            idtp: t.idtp,
            idfp: t.idfp,
            idfn: t.idfn,
            id_switches: t.id_switches,
            assoc_accuracy: t.assoc_accuracy(),
            per_sequence,
        }
    }
}

/// IDTP of the globally optimal one-to-one matching between trajectories.
fn identity_true_positives(gt: &TrajectorySet, pred: &TrajectorySet, iou_thresh: f64) -> usize {
    let g: Vec<&[(u64, BBox)]> = gt.iter().map(|(_, t)| t).collect();
    let p: Vec<&[(u64, BBox)]> = pred.iter().map(|(_, t)| t).collect();
    if g.is_empty() || p.is_empty() {
        return 0;
    }
    let mut overlap = Matrix::zeros(g.len(), p.len());
    for (i, gt_t) in g.iter().enumerate() {
        for (j, pr_t) in p.iter().enumerate() {
            overlap.set(i, j, -(frame_overlap(gt_t, pr_t, iou_thresh) as f64));
        }
    }
    let a = hungarian(&overlap);
    a.pairs().map(|(i, j)| -overlap.get(i, j) as usize).sum()
}

/// Per frame, the predicted id matched to each ground-truth id
/// (maximum total IoU among pairs at or above the threshold).
fn frame_matches(gt: &TrajectorySet, pred: &TrajectorySet, iou_thresh: f64) -> BTreeMap<(u64, u64), u64> {
    const FORBIDDEN: f64 = 1e6;
    let pred_frames = pred.by_frame();
    let mut out = BTreeMap::new();
    for (frame, g) in gt.by_frame() {
        let Some(p) = pred_frames.get(&frame) else { continue };
        let mut cost = Matrix::zeros(g.len(), p.len());
        for (i, (_, gb)) in g.iter().enumerate() {
            for (j, (_, pb)) in p.iter().enumerate() {
                let v = iou(gb, pb);
                cost.set(i, j, if v >= iou_thresh { -v } else { FORBIDDEN });
            }
        }
        for (i, j) in hungarian(&cost).pairs() {
            if cost.get(i, j) < FORBIDDEN {
                out.insert((g[i].0, frame), p[j].0);
            }
        }
    }
    out
}

/// Per ground-truth trajectory, the number of frames where its matched
/// predicted id differs from the previous matched id.
pub fn id_switches(gt: &TrajectorySet, pred: &TrajectorySet, iou_thresh: f64) -> usize {
    link_counts(gt, pred, iou_thresh).id_switches
}

fn link_counts(gt: &TrajectorySet, pred: &TrajectorySet, iou_thresh: f64) -> SequenceCounts {
    let matches = frame_matches(gt, pred, iou_thresh);
    let mut c = SequenceCounts::default();
    for (id, t) in gt.iter() {
        let mut last: Option<u64> = None;
        for w in t.windows(2) {
            c.links += 1;
            let a = matches.get(&(id, w[0].0));
            let b = matches.get(&(id, w[1].0));
            if a.is_some() && a == b {
                c.correct_links += 1;
            }
        }
        for &(f, _) in t {
            if let Some(&p) = matches.get(&(id, f)) {
                if last.is_some_and(|l| l != p) {
                    c.id_switches += 1;
                }
                last = Some(p);
            }
        }
    }
    c
}

/// All counts of one sequence.
pub fn evaluate_sequence(gt: &TrajectorySet, pred: &TrajectorySet, iou_thresh: f64) -> SequenceCounts {
    let idtp = identity_true_positives(gt, pred, iou_thresh);
    SequenceCounts {
        idtp,
        idfp: pred.total_boxes() - idtp,
        idfn: gt.total_boxes() - idtp,
        ..link_counts(gt, pred, iou_thresh)
    }
}

/// IDF1 and companion counters for one sequence.
pub fn idf1(gt: &TrajectorySet, pred: &TrajectorySet, iou_thresh: f64) -> MatchReport {
    MatchReport::from_sequences(alloc::vec![evaluate_sequence(gt, pred, iou_thresh)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(frames: core::ops::Range<u64>, dx: f64) -> Vec<(u64, BBox)> {
        frames.map(|f| (f, BBox::new(f as f64 * 0.1 + dx, 0.0, 1.0, 1.0))).collect()
    }

    fn set(items: &[(u64, Vec<(u64, BBox)>)]) -> TrajectorySet {
        let mut s = TrajectorySet::new();
        for (id, t) in items {
            for &(f, b) in t {
                s.push(*id, f, b).unwrap();
            }
        }
        s
    }

    #[test]
    fn overlap_cases() {
        let a = traj(1..11, 0.0);
        assert_eq!(frame_overlap(&a, &a, 0.5), 10);
        assert_eq!(frame_overlap(&a, &traj(20..30, 0.0), 0.5), 0);
        let mut half = traj(1..6, 0.0);
        half.extend(traj(6..11, 5.0));
        assert_eq!(frame_overlap(&a, &half, 0.5), 5);
    }

    #[test]
    fn perfect_and_empty() {
        let gt = set(&[(1, traj(1..11, 0.0)), (2, traj(1..11, 3.0))]);
        let r = idf1(&gt, &gt, 0.5);
        assert_eq!(r.idf1, 1.0);
        assert_eq!(r.id_switches, 0);
        assert_eq!(r.assoc_accuracy, 1.0);
        let r = idf1(&gt, &TrajectorySet::new(), 0.5);
        assert_eq!(r.idf1, 0.0);
        assert_eq!(r.idfn, 20);
        let r = idf1(&TrajectorySet::new(), &TrajectorySet::new(), 0.5);
        assert_eq!((r.idf1, r.idtp, r.idfp, r.idfn), (1.0, 0, 0, 0));
    }

    #[test]
    fn split_trajectory() {
        let gt = set(&[(1, traj(1..11, 0.0))]);
        let pred = set(&[(7, traj(1..6, 0.0)), (9, traj(6..11, 0.0))]);
        let r = idf1(&gt, &pred, 0.5);
        assert_eq!((r.idtp, r.idfp, r.idfn), (5, 5, 5));
        assert_eq!(r.idf1, 0.5);
        assert_eq!(r.id_switches, 1);
        assert_eq!(r.per_sequence[0].links, 9);
        assert_eq!(r.per_sequence[0].correct_links, 8);
    }

    #[test]
    fn back_and_forth_switches() {
        let gt = set(&[(1, traj(1..10, 0.0))]);
        let pred = set(&[(2, [traj(1..4, 0.0), traj(7..10, 0.0)].concat()), (3, traj(4..7, 0.0))]);
        assert_eq!(id_switches(&gt, &pred, 0.5), 2);
    }
}
