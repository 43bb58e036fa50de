use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{arg, Result};
use crate::geometry::BBox;

/// Track id to time-ordered `(frame, box)` samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectorySet {
    tracks: BTreeMap<u64, Vec<(u64, BBox)>>,
}

impl TrajectorySet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a sample; frames must strictly increase per id.
    pub fn push(&mut self, id: u64, frame: u64, bbox: BBox) -> Result<()> {
        let t = self.tracks.entry(id).or_default();
        if let Some(&(last, _)) = t.last() {
            if frame <= last {
                return Err(arg(format!(
                    "trajectory {id}: frame {frame} does not follow frame {last}"
                )));
            }
        }
        t.push((frame, bbox));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&[(u64, BBox)]> {
        self.tracks.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[(u64, BBox)])> {
        self.tracks.iter().map(|(&id, t)| (id, t.as_slice()))
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.tracks.keys().copied()
    }

    pub fn remove(&mut self, id: u64) -> Option<Vec<(u64, BBox)>> {
        self.tracks.remove(&id)
    }

    pub fn total_boxes(&self) -> usize {
        self.tracks.values().map(Vec::len).sum()
    }

    /// All `(id, box)` samples of every frame.
    pub fn by_frame(&self) -> BTreeMap<u64, Vec<(u64, BBox)>> {
        let mut out: BTreeMap<u64, Vec<(u64, BBox)>> = BTreeMap::new();
        for (&id, t) in &self.tracks {
            for &(f, b) in t {
                out.entry(f).or_default().push((id, b));
            }
        }
        out
    }
}
