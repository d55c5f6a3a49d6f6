//! Proposal post-processing: overlap suppression, oversized-mask removal, and
//! the per-frame-pair visibility table used to normalize similarities.

use std::collections::BTreeSet;

use crate::cues::{MaskFrame, Sequence};
use crate::error::{Error, Result};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MAX_AREA_FRACTION: f64 = 0.5;
pub const DEFAULT_MIN_PIXELS: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..width * height).map(|i| f(i % width, i / width)).collect();
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// `|a ∩ b| / |a ∪ b|`, or 0 when both are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::DimensionMismatch(format!(
            "masks are {}x{} and {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Possibly overlapping per-track masks for one frame, as produced by an upstream segmenter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProposalSet {
    pub width: usize,
    pub height: usize,
    pub proposals: Vec<(u32, BinaryMask)>,
}

impl From<&MaskFrame> for ProposalSet {
    fn from(frame: &MaskFrame) -> Self {
        let (w, h) = (frame.width(), frame.height());
        let proposals = frame
            .track_ids()
            .into_iter()
            .map(|id| {
                let bits = frame.labels().iter().map(|&l| l == id).collect();
                (
                    id,
                    BinaryMask {
                        width: w,
                        height: h,
                        bits,
                    },
                )
            })
            .collect();
        Self {
            width: w,
            height: h,
            proposals,
        }
    }
}

impl ProposalSet {
    /// Flattens to a label map. Larger proposals are painted first so smaller ones stay visible
    /// where they overlap; equal areas paint the higher id first.
    pub fn to_mask_frame(&self) -> MaskFrame {
        let mut order: Vec<&(u32, BinaryMask)> = self.proposals.iter().collect();
        order.sort_by_key(|(id, m)| (std::cmp::Reverse(m.area()), std::cmp::Reverse(*id)));
        let mut labels = vec![0u32; self.width * self.height];
        for (id, mask) in order {
            for (label, _) in labels.iter_mut().zip(&mask.bits).filter(|(_, b)| **b) {
                *label = *id;
            }
        }
        MaskFrame::new(self.width, self.height, labels).expect("dimensions preserved")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub iou_threshold: f64,
    pub max_area_fraction: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            max_area_fraction: DEFAULT_MAX_AREA_FRACTION,
        }
    }
}

/// Track ids removed by the oversize and overlap rules, both evaluated on the original set.
fn suppressed_ids(set: &ProposalSet, cfg: &FilterConfig) -> BTreeSet<u32> {
    let limit = cfg.max_area_fraction * (set.width * set.height) as f64;
    let areas: Vec<usize> = set.proposals.iter().map(|(_, m)| m.area()).collect();
    let mut removed = BTreeSet::new();
    for ((id, _), &area) in set.proposals.iter().zip(&areas) {
        if area as f64 > limit {
            removed.insert(*id);
        }
    }
    for i in 0..set.proposals.len() {
        for j in i + 1..set.proposals.len() {
            let (id_i, mask_i) = &set.proposals[i];
            let (id_j, mask_j) = &set.proposals[j];
            let iou = mask_iou(mask_i, mask_j).expect("same frame");
            if iou > cfg.iou_threshold {
                let loser = match areas[i].cmp(&areas[j]) {
                    std::cmp::Ordering::Less => *id_i,
                    std::cmp::Ordering::Greater => *id_j,
                    std::cmp::Ordering::Equal => (*id_i).max(*id_j),
                };
                removed.insert(loser);
            }
        }
    }
    removed
}

pub fn filter_proposal_set(set: &ProposalSet, cfg: &FilterConfig) -> ProposalSet {
    let removed = suppressed_ids(set, cfg);
    ProposalSet {
        width: set.width,
        height: set.height,
        proposals: set
            .proposals
            .iter()
            .filter(|(id, _)| !removed.contains(id))
            .cloned()
            .collect(),
    }
}

/// Applies both suppression rules to one frame. Removed tracks become unassigned (0).
pub fn filter_proposals(frame: &MaskFrame, cfg: &FilterConfig) -> MaskFrame {
    let removed = suppressed_ids(&ProposalSet::from(frame), cfg);
    if removed.is_empty() {
        return frame.clone();
    }
    let labels = frame
        .labels()
        .iter()
        .map(|l| if removed.contains(l) { 0 } else { *l })
        .collect();
    MaskFrame::new(frame.width(), frame.height(), labels).expect("dimensions preserved")
}

pub fn filter_sequence(seq: &Sequence, cfg: &FilterConfig) -> Result<Sequence> {
    let masks = seq.masks().iter().map(|m| filter_proposals(m, cfg)).collect();
    seq.with_masks(masks)
}

/// Per-track pixel counts per frame and visibility per frame pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackTable {
    track_ids: Vec<u32>,
    /// `[track][frame]`
    pixel_counts: Vec<Vec<usize>>,
    /// `[track][pair]`
    visible: Vec<Vec<bool>>,
    min_pixels: usize,
}

impl TrackTable {
    pub fn track_ids(&self) -> &[u32] {
        &self.track_ids
    }

    pub fn track_count(&self) -> usize {
        self.track_ids.len()
    }

    pub fn pair_count(&self) -> usize {
        self.visible.first().map_or(0, Vec::len)
    }

    pub fn min_pixels(&self) -> usize {
        self.min_pixels
    }

    pub fn pixel_count(&self, track: usize, frame: usize) -> usize {
        self.pixel_counts[track][frame]
    }

    pub fn visible(&self, track: usize, pair: usize) -> bool {
        self.visible[track][pair]
    }

    /// Indices of tracks visible in `pair`, ascending.
    pub fn visible_in(&self, pair: usize) -> Vec<usize> {
        (0..self.track_ids.len())
            .filter(|&t| self.visible[t][pair])
            .collect()
    }

    /// Indices of tracks visible in at least one pair.
    pub fn active_tracks(&self) -> Vec<usize> {
        (0..self.track_ids.len())
            .filter(|&t| self.visible[t].iter().any(|v| *v))
            .collect()
    }

    /// Table over an explicit visibility grid, for callers that manage pixel counts themselves.
    pub fn from_visibility(track_ids: Vec<u32>, visible: Vec<Vec<bool>>) -> Self {
        let frames = visible.first().map_or(0, |v| v.len() + 1);
        let pixel_counts = vec![vec![0; frames]; track_ids.len()];
        Self {
            track_ids,
            pixel_counts,
            visible,
            min_pixels: 0,
        }
    }
}

pub fn build_track_table(seq: &Sequence, min_pixels: usize) -> TrackTable {
    let ids = seq.track_ids().to_vec();
    let index = |id: u32| ids.binary_search(&id).ok();
    let mut pixel_counts = vec![vec![0usize; seq.frame_count()]; ids.len()];
    for (f, mask) in seq.masks().iter().enumerate() {
        for &label in mask.labels() {
            if let Some(t) = (label != 0).then(|| index(label)).flatten() {
                pixel_counts[t][f] += 1;
            }
        }
    }
    let visible = pixel_counts
        .iter()
        .map(|counts| {
            (0..seq.pair_count())
                .map(|m| counts[m] >= min_pixels && counts[m + 1] >= min_pixels)
                .collect()
        })
        .collect();
    TrackTable {
        track_ids: ids,
        pixel_counts,
        visible,
        min_pixels,
    }
}
