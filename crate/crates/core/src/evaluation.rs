//! Mask-level precision/recall against ground-truth moving regions and object-level
//! clustering agreement.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::clustering::Labeling;
use crate::cues::MaskFrame;
use crate::error::{Error, Result};

/// Minimum-cost assignment of rows to distinct columns for `rows <= cols`.
/// Returns the column of each row.
fn hungarian(cost: &[Vec<f64>], cols: usize) -> Vec<usize> {
    let n = cost.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=cols {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=cols {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Maximum-weight one-to-one assignment; zero-weight pairs are left unmatched.
pub fn max_weight_matching(weights: &[Vec<f64>], cols: usize) -> Vec<(usize, usize)> {
    let rows = weights.len();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let pairs: Vec<(usize, usize)> = if rows <= cols {
        let cost: Vec<Vec<f64>> = weights.iter().map(|r| r.iter().map(|w| -w).collect()).collect();
        hungarian(&cost, cols).into_iter().enumerate().collect()
    } else {
        let cost: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| -weights[i][j]).collect()).collect();
        let mut p: Vec<(usize, usize)> = hungarian(&cost, rows).into_iter().enumerate().map(|(j, i)| (i, j)).collect();
        p.sort_unstable();
        p
    };
    pairs.into_iter().filter(|&(i, j)| weights[i][j] > 0.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    pub pred: u32,
    pub gt: u32,
    pub intersection: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Matching {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_pred: Vec<u32>,
    pub unmatched_gt: Vec<u32>,
    pub pred_pixels: usize,
    pub gt_pixels: usize,
}

impl Matching {
    pub fn matched_pixels(&self) -> usize {
        self.pairs.iter().map(|p| p.intersection).sum()
    }
}

/// Optimal IoU matching between nonzero regions of `pred` and `gt`.
pub fn match_masks(pred: &MaskFrame, gt: &MaskFrame) -> Result<Matching> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut pred_area: BTreeMap<u32, usize> = BTreeMap::new();
    let mut gt_area: BTreeMap<u32, usize> = BTreeMap::new();
    let mut inter: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if p != 0 {
            *pred_area.entry(p).or_default() += 1;
        }
        if g != 0 {
            *gt_area.entry(g).or_default() += 1;
        }
        if p != 0 && g != 0 {
            *inter.entry((p, g)).or_default() += 1;
        }
    }
    let pred_ids: Vec<u32> = pred_area.keys().copied().collect();
    let gt_ids: Vec<u32> = gt_area.keys().copied().collect();
    let iou = |p: u32, g: u32| {
        let i = inter.get(&(p, g)).copied().unwrap_or(0);
        if i == 0 {
            0.0
        } else {
            i as f64 / (pred_area[&p] + gt_area[&g] - i) as f64
        }
    };
    let weights: Vec<Vec<f64>> = pred_ids.iter().map(|&p| gt_ids.iter().map(|&g| iou(p, g)).collect()).collect();
    let assigned = max_weight_matching(&weights, gt_ids.len());
    let pairs: Vec<MatchedPair> = assigned
        .iter()
        .map(|&(i, j)| MatchedPair {
            pred: pred_ids[i],
            gt: gt_ids[j],
            intersection: inter[&(pred_ids[i], gt_ids[j])],
            iou: weights[i][j],
        })
        .collect();
    let unmatched_pred = pred_ids.iter().copied().filter(|p| !pairs.iter().any(|m| m.pred == *p)).collect();
    let unmatched_gt = gt_ids.iter().copied().filter(|g| !pairs.iter().any(|m| m.gt == *g)).collect();
    Ok(Matching {
        pairs,
        unmatched_pred,
        unmatched_gt,
        pred_pixels: pred_area.values().sum(),
        gt_pixels: gt_area.values().sum(),
    })
}

pub fn f_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameScore {
    pub frame: usize,
    pub pu: f64,
    pub ru: f64,
    pub fu: f64,
    pub pred_pixels: usize,
    pub gt_pixels: usize,
    pub matched_pixels: usize,
    pub matched_regions: usize,
    pub unmatched_pred: usize,
    pub unmatched_gt: usize,
}

pub fn score_frame(frame: usize, pred: &MaskFrame, gt: &MaskFrame) -> Result<FrameScore> {
    let m = match_masks(pred, gt)?;
    let hit = m.matched_pixels() as f64;
    let pu = if m.pred_pixels == 0 {
        if m.gt_pixels == 0 { 1.0 } else { 0.0 }
    } else {
        hit / m.pred_pixels as f64
    };
    let ru = if m.gt_pixels == 0 { 1.0 } else { hit / m.gt_pixels as f64 };
    Ok(FrameScore {
        frame,
        pu,
        ru,
        fu: f_score(pu, ru),
        pred_pixels: m.pred_pixels,
        gt_pixels: m.gt_pixels,
        matched_pixels: m.matched_pixels(),
        matched_regions: m.pairs.len(),
        unmatched_pred: m.unmatched_pred.len(),
        unmatched_gt: m.unmatched_gt.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub pu: f64,
    pub ru: f64,
    pub fu: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ari: Option<f64>,
    /// Frames entering the sequence averages.
    pub scored_frames: usize,
    pub frames: Vec<FrameScore>,
}

impl EvalReport {
    pub fn with_ari(mut self, ari: f64) -> Self {
        self.ari = Some(ari);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "frame,pu,ru,fu,pred_pixels,gt_pixels,matched_pixels,matched_regions,unmatched_pred,unmatched_gt\n",
        );
        for f in &self.frames {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{},{},{},{},{},{}",
                f.frame,
                f.pu,
                f.ru,
                f.fu,
                f.pred_pixels,
                f.gt_pixels,
                f.matched_pixels,
                f.matched_regions,
                f.unmatched_pred,
                f.unmatched_gt
            );
        }
        out
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Per-frame Pu/Ru/Fu averaged over frames whose ground truth is nonempty
/// (over all frames when none is).
pub fn prf_metrics(pred: &[MaskFrame], gt: &[MaskFrame]) -> Result<EvalReport> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predicted frames but {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    let frames: Vec<FrameScore> = pred
        .par_iter()
        .zip(gt)
        .enumerate()
        .map(|(i, (p, g))| score_frame(i, p, g))
        .collect::<Result<_>>()?;
    let with_gt: Vec<&FrameScore> = frames.iter().filter(|f| f.gt_pixels > 0).collect();
    let scored: Vec<&FrameScore> = if with_gt.is_empty() { frames.iter().collect() } else { with_gt };
    let n = scored.len().max(1) as f64;
    let pu = scored.iter().map(|f| f.pu).sum::<f64>() / n;
    let ru = scored.iter().map(|f| f.ru).sum::<f64>() / n;
    Ok(EvalReport {
        pu,
        ru,
        fu: f_score(pu, ru),
        ari: None,
        scored_frames: scored.len(),
        frames,
    })
}

fn pairs(n: usize) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index of two labelings over the same track set.
pub fn adjusted_rand(pred: &Labeling, gt: &Labeling) -> Result<f64> {
    if pred.track_ids() != gt.track_ids() {
        return Err(Error::TrackSetMismatch);
    }
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for (id, &p) in pred.groups() {
        let g = gt.group_of(*id).expect("same track set");
        *table.entry((p, g)).or_default() += 1;
        *rows.entry(p).or_default() += 1;
        *cols.entry(g).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| pairs(c)).sum();
    let a: f64 = rows.values().map(|&c| pairs(c)).sum();
    let b: f64 = cols.values().map(|&c| pairs(c)).sum();
    let total = pairs(pred.len());
    // Numerator and denominator multiplied through by the pair count, so both stay integral.
    let num = index * total - a * b;
    let den = 0.5 * (a + b) * total - a * b;
    if den == 0.0 {
        // Both partitions trivial: agreement is all-or-nothing.
        let identical = table.len() == rows.len() && table.len() == cols.len();
        return Ok(if identical { 1.0 } else { 0.0 });
    }
    Ok(num / den)
}
