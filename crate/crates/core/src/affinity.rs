//! Ordered-residual-kernel affinity between tracked objects.
//!
//! For every frame pair, each visible object's model is evaluated on every
//! visible object's pixels. The `t` objects a model explains best are its
//! inliers; two objects vote for each other in proportion to how many
//! inliers their models share. Votes are divided by `t` so each frame pair
//! contributes at most one, then averaged over the pairs where both objects
//! are visible.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::motion_model::{model_residual, FittedModel, PixelSample};
use crate::proposal_filter::TrackTable;

pub const DEFAULT_ORK_FRACTION: f64 = 0.25;

/// Residuals at or below this value (normalized flow units squared) rank as exact ties.
/// It sits well above single-precision storage noise of the cue files.
pub const RESIDUAL_TIE_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityConfig {
    /// Inlier count as a fraction of the objects visible in a pair.
    pub ork_fraction: f64,
    pub tie_floor: f64,
}

impl Default for AffinityConfig {
    fn default() -> Self {
        Self {
            ork_fraction: DEFAULT_ORK_FRACTION,
            tie_floor: RESIDUAL_TIE_FLOOR,
        }
    }
}

/// Inlier count for a pair with `visible` objects: `max(1, round(fraction · visible))`, capped at `visible`.
pub fn ork_threshold(fraction: f64, visible: usize) -> usize {
    let t = (fraction * visible as f64).round();
    (t.max(1.0) as usize).min(visible.max(1))
}

/// `r[i][n]`: mean squared error of object `i`'s model on object `n`'s pixels in one frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMatrix {
    pub pair: usize,
    n: usize,
    entries: Vec<Option<f64>>,
}

impl ResidualMatrix {
    pub fn from_entries(pair: usize, n: usize, entries: Vec<Option<f64>>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "{} residual entries for {n} objects",
                entries.len()
            )));
        }
        if entries.iter().flatten().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::NumericalFailure("residuals must be finite and nonnegative".into()));
        }
        Ok(Self { pair, n, entries })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, model: usize, data: usize) -> Option<f64> {
        self.entries[model * self.n + data]
    }

    pub fn row(&self, model: usize) -> &[Option<f64>] {
        &self.entries[model * self.n..(model + 1) * self.n]
    }

    /// Objects with a model in this pair.
    pub fn visible(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.get(i, i).is_some()).collect()
    }
}

/// Cross-evaluates every visible model on every visible sample. `None` marks an absent object.
pub fn residual_matrix(
    pair: usize,
    models: &[Option<FittedModel>],
    samples: &[Option<PixelSample>],
) -> Result<ResidualMatrix> {
    let n = models.len();
    if samples.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} models but {} samples",
            samples.len()
        )));
    }
    let entries: Vec<Option<f64>> = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / n, k % n);
            match (&models[i], &samples[i], &samples[j]) {
                (Some(model), Some(_), Some(sample)) => Some(model_residual(model, sample)),
                _ => None,
            }
        })
        .collect();
    ResidualMatrix::from_entries(pair, n, entries)
}

/// Binary inlier membership of one object's model in one frame pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InlierVector {
    pub object: usize,
    pub pair: usize,
    pub bits: Vec<bool>,
}

impl InlierVector {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn dot(&self, other: &InlierVector) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count()
    }
}

/// Marks the `min(t, present)` smallest present residuals. Values at or below `tie_floor`
/// compare equal; ties go to the lower index.
pub fn ork_inliers_with_floor(row: &[Option<f64>], t: usize, tie_floor: f64) -> Vec<bool> {
    let mut present: Vec<(usize, f64)> = row
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (i, if r <= tie_floor { 0.0 } else { r })))
        .collect();
    present.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut bits = vec![false; row.len()];
    for (i, _) in present.into_iter().take(t.max(1)) {
        bits[i] = true;
    }
    bits
}

/// Exact-comparison ranking: the `min(t, present)` smallest residuals, ties to the lower index.
pub fn ork_inliers(row: &[Option<f64>], t: usize) -> Vec<bool> {
    ork_inliers_with_floor(row, t, f64::NEG_INFINITY)
}

/// Inlier vectors of every visible object in one pair.
pub fn inlier_vectors(r: &ResidualMatrix, cfg: &AffinityConfig) -> Vec<InlierVector> {
    let visible = r.visible();
    let t = ork_threshold(cfg.ork_fraction, visible.len());
    visible
        .into_iter()
        .map(|i| InlierVector {
            object: i,
            pair: r.pair,
            bits: ork_inliers_with_floor(r.row(i), t, cfg.tie_floor),
        })
        .collect()
}

/// Uncapped pairwise dot products `vᵢᵀvⱼ` of one pair's inlier vectors, indexed by object.
pub fn raw_votes(vectors: &[InlierVector], n: usize) -> DMatrix<f64> {
    let mut votes = DMatrix::zeros(n, n);
    for a in vectors {
        for b in vectors {
            votes[(a.object, b.object)] = a.dot(b) as f64;
        }
    }
    votes
}

/// Accumulated votes and co-visibility counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    sum: Vec<f64>,
    cnt: Vec<u32>,
}

impl SimilarityMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            sum: vec![0.0; n * n],
            cnt: vec![0; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn sum(&self, i: usize, j: usize) -> f64 {
        self.sum[i * self.n + j]
    }

    pub fn count(&self, i: usize, j: usize) -> u32 {
        self.cnt[i * self.n + j]
    }

    /// Normalized similarity `sum / cnt`, zero where the pair was never co-visible.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.value(i, j), self.value(j, i));
        0.5 * (a + b)
    }

    fn value(&self, i: usize, j: usize) -> f64 {
        let c = self.cnt[i * self.n + j];
        if c == 0 {
            0.0
        } else {
            self.sum[i * self.n + j] / f64::from(c)
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Restriction to the listed objects, in the given order.
    pub fn submatrix(&self, objects: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(objects.len(), objects.len(), |a, b| {
            self.get(objects[a], objects[b])
        })
    }
}

/// Sums capped votes `vᵢᵀvⱼ / t` per pair over the pairs in which both objects are visible.
pub fn accumulate_similarity(vectors: &[InlierVector], table: &TrackTable) -> SimilarityMatrix {
    let n = table.track_count();
    let mut sim = SimilarityMatrix::zeros(n);
    for pair in 0..table.pair_count() {
        let visible = table.visible_in(pair);
        for &i in &visible {
            for &j in &visible {
                sim.cnt[i * n + j] += 1;
            }
        }
        let in_pair: Vec<&InlierVector> = vectors
            .iter()
            .filter(|v| v.pair == pair && table.visible(v.object, pair))
            .collect();
        for a in &in_pair {
            let t = a.count().max(1) as f64;
            for b in &in_pair {
                sim.sum[a.object * n + b.object] += a.dot(b) as f64 / t;
            }
        }
    }
    sim
}

/// Plain-text dump: a header line of track ids followed by one row per track.
pub fn format_affinity(sim: &SimilarityMatrix, track_ids: &[u32]) -> String {
    let mut out = String::from("# track");
    for id in track_ids {
        let _ = write!(out, " {id}");
    }
    out.push('\n');
    for i in 0..sim.size() {
        let _ = write!(out, "{}", track_ids.get(i).copied().unwrap_or_default());
        for j in 0..sim.size() {
            let _ = write!(out, " {:.9}", sim.get(i, j));
        }
        out.push('\n');
    }
    out
}

pub fn write_affinity(path: impl AsRef<Path>, sim: &SimilarityMatrix, track_ids: &[u32]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_affinity(sim, track_ids)).map_err(|e| Error::io(path, e))
}
