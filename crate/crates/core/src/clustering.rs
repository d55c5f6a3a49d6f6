//! Spectral clustering of the object similarity matrix and rendering of group masks.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cues::{MaskFrame, Sequence};
use crate::error::{Error, Result};

pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_RESTARTS: usize = 10;
pub const LABELING_VERSION: u32 = 1;

/// Track id → motion group in `0..num_groups`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    groups: BTreeMap<u32, usize>,
    num_groups: usize,
    background_group: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelingFile {
    version: u32,
    num_groups: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    background_group: Option<usize>,
    #[serde(default)]
    tracks: Vec<TrackEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackEntry {
    id: u32,
    group: usize,
}

impl Labeling {
    /// `num_groups` is one past the largest label.
    pub fn new(groups: BTreeMap<u32, usize>) -> Self {
        let num_groups = groups.values().map(|g| g + 1).max().unwrap_or(0);
        Self {
            groups,
            num_groups,
            background_group: None,
        }
    }

    pub fn from_pairs(track_ids: &[u32], labels: &[usize]) -> Self {
        Self::new(track_ids.iter().copied().zip(labels.iter().copied()).collect())
    }

    pub fn with_num_groups(mut self, num_groups: usize) -> Self {
        self.num_groups = self.num_groups.max(num_groups);
        self
    }

    pub fn with_background(mut self, group: Option<usize>) -> Self {
        self.background_group = group;
        self
    }

    pub fn group_of(&self, track: u32) -> Option<usize> {
        self.groups.get(&track).copied()
    }

    pub fn groups(&self) -> &BTreeMap<u32, usize> {
        &self.groups
    }

    pub fn track_ids(&self) -> Vec<u32> {
        self.groups.keys().copied().collect()
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn background_group(&self) -> Option<usize> {
        self.background_group
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Keeps only the listed tracks; group numbers are unchanged.
    pub fn restricted_to(&self, tracks: &[u32]) -> Self {
        let keep: BTreeSet<u32> = tracks.iter().copied().collect();
        Self {
            groups: self
                .groups
                .iter()
                .filter(|(id, _)| keep.contains(id))
                .map(|(id, g)| (*id, *g))
                .collect(),
            num_groups: self.num_groups,
            background_group: self.background_group,
        }
    }

    pub fn to_toml(&self) -> String {
        let file = LabelingFile {
            version: LABELING_VERSION,
            num_groups: self.num_groups,
            background_group: self.background_group,
            tracks: self
                .groups
                .iter()
                .map(|(&id, &group)| TrackEntry { id, group })
                .collect(),
        };
        toml::to_string(&file).expect("labeling serializes")
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: LabelingFile = toml::from_str(&text).map_err(|e| Error::malformed(path, e.message()))?;
        if file.version != LABELING_VERSION {
            return Err(Error::malformed(path, format!("unsupported version {}", file.version)));
        }
        let mut groups = BTreeMap::new();
        for t in &file.tracks {
            if t.group >= file.num_groups {
                return Err(Error::malformed(
                    path,
                    format!("track {} has group {} but num_groups is {}", t.id, t.group, file.num_groups),
                ));
            }
            if groups.insert(t.id, t.group).is_some() {
                return Err(Error::malformed(path, format!("track {} listed twice", t.id)));
            }
        }
        if file.background_group.is_some_and(|b| b >= file.num_groups) {
            return Err(Error::malformed(path, "background_group out of range"));
        }
        Ok(Self {
            groups,
            num_groups: file.num_groups,
            background_group: file.background_group,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

/// Relabels so groups are numbered by first appearance.
pub fn canonicalize(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Unit-row spectral embedding from the `k` leading eigenvectors of `D^-1/2 W D^-1/2`.
pub fn spectral_embedding(w: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(Error::DimensionMismatch(format!("similarity is {}x{}", n, w.ncols())));
    }
    if k < 1 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NumericalFailure("similarity must be finite and nonnegative".into()));
    }
    let sym = (w + w.transpose()) * 0.5;
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let deg = sym.row(i).sum();
            1.0 / if deg > 0.0 { deg } else { 1.0 }.sqrt()
        })
        .collect();
    let m = DMatrix::from_fn(n, n, |i, j| sym[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut emb = DMatrix::from_fn(n, k, |i, c| eig.eigenvectors[(i, order[c])]);
    for mut row in emb.row_iter_mut() {
        let norm = row.norm();
        if norm > 1e-12 {
            row /= norm;
        } else {
            row.fill(0.0);
        }
    }
    Ok(emb)
}

fn sq_dist(points: &DMatrix<f64>, i: usize, center: &[f64]) -> f64 {
    center
        .iter()
        .enumerate()
        .map(|(c, v)| (points[(i, c)] - v).powi(2))
        .sum()
}

fn farthest_point_init(points: &DMatrix<f64>, k: usize, first: usize) -> Vec<Vec<f64>> {
    let row = |i: usize| points.row(i).iter().copied().collect::<Vec<f64>>();
    let mut centers = vec![row(first)];
    let mut nearest: Vec<f64> = (0..points.nrows()).map(|i| sq_dist(points, i, &centers[0])).collect();
    while centers.len() < k {
        let mut best = 0;
        for i in 1..nearest.len() {
            if nearest[i] > nearest[best] {
                best = i;
            }
        }
        let c = row(best);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(points, i, &c));
        }
        centers.push(c);
    }
    centers
}

fn lloyd(points: &DMatrix<f64>, mut centers: Vec<Vec<f64>>) -> (Vec<usize>, f64) {
    let (n, dim) = points.shape();
    let k = centers.len();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(points, i, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; dim]; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for c in 0..dim {
                sums[l][c] += points[(i, c)];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        // Reseed empty clusters with the point farthest from its own center.
        for c in 0..k {
            if counts[c] == 0 {
                let mut far = 0;
                let mut far_d = -1.0;
                for i in 0..n {
                    if counts[labels[i]] <= 1 {
                        continue;
                    }
                    let d = sq_dist(points, i, &centers[labels[i]]);
                    if d > far_d {
                        far_d = d;
                        far = i;
                    }
                }
                if far_d >= 0.0 {
                    counts[labels[far]] -= 1;
                    labels[far] = c;
                    counts[c] = 1;
                    centers[c] = points.row(far).iter().copied().collect();
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = (0..n).map(|i| sq_dist(points, i, &centers[labels[i]])).sum();
    (labels, inertia)
}

/// Seeded k-means with farthest-point initialization; the restart with lowest inertia wins.
pub fn kmeans(points: &DMatrix<f64>, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.nrows();
    if k < 1 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let first = rng.random_range(0..n);
        let (labels, inertia) = lloyd(points, farthest_point_init(points, k, first));
        if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
            best = Some((labels, inertia));
        }
    }
    Ok(canonicalize(&best.expect("at least one restart").0))
}

/// Partition of the rows of `w` into `k` groups, numbered by first appearance.
pub fn spectral_partition(w: &DMatrix<f64>, k: usize, seed: u64) -> Result<Vec<usize>> {
    let emb = spectral_embedding(w, k)?;
    kmeans(&emb, k, seed)
}

/// Clusters tracks whose similarity rows are given in `track_ids` order.
pub fn spectral_cluster(w: &DMatrix<f64>, track_ids: &[u32], k: usize, seed: u64) -> Result<Labeling> {
    if track_ids.len() != w.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} track ids for a {}x{} similarity",
            track_ids.len(),
            w.nrows(),
            w.ncols()
        )));
    }
    let labels = spectral_partition(w, k, seed)?;
    Ok(Labeling::from_pairs(track_ids, &labels).with_num_groups(k))
}

/// Total pixel area per group over all frames.
pub fn group_areas(lab: &Labeling, seq: &Sequence) -> Vec<usize> {
    let mut areas = vec![0usize; lab.num_groups()];
    for mask in seq.masks() {
        for label in mask.labels() {
            if let Some(g) = lab.group_of(*label) {
                areas[g] += 1;
            }
        }
    }
    areas
}

/// Marks the largest-area group as background, or the group of `force_track` when given.
pub fn assign_background(lab: &Labeling, seq: &Sequence, force_track: Option<u32>) -> Result<Labeling> {
    if let Some(track) = force_track {
        let group = lab.group_of(track).ok_or_else(|| {
            Error::InvalidConfig(format!("--background-track {track} is not a clustered track"))
        })?;
        return Ok(lab.clone().with_background(Some(group)));
    }
    let areas = group_areas(lab, seq);
    let mut best: Option<usize> = None;
    for (g, &a) in areas.iter().enumerate() {
        if best.is_none_or(|b| a > areas[b]) {
            best = Some(g);
        }
    }
    Ok(lab.clone().with_background(best))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    /// Every group `g` is written as `g + 1`.
    Groups,
    /// Background is written as 0, every other group `g` as `g + 1`.
    Moving,
    /// Background is 0, all other groups 1.
    Binary,
}

/// Per-frame group masks; pixels of unlabeled tracks stay 0.
pub fn render_segmentation(lab: &Labeling, seq: &Sequence, mode: RenderMode) -> Vec<MaskFrame> {
    seq.masks()
        .iter()
        .map(|mask| {
            let labels = mask
                .labels()
                .iter()
                .map(|id| match lab.group_of(*id) {
                    None => 0,
                    Some(g) => match mode {
                        RenderMode::Groups => g as u32 + 1,
                        _ if Some(g) == lab.background_group() => 0,
                        RenderMode::Moving => g as u32 + 1,
                        RenderMode::Binary => 1,
                    },
                })
                .collect();
            MaskFrame::new(mask.width(), mask.height(), labels).expect("dimensions preserved")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cues::{DepthConvention, DepthMap, FlowField};

    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        canonicalize(a) == canonicalize(b)
    }

    fn block_matrix(blocks: &[usize]) -> DMatrix<f64> {
        let n = blocks.len();
        DMatrix::from_fn(n, n, |i, j| if blocks[i] == blocks[j] { 1.0 } else { 0.0 })
    }

    #[test]
    fn disconnected_blocks() {
        let w = block_matrix(&[0, 0, 1]);
        let labels = spectral_partition(&w, 2, 1).unwrap();
        assert_eq!(labels, vec![0, 0, 1]);
    }

    #[test]
    fn k_equals_n_on_identity() {
        let w = DMatrix::identity(5, 5);
        let labels = spectral_partition(&w, 5, 3).unwrap();
        assert_eq!(labels, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn invalid_k() {
        let w = DMatrix::identity(3, 3);
        assert!(matches!(spectral_partition(&w, 0, 0), Err(Error::InvalidK { k: 0, n: 3 })));
        assert!(matches!(spectral_partition(&w, 4, 0), Err(Error::InvalidK { k: 4, n: 3 })));
    }

    #[test]
    fn noisy_blocks_match_brute_force() {
        let w = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.12, 0.91, 0.08, //
                0.12, 1.0, 0.1, 0.88, //
                0.91, 0.1, 1.0, 0.09, //
                0.08, 0.88, 0.09, 1.0,
            ],
        );
        let labels = spectral_partition(&w, 2, 11).unwrap();
        // Brute force: the 2-partition maximizing within-block similarity.
        let mut best = (f64::NEG_INFINITY, vec![]);
        for mask in 1u32..(1 << 3) {
            let part: Vec<usize> = (0..4).map(|i| ((mask << 1) >> i) as usize & 1).collect();
            let score: f64 = (0..4)
                .flat_map(|i| (0..4).map(move |j| (i, j)))
                .filter(|&(i, j)| part[i] == part[j])
                .map(|(i, j)| w[(i, j)])
                .sum();
            if score > best.0 {
                best = (score, part);
            }
        }
        assert!(same_partition(&labels, &best.1));
        assert!(same_partition(&labels, &[0, 1, 0, 1]));
    }

    #[test]
    fn scale_invariant_and_deterministic() {
        let w = block_matrix(&[0, 1, 1, 2, 0, 2, 1]);
        let base = spectral_partition(&w, 3, 5).unwrap();
        for s in [1e-6, 0.3, 7.0, 1e4] {
            assert_eq!(spectral_partition(&(&w * s), 3, 5).unwrap(), base);
        }
        assert_eq!(spectral_partition(&w, 3, 5).unwrap(), base);
        assert!(same_partition(&base, &[0, 1, 1, 2, 0, 2, 1]));
    }

    #[test]
    fn isolated_rows_share_a_cluster() {
        let mut w = DMatrix::zeros(4, 4);
        w[(0, 0)] = 1.0;
        w[(1, 1)] = 1.0;
        let emb = spectral_embedding(&w, 2).unwrap();
        assert_eq!(emb.row(2).norm(), 0.0);
        assert_eq!(emb.row(3).norm(), 0.0);
    }

    #[test]
    fn canonical_labels() {
        assert_eq!(canonicalize(&[2, 2, 0, 1, 0]), vec![0, 0, 1, 2, 1]);
    }

    fn toy_sequence() -> Sequence {
        // 4x2 frames: tracks 1 (4 px), 2 (2 px), 3 (2 px).
        let labels = vec![1, 1, 2, 2, 1, 1, 3, 3];
        let mask = MaskFrame::new(4, 2, labels).unwrap();
        let depth = DepthMap::new(4, 2, vec![1.0; 8], DepthConvention::Depth).unwrap();
        Sequence::new(
            vec![1, 2, 3],
            vec![mask.clone(), mask],
            vec![FlowField::zeros(4, 2)],
            vec![depth.clone(), depth],
        )
        .unwrap()
    }

    #[test]
    fn background_is_largest_group() {
        let seq = toy_sequence();
        let lab = Labeling::from_pairs(&[1, 2, 3], &[1, 0, 2]);
        assert_eq!(assign_background(&lab, &seq, None).unwrap().background_group(), Some(1));
        // Equal areas: lower label.
        let lab = Labeling::from_pairs(&[1, 2, 3], &[0, 1, 2]).with_num_groups(3);
        let eq = Labeling::from_pairs(&[2, 3], &[0, 1]);
        assert_eq!(assign_background(&eq, &seq, None).unwrap().background_group(), Some(0));
        assert_eq!(assign_background(&lab, &seq, Some(3)).unwrap().background_group(), Some(2));
        assert!(assign_background(&lab, &seq, Some(9)).is_err());
    }

    #[test]
    fn render_modes() {
        let seq = toy_sequence();
        let lab = Labeling::from_pairs(&[1, 2, 3], &[0, 1, 2]).with_background(Some(0));
        let groups = render_segmentation(&lab, &seq, RenderMode::Groups);
        assert_eq!(groups[0].labels(), &[1, 1, 2, 2, 1, 1, 3, 3]);
        let moving = render_segmentation(&lab, &seq, RenderMode::Moving);
        assert_eq!(moving[1].labels(), &[0, 0, 2, 2, 0, 0, 3, 3]);
        let binary = render_segmentation(&lab, &seq, RenderMode::Binary);
        assert_eq!(binary[0].labels(), &[0, 0, 1, 1, 0, 0, 1, 1]);
        let one = Labeling::from_pairs(&[1, 2, 3], &[0, 0, 0]);
        assert!(render_segmentation(&one, &seq, RenderMode::Groups)[0].labels().iter().all(|l| *l == 1));
        let partial = Labeling::from_pairs(&[2], &[0]);
        assert_eq!(render_segmentation(&partial, &seq, RenderMode::Groups)[0].labels(), &[0, 0, 1, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn labeling_toml_round_trip() {
        let lab = Labeling::from_pairs(&[4, 7, 9], &[1, 0, 1]).with_num_groups(3).with_background(Some(0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labeling.toml");
        lab.write(&path).unwrap();
        assert_eq!(Labeling::read(&path).unwrap(), lab);
        fs::write(&path, "version = 1\nnum_groups = 1\n[[tracks]]\nid = 1\ngroup = 3\n").unwrap();
        assert!(matches!(Labeling::read(&path), Err(Error::MalformedFile { .. })));
    }
}
