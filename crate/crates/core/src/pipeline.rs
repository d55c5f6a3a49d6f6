//! End-to-end segmentation of a loaded sequence.

use std::fs;
use std::path::Path;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{
    accumulate_similarity, inlier_vectors, residual_matrix, write_affinity, AffinityConfig, ResidualMatrix,
    SimilarityMatrix, DEFAULT_ORK_FRACTION,
};
use crate::clustering::{assign_background, render_segmentation, spectral_cluster, Labeling, RenderMode};
use crate::cues::{write_masks, MaskFrame, Sequence};
use crate::error::{Error, Result};
use crate::motion_model::{fit_model_with_quorum, sample_pixels, CoordGrid, FittedModel, ModelKind, SamplingConfig};
use crate::proposal_filter::{build_track_table, filter_sequence, FilterConfig, TrackTable, DEFAULT_MIN_PIXELS};
use crate::seed::{derive_seed, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Depth-aware pipeline with the configured motion model.
    #[default]
    Full,
    /// Quadratic flow-only model regardless of the configured model.
    FlowOnly,
    /// Every surviving proposal becomes its own moving group.
    ProposalsBaseline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub num_motions: usize,
    pub model: ModelKind,
    pub ork_fraction: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub filter: FilterConfig,
    /// Pixels a track needs in both frames of a pair to count as visible there.
    pub min_pixels: usize,
    pub sampling: SamplingConfig,
    pub binary: bool,
    pub background_track: Option<u32>,
}

impl RunConfig {
    pub fn new(num_motions: usize) -> Self {
        Self {
            num_motions,
            model: ModelKind::LinearDepth,
            ork_fraction: DEFAULT_ORK_FRACTION,
            seed: 0,
            ablation: Ablation::Full,
            filter: FilterConfig::default(),
            min_pixels: DEFAULT_MIN_PIXELS,
            sampling: SamplingConfig::default(),
            binary: false,
            background_track: None,
        }
    }

    pub fn effective_model(&self) -> ModelKind {
        match self.ablation {
            Ablation::FlowOnly => ModelKind::Quadratic,
            _ => self.model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_motions < 1 {
            return Err(Error::InvalidConfig("--num-motions must be at least 1".into()));
        }
        if !(self.ork_fraction.is_finite() && self.ork_fraction > 0.0 && self.ork_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "--ork-fraction must be in (0, 1], got {}",
                self.ork_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.filter.iou_threshold) {
            return Err(Error::InvalidConfig("--iou-threshold must be in [0, 1]".into()));
        }
        if !(self.filter.max_area_fraction > 0.0 && self.filter.max_area_fraction <= 1.0) {
            return Err(Error::InvalidConfig("--max-area-fraction must be in (0, 1]".into()));
        }
        if self.sampling.max_samples < 1 {
            return Err(Error::InvalidConfig("--max-samples must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SegmentOutput {
    /// Tracks that took part, ascending.
    pub track_ids: Vec<u32>,
    pub labeling: Labeling,
    pub residuals: Vec<ResidualMatrix>,
    pub similarity: Option<SimilarityMatrix>,
    /// Registry-wide track table after filtering and fitting.
    pub table: TrackTable,
    /// Every group `g` written as `g + 1`.
    pub label_masks: Vec<MaskFrame>,
    /// Background 0; other groups as `g + 1`, or 1 in binary mode.
    pub motion_masks: Vec<MaskFrame>,
}

impl SegmentOutput {
    /// Similarity restricted to the participating tracks.
    pub fn affinity(&self) -> Option<nalgebra::DMatrix<f64>> {
        let index: Vec<usize> = self
            .track_ids
            .iter()
            .map(|id| self.table.track_ids().binary_search(id).expect("participating track is registered"))
            .collect();
        self.similarity.as_ref().map(|s| s.submatrix(&index))
    }
}

type Cell = Option<(FittedModel, crate::motion_model::PixelSample)>;

fn fit_cells(seq: &Sequence, table: &TrackTable, cfg: &RunConfig) -> Result<Vec<Vec<Cell>>> {
    let grid = CoordGrid::for_sequence(seq);
    let kind = cfg.effective_model();
    let ids = table.track_ids();
    let pairs = table.pair_count();
    let cells: Vec<Cell> = (0..pairs * ids.len())
        .into_par_iter()
        .map(|k| {
            let (m, t) = (k / ids.len(), k % ids.len());
            if !table.visible(t, m) {
                return Ok(None);
            }
            let seed = derive_seed(cfg.seed, Stream::Sampling, u64::from(ids[t]), m as u64);
            let sample = match sample_pixels(seq, &grid, ids[t], m, &cfg.sampling, seed) {
                Ok(s) => s,
                Err(Error::InsufficientData { needed, got }) => {
                    warn!("track {} pair {m}: {got} pixels, need {needed}; skipped", ids[t]);
                    return Ok(None);
                }
                Err(e) => return Err(e),
            };
            match fit_model_with_quorum(kind, &sample, cfg.sampling.quorum) {
                Ok(model) => Ok(Some((model, sample))),
                Err(Error::InsufficientData { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut by_pair: Vec<Vec<Cell>> = Vec::with_capacity(pairs);
    let mut it = cells.into_iter();
    for _ in 0..pairs {
        by_pair.push(it.by_ref().take(ids.len()).collect());
    }
    Ok(by_pair)
}

fn baseline_labeling(active: &[u32]) -> Labeling {
    let groups: Vec<usize> = (0..active.len()).collect();
    Labeling::from_pairs(active, &groups)
}

/// Runs the configured pipeline on `seq`.
pub fn run_segment(seq: &Sequence, cfg: &RunConfig) -> Result<SegmentOutput> {
    cfg.validate()?;
    let filtered = filter_sequence(seq, &cfg.filter)?;
    let table = build_track_table(&filtered, cfg.min_pixels);
    let ids = table.track_ids().to_vec();

    if cfg.ablation == Ablation::ProposalsBaseline {
        let active: Vec<u32> = table.active_tracks().into_iter().map(|t| ids[t]).collect();
        if active.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        info!("proposals baseline: {} groups", active.len());
        let labeling = baseline_labeling(&active);
        let label_masks = render_segmentation(&labeling, &filtered, RenderMode::Groups);
        let motion_masks = render_segmentation(
            &labeling,
            &filtered,
            if cfg.binary { RenderMode::Binary } else { RenderMode::Moving },
        );
        return Ok(SegmentOutput {
            track_ids: active,
            labeling,
            residuals: Vec::new(),
            similarity: None,
            table,
            label_masks,
            motion_masks,
        });
    }

    let cells = fit_cells(&filtered, &table, cfg)?;
    let visibility: Vec<Vec<bool>> = (0..ids.len())
        .map(|t| cells.iter().map(|pair| pair[t].is_some()).collect())
        .collect();
    let table = TrackTable::from_visibility(ids.clone(), visibility);
    let active_idx = table.active_tracks();
    let active: Vec<u32> = active_idx.iter().map(|&t| ids[t]).collect();
    if cfg.num_motions > active.len() {
        return Err(Error::InvalidK { k: cfg.num_motions, n: active.len() });
    }
    info!(
        "{} of {} tracks active over {} frame pairs, model {:?}",
        active.len(),
        ids.len(),
        table.pair_count(),
        cfg.effective_model()
    );

    let affinity_cfg = AffinityConfig { ork_fraction: cfg.ork_fraction, ..Default::default() };
    let mut residuals = Vec::with_capacity(cells.len());
    let mut vectors = Vec::new();
    for (m, pair) in cells.into_iter().enumerate() {
        let (models, samples): (Vec<_>, Vec<_>) = pair.into_iter().map(|c| c.map(|(f, s)| (f, s)).unzip()).unzip();
        let r = residual_matrix(m, &models, &samples)?;
        vectors.extend(inlier_vectors(&r, &affinity_cfg));
        residuals.push(r);
    }
    let similarity = accumulate_similarity(&vectors, &table);
    let w = similarity.submatrix(&active_idx);
    debug!("similarity over active tracks:\n{w:.3}");

    let kmeans_seed = derive_seed(cfg.seed, Stream::KMeans, 0, 0);
    let labeling = spectral_cluster(&w, &active, cfg.num_motions, kmeans_seed)?;
    let labeling = assign_background(&labeling, &filtered, cfg.background_track)?;
    let label_masks = render_segmentation(&labeling, &filtered, RenderMode::Groups);
    let motion_masks = render_segmentation(
        &labeling,
        &filtered,
        if cfg.binary { RenderMode::Binary } else { RenderMode::Moving },
    );
    Ok(SegmentOutput {
        track_ids: active,
        labeling,
        residuals,
        similarity: Some(similarity),
        table,
        label_masks,
        motion_masks,
    })
}

pub const LABELS_DIR: &str = "labels";
pub const MOTION_DIR: &str = "motion";
pub const LABELING_FILE: &str = "labeling.toml";

fn write_mask_dir(dir: &Path, masks: &[MaskFrame]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, m) in masks.iter().enumerate() {
        write_masks(dir.join(format!("{i:04}.png")), m)?;
    }
    Ok(())
}

/// Writes `labels/`, `motion/`, `labeling.toml` and, on request, the similarity dump.
pub fn write_segment_outputs(out: &SegmentOutput, dir: impl AsRef<Path>, affinity_path: Option<&Path>) -> Result<()> {
    let dir = dir.as_ref();
    write_mask_dir(&dir.join(LABELS_DIR), &out.label_masks)?;
    write_mask_dir(&dir.join(MOTION_DIR), &out.motion_masks)?;
    out.labeling.write(dir.join(LABELING_FILE))?;
    if let (Some(path), Some(sim)) = (affinity_path, &out.similarity) {
        write_affinity(path, sim, out.table.track_ids())?;
    }
    Ok(())
}
