//! Sequence manifest (TOML).
//!
//! ```toml
//! version = 1
//! width = 128
//! height = 96
//! track_ids = [1, 2, 3]
//! depth_convention = "depth"      # or "inverse_depth"
//! depth_png_scale = 20.0          # full-scale value of 16-bit depth PNGs
//! coord_scale = 64.0              # optional, pixels per normalized unit
//! flows = ["flow/0000.flo", "flow/0001.flo"]
//!
//! [[frames]]
//! mask = "masks/0000.png"
//! depth = "depth/0000.pfm"
//! ```
//!
//! Relative paths resolve against the manifest's directory. `flows[m]` spans
//! frames `m` and `m + 1`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    read_depth, read_flow, read_masks, write_depth, write_flow, write_masks, DepthConvention,
    Sequence,
};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub width: usize,
    pub height: usize,
    pub track_ids: Vec<u32>,
    #[serde(default)]
    pub depth_convention: DepthConvention,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_png_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coord_scale: Option<f64>,
    pub flows: Vec<PathBuf>,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub mask: PathBuf,
    pub depth: PathBuf,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest =
            toml::from_str(&text).map_err(|e| Error::malformed(path, e.message().to_string()))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::malformed(
                path,
                format!("unsupported manifest version {}", manifest.version),
            ));
        }
        Ok(manifest)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::malformed(path, format!("manifest encode failed: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn check_dims(path: &Path, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::DimensionMismatch(format!(
            "{} is {}x{}, manifest declares {}x{}",
            path.display(),
            got.0,
            got.1,
            want.0,
            want.1
        )));
    }
    Ok(())
}

/// Loads and validates every cue listed in a manifest.
pub fn load_sequence(manifest_path: impl AsRef<Path>) -> Result<Sequence> {
    let manifest_path = manifest_path.as_ref();
    let manifest = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let want = (manifest.width, manifest.height);
    if manifest.frames.is_empty() {
        return Err(Error::malformed(manifest_path, "no frames listed"));
    }
    if manifest.flows.len() + 1 != manifest.frames.len() {
        return Err(Error::DimensionMismatch(format!(
            "{}: {} frames need {} flows, {} listed",
            manifest_path.display(),
            manifest.frames.len(),
            manifest.frames.len() - 1,
            manifest.flows.len()
        )));
    }
    let registry: std::collections::BTreeSet<u32> = manifest.track_ids.iter().copied().collect();
    let png_scale = manifest.depth_png_scale.unwrap_or(1.0);

    let mut masks = Vec::with_capacity(manifest.frames.len());
    let mut depths = Vec::with_capacity(manifest.frames.len());
    for entry in &manifest.frames {
        let mask_path = base.join(&entry.mask);
        let mask = read_masks(&mask_path)?;
        check_dims(&mask_path, (mask.width(), mask.height()), want)?;
        if let Some(&id) = mask.labels().iter().find(|&&l| l != 0 && !registry.contains(&l)) {
            return Err(Error::UnknownTrackId {
                id,
                path: mask_path,
            });
        }
        masks.push(mask);

        let depth_path = base.join(&entry.depth);
        let depth = read_depth(&depth_path, manifest.depth_convention, png_scale)?;
        check_dims(&depth_path, (depth.width(), depth.height()), want)?;
        depths.push(depth);
    }
    let mut flows = Vec::with_capacity(manifest.flows.len());
    for rel in &manifest.flows {
        let flow_path = base.join(rel);
        let flow = read_flow(&flow_path)?;
        check_dims(&flow_path, (flow.width(), flow.height()), want)?;
        flows.push(flow);
    }
    Sequence::new(manifest.track_ids.iter().copied(), masks, flows, depths)?
        .with_coord_scale(manifest.coord_scale)
}

/// Writes every cue of `seq` under `dir` plus `manifest.toml`; returns the manifest path.
pub fn save_sequence(seq: &Sequence, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    for sub in ["flow", "depth", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut frames = Vec::with_capacity(seq.frame_count());
    for (i, (mask, depth)) in seq.masks().iter().zip(seq.depths()).enumerate() {
        let entry = FrameEntry {
            mask: PathBuf::from(format!("masks/{i:04}.png")),
            depth: PathBuf::from(format!("depth/{i:04}.pfm")),
        };
        write_masks(dir.join(&entry.mask), mask)?;
        write_depth(dir.join(&entry.depth), depth)?;
        frames.push(entry);
    }
    let mut flows = Vec::with_capacity(seq.pair_count());
    for (i, flow) in seq.flows().iter().enumerate() {
        let rel = PathBuf::from(format!("flow/{i:04}.flo"));
        write_flow(dir.join(&rel), flow)?;
        flows.push(rel);
    }
    let convention = seq
        .depths()
        .first()
        .map(|d| d.convention())
        .unwrap_or_default();
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        width: seq.width(),
        height: seq.height(),
        track_ids: seq.track_ids().to_vec(),
        depth_convention: convention,
        depth_png_scale: None,
        coord_scale: seq.coord_scale_override(),
        flows,
        frames,
    };
    let path = dir.join("manifest.toml");
    manifest.write(&path)?;
    Ok(path)
}
