//! Motion-cue containers: optical flow, depth, instance masks, and the
//! sequence manifest tying them together.

pub mod flo;
mod manifest;
pub mod pfm;
pub mod png16;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use flo::{read_flow, write_flow};
pub use manifest::{load_sequence, save_sequence, FrameEntry, Manifest, MANIFEST_VERSION};
pub use pfm::{read_pfm, write_pfm, FloatGrid};

/// Smallest inverse depth kept after conversion.
pub const Q_MIN: f64 = 1e-6;
/// Largest inverse depth kept after conversion.
pub const Q_MAX: f64 = 1e6;
/// Replacement for nonpositive raw depth samples, in the map's own convention.
pub const DEPTH_FLOOR: f32 = 1e-6;

/// Dense per-pixel displacement between two consecutive frames, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl FlowField {
    /// `data` holds interleaved `(u, v)` pairs in row-major order.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 2 {
            return Err(Error::DimensionMismatch(format!(
                "flow of {width}x{height} needs {} values, got {}",
                width * height * 2,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                path: "<memory>".into(),
                index,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 2],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, col: usize, row: usize) -> (f32, f32) {
        let i = 2 * (row * self.width + col);
        (self.data[i], self.data[i + 1])
    }

    /// Flow at a flat pixel index.
    pub fn at(&self, index: usize) -> (f32, f32) {
        (self.data[2 * index], self.data[2 * index + 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthConvention {
    /// Values are distances `z`.
    #[default]
    Depth,
    /// Values are relative inverse depths `1/z`.
    InverseDepth,
}

/// Raw per-pixel depth cue with nonpositive samples already replaced by [`DEPTH_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
    convention: DepthConvention,
    clamped: usize,
}

impl DepthMap {
    pub fn new(
        width: usize,
        height: usize,
        mut data: Vec<f32>,
        convention: DepthConvention,
    ) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "depth of {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                path: "<memory>".into(),
                index,
            });
        }
        let mut clamped = 0;
        for v in data.iter_mut().filter(|v| **v <= 0.0) {
            *v = DEPTH_FLOOR;
            clamped += 1;
        }
        if clamped > 0 {
            log::warn!("{clamped} nonpositive depth samples clamped to {DEPTH_FLOOR}");
        }
        Ok(Self {
            width,
            height,
            data,
            convention,
            clamped,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn convention(&self) -> DepthConvention {
        self.convention
    }

    /// Number of samples that were nonpositive on input.
    pub fn clamped_count(&self) -> usize {
        self.clamped
    }
}

/// Relative inverse depth `q = 1/z`, known only up to a positive scale.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseDepthMap {
    width: usize,
    height: usize,
    q: Vec<f64>,
}

impl InverseDepthMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    /// Multiplies every inverse depth by `factor` and re-applies the clamp.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            q: self
                .q
                .iter()
                .map(|q| (q * factor).clamp(Q_MIN, Q_MAX))
                .collect(),
        }
    }
}

pub fn to_inverse_depth(depth: &DepthMap) -> InverseDepthMap {
    let q = depth
        .data
        .iter()
        .map(|&v| {
            let v = f64::from(v);
            let q = match depth.convention {
                DepthConvention::Depth => 1.0 / v,
                DepthConvention::InverseDepth => v,
            };
            q.clamp(Q_MIN, Q_MAX)
        })
        .collect();
    InverseDepthMap {
        width: depth.width,
        height: depth.height,
        q,
    }
}

/// Loads a depth cue from a grayscale PFM, or a 16-bit PNG whose full-scale value maps to `png_scale`.
pub fn read_depth(
    path: impl AsRef<Path>,
    convention: DepthConvention,
    png_scale: f64,
) -> Result<DepthMap> {
    let path = path.as_ref();
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let (width, height, data) = if is_png {
        let (w, h, raw) = png16::read_gray16(path)?;
        let data = raw
            .into_iter()
            .map(|v| (f64::from(v) / f64::from(u16::MAX) * png_scale) as f32)
            .collect();
        (w, h, data)
    } else {
        let grid = read_pfm(path)?;
        (grid.width, grid.height, grid.data)
    };
    DepthMap::new(width, height, data, convention).map_err(|e| match e {
        Error::NonFiniteValue { index, .. } => Error::NonFiniteValue {
            path: path.to_path_buf(),
            index,
        },
        other => other,
    })
}

pub fn write_depth(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    write_pfm(
        path,
        &FloatGrid {
            width: depth.width,
            height: depth.height,
            data: depth.data.clone(),
        },
    )
}

/// Per-frame instance labels; `0` marks unassigned pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskFrame {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl MaskFrame {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask of {width}x{height} needs {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, col: usize, row: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Distinct nonzero labels, ascending.
    pub fn track_ids(&self) -> BTreeSet<u32> {
        self.labels.iter().copied().filter(|&l| l != 0).collect()
    }

    pub fn area(&self, id: u32) -> usize {
        self.labels.iter().filter(|&&l| l == id).count()
    }

    pub fn pixels_of(&self, id: u32) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &l)| l == id)
            .map(|(i, _)| i)
    }
}

pub fn read_masks(path: impl AsRef<Path>) -> Result<MaskFrame> {
    let (w, h, raw) = png16::read_gray16(path)?;
    MaskFrame::new(w, h, raw.into_iter().map(u32::from).collect())
}

pub fn write_masks(path: impl AsRef<Path>, mask: &MaskFrame) -> Result<()> {
    let path = path.as_ref();
    let raw = mask
        .labels
        .iter()
        .map(|&l| {
            u16::try_from(l).map_err(|_| Error::malformed(path, format!("label {l} exceeds 16 bits")))
        })
        .collect::<Result<Vec<u16>>>()?;
    png16::write_gray16(path, mask.width, mask.height, &raw)
}

/// A validated clip: per-frame masks and depth, per-pair flow, and the track registry.
#[derive(Debug, Clone)]
pub struct Sequence {
    width: usize,
    height: usize,
    track_ids: Vec<u32>,
    masks: Vec<MaskFrame>,
    flows: Vec<FlowField>,
    depths: Vec<DepthMap>,
    inverse_depths: Vec<InverseDepthMap>,
    coord_scale: Option<f64>,
}

impl Sequence {
    pub fn new(
        track_ids: impl IntoIterator<Item = u32>,
        masks: Vec<MaskFrame>,
        flows: Vec<FlowField>,
        depths: Vec<DepthMap>,
    ) -> Result<Self> {
        let registry: BTreeSet<u32> = track_ids.into_iter().collect();
        if registry.contains(&0) {
            return Err(Error::InvalidConfig("track id 0 is reserved".into()));
        }
        let first = masks
            .first()
            .ok_or_else(|| Error::InvalidConfig("sequence has no frames".into()))?;
        let (width, height) = (first.width, first.height);
        if depths.len() != masks.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} masks but {} depth maps",
                masks.len(),
                depths.len()
            )));
        }
        if flows.len() + 1 != masks.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} frames need {} flow fields, got {}",
                masks.len(),
                masks.len() - 1,
                flows.len()
            )));
        }
        let dims = masks
            .iter()
            .map(|m| (m.width, m.height, "mask"))
            .chain(flows.iter().map(|f| (f.width, f.height, "flow")))
            .chain(depths.iter().map(|d| (d.width, d.height, "depth")));
        for (w, h, what) in dims {
            if (w, h) != (width, height) {
                return Err(Error::DimensionMismatch(format!(
                    "{what} is {w}x{h}, sequence is {width}x{height}"
                )));
            }
        }
        for mask in &masks {
            if let Some(id) = mask.labels.iter().find(|&&l| l != 0 && !registry.contains(&l)) {
                return Err(Error::UnknownTrackId {
                    id: *id,
                    path: "<memory>".into(),
                });
            }
        }
        let inverse_depths = depths.iter().map(to_inverse_depth).collect();
        Ok(Self {
            width,
            height,
            track_ids: registry.into_iter().collect(),
            masks,
            flows,
            depths,
            inverse_depths,
            coord_scale: None,
        })
    }

    /// Overrides the coordinate normalization scale (pixels per normalized unit).
    pub fn with_coord_scale(mut self, scale: Option<f64>) -> Result<Self> {
        if let Some(s) = scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidConfig(format!("coord_scale must be positive, got {s}")));
            }
        }
        self.coord_scale = scale;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame_count(&self) -> usize {
        self.masks.len()
    }

    pub fn pair_count(&self) -> usize {
        self.flows.len()
    }

    /// Registered track identities, ascending.
    pub fn track_ids(&self) -> &[u32] {
        &self.track_ids
    }

    pub fn masks(&self) -> &[MaskFrame] {
        &self.masks
    }

    pub fn flows(&self) -> &[FlowField] {
        &self.flows
    }

    pub fn depths(&self) -> &[DepthMap] {
        &self.depths
    }

    pub fn inverse_depths(&self) -> &[InverseDepthMap] {
        &self.inverse_depths
    }

    pub fn coord_scale_override(&self) -> Option<f64> {
        self.coord_scale
    }

    /// Replaces the masks, keeping every other cue. Labels must stay within the registry.
    pub fn with_masks(&self, masks: Vec<MaskFrame>) -> Result<Self> {
        let seq = Sequence::new(
            self.track_ids.iter().copied(),
            masks,
            self.flows.clone(),
            self.depths.clone(),
        )?;
        seq.with_coord_scale(self.coord_scale)
    }

    pub fn with_flows(&self, flows: Vec<FlowField>) -> Result<Self> {
        Sequence::new(
            self.track_ids.iter().copied(),
            self.masks.clone(),
            flows,
            self.depths.clone(),
        )?
        .with_coord_scale(self.coord_scale)
    }

    pub fn with_depths(&self, depths: Vec<DepthMap>) -> Result<Self> {
        Sequence::new(
            self.track_ids.iter().copied(),
            self.masks.clone(),
            self.flows.clone(),
            depths,
        )?
        .with_coord_scale(self.coord_scale)
    }

    /// Multiplies all inverse depths by `factor`; raw depth maps are left untouched.
    pub fn with_inverse_depth_scale(&self, factor: f64) -> Self {
        let mut seq = self.clone();
        seq.inverse_depths = self.inverse_depths.iter().map(|q| q.scaled(factor)).collect();
        seq
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_depth_inverts() {
        let d = DepthMap::new(2, 2, vec![2.0; 4], DepthConvention::Depth).unwrap();
        assert!(to_inverse_depth(&d).values().iter().all(|&q| q == 0.5));
    }

    #[test]
    fn inverse_convention_passes_through() {
        let vals = vec![0.25f32, 1.0, 3.5, 7.0];
        let d = DepthMap::new(2, 2, vals.clone(), DepthConvention::InverseDepth).unwrap();
        let q = to_inverse_depth(&d);
        for (a, b) in q.values().iter().zip(vals) {
            assert_eq!(*a, f64::from(b));
        }
    }

    #[test]
    fn tiny_depth_clamps_to_q_max() {
        let d = DepthMap::new(1, 1, vec![1e-12], DepthConvention::Depth).unwrap();
        assert_eq!(to_inverse_depth(&d).values()[0], Q_MAX);
    }

    #[test]
    fn zero_depth_is_clamped_and_counted() {
        let d = DepthMap::new(3, 1, vec![0.0, -1.0, 2.0], DepthConvention::Depth).unwrap();
        assert_eq!(d.clamped_count(), 2);
        assert_eq!(d.data(), &[DEPTH_FLOOR, DEPTH_FLOOR, 2.0]);
        assert!(to_inverse_depth(&d).values().iter().all(|q| *q > 0.0));
    }

    #[test]
    fn sequence_rejects_unknown_label() {
        let mask = MaskFrame::new(2, 1, vec![1, 7]).unwrap();
        let depth = DepthMap::new(2, 1, vec![1.0; 2], DepthConvention::Depth).unwrap();
        let err = Sequence::new([1], vec![mask], vec![], vec![depth]).unwrap_err();
        assert!(matches!(err, Error::UnknownTrackId { id: 7, .. }));
    }

    #[test]
    fn sequence_rejects_mismatched_flow() {
        let mask = MaskFrame::empty(32, 32);
        let depth = DepthMap::new(32, 32, vec![1.0; 1024], DepthConvention::Depth).unwrap();
        let err = Sequence::new(
            [1],
            vec![mask.clone(), mask],
            vec![FlowField::zeros(64, 64)],
            vec![depth.clone(), depth],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }
}
