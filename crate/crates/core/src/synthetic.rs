//! Rigid-scene simulator used as the ground-truth oracle.
//!
//! Every object carries an instantaneous screw motion relative to the
//! camera. Flow is evaluated once per frame pair from the owning object's
//! motion, the pixel's depth and the focal length, so noise-free output is
//! exactly representable by the depth-aware linear model.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::Labeling;
use crate::cues::save_sequence;
use crate::cues::{write_masks, DepthConvention, DepthMap, FlowField, MaskFrame, Sequence, DEPTH_FLOOR};
use crate::error::{Error, Result};
use crate::motion_model::{normalize_coords, CoordGrid};
use crate::seed::{derive_seed, Stream};

pub const BACKGROUND_TRACK: u32 = 1;

/// Translation and rotation rates of a rigid body relative to the camera.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScrewMotion {
    #[serde(default)]
    pub tau: [f64; 3],
    #[serde(default)]
    pub omega: [f64; 3],
}

impl ScrewMotion {
    pub fn new(tau: [f64; 3], omega: [f64; 3]) -> Result<Self> {
        let m = Self { tau, omega };
        m.validate()?;
        Ok(m)
    }

    pub fn translation(tau: [f64; 3]) -> Self {
        Self { tau, omega: [0.0; 3] }
    }

    fn validate(&self) -> Result<()> {
        if self.tau.iter().chain(&self.omega).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidScene("screw motion has non-finite components".into()))
        }
    }

    /// Image-plane velocity at normalized `(x, y)` with depth `z`.
    pub fn flow(&self, x: f64, y: f64, z: f64, camera: CameraModel) -> (f64, f64) {
        let f = camera.focal;
        let [t1, t2, t3] = self.tau;
        let [w1, w2, w3] = self.omega;
        let u = -(x * y / f) * w1 + ((f * f + x * x) / f) * w2 - y * w3 + (f * t1 - x * t3) / z;
        let v = -((f * f + y * y) / f) * w1 + (x * y / f) * w2 + x * w3 + (f * t2 - y * t3) / z;
        (u, v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub focal: f64,
}

impl CameraModel {
    pub fn new(focal: f64) -> Result<Self> {
        if focal.is_finite() && focal > 0.0 {
            Ok(Self { focal })
        } else {
            Err(Error::InvalidScene(format!("focal length must be positive, got {focal}")))
        }
    }
}

/// Region in normalized image coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Polygon { points: Vec<[f64; 2]> },
}

impl Region {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Region::Rect { x0, y0, x1, y1 } => x >= *x0 && x <= *x1 && y >= *y0 && y <= *y1,
            Region::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
                dx * dx + dy * dy <= 1.0
            }
            Region::Polygon { points } => {
                let mut inside = false;
                let n = points.len();
                for i in 0..n {
                    let [xi, yi] = points[i];
                    let [xj, yj] = points[(i + n - 1) % n];
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }

    /// `(xmin, ymin, xmax, ymax)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        match self {
            Region::Rect { x0, y0, x1, y1 } => (*x0, *y0, *x1, *y1),
            Region::Ellipse { cx, cy, rx, ry } => (cx - rx, cy - ry, cx + rx, cy + ry),
            Region::Polygon { points } => points.iter().fold(
                (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
                |(a, b, c, d), [x, y]| (a.min(*x), b.min(*y), c.max(*x), d.max(*y)),
            ),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Region::Rect { x0, y0, x1, y1 } => x0 < x1 && y0 < y1,
            Region::Ellipse { rx, ry, .. } => *rx > 0.0 && *ry > 0.0,
            Region::Polygon { points } => points.len() >= 3,
        };
        let (a, b, c, d) = self.bounds();
        if ok && [a, b, c, d].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidScene(format!("degenerate region {self:?}")))
        }
    }
}

/// `z(x, y) = z0 + gx·x + gy·y + amp·sin(freq·x)·sin(freq·y)` in the object's own frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Surface {
    pub z0: f64,
    #[serde(default)]
    pub gx: f64,
    #[serde(default)]
    pub gy: f64,
    #[serde(default)]
    pub amp: f64,
    #[serde(default)]
    pub freq: f64,
}

impl Surface {
    pub fn constant(z0: f64) -> Self {
        Self { z0, gx: 0.0, gy: 0.0, amp: 0.0, freq: 0.0 }
    }

    pub fn depth(&self, x: f64, y: f64) -> f64 {
        self.z0 + self.gx * x + self.gy * y + self.amp * (self.freq * x).sin() * (self.freq * y).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub depth: Surface,
    #[serde(default)]
    pub motion: ScrewMotion,
    /// Per-pair motions overriding `motion`; one entry per frame pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<ScrewMotion>>,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    pub region: Region,
    pub depth: Surface,
    #[serde(default)]
    pub motion: ScrewMotion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<ScrewMotion>>,
    pub group: usize,
    /// Region displacement per frame, normalized units.
    #[serde(default)]
    pub drift: [f64; 2],
}

fn default_focal() -> f64 {
    1.0
}

/// A scripted rigid scene. Later objects are painted over earlier ones; the background
/// fills every remaining pixel and is track 1, objects follow from track 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    #[serde(default = "default_focal")]
    pub focal: f64,
    #[serde(default)]
    pub depth_convention: DepthConvention,
    pub background: Layer,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
}

impl SceneSpec {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SceneSpec = toml::from_str(&text).map_err(|e| Error::malformed(path, e.message()))?;
        spec.validate()
            .map_err(|e| Error::malformed(path, e.to_string()))?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    pub fn grid(&self) -> CoordGrid {
        normalize_coords(self.width, self.height)
    }

    pub fn camera(&self) -> Result<CameraModel> {
        CameraModel::new(self.focal)
    }

    pub fn track_ids(&self) -> Vec<u32> {
        (BACKGROUND_TRACK..=BACKGROUND_TRACK + self.objects.len() as u32).collect()
    }

    fn layer_motion(motion: &ScrewMotion, schedule: &Option<Vec<ScrewMotion>>, pair: usize) -> ScrewMotion {
        schedule.as_ref().map_or(*motion, |s| s[pair])
    }

    /// Motion of `track` during frame pair `pair`.
    pub fn motion_of(&self, track: u32, pair: usize) -> ScrewMotion {
        if track == BACKGROUND_TRACK {
            Self::layer_motion(&self.background.motion, &self.background.schedule, pair)
        } else {
            let o = &self.objects[(track - BACKGROUND_TRACK - 1) as usize];
            Self::layer_motion(&o.motion, &o.schedule, pair)
        }
    }

    pub fn group_of(&self, track: u32) -> usize {
        if track == BACKGROUND_TRACK {
            self.background.group
        } else {
            self.objects[(track - BACKGROUND_TRACK - 1) as usize].group
        }
    }

    fn motion_track(&self, track: u32) -> Vec<ScrewMotion> {
        (0..self.frames - 1).map(|m| self.motion_of(track, m)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width > 32768 || self.height > 32768 {
            return Err(Error::InvalidScene(format!("bad image size {}x{}", self.width, self.height)));
        }
        if self.frames < 2 {
            return Err(Error::InvalidScene("need at least 2 frames".into()));
        }
        self.camera()?;
        let pairs = self.frames - 1;
        let layers = std::iter::once((&self.background.motion, &self.background.schedule, "background"))
            .chain(self.objects.iter().map(|o| (&o.motion, &o.schedule, o.name.as_str())));
        for (motion, schedule, name) in layers {
            motion.validate()?;
            if let Some(s) = schedule {
                if s.len() != pairs {
                    return Err(Error::InvalidScene(format!(
                        "{name}: schedule has {} motions for {pairs} frame pairs",
                        s.len()
                    )));
                }
                for m in s {
                    m.validate()?;
                }
            }
        }
        let grid = self.grid();
        let (xmin, ymin) = grid.to_normalized(-0.5, -0.5);
        let (xmax, ymax) = grid.to_normalized(self.width as f64 - 0.5, self.height as f64 - 0.5);
        for o in &self.objects {
            o.region.validate()?;
            let (a, b, c, d) = o.region.bounds();
            let last = (self.frames - 1) as f64;
            for k in [0.0, last] {
                let (dx, dy) = (o.drift[0] * k, o.drift[1] * k);
                if a + dx < xmin - 1e-9 || c + dx > xmax + 1e-9 || b + dy < ymin - 1e-9 || d + dy > ymax + 1e-9 {
                    return Err(Error::InvalidScene(format!("{}: region leaves the image", o.name)));
                }
            }
        }
        // Groups are contiguous from 0 and correspond one-to-one with motion histories.
        let tracks = self.track_ids();
        let mut by_group: BTreeMap<usize, Vec<ScrewMotion>> = BTreeMap::new();
        for &t in &tracks {
            let history = self.motion_track(t);
            match by_group.get(&self.group_of(t)) {
                Some(h) if *h != history => {
                    return Err(Error::InvalidScene(format!(
                        "track {t} moves differently from the rest of group {}",
                        self.group_of(t)
                    )))
                }
                _ => {
                    by_group.insert(self.group_of(t), history);
                }
            }
        }
        if by_group.keys().copied().ne(0..by_group.len()) {
            return Err(Error::InvalidScene("group ids must be contiguous from 0".into()));
        }
        let histories: Vec<&Vec<ScrewMotion>> = by_group.values().collect();
        for i in 0..histories.len() {
            for j in i + 1..histories.len() {
                if histories[i] == histories[j] {
                    return Err(Error::InvalidScene(format!("groups {i} and {j} share one motion")));
                }
            }
        }
        Ok(())
    }

    /// Track id → group, background group marked.
    pub fn ground_truth(&self) -> Labeling {
        let tracks = self.track_ids();
        let groups: Vec<usize> = tracks.iter().map(|&t| self.group_of(t)).collect();
        Labeling::from_pairs(&tracks, &groups).with_background(Some(self.background.group))
    }
}

/// Owning track and depth per pixel of frame `frame`.
fn render_layers(spec: &SceneSpec, frame: usize) -> Result<(Vec<u32>, Vec<f64>)> {
    let grid = spec.grid();
    let n = spec.width * spec.height;
    let mut tracks = vec![BACKGROUND_TRACK; n];
    let mut z = Vec::with_capacity(n);
    for i in 0..n {
        let (x, y) = grid.at(i);
        z.push(spec.background.depth.depth(x, y));
    }
    let k = frame as f64;
    for (oi, o) in spec.objects.iter().enumerate() {
        let (dx, dy) = (o.drift[0] * k, o.drift[1] * k);
        for i in 0..n {
            let (x, y) = grid.at(i);
            let (lx, ly) = (x - dx, y - dy);
            if o.region.contains(lx, ly) {
                tracks[i] = BACKGROUND_TRACK + 1 + oi as u32;
                z[i] = o.depth.depth(lx, ly);
            }
        }
    }
    if let Some(i) = z.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidScene(format!(
            "non-positive depth {} at pixel {i} of frame {frame}",
            z[i]
        )));
    }
    Ok((tracks, z))
}

/// Track mask and depth map of one frame.
pub fn render_frame(spec: &SceneSpec, frame: usize) -> Result<(MaskFrame, DepthMap)> {
    let (tracks, z) = render_layers(spec, frame)?;
    let data = z
        .iter()
        .map(|&z| match spec.depth_convention {
            DepthConvention::Depth => z as f32,
            DepthConvention::InverseDepth => (1.0 / z) as f32,
        })
        .collect();
    let mask = MaskFrame::new(spec.width, spec.height, tracks)?;
    let depth = DepthMap::new(spec.width, spec.height, data, spec.depth_convention)?;
    Ok((mask, depth))
}

/// Flow in pixels for frame pair `pair`, evaluated on frame `pair`'s layout.
pub fn render_flow(spec: &SceneSpec, pair: usize) -> Result<FlowField> {
    let camera = spec.camera()?;
    let grid = spec.grid();
    let (tracks, z) = render_layers(spec, pair)?;
    let mut data = Vec::with_capacity(2 * tracks.len());
    for (i, (&t, &z)) in tracks.iter().zip(&z).enumerate() {
        let (x, y) = grid.at(i);
        let (u, v) = spec.motion_of(t, pair).flow(x, y, z, camera);
        data.push((u * grid.scale) as f32);
        data.push((v * grid.scale) as f32);
    }
    FlowField::new(spec.width, spec.height, data)
}

/// Flow, depth, mask and ground-truth labeling for frame pair `pair`.
pub fn render_pair(spec: &SceneSpec, pair: usize) -> Result<(FlowField, DepthMap, MaskFrame, Labeling)> {
    spec.validate()?;
    if pair + 1 >= spec.frames {
        return Err(Error::InvalidScene(format!("frame pair {pair} out of range")));
    }
    let flow = render_flow(spec, pair)?;
    let (mask, depth) = render_frame(spec, pair)?;
    Ok((flow, depth, mask, spec.ground_truth()))
}

/// The full clean sequence and its ground truth.
pub fn render_sequence(spec: &SceneSpec) -> Result<(Sequence, Labeling)> {
    spec.validate()?;
    let frames: Vec<(MaskFrame, DepthMap)> = (0..spec.frames)
        .into_par_iter()
        .map(|f| render_frame(spec, f))
        .collect::<Result<_>>()?;
    let flows: Vec<FlowField> = (0..spec.frames - 1)
        .into_par_iter()
        .map(|m| render_flow(spec, m))
        .collect::<Result<_>>()?;
    let (masks, depths) = frames.into_iter().unzip();
    let seq = Sequence::new(spec.track_ids(), masks, flows, depths)?;
    Ok((seq, spec.ground_truth()))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseConfig {
    /// Standard deviation of additive flow noise, pixels.
    pub flow_sigma: f64,
    /// Standard deviation of multiplicative depth noise.
    pub depth_sigma: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn is_zero(&self) -> bool {
        self.flow_sigma == 0.0 && self.depth_sigma == 0.0
    }
}

fn normal(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|_| Error::InvalidConfig(format!("noise sigma must be >= 0, got {sigma}")))
}

pub fn noisy_flow(flow: &FlowField, sigma: f64, seed: u64) -> Result<FlowField> {
    if sigma == 0.0 {
        return Ok(flow.clone());
    }
    let dist = normal(sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = flow
        .data()
        .iter()
        .map(|&v| (f64::from(v) + dist.sample(&mut rng)) as f32)
        .collect();
    FlowField::new(flow.width(), flow.height(), data)
}

pub fn noisy_depth(depth: &DepthMap, sigma: f64, seed: u64) -> Result<DepthMap> {
    if sigma == 0.0 {
        return Ok(depth.clone());
    }
    let dist = normal(sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = depth
        .data()
        .iter()
        .map(|&v| ((f64::from(v) * (1.0 + dist.sample(&mut rng))) as f32).max(DEPTH_FLOOR))
        .collect();
    DepthMap::new(depth.width(), depth.height(), data, depth.convention())
}

/// Gaussian flow noise and multiplicative depth noise; each frame draws from its own stream.
pub fn add_noise(seq: &Sequence, cfg: &NoiseConfig) -> Result<Sequence> {
    if !(cfg.flow_sigma >= 0.0 && cfg.depth_sigma >= 0.0) {
        return Err(Error::InvalidConfig("noise sigmas must be nonnegative".into()));
    }
    let flows = seq
        .flows()
        .par_iter()
        .enumerate()
        .map(|(m, f)| noisy_flow(f, cfg.flow_sigma, derive_seed(cfg.seed, Stream::Noise, m as u64, 0)))
        .collect::<Result<Vec<_>>>()?;
    let depths = seq
        .depths()
        .par_iter()
        .enumerate()
        .map(|(m, d)| noisy_depth(d, cfg.depth_sigma, derive_seed(cfg.seed, Stream::Noise, m as u64, 1)))
        .collect::<Result<Vec<_>>>()?;
    seq.with_flows(flows)?.with_depths(depths)
}

/// Per-frame masks of moving instances: pixels keep their track id unless the track's
/// group is the background group.
pub fn moving_instance_masks(seq: &Sequence, gt: &Labeling) -> Vec<MaskFrame> {
    seq.masks()
        .iter()
        .map(|mask| {
            let labels = mask
                .labels()
                .iter()
                .map(|&id| match gt.group_of(id) {
                    Some(g) if Some(g) != gt.background_group() => id,
                    _ => 0,
                })
                .collect();
            MaskFrame::new(mask.width(), mask.height(), labels).expect("dimensions preserved")
        })
        .collect()
}

pub const GROUND_TRUTH_FILE: &str = "groundtruth.toml";
pub const SCENE_FILE: &str = "scene.toml";

/// Writes cues, `manifest.toml`, `groundtruth.toml`, `scene.toml` and moving-instance masks
/// under `gt/`. Returns the manifest path.
pub fn emit_sequence(spec: &SceneSpec, out_dir: impl AsRef<Path>, noise: &NoiseConfig) -> Result<PathBuf> {
    let out = out_dir.as_ref();
    let (clean, gt) = render_sequence(spec)?;
    let seq = if noise.is_zero() { clean.clone() } else { add_noise(&clean, noise)? };
    let manifest = save_sequence(&seq, out)?;
    let gt_dir = out.join("gt");
    fs::create_dir_all(&gt_dir).map_err(|e| Error::io(&gt_dir, e))?;
    for (i, m) in moving_instance_masks(&clean, &gt).iter().enumerate() {
        write_masks(gt_dir.join(format!("{i:04}.png")), m)?;
    }
    gt.write(out.join(GROUND_TRUTH_FILE))?;
    let scene = out.join(SCENE_FILE);
    fs::write(&scene, spec.to_toml()).map_err(|e| Error::io(&scene, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    ParallaxTrap,
    TwoMovers,
    Rotor,
    SharedMotion,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::ParallaxTrap, Preset::TwoMovers, Preset::Rotor, Preset::SharedMotion];

    pub fn name(self) -> &'static str {
        match self {
            Preset::ParallaxTrap => "parallax-trap",
            Preset::TwoMovers => "two-movers",
            Preset::Rotor => "rotor",
            Preset::SharedMotion => "shared-motion",
        }
    }

    /// Number of ground-truth motion groups.
    pub fn num_groups(self) -> usize {
        match self {
            Preset::TwoMovers => 3,
            _ => 2,
        }
    }

    pub fn scene(self) -> SceneSpec {
        match self {
            Preset::ParallaxTrap => parallax_trap(),
            Preset::TwoMovers => two_movers(),
            Preset::Rotor => rotor(),
            Preset::SharedMotion => shared_motion(),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown preset {s:?}")))
    }
}

const PRESET_W: usize = 128;
const PRESET_H: usize = 96;
const PRESET_FRAMES: usize = 4;

fn base_scene(ego: ScrewMotion, ground: Surface) -> SceneSpec {
    SceneSpec {
        width: PRESET_W,
        height: PRESET_H,
        frames: PRESET_FRAMES,
        focal: 1.0,
        depth_convention: DepthConvention::Depth,
        background: Layer { depth: ground, motion: ego, schedule: None, group: 0 },
        objects: Vec::new(),
    }
}

fn object(name: &str, region: Region, depth: Surface, motion: ScrewMotion, group: usize) -> ObjectSpec {
    ObjectSpec { name: name.into(), region, depth, motion, schedule: None, group, drift: [0.0; 2] }
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Region {
    Region::Rect { x0, y0, x1, y1 }
}

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64) -> Region {
    Region::Ellipse { cx, cy, rx, ry }
}

const FORWARD_EGO: f64 = 0.03;

fn parallax_statics() -> (ScrewMotion, Vec<ObjectSpec>) {
    let ego = ScrewMotion::translation([0.0, 0.0, FORWARD_EGO]);
    let statics = vec![
        object("ridge", rect(-0.95, -0.7, 0.95, -0.45), Surface::constant(16.0), ego, 0),
        object("house", rect(-0.85, -0.3, -0.4, 0.2), Surface::constant(4.0), ego, 0),
        object("tree", ellipse(-0.15, 0.35, 0.15, 0.25), Surface::constant(4.0), ego, 0),
        object("pole", rect(0.5, -0.35, 0.65, 0.55), Surface::constant(1.0), ego, 0),
    ];
    (ego, statics)
}

/// Forward ego-motion over four static depth layers plus a car at depth 4 advancing four
/// times as fast as the camera, whose flow coincides with that of the depth-1 pole.
pub fn parallax_trap() -> SceneSpec {
    let (ego, statics) = parallax_statics();
    let mut scene = base_scene(ego, Surface::constant(16.0));
    scene.objects = statics;
    let car = ScrewMotion::translation([0.0, 0.0, 4.0 * FORWARD_EGO]);
    scene.objects.push(object("car", rect(0.05, 0.3, 0.4, 0.6), Surface::constant(4.0), car, 1));
    scene
}

/// The static part of [`parallax_trap`]: one motion group across four depth layers.
pub fn parallax_static() -> SceneSpec {
    let (ego, statics) = parallax_statics();
    let mut scene = base_scene(ego, Surface::constant(16.0));
    scene.objects = statics;
    scene
}

fn turning_ego() -> ScrewMotion {
    ScrewMotion { tau: [0.0, 0.0, 0.02], omega: [0.0, 0.0, 0.008] }
}

fn ground_plane() -> Surface {
    Surface { z0: 8.0, gx: 0.0, gy: -3.0, amp: 0.0, freq: 0.0 }
}

fn static_blocks(ego: ScrewMotion) -> Vec<ObjectSpec> {
    vec![
        object("wall", rect(-0.95, -0.7, -0.35, -0.1), Surface { gx: 1.0, ..Surface::constant(5.0) }, ego, 0),
        object("kiosk", rect(0.35, -0.7, 0.95, -0.15), Surface::constant(3.0), ego, 0),
        object("hedge", rect(-0.3, 0.35, 0.3, 0.7), Surface { gy: 0.8, ..Surface::constant(2.0) }, ego, 0),
    ]
}

/// Static scenery under turning ego-motion and two independently moving pairs of tracks.
pub fn two_movers() -> SceneSpec {
    let ego = turning_ego();
    let mut scene = base_scene(ego, ground_plane());
    scene.objects = static_blocks(ego);
    let a = ScrewMotion { tau: [0.045, 0.015, 0.02], omega: [0.0, 0.0, 0.008] };
    let b = ScrewMotion { tau: [-0.03, 0.03, 0.05], omega: [0.0, 0.0, -0.01] };
    let depth_a = Surface::constant(2.5);
    let depth_b = Surface::constant(1.8);
    let mut push = |name: &str, region, depth, motion, group, drift: [f64; 2]| {
        let mut o = object(name, region, depth, motion, group);
        o.drift = drift;
        scene.objects.push(o);
    };
    push("cyclist", rect(-0.85, 0.05, -0.6, 0.3), depth_a, a, 1, [0.01, 0.0]);
    push("bicycle", rect(-0.55, 0.1, -0.35, 0.3), depth_a, a, 1, [0.01, 0.0]);
    push("dog", ellipse(0.55, 0.2, 0.12, 0.09), depth_b, b, 2, [-0.01, 0.0]);
    push("leash", rect(0.7, 0.25, 0.85, 0.45), depth_b, b, 2, [-0.01, 0.0]);
    scene
}

/// A three-part body spinning about the optical axis while sliding sideways.
pub fn rotor() -> SceneSpec {
    let ego = turning_ego();
    let mut scene = base_scene(ego, ground_plane());
    scene.objects = static_blocks(ego);
    let spin = ScrewMotion { tau: [0.04, -0.01, 0.02], omega: [0.0, 0.0, 0.035] };
    let depth = Surface::constant(2.2);
    scene.objects.push(object("hub", ellipse(0.55, 0.3, 0.1, 0.1), depth, spin, 1));
    scene.objects.push(object("blade-left", rect(0.3, 0.25, 0.44, 0.35), depth, spin, 1));
    scene.objects.push(object("blade-right", rect(0.66, 0.25, 0.85, 0.35), depth, spin, 1));
    scene
}

/// Two separated objects sharing one full screw motion over uneven depth.
pub fn shared_motion() -> SceneSpec {
    let ego = turning_ego();
    let mut scene = base_scene(ego, ground_plane());
    scene.objects = static_blocks(ego);
    let m = ScrewMotion { tau: [0.02, -0.01, 0.03], omega: [0.002, -0.003, 0.01] };
    let wavy = Surface { z0: 2.5, gx: 0.4, gy: -0.3, amp: 0.3, freq: 9.0 };
    scene.objects.push(object("crate-a", rect(-0.9, 0.05, -0.55, 0.35), wavy, m, 1));
    scene.objects.push(object("crate-b", ellipse(0.65, 0.3, 0.2, 0.15), wavy, m, 1));
    scene
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cues::load_sequence;
    use crate::motion_model::{fit_model, model_residual, sample_pixels, ModelKind, SamplingConfig};

    fn blank(motion: ScrewMotion, z: f64) -> SceneSpec {
        let mut s = base_scene(motion, Surface::constant(z));
        s.width = 16;
        s.height = 12;
        s.frames = 2;
        s
    }

    #[test]
    fn zero_motion_zero_flow() {
        let (flow, ..) = render_pair(&blank(ScrewMotion::default(), 3.0), 0).unwrap();
        assert!(flow.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_translation_is_radial() {
        for f in [0.5, 1.0, 3.0] {
            let mut s = blank(ScrewMotion::translation([0.0, 0.0, 1.0]), 1.0);
            s.focal = f;
            let grid = s.grid();
            let flow = render_flow(&s, 0).unwrap();
            for i in 0..s.width * s.height {
                let (x, y) = grid.at(i);
                let (u, v) = flow.at(i);
                assert!((f64::from(u) / grid.scale + x).abs() < 1e-6);
                assert!((f64::from(v) / grid.scale + y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn roll_is_depth_independent() {
        let m = ScrewMotion { tau: [0.0; 3], omega: [0.0, 0.0, 0.1] };
        let cam = CameraModel::new(2.0).unwrap();
        for (x, y, z) in [(0.3, -0.2, 1.0), (-0.7, 0.5, 40.0), (0.0, 0.9, 0.01)] {
            let (u, v) = m.flow(x, y, z, cam);
            assert!((u + 0.1 * y).abs() < 1e-15);
            assert!((v - 0.1 * x).abs() < 1e-15);
        }
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let flow = FlowField::zeros(64, 64);
        let noisy = noisy_flow(&flow, 0.1, 42).unwrap();
        let n = noisy.data().len() as f64;
        let mean = noisy.data().iter().map(|v| f64::from(*v)).sum::<f64>() / n;
        let std = (noisy.data().iter().map(|v| (f64::from(*v) - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std - 0.1).abs() < 0.01, "std {std}");
        assert_eq!(noisy, noisy_flow(&flow, 0.1, 42).unwrap());
        assert_ne!(noisy, noisy_flow(&flow, 0.1, 43).unwrap());
        assert_eq!(noisy_flow(&flow, 0.0, 42).unwrap(), flow);

        let (seq, _) = render_sequence(&two_movers()).unwrap();
        let cfg = NoiseConfig { flow_sigma: 0.1, depth_sigma: 0.05, seed: 9 };
        let a = add_noise(&seq, &cfg).unwrap();
        let b = add_noise(&seq, &cfg).unwrap();
        assert_eq!(a.flows(), b.flows());
        assert_eq!(a.depths(), b.depths());
        assert!(a.depths().iter().all(|d| d.data().iter().all(|v| *v > 0.0)));
        let zero = add_noise(&seq, &NoiseConfig::default()).unwrap();
        assert_eq!(zero.flows(), seq.flows());
    }

    #[test]
    fn presets_are_valid_and_gentle() {
        for p in Preset::ALL {
            let scene = p.scene();
            scene.validate().unwrap();
            let (seq, gt) = render_sequence(&scene).unwrap();
            assert_eq!(gt.num_groups(), p.num_groups(), "{}", p.name());
            let peak = seq
                .flows()
                .iter()
                .flat_map(|f| f.data().iter())
                .fold(0.0f32, |a, v| a.max(v.abs()));
            assert!(peak < 3.0, "{}: peak flow {peak}", p.name());
            // Every object is visible in every frame.
            for mask in seq.masks() {
                assert_eq!(mask.track_ids().len(), scene.objects.len() + 1, "{}", p.name());
            }
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert_eq!(parallax_trap().objects.len(), 5);
    }

    #[test]
    fn rendered_objects_fit_exactly() {
        let scene = shared_motion();
        let (seq, _) = render_sequence(&scene).unwrap();
        let grid = scene.grid();
        for track in scene.track_ids() {
            for m in 0..seq.pair_count() {
                let s = sample_pixels(&seq, &grid, track, m, &SamplingConfig::default(), 0).unwrap();
                let model = fit_model(ModelKind::LinearDepth, &s).unwrap();
                assert!(model_residual(&model, &s) < 1e-13, "track {track} pair {m}");
            }
        }
    }

    #[test]
    fn shared_motion_is_indistinguishable() {
        let scene = shared_motion();
        let (seq, _) = render_sequence(&scene).unwrap();
        let grid = scene.grid();
        let cfg = SamplingConfig::default();
        let n = scene.objects.len() as u32;
        let (a, b) = (BACKGROUND_TRACK + n - 1, BACKGROUND_TRACK + n);
        for m in 0..seq.pair_count() {
            let sa = sample_pixels(&seq, &grid, a, m, &cfg, 0).unwrap();
            let sb = sample_pixels(&seq, &grid, b, m, &cfg, 0).unwrap();
            let ma = fit_model(ModelKind::LinearDepth, &sa).unwrap();
            let mb = fit_model(ModelKind::LinearDepth, &sb).unwrap();
            assert!((model_residual(&ma, &sb) - model_residual(&mb, &sb)).abs() <= 1e-10);
            assert!((model_residual(&mb, &sa) - model_residual(&ma, &sa)).abs() <= 1e-10);
        }
    }

    #[test]
    fn emit_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let scene = two_movers();
        let manifest = emit_sequence(&scene, dir.path(), &NoiseConfig::default()).unwrap();
        let seq = load_sequence(&manifest).unwrap();
        let (clean, gt) = render_sequence(&scene).unwrap();
        assert_eq!(seq.masks(), clean.masks());
        assert_eq!(seq.flows(), clean.flows());
        assert_eq!(seq.depths(), clean.depths());
        let loaded = Labeling::read(dir.path().join(GROUND_TRUTH_FILE)).unwrap();
        assert_eq!(loaded, gt);
        assert_eq!(loaded.num_groups(), 3);
        assert_eq!(SceneSpec::read(dir.path().join(SCENE_FILE)).unwrap(), scene);
        let gt0 = crate::cues::read_masks(dir.path().join("gt/0000.png")).unwrap();
        assert!(gt0.track_ids().iter().all(|id| gt.group_of(*id) != Some(0)));
        assert_eq!(gt0.track_ids().len(), 4);
    }

    #[test]
    fn scene_toml_parses() {
        let text = r#"
            width = 32
            height = 24
            frames = 3
            depth_convention = "inverse_depth"
            [background]
            group = 0
            depth = { z0 = 10.0 }
            motion = { tau = [0.0, 0.0, 0.01] }
            [[objects]]
            name = "tri"
            group = 1
            region = { shape = "polygon", points = [[-0.5, -0.3], [0.5, -0.3], [0.0, 0.4]] }
            depth = { z0 = 2.0, amp = 0.2, freq = 4.0 }
            motion = { tau = [0.02, 0.0, 0.0], omega = [0.0, 0.0, 0.01] }
        "#;
        let spec: SceneSpec = toml::from_str(text).unwrap();
        spec.validate().unwrap();
        let (mask, depth) = render_frame(&spec, 0).unwrap();
        let grid = spec.grid();
        let i = (0..32 * 24).find(|&i| mask.labels()[i] == 2).unwrap();
        let (x, y) = grid.at(i);
        let want = 1.0 / spec.objects[0].depth.depth(x, y);
        assert!((f64::from(depth.data()[i]) - want).abs() < 1e-6);
        assert_eq!(mask.labels()[0], BACKGROUND_TRACK);
    }

    #[test]
    fn invalid_scenes_rejected() {
        let mut s = two_movers();
        s.objects[0].group = 5;
        assert!(s.validate().is_err());
        let mut s = two_movers();
        s.objects[3].motion = turning_ego();
        assert!(s.validate().is_err(), "mover sharing the ego-motion under its own group");
        let mut s = two_movers();
        s.objects[0].region = rect(0.5, 0.0, 1.5, 0.2);
        assert!(s.validate().is_err());
        let mut s = two_movers();
        s.background.depth = Surface::constant(-1.0);
        assert!(render_sequence(&s).is_err());
        let mut s = two_movers();
        s.focal = 0.0;
        assert!(s.validate().is_err());
    }
}
