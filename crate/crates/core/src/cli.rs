//! Command-line front end: `segment`, `simulate`, `evaluate`, `visualize`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use image::{Rgb, RgbImage};

use crate::affinity::DEFAULT_ORK_FRACTION;
use crate::clustering::Labeling;
use crate::cues::{load_sequence, read_masks, FlowField, MaskFrame};
use crate::evaluation::{adjusted_rand, prf_metrics};
use crate::motion_model::{ModelKind, SamplingConfig, DEFAULT_MAX_SAMPLES, DEFAULT_QUORUM};
use crate::pipeline::{run_segment, write_segment_outputs, Ablation, RunConfig};
use crate::proposal_filter::{FilterConfig, DEFAULT_IOU_THRESHOLD, DEFAULT_MAX_AREA_FRACTION, DEFAULT_MIN_PIXELS};
use crate::synthetic::{emit_sequence, NoiseConfig, Preset, SceneSpec};

pub const THREADS_ENV: &str = "MOSEG_THREADS";

#[derive(Debug, Parser)]
#[command(name = "moseg", version, about = "Motion segmentation of tracked object proposals")]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster the tracks of a sequence into motion groups.
    Segment(SegmentArgs),
    /// Render a synthetic rigid scene with ground truth.
    Simulate(SimulateArgs),
    /// Score predicted masks against ground truth.
    Evaluate(EvaluateArgs),
    /// Color-coded group overlays and flow images.
    Visualize(VisualizeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    LinearDepth,
    LinearDepthPrinted,
    Quadratic,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::LinearDepth => ModelKind::LinearDepth,
            ModelArg::LinearDepthPrinted => ModelKind::LinearDepthPrinted,
            ModelArg::Quadratic => ModelKind::Quadratic,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AblationArg {
    Full,
    FlowOnly,
    ProposalsBaseline,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Full => Ablation::Full,
            AblationArg::FlowOnly => Ablation::FlowOnly,
            AblationArg::ProposalsBaseline => Ablation::ProposalsBaseline,
        }
    }
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of motion groups K.
    #[arg(long = "num-motions", value_name = "K")]
    pub num_motions: usize,
    #[arg(long = "motion-model", value_enum, default_value = "linear-depth")]
    pub motion_model: ModelArg,
    /// Inlier count as a fraction of the objects visible in a frame pair.
    #[arg(long = "ork-fraction", default_value_t = DEFAULT_ORK_FRACTION)]
    pub ork_fraction: f64,
    #[arg(long, value_enum, default_value = "full")]
    pub ablation: AblationArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "iou-threshold", default_value_t = DEFAULT_IOU_THRESHOLD)]
    pub iou_threshold: f64,
    #[arg(long = "max-area-fraction", default_value_t = DEFAULT_MAX_AREA_FRACTION)]
    pub max_area_fraction: f64,
    #[arg(long = "min-pixels", default_value_t = DEFAULT_MIN_PIXELS)]
    pub min_pixels: usize,
    #[arg(long = "max-samples", default_value_t = DEFAULT_MAX_SAMPLES)]
    pub max_samples: usize,
    /// Collapse all non-background groups into one moving label.
    #[arg(long)]
    pub binary: bool,
    /// Use the group of this track as background instead of the largest group.
    #[arg(long = "background-track", value_name = "ID")]
    pub background_track: Option<u32>,
    /// Also write the similarity matrix as plain text to this path.
    #[arg(long = "dump-affinity", value_name = "PATH")]
    pub dump_affinity: Option<PathBuf>,
}

impl SegmentArgs {
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            num_motions: self.num_motions,
            model: self.motion_model.into(),
            ork_fraction: self.ork_fraction,
            seed: self.seed,
            ablation: self.ablation.into(),
            filter: FilterConfig {
                iou_threshold: self.iou_threshold,
                max_area_fraction: self.max_area_fraction,
            },
            min_pixels: self.min_pixels,
            sampling: SamplingConfig { max_samples: self.max_samples, quorum: DEFAULT_QUORUM },
            binary: self.binary,
            background_track: self.background_track,
        }
    }
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("scene").required(true).args(["preset", "spec"]))]
pub struct SimulateArgs {
    /// One of parallax-trap, two-movers, rotor, shared-motion.
    #[arg(long)]
    pub preset: Option<String>,
    /// Scene description in TOML.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Flow noise standard deviation in pixels.
    #[arg(long = "flow-noise", default_value_t = 0.0)]
    pub flow_noise: f64,
    /// Relative depth noise standard deviation.
    #[arg(long = "depth-noise", default_value_t = 0.0)]
    pub depth_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of predicted mask PNGs.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth moving-object mask PNGs.
    #[arg(long)]
    pub gt: PathBuf,
    /// JSON report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-frame CSV path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Predicted labeling, for the adjusted Rand index.
    #[arg(long = "pred-labels", requires = "gt_labels")]
    pub pred_labels: Option<PathBuf>,
    /// Ground-truth labeling, for the adjusted Rand index.
    #[arg(long = "gt-labels", requires = "pred_labels")]
    pub gt_labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    /// Directory of label mask PNGs.
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Sequence manifest; adds flow images and blends overlays onto them.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Labeling whose background group is drawn dim.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

/// Parses `args` and runs the chosen subcommand.
pub fn run_from<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    run(cli)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Segment(a) => cmd_segment(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Visualize(a) => cmd_visualize(&a),
    }
}

pub fn cmd_segment(a: &SegmentArgs) -> anyhow::Result<()> {
    let seq = load_sequence(&a.manifest)?;
    let out = run_segment(&seq, &a.run_config())?;
    fs::create_dir_all(&a.out).with_context(|| format!("{}: cannot create output directory", a.out.display()))?;
    write_segment_outputs(&out, &a.out, a.dump_affinity.as_deref())?;
    println!(
        "{} tracks in {} groups; wrote {}",
        out.track_ids.len(),
        out.labeling.num_groups(),
        a.out.display()
    );
    Ok(())
}

pub fn cmd_simulate(a: &SimulateArgs) -> anyhow::Result<()> {
    let scene = match (&a.preset, &a.spec) {
        (Some(name), _) => name
            .parse::<Preset>()
            .map_err(|_| anyhow::anyhow!("--preset: unknown preset {name:?}"))?
            .scene(),
        (None, Some(path)) => SceneSpec::read(path)?,
        (None, None) => bail!("--preset or --spec is required"),
    };
    if !(a.flow_noise >= 0.0) {
        bail!("--flow-noise must be nonnegative");
    }
    if !(a.depth_noise >= 0.0) {
        bail!("--depth-noise must be nonnegative");
    }
    let noise = NoiseConfig { flow_sigma: a.flow_noise, depth_sigma: a.depth_noise, seed: a.seed };
    let manifest = emit_sequence(&scene, &a.out, &noise)?;
    println!("{}", manifest.display());
    Ok(())
}

/// PNG files of `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).with_context(|| format!("{}: cannot read directory", dir.display()))?;
    let mut files = Vec::new();
    for e in entries {
        let p = e.with_context(|| format!("{}: cannot read directory", dir.display()))?.path();
        if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn read_mask_dir(dir: &Path) -> anyhow::Result<Vec<MaskFrame>> {
    list_pngs(dir)?.iter().map(|p| Ok(read_masks(p)?)).collect()
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> anyhow::Result<()> {
    let pred = read_mask_dir(&a.pred)?;
    let gt = read_mask_dir(&a.gt)?;
    if pred.len() != gt.len() {
        bail!(
            "{} has {} frames but {} has {}",
            a.pred.display(),
            pred.len(),
            a.gt.display(),
            gt.len()
        );
    }
    if pred.is_empty() {
        bail!("{}: no mask frames found", a.pred.display());
    }
    let mut report = prf_metrics(&pred, &gt)?;
    if let (Some(p), Some(g)) = (&a.pred_labels, &a.gt_labels) {
        let pred_lab = Labeling::read(p)?;
        let gt_lab = Labeling::read(g)?.restricted_to(&pred_lab.track_ids());
        let ari = adjusted_rand(&pred_lab, &gt_lab)
            .with_context(|| format!("{} tracks missing from {}", p.display(), g.display()))?;
        report = report.with_ari(ari);
    }
    if let Some(path) = &a.report {
        report.write_json(path)?;
    }
    if let Some(path) = &a.csv {
        report.write_csv(path)?;
    }
    let ari = report.ari.map(|v| format!(" ARI={v:.4}")).unwrap_or_default();
    println!("Pu={:.4} Ru={:.4} Fu={:.4}{ari} over {} frames", report.pu, report.ru, report.fu, report.scored_frames);
    Ok(())
}

fn hsv(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|t| ((t + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

pub const UNLABELED_COLOR: [u8; 3] = [24, 24, 24];

/// Fixed palette: hues spread by the golden ratio, label 0 near black.
pub fn label_color(label: u32) -> [u8; 3] {
    if label == 0 {
        UNLABELED_COLOR
    } else {
        hsv(f64::from(label - 1) * 0.618_033_988_75, 0.85, 0.95)
    }
}

/// Middlebury-style coloring: hue from direction, saturation from magnitude.
pub fn flow_image(flow: &FlowField) -> RgbImage {
    let max = flow
        .data()
        .chunks(2)
        .map(|c| f64::from(c[0]).hypot(f64::from(c[1])))
        .fold(0.0f64, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    RgbImage::from_fn(flow.width() as u32, flow.height() as u32, |c, r| {
        let (u, v) = flow.get(c as usize, r as usize);
        let (u, v) = (f64::from(u), f64::from(v));
        let hue = ((-v).atan2(-u) / std::f64::consts::PI + 1.0) / 2.0;
        Rgb(hsv(hue, (u.hypot(v) * scale).min(1.0), 1.0))
    })
}

/// Group colors over an optional base image; `dim_label` is drawn at reduced brightness.
pub fn overlay(mask: &MaskFrame, base: Option<&RgbImage>, dim_label: Option<u32>) -> RgbImage {
    RgbImage::from_fn(mask.width() as u32, mask.height() as u32, |c, r| {
        let label = mask.label(c as usize, r as usize);
        let mut col = label_color(label);
        if Some(label) == dim_label {
            col = col.map(|x| x / 3);
        }
        match base {
            Some(img) if label != 0 => {
                let b = img.get_pixel(c, r).0;
                Rgb([0, 1, 2].map(|k| ((u16::from(col[k]) * 3 + u16::from(b[k])) / 4) as u8))
            }
            _ => Rgb(col),
        }
    })
}

fn save_rgb(img: &RgbImage, path: &Path) -> anyhow::Result<()> {
    img.save(path).with_context(|| format!("{}: cannot write image", path.display()))
}

pub fn cmd_visualize(a: &VisualizeArgs) -> anyhow::Result<()> {
    let files = list_pngs(&a.masks)?;
    if files.is_empty() {
        bail!("{}: no mask frames found", a.masks.display());
    }
    let flows = match &a.manifest {
        Some(m) => load_sequence(m)?.flows().to_vec(),
        None => Vec::new(),
    };
    let dim_label = match &a.labels {
        Some(p) => Labeling::read(p)?.background_group().map(|g| g as u32 + 1),
        None => None,
    };
    fs::create_dir_all(&a.out).with_context(|| format!("{}: cannot create output directory", a.out.display()))?;
    for (i, file) in files.iter().enumerate() {
        let mask = read_masks(file)?;
        let base = flows.get(i).map(flow_image);
        if let Some(b) = &base {
            if (b.width() as usize, b.height() as usize) != (mask.width(), mask.height()) {
                bail!("{}: mask size differs from the flow in the manifest", file.display());
            }
            save_rgb(b, &a.out.join(format!("flow_{i:04}.png")))?;
        }
        let name = file.file_name().expect("listed file has a name");
        save_rgb(&overlay(&mask, base.as_ref(), dim_label), &a.out.join(name))?;
    }
    println!("{} overlays in {}", files.len(), a.out.display());
    Ok(())
}

/// One-line form of a clap error: the message lines before the usage block.
pub fn one_line_clap_error(e: &clap::Error) -> String {
    let text = e.to_string();
    let lines: Vec<&str> = text
        .lines()
        .map(str::trim)
        .take_while(|l| !l.starts_with("Usage:"))
        .filter(|l| !l.is_empty() && !l.starts_with("For more information") && !l.starts_with("tip:"))
        .collect();
    lines.join(" ").trim_start_matches("error: ").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_distinct_and_dim_background() {
        let colors: Vec<[u8; 3]> = (0..8).map(label_color).collect();
        for i in 0..colors.len() {
            for j in i + 1..colors.len() {
                assert_ne!(colors[i], colors[j]);
            }
        }
        let m = MaskFrame::new(2, 1, vec![1, 2]).unwrap();
        let img = overlay(&m, None, Some(1));
        assert!(img.get_pixel(0, 0).0.iter().all(|c| *c < 90));
        assert_eq!(img.get_pixel(1, 0).0, label_color(2));
    }

    #[test]
    fn flow_wheel_directions() {
        let f = FlowField::new(2, 1, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let img = flow_image(&f);
        assert_ne!(img.get_pixel(0, 0), img.get_pixel(1, 0));
        let still = flow_image(&FlowField::zeros(2, 2));
        assert!(still.pixels().all(|p| p.0 == [255, 255, 255]));
    }

    #[test]
    fn clap_errors_fit_on_one_line() {
        let e = Cli::try_parse_from(["moseg", "segment", "--out", "x", "--num-motions", "2"]).unwrap_err();
        let line = one_line_clap_error(&e);
        assert!(!line.contains('\n'));
        assert!(line.contains("--manifest"), "{line}");
        let e = Cli::try_parse_from(["moseg", "segment", "--manifest", "m", "--out", "x", "--num-motions", "z"])
            .unwrap_err();
        assert!(one_line_clap_error(&e).contains("--num-motions"));
    }
}
