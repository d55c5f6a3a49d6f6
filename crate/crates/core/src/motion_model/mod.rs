//! Per-object parametric flow models.
//!
//! Two families are fitted by linear least squares on normalized image
//! coordinates:
//!
//! * the depth-aware model, linear in inverse depth `q`:
//!   ```text
//!   u = a + b·q − c·x·q − d·y + e·x² − f·x·y
//!   v = g + h·q − c·y·q + d·x + e·x·y − f·y²
//!   ```
//!   Its coefficients absorb the focal length of the instantaneous rigid
//!   flow equations (`a = fω₂, b = fτ₁, c = τ₃, d = ω₃, e = ω₂/f,
//!   f = ω₁/f, g = −fω₁, h = fτ₂`), so no intrinsics are needed.
//!   [`LinearForm::Printed`] flips the sign of the `d·x` and `f·y²` terms in
//!   `v` for comparison against that published variant.
//! * the depth-free quadratic model with twelve coefficients.

pub mod lsq;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cues::Sequence;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_SAMPLES: usize = 5000;
pub const DEFAULT_QUORUM: usize = 16;

/// Maps pixel centers onto normalized coordinates with the origin at the image center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordGrid {
    pub width: usize,
    pub height: usize,
    /// Pixels per normalized unit.
    pub scale: f64,
}

pub fn normalize_coords(width: usize, height: usize) -> CoordGrid {
    CoordGrid {
        width,
        height,
        scale: width.max(height) as f64 / 2.0,
    }
}

impl CoordGrid {
    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn for_sequence(seq: &Sequence) -> Self {
        let grid = normalize_coords(seq.width(), seq.height());
        match seq.coord_scale_override() {
            Some(s) => grid.with_scale(s),
            None => grid,
        }
    }

    pub fn to_normalized(&self, col: f64, row: f64) -> (f64, f64) {
        (
            (col - (self.width as f64 - 1.0) / 2.0) / self.scale,
            (row - (self.height as f64 - 1.0) / 2.0) / self.scale,
        )
    }

    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            x * self.scale + (self.width as f64 - 1.0) / 2.0,
            y * self.scale + (self.height as f64 - 1.0) / 2.0,
        )
    }

    /// Normalized coordinates of a flat row-major pixel index.
    pub fn at(&self, index: usize) -> (f64, f64) {
        self.to_normalized((index % self.width) as f64, (index / self.width) as f64)
    }
}

/// Parallel per-pixel arrays for one object in one frame pair. Flow is in normalized units.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PixelSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub q: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl PixelSample {
    pub fn new(x: Vec<f64>, y: Vec<f64>, q: Vec<f64>, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n == 0 || [y.len(), q.len(), u.len(), v.len()].iter().any(|&l| l != n) {
            return Err(Error::DimensionMismatch(format!(
                "sample arrays have lengths {}/{}/{}/{}/{}",
                n,
                y.len(),
                q.len(),
                u.len(),
                v.len()
            )));
        }
        let all = x.iter().chain(&y).chain(&q).chain(&u).chain(&v);
        if let Some(index) = all.clone().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                path: "<sample>".into(),
                index,
            });
        }
        Ok(Self { x, y, q, u, v })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Same pixels with inverse depths multiplied by `factor`.
    pub fn with_depth_scale(&self, factor: f64) -> Self {
        Self {
            q: self.q.iter().map(|q| q * factor).collect(),
            ..self.clone()
        }
    }

    /// Same pixels with flow replaced by `model`'s prediction.
    pub fn with_predicted_flow(&self, model: &FittedModel) -> Self {
        let (u, v) = (0..self.len())
            .map(|i| model.predict(self.x[i], self.y[i], self.q[i]))
            .unzip();
        Self {
            u,
            v,
            ..self.clone()
        }
    }
}

/// A flow model that is linear in its coefficients.
pub trait ParametricModel: Sized {
    const PARAMS: usize;

    /// Writes the regressors of the `u` and `v` equations at one pixel.
    fn regressors(&self, x: f64, y: f64, q: f64, u_row: &mut [f64], v_row: &mut [f64]);

    fn coefficients(&self) -> &[f64];

    fn predict(&self, x: f64, y: f64, q: f64) -> (f64, f64) {
        let mut u_row = vec![0.0; Self::PARAMS];
        let mut v_row = vec![0.0; Self::PARAMS];
        self.regressors(x, y, q, &mut u_row, &mut v_row);
        let c = self.coefficients();
        let dot = |row: &[f64]| row.iter().zip(c).map(|(r, k)| r * k).sum::<f64>();
        (dot(&u_row), dot(&v_row))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearForm {
    /// Signs consistent with the rigid-flow equations.
    #[default]
    Derived,
    /// `v = g + h·q − c·y·q − d·x + e·x·y + f·y²`.
    Printed,
}

/// Coefficients `[a, b, c, d, e, f, g, h]` of the depth-aware model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearMotionModel {
    pub coeffs: [f64; 8],
    pub form: LinearForm,
}

impl LinearMotionModel {
    pub fn zero() -> Self {
        Self {
            coeffs: [0.0; 8],
            form: LinearForm::Derived,
        }
    }

    pub fn a(&self) -> f64 {
        self.coeffs[0]
    }
    pub fn b(&self) -> f64 {
        self.coeffs[1]
    }
    pub fn c(&self) -> f64 {
        self.coeffs[2]
    }
    pub fn d(&self) -> f64 {
        self.coeffs[3]
    }
    pub fn e(&self) -> f64 {
        self.coeffs[4]
    }
    pub fn f_coef(&self) -> f64 {
        self.coeffs[5]
    }
    pub fn g(&self) -> f64 {
        self.coeffs[6]
    }
    pub fn h(&self) -> f64 {
        self.coeffs[7]
    }
}

impl ParametricModel for LinearMotionModel {
    const PARAMS: usize = 8;

    fn regressors(&self, x: f64, y: f64, q: f64, u_row: &mut [f64], v_row: &mut [f64]) {
        linear_regressors(self.form, x, y, q, u_row, v_row);
    }

    fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }
}

fn linear_regressors(form: LinearForm, x: f64, y: f64, q: f64, u_row: &mut [f64], v_row: &mut [f64]) {
    u_row.copy_from_slice(&[1.0, q, -x * q, -y, x * x, -x * y, 0.0, 0.0]);
    let (dx, fy2) = match form {
        LinearForm::Derived => (x, -y * y),
        LinearForm::Printed => (-x, y * y),
    };
    v_row.copy_from_slice(&[0.0, 0.0, -y * q, dx, x * y, fy2, 1.0, q]);
}

/// Coefficients `[a..l]`: `u = a+bx+cy+dx²+exy+fy²`, `v = g+hx+iy+jx²+kxy+ly²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticMotionModel {
    pub coeffs: [f64; 12],
}

impl ParametricModel for QuadraticMotionModel {
    const PARAMS: usize = 12;

    fn regressors(&self, x: f64, y: f64, _q: f64, u_row: &mut [f64], v_row: &mut [f64]) {
        quadratic_regressors(x, y, u_row, v_row);
    }

    fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }
}

fn quadratic_regressors(x: f64, y: f64, u_row: &mut [f64], v_row: &mut [f64]) {
    let basis = [1.0, x, y, x * x, x * y, y * y];
    u_row[..6].copy_from_slice(&basis);
    u_row[6..].fill(0.0);
    v_row[..6].fill(0.0);
    v_row[6..].copy_from_slice(&basis);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Depth-aware eight-parameter model.
    #[default]
    LinearDepth,
    /// Depth-aware model with the alternative `v` signs.
    LinearDepthPrinted,
    /// Twelve-parameter flow-only model.
    Quadratic,
}

impl ModelKind {
    pub fn params(self) -> usize {
        match self {
            ModelKind::LinearDepth | ModelKind::LinearDepthPrinted => 8,
            ModelKind::Quadratic => 12,
        }
    }

    fn regressors(self, x: f64, y: f64, q: f64, u_row: &mut [f64], v_row: &mut [f64]) {
        match self {
            ModelKind::LinearDepth => linear_regressors(LinearForm::Derived, x, y, q, u_row, v_row),
            ModelKind::LinearDepthPrinted => {
                linear_regressors(LinearForm::Printed, x, y, q, u_row, v_row)
            }
            ModelKind::Quadratic => quadratic_regressors(x, y, u_row, v_row),
        }
    }
}

/// Either model family, as produced by [`fit_model`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FittedModel {
    Linear(LinearMotionModel),
    Quadratic(QuadraticMotionModel),
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            FittedModel::Linear(m) if m.form == LinearForm::Printed => ModelKind::LinearDepthPrinted,
            FittedModel::Linear(_) => ModelKind::LinearDepth,
            FittedModel::Quadratic(_) => ModelKind::Quadratic,
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        match self {
            FittedModel::Linear(m) => m.coefficients(),
            FittedModel::Quadratic(m) => m.coefficients(),
        }
    }

    pub fn from_coefficients(kind: ModelKind, coeffs: &[f64]) -> Result<Self> {
        if coeffs.len() != kind.params() {
            return Err(Error::DimensionMismatch(format!(
                "{kind:?} takes {} coefficients, got {}",
                kind.params(),
                coeffs.len()
            )));
        }
        Ok(match kind {
            ModelKind::LinearDepth | ModelKind::LinearDepthPrinted => {
                FittedModel::Linear(LinearMotionModel {
                    coeffs: coeffs.try_into().expect("length checked"),
                    form: if kind == ModelKind::LinearDepth {
                        LinearForm::Derived
                    } else {
                        LinearForm::Printed
                    },
                })
            }
            ModelKind::Quadratic => FittedModel::Quadratic(QuadraticMotionModel {
                coeffs: coeffs.try_into().expect("length checked"),
            }),
        })
    }

    pub fn predict(&self, x: f64, y: f64, q: f64) -> (f64, f64) {
        match self {
            FittedModel::Linear(m) => m.predict(x, y, q),
            FittedModel::Quadratic(m) => m.predict(x, y, q),
        }
    }
}

/// Stacked design matrix and target: rows alternate between `u` and `v` of each pixel.
pub fn design_system(kind: ModelKind, s: &PixelSample) -> (DMatrix<f64>, DVector<f64>) {
    let p = kind.params();
    let n = s.len();
    let mut a = DMatrix::zeros(2 * n, p);
    let mut b = DVector::zeros(2 * n);
    let mut u_row = vec![0.0; p];
    let mut v_row = vec![0.0; p];
    for i in 0..n {
        kind.regressors(s.x[i], s.y[i], s.q[i], &mut u_row, &mut v_row);
        for j in 0..p {
            a[(2 * i, j)] = u_row[j];
            a[(2 * i + 1, j)] = v_row[j];
        }
        b[2 * i] = s.u[i];
        b[2 * i + 1] = s.v[i];
    }
    (a, b)
}

/// Least-squares fit of `kind` to `s`, requiring at least `quorum` pixels.
pub fn fit_model_with_quorum(kind: ModelKind, s: &PixelSample, quorum: usize) -> Result<FittedModel> {
    let needed = quorum.max(1).max(kind.params().div_ceil(2));
    if s.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            got: s.len(),
        });
    }
    let (a, b) = design_system(kind, s);
    let sol = lsq::solve_least_squares(&a, &b)?;
    FittedModel::from_coefficients(kind, sol.x.as_slice())
}

pub fn fit_model(kind: ModelKind, s: &PixelSample) -> Result<FittedModel> {
    fit_model_with_quorum(kind, s, DEFAULT_QUORUM)
}

pub fn fit_linear_model(s: &PixelSample) -> Result<LinearMotionModel> {
    match fit_model(ModelKind::LinearDepth, s)? {
        FittedModel::Linear(m) => Ok(m),
        FittedModel::Quadratic(_) => unreachable!("linear kind yields linear model"),
    }
}

pub fn fit_quadratic_model(s: &PixelSample) -> Result<QuadraticMotionModel> {
    match fit_model(ModelKind::Quadratic, s)? {
        FittedModel::Quadratic(m) => Ok(m),
        FittedModel::Linear(_) => unreachable!("quadratic kind yields quadratic model"),
    }
}

/// Predicted `(u, v)` at every pixel of `s`.
pub fn predict_flow(model: &FittedModel, s: &PixelSample) -> Vec<(f64, f64)> {
    (0..s.len())
        .map(|i| model.predict(s.x[i], s.y[i], s.q[i]))
        .collect()
}

/// Sum over pixels of squared flow error.
pub fn sum_squared_error(model: &FittedModel, s: &PixelSample) -> f64 {
    (0..s.len())
        .map(|i| {
            let (pu, pv) = model.predict(s.x[i], s.y[i], s.q[i]);
            (pu - s.u[i]).powi(2) + (pv - s.v[i]).powi(2)
        })
        .sum()
}

/// Mean over pixels of squared flow error.
pub fn model_residual(model: &FittedModel, s: &PixelSample) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    sum_squared_error(model, s) / s.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingConfig {
    pub max_samples: usize,
    pub quorum: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            max_samples: DEFAULT_MAX_SAMPLES,
            quorum: DEFAULT_QUORUM,
        }
    }
}

/// Draws up to `max_samples` pixels of `track_id` in frame `pair` without replacement and
/// attaches that pair's flow and the frame's inverse depth.
pub fn sample_pixels(
    seq: &Sequence,
    grid: &CoordGrid,
    track_id: u32,
    pair: usize,
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<PixelSample> {
    if pair >= seq.pair_count() {
        return Err(Error::InvalidConfig(format!(
            "frame pair {pair} out of range ({} pairs)",
            seq.pair_count()
        )));
    }
    let pixels: Vec<usize> = seq.masks()[pair].pixels_of(track_id).collect();
    if pixels.len() < cfg.quorum.max(1) {
        return Err(Error::InsufficientData {
            needed: cfg.quorum.max(1),
            got: pixels.len(),
        });
    }
    let chosen: Vec<usize> = if pixels.len() <= cfg.max_samples {
        pixels
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks = rand::seq::index::sample(&mut rng, pixels.len(), cfg.max_samples).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| pixels[i]).collect()
    };
    let flow = &seq.flows()[pair];
    let q = seq.inverse_depths()[pair].values();
    let n = chosen.len();
    let mut s = PixelSample {
        x: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        q: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
    };
    for idx in chosen {
        let (x, y) = grid.at(idx);
        let (u, v) = flow.at(idx);
        s.x.push(x);
        s.y.push(y);
        s.q.push(q[idx]);
        s.u.push(f64::from(u) / grid.scale);
        s.v.push(f64::from(v) / grid.scale);
    }
    Ok(s)
}
