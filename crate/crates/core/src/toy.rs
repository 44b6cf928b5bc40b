//! Synthetic radius-alignment task.
//!
//! A single shared scaling operator is trained so that every lifted sample
//! `ŷ_i` has its hyperbolic radius multiplied by a prescribed target
//! `s_i`. Since Möbius matrix multiplication scales radii by `‖W_s ŷ‖/‖ŷ‖`,
//! the loss is `mean_i (‖W_s ŷ_i‖/‖ŷ_i‖ − s_i)²`.
//!
//! Sample directions are generated in one of two ways:
//!
//! - uniform targets: directions come from random orthonormal frames, so the
//!   second moments of each coordinate are balanced exactly and a uniform
//!   diagonal stays uniform along the whole optimization path;
//! - mixed targets: a hidden teacher `T = Q diag(λ) Qᵀ` with `λ` spread over
//!   the target range is drawn first, and each direction is placed on the
//!   level set `‖T u‖ = s_i`. The task is then realizable by a dense operator
//!   but not by a diagonal or narrow banded one.
//!
//! A fresh target `s_i` is drawn uniformly from the configured range in both
//! cases.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::adapter::{representation_radius_scale, FrozenWeight};
use crate::error::{HyperError, Result};
use crate::grad::{radius_loss_and_grad, sgd_step, BOUNDARY_BAND_FACTOR};
use crate::poincare::{
    hyperbolic_radius, log_map_origin, mobius_matrix_mul, norm, BallPoint, Curvature,
};
use crate::scaling::{ScalingKind, ScalingOperator};

/// Loss below which a run counts as converged.
pub const CONVERGENCE_THRESHOLD: f64 = 1e-4;
/// Range of `√c‖x‖` for generated base points.
pub const BASE_NORM_RANGE: (f64, f64) = (0.1, 0.8);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TargetSpec {
    Mixed { low: f64, high: f64 },
    Uniform { scale: f64 },
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec::Mixed {
            low: 0.5,
            high: 2.0,
        }
    }
}

impl TargetSpec {
    fn bounds(&self) -> (f64, f64) {
        match *self {
            TargetSpec::Mixed { low, high } => (low, high),
            TargetSpec::Uniform { scale } => (scale, scale),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ToyTask {
    pub dim: usize,
    pub columns: usize,
    pub samples: usize,
    pub curvature: Curvature,
    pub targets: TargetSpec,
    pub seed: u64,
}

impl Default for ToyTask {
    fn default() -> Self {
        Self {
            dim: 32,
            columns: 64,
            samples: 256,
            curvature: Curvature::default(),
            targets: TargetSpec::default(),
            seed: 0,
        }
    }
}

impl ToyTask {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.columns == 0 || self.samples == 0 {
            return Err(HyperError::config("dim, columns and samples must be >= 1"));
        }
        let (low, high) = self.targets.bounds();
        if !(low.is_finite() && high.is_finite() && low > 0.0 && low <= high) {
            return Err(HyperError::config(format!(
                "target range must satisfy 0 < low <= high, got [{low}, {high}]"
            )));
        }
        if let TargetSpec::Mixed { .. } = self.targets {
            if low == high {
                return Err(HyperError::config("mixed targets need low < high"));
            }
        }
        // Largest target applied to the outermost base point must stay clear
        // of the clamp band.
        let outer = (high * BASE_NORM_RANGE.1.atanh()).tanh();
        if outer > 1.0 - BOUNDARY_BAND_FACTOR * self.curvature.eps() {
            return Err(HyperError::config(format!(
                "target scale {high} pushes base points into the boundary band"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Lifted base points `ŷ_i`.
    pub points: Vec<BallPoint>,
    /// Tangent representations `y₀_i = log₀(ŷ_i)`, one per row.
    pub tangents: Array2<f64>,
    pub target_scales: Vec<f64>,
    /// Frozen weight used to report per-column effects of a trained operator.
    pub frozen: FrozenWeight,
    /// Dense operator that realizes every target exactly, when one was planted.
    pub teacher: Option<Array2<f64>>,
}

/// Random orthogonal matrix from Gram-Schmidt on a Gaussian matrix.
fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    loop {
        let mut q = Array2::<f64>::from_shape_simple_fn((n, n), || rng.sample(StandardNormal));
        let mut ok = true;
        for j in 0..n {
            let mut col = q.column(j).to_owned();
            for i in 0..j {
                let prev = q.column(i);
                col = &col - &(&prev * prev.dot(&col));
            }
            let len = norm(col.view());
            if len < 1e-8 {
                ok = false;
                break;
            }
            q.column_mut(j).assign(&(col / len));
        }
        if ok {
            return q;
        }
    }
}

/// Unit direction `u` with `‖diag(λ) u‖ = s`, expressed in the eigenbasis.
fn level_set_direction(rng: &mut ChaCha8Rng, eig: &[f64], s: f64) -> Option<Array1<f64>> {
    let g = Array1::<f64>::from_shape_simple_fn(eig.len(), || rng.sample(StandardNormal));
    let (mut lo_w, mut lo_m, mut hi_w, mut hi_m) = (0.0, 0.0, 0.0, 0.0);
    for (&l, &x) in eig.iter().zip(&g) {
        if l < s {
            lo_w += x * x;
            lo_m += l * l * x * x;
        } else {
            hi_w += x * x;
            hi_m += l * l * x * x;
        }
    }
    if lo_w == 0.0 || hi_w == 0.0 {
        return None;
    }
    // α²·lo_w + β²·hi_w = 1 and α²·lo_m + β²·hi_m = s².
    let det = lo_w * hi_m - hi_w * lo_m;
    let alpha2 = (hi_m - hi_w * s * s) / det;
    let beta2 = (lo_w * s * s - lo_m) / det;
    if !(alpha2 >= 0.0 && beta2 >= 0.0) {
        return None;
    }
    let (alpha, beta) = (alpha2.sqrt(), beta2.sqrt());
    let u = Array1::from_iter(
        eig.iter()
            .zip(&g)
            .map(|(&l, &x)| if l < s { alpha * x } else { beta * x }),
    );
    let len = norm(u.view());
    Some(u / len)
}

pub fn generate_dataset(task: &ToyTask) -> Result<Dataset> {
    task.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let n = task.dim;
    let k = task.curvature;

    let mut directions = Array2::<f64>::zeros((task.samples, n));
    let mut target_scales = Vec::with_capacity(task.samples);
    let mut teacher = None;
    match task.targets {
        TargetSpec::Uniform { scale } => {
            let mut frame = random_orthogonal(&mut rng, n);
            for i in 0..task.samples {
                if i > 0 && i % n == 0 {
                    frame = random_orthogonal(&mut rng, n);
                }
                directions.row_mut(i).assign(&frame.column(i % n));
                target_scales.push(scale);
            }
        }
        TargetSpec::Mixed { low, high } => {
            let basis = random_orthogonal(&mut rng, n);
            let eig: Vec<f64> = if n == 1 {
                vec![0.5 * (low + high)]
            } else {
                (0..n)
                    .map(|i| low + (high - low) * i as f64 / (n - 1) as f64)
                    .collect()
            };
            if n > 1 {
                let diag = Array2::from_diag(&Array1::from(eig.clone()));
                teacher = Some(basis.dot(&diag).dot(&basis.t()));
            }
            for i in 0..task.samples {
                let (s, u) = loop {
                    let s = rng.random_range(low..high);
                    if n == 1 {
                        break (s, Array1::from_elem(1, 1.0));
                    }
                    if let Some(u) = level_set_direction(&mut rng, &eig, s) {
                        break (s, basis.dot(&u));
                    }
                };
                directions.row_mut(i).assign(&u);
                target_scales.push(s);
            }
        }
    }

    let (lo, hi) = BASE_NORM_RANGE;
    let mut points = Vec::with_capacity(task.samples);
    let mut tangents = Array2::<f64>::zeros((task.samples, n));
    for (i, dir) in directions.axis_iter(Axis(0)).enumerate() {
        let a = rng.random_range(lo..=hi);
        let p = BallPoint::new(&dir * (a / k.sqrt()), k)?;
        tangents.row_mut(i).assign(&log_map_origin(&p).coords());
        points.push(p);
    }

    let col_scale = 0.5 / (k.sqrt() * (n as f64).sqrt());
    let frozen = FrozenWeight::new(Array2::from_shape_simple_fn((n, task.columns), || {
        col_scale * rng.sample::<f64, _>(StandardNormal)
    }))?;

    Ok(Dataset {
        points,
        tangents,
        target_scales,
        frozen,
        teacher,
    })
}

/// Mean squared error between achieved radius ratios (through the forward
/// adapter path) and the targets.
pub fn radius_loss(ws: &ScalingOperator, data: &Dataset) -> Result<f64> {
    Ok(achieved_scales(ws, data)?
        .iter()
        .zip(&data.target_scales)
        .map(|(a, t)| (a - t).powi(2))
        .sum::<f64>()
        / data.target_scales.len() as f64)
}

/// Per-sample ratio `‖W_s ŷ_i‖/‖ŷ_i‖`.
pub fn achieved_scales(ws: &ScalingOperator, data: &Dataset) -> Result<Vec<f64>> {
    let k = data
        .points
        .first()
        .map(|p| p.curvature())
        .unwrap_or_default();
    data.tangents
        .rows()
        .into_iter()
        .map(|y0| representation_radius_scale(y0, ws, k).map(|(s, _)| s))
        .collect()
}

/// `W_s ⊗_c ŷ_i` for every sample.
pub fn adjusted_points(ws: &ScalingOperator, data: &Dataset) -> Result<Vec<BallPoint>> {
    data.points
        .iter()
        .map(|p| mobius_matrix_mul(ws, p))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainConfig {
    pub kind: ScalingKind,
    pub lr: f64,
    pub momentum: f64,
    pub max_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainResult {
    /// Loss before every update, plus the loss after the last one.
    pub loss_curve: Vec<f64>,
    pub final_scales: Vec<f64>,
    /// Number of updates applied.
    pub steps: usize,
    pub converged: bool,
    pub scaling: ScalingOperator,
}

impl TrainResult {
    pub fn final_loss(&self) -> f64 {
        *self.loss_curve.last().expect("loss curve is never empty")
    }
}

/// Full-batch SGD with momentum from the identity operator. Stops early only
/// at an exact stationary point (all-zero gradient).
pub fn train(task: &ToyTask, cfg: &TrainConfig) -> Result<TrainResult> {
    let data = generate_dataset(task)?;
    train_on(&data, task.dim, cfg)
}

pub fn train_on(data: &Dataset, dim: usize, cfg: &TrainConfig) -> Result<TrainResult> {
    if !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return Err(HyperError::config(format!(
            "learning rate must be > 0, got {}",
            cfg.lr
        )));
    }
    if !(0.0..1.0).contains(&cfg.momentum) {
        return Err(HyperError::config(format!(
            "momentum must lie in [0, 1), got {}",
            cfg.momentum
        )));
    }
    let mut ws = ScalingOperator::init_identity(cfg.kind, dim)?;
    let mut velocity = vec![0.0; ws.param_count()];
    let mut last_finite = ws.params().to_vec();
    let mut loss_curve = Vec::with_capacity(cfg.max_steps + 1);
    let mut steps = 0;
    loop {
        let (loss, grad) = radius_loss_and_grad(&ws, &data.points, &data.target_scales)?;
        if !loss.is_finite() || grad.grads.iter().any(|g| !g.is_finite()) {
            return Err(HyperError::Divergence {
                step: steps,
                loss_curve,
                params: last_finite,
            });
        }
        loss_curve.push(loss);
        if steps == cfg.max_steps || grad.grads.iter().all(|&g| g == 0.0) {
            break;
        }
        last_finite.copy_from_slice(ws.params());
        sgd_step(
            ws.params_mut(),
            &grad.grads,
            &mut velocity,
            cfg.lr,
            cfg.momentum,
        )?;
        steps += 1;
    }
    let final_scales = achieved_scales(&ws, data)?;
    let converged = *loss_curve.last().unwrap() < CONVERGENCE_THRESHOLD;
    Ok(TrainResult {
        loss_curve,
        final_scales,
        steps,
        converged,
        scaling: ws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadiusHistogram {
    pub bins: Vec<HistogramBin>,
    /// Radius that maps to 1.0: `(2/√c)·artanh(1 − ε_ball)`.
    pub normalization: f64,
    pub mean_radius: f64,
    pub mean_normalized: f64,
}

impl RadiusHistogram {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// `bin_lower,bin_upper,count` rows with a header line.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["bin_lower", "bin_upper", "count"])
            .map_err(|e| HyperError::format(e.to_string()))?;
        for b in &self.bins {
            w.write_record([
                b.lower.to_string(),
                b.upper.to_string(),
                b.count.to_string(),
            ])
            .map_err(|e| HyperError::format(e.to_string()))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| HyperError::format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| HyperError::format(e.to_string()))
    }
}

/// Histogram of radii normalized to `[0, 1]` by the clamped maximum radius.
/// Values within `1e−9` below a bin edge are counted in the upper bin.
pub fn radius_histogram(points: &[BallPoint], bins: usize) -> Result<RadiusHistogram> {
    let first = points
        .first()
        .ok_or_else(|| HyperError::domain("histogram needs at least one point"))?;
    if bins == 0 {
        return Err(HyperError::config("histogram needs at least one bin"));
    }
    let k = first.curvature();
    if points.iter().any(|p| p.curvature() != k) {
        return Err(HyperError::shape("points have different curvatures"));
    }
    let normalization = k.max_radius();
    let mut counts = vec![0usize; bins];
    let mut sum = 0.0;
    for p in points {
        let r = hyperbolic_radius(p);
        sum += r;
        let v = (r / normalization).clamp(0.0, 1.0);
        let idx = ((v * bins as f64 + 1e-9).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let mean_radius = sum / points.len() as f64;
    Ok(RadiusHistogram {
        bins: counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| HistogramBin {
                lower: i as f64 / bins as f64,
                upper: (i + 1) as f64 / bins as f64,
                count,
            })
            .collect(),
        normalization,
        mean_radius,
        mean_normalized: mean_radius / normalization,
    })
}
