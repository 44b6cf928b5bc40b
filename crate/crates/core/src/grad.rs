//! Analytic parameter gradients for the adapter path and a central-difference
//! oracle to check them against.
//!
//! For one column with lift `x = exp₀(w)` (constant in the parameters):
//!
//! ```text
//! y = W_s x,  ρ = ‖y‖,  k = artanh(√c‖x‖)/‖x‖
//! p = ψ(ρ)·y,            ψ(ρ) = tanh(kρ)/(√c ρ)        (Möbius matrix mul)
//! out = φ(‖p‖)·p,        φ(n) = artanh(√c n)/(√c n)    (log₀)
//! ```
//!
//! The cotangent of `out` is pulled back through `φ`, then `ψ`, and finally
//! onto the stored entries of `W_s` as the outer product `ȳ xᵀ`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::adapter::{
    adjust_weight_matrix, lift_columns, representation_radius_scale, FrozenWeight,
};
use crate::error::{HyperError, Result};
use crate::poincare::{
    artanh_guarded, exp_map_origin, norm, BallPoint, Curvature, TangentVector, ZERO_NORM,
};
use crate::scaling::{ScalingKind, ScalingOperator};

/// Samples closer than this many `ε_ball` to the boundary are excluded.
pub const BOUNDARY_BAND_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            rel_tol: 1e-5,
            abs_tol: 1e-8,
            samples: 100,
            seed: 0,
        }
    }
}

impl GradCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(HyperError::config(format!(
                "step must be > 0, got {}",
                self.step
            )));
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(HyperError::config("tolerances must be > 0"));
        }
        if self.samples == 0 {
            return Err(HyperError::config("samples must be >= 1"));
        }
        Ok(())
    }
}

/// Gradient aligned with the canonical parameter order of a scaling operator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamGradient {
    pub grads: Vec<f64>,
}

impl ParamGradient {
    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// `d/dz [artanh(z)/z]`.
fn dlog_coef(z: f64) -> f64 {
    if z < 1e-3 {
        let z2 = z * z;
        z * (2.0 / 3.0 + z2 * (4.0 / 5.0 + z2 * 6.0 / 7.0))
    } else {
        (z / (1.0 - z * z) - artanh_guarded(z)) / (z * z)
    }
}

/// `d/dq [tanh(q)/q]`.
fn dtanh_coef(q: f64) -> f64 {
    if q.abs() < 1e-3 {
        let q2 = q * q;
        q * (-2.0 / 3.0 + q2 * (8.0 / 15.0 - q2 * 102.0 / 315.0))
    } else {
        let th = q.tanh();
        (q * (1.0 - th * th) - th) / (q * q)
    }
}

fn near_boundary(scaled_norm: f64, k: Curvature) -> bool {
    scaled_norm > 1.0 - BOUNDARY_BAND_FACTOR * k.eps()
}

/// Pull a cotangent on `log₀(p)` back to a cotangent on `p`.
fn pullback_log(
    p: ArrayView1<'_, f64>,
    upstream: ArrayView1<'_, f64>,
    k: Curvature,
) -> Array1<f64> {
    let n = norm(p);
    if n < ZERO_NORM {
        // log₀ is the identity to first order at the origin.
        return upstream.to_owned();
    }
    let z = k.sqrt() * n;
    let phi = artanh_guarded(z) / z;
    let dphi_dn = k.sqrt() * dlog_coef(z);
    let scale = dphi_dn * upstream.dot(&p) / n;
    &upstream * phi + &p * scale
}

/// `∂⟨upstream, W⟩/∂params` for `W = log₀(W_s ⊗_c exp₀(W₀))`.
///
/// Fails with [`HyperError::NearBoundary`] when a lifted or adjusted column
/// sits within `10·ε_ball` of the boundary, or when `W_s` annihilates a
/// column.
pub fn vjp_adjust_weight_matrix(
    w0: &FrozenWeight,
    ws: &ScalingOperator,
    k: Curvature,
    upstream: ArrayView2<'_, f64>,
) -> Result<ParamGradient> {
    if ws.dim() != w0.rows() {
        return Err(HyperError::shape("scaling dimension vs frozen rows"));
    }
    if upstream.dim() != (w0.rows(), w0.cols()) {
        return Err(HyperError::shape(format!(
            "upstream is {:?}, weight is {}x{}",
            upstream.dim(),
            w0.rows(),
            w0.cols()
        )));
    }
    let mut grads = vec![0.0; ws.param_count()];
    for (j, x) in lift_columns(w0, k)?.iter().enumerate() {
        let nu = x.norm();
        if nu < ZERO_NORM {
            continue;
        }
        if near_boundary(k.sqrt() * nu, k) {
            return Err(HyperError::NearBoundary(format!("lifted column {j}")));
        }
        let kappa = artanh_guarded(k.sqrt() * nu) / nu;
        let y = ws.matvec(x.coords())?;
        let rho = norm(y.view());
        if rho < ZERO_NORM {
            return Err(HyperError::NearBoundary(format!(
                "column {j} maps to the origin"
            )));
        }
        let q = kappa * rho;
        let t = q.tanh();
        if near_boundary(t, k) {
            return Err(HyperError::NearBoundary(format!("adjusted column {j}")));
        }
        let psi = t / (k.sqrt() * rho);
        let p = &y * psi;
        let p_bar = pullback_log(p.view(), upstream.column(j), k);
        let dpsi = kappa * kappa / k.sqrt() * dtanh_coef(q);
        let y_bar = &p_bar * psi + &y * (dpsi * p_bar.dot(&y) / rho);
        ws.accumulate_outer(y_bar.view(), x.coords(), &mut grads);
    }
    Ok(ParamGradient { grads })
}

/// `∂⟨upstream, W⟩/∂s` for the scalar path `W = log₀(s ⊗_c exp₀(W₀))`.
pub fn vjp_adjust_weight_scalar(
    w0: &FrozenWeight,
    s: f64,
    k: Curvature,
    upstream: ArrayView2<'_, f64>,
) -> Result<f64> {
    if upstream.dim() != (w0.rows(), w0.cols()) {
        return Err(HyperError::shape("upstream shape vs weight shape"));
    }
    let mut ds = 0.0;
    for (j, x) in lift_columns(w0, k)?.iter().enumerate() {
        let nu = x.norm();
        if nu < ZERO_NORM {
            continue;
        }
        if near_boundary(k.sqrt() * nu, k) {
            return Err(HyperError::NearBoundary(format!("lifted column {j}")));
        }
        let a = artanh_guarded(k.sqrt() * nu);
        let t = (s * a).tanh();
        if near_boundary(t.abs(), k) {
            return Err(HyperError::NearBoundary(format!("adjusted column {j}")));
        }
        let p = x.coords().to_owned() * (t / (k.sqrt() * nu));
        let p_bar = pullback_log(p.view(), upstream.column(j), k);
        ds += p_bar.dot(&x.coords()) * a * (1.0 - t * t) / (k.sqrt() * nu);
    }
    Ok(ds)
}

/// Radius loss `mean_i (‖W_s ŷ_i‖/‖ŷ_i‖ − target_i)²` and its parameter
/// gradient.
pub fn radius_loss_and_grad(
    ws: &ScalingOperator,
    lifted: &[BallPoint],
    targets: &[f64],
) -> Result<(f64, ParamGradient)> {
    if lifted.len() != targets.len() || lifted.is_empty() {
        return Err(HyperError::shape(format!(
            "{} points vs {} targets",
            lifted.len(),
            targets.len()
        )));
    }
    let inv_n = 1.0 / lifted.len() as f64;
    let mut loss = 0.0;
    let mut grads = vec![0.0; ws.param_count()];
    for (x, &target) in lifted.iter().zip(targets) {
        let nu = x.norm();
        if nu < ZERO_NORM {
            loss += (1.0 - target).powi(2) * inv_n;
            continue;
        }
        let y = ws.matvec(x.coords())?;
        let rho = norm(y.view());
        let ratio = rho / nu;
        let resid = ratio - target;
        loss += resid * resid * inv_n;
        if rho < ZERO_NORM {
            continue;
        }
        let coef = 2.0 * resid * inv_n / (rho * nu);
        ws.accumulate_outer((&y * coef).view(), x.coords(), &mut grads);
    }
    Ok((loss, ParamGradient { grads }))
}

/// Central differences `(f(p + h·e_i) − f(p − h·e_i))/(2h)` per coordinate.
pub fn finite_diff_oracle<F>(loss_fn: F, params: &[f64], cfg: &GradCheckConfig) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let h = cfg.step;
    let mut probe = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        probe[i] = params[i] + h;
        let plus = loss_fn(&probe)?;
        probe[i] = params[i] - h;
        let minus = loss_fn(&probe)?;
        probe[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(HyperError::domain(format!(
                "non-finite loss probing coordinate {i}"
            )));
        }
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Heavy-ball update: `v ← μ·v + g`, `p ← p − lr·v`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(HyperError::shape("params, grads and velocity must align"));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(HyperError::config(format!(
            "learning rate must be >= 0, got {lr}"
        )));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(HyperError::config(format!(
            "momentum must lie in [0, 1), got {momentum}"
        )));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// `max_i |a_i − n_i|/(|n_i| + abs_tol)` and the index where it occurs.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], abs_tol: f64) -> (f64, usize) {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (n.abs() + abs_tol))
        .enumerate()
        .fold(
            (0.0, 0),
            |best, (i, e)| if e > best.0 { (e, i) } else { best },
        )
}

/// Shape of the random problems used by [`check_kind`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckShape {
    pub dim: usize,
    pub columns: usize,
    pub points: usize,
}

impl Default for CheckShape {
    fn default() -> Self {
        Self {
            dim: 8,
            columns: 4,
            points: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstCoordinate {
    pub case: usize,
    /// `"adjust_weight"` or `"radius_loss"`.
    pub target: &'static str,
    pub param_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KindCheck {
    pub kind: ScalingKind,
    pub cases: usize,
    pub excluded: usize,
    pub max_rel_error: f64,
    pub worst: Option<WorstCoordinate>,
    pub passed: bool,
}

fn gaussian_array(rng: &mut ChaCha8Rng, shape: (usize, usize), scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || scale * rng.sample::<f64, _>(StandardNormal))
}

/// Compare analytic gradients with central differences on `cfg.samples`
/// seeded random cases for one operator kind. Each case checks both the
/// weight-adjustment VJP (random cotangent) and the radius-loss gradient.
pub fn check_kind(
    kind: ScalingKind,
    shape: CheckShape,
    k: Curvature,
    cfg: &GradCheckConfig,
) -> Result<KindCheck> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(
        cfg.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(kind_salt(kind))),
    );
    let n = shape.dim;
    // Column norms around 0.8/√c keep lifts well inside the ball.
    let col_scale = 0.8 / (k.sqrt() * (n as f64).sqrt());
    let mut out = KindCheck {
        kind,
        cases: 0,
        excluded: 0,
        max_rel_error: 0.0,
        worst: None,
        passed: true,
    };
    for case in 0..cfg.samples {
        let mut ws = ScalingOperator::init_identity(kind, n)?;
        for p in ws.params_mut() {
            *p += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        let w0 = FrozenWeight::new(gaussian_array(&mut rng, (n, shape.columns), col_scale))?;
        let upstream = gaussian_array(&mut rng, (n, shape.columns), 1.0);
        let reps = gaussian_array(&mut rng, (shape.points, n), col_scale);
        let targets: Vec<f64> = (0..shape.points)
            .map(|_| rng.random_range(0.5..2.0))
            .collect();

        let analytic = match vjp_adjust_weight_matrix(&w0, &ws, k, upstream.view()) {
            Ok(g) => g,
            Err(HyperError::NearBoundary(_)) => {
                out.excluded += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let lifted = reps
            .rows()
            .into_iter()
            .map(|r| Ok(exp_map_origin(&TangentVector::new(r.to_owned(), k)?)))
            .collect::<Result<Vec<_>>>()?;
        let (_, radius_grad) = radius_loss_and_grad(&ws, &lifted, &targets)?;

        let with_params = |p: &[f64]| -> Result<ScalingOperator> {
            let mut op = ws.clone();
            op.set_params(p)?;
            Ok(op)
        };
        let adjust_numeric = finite_diff_oracle(
            |p| Ok((&adjust_weight_matrix(&w0, &with_params(p)?, k)? * &upstream).sum()),
            ws.params(),
            cfg,
        )?;
        let radius_numeric = finite_diff_oracle(
            |p| radius_loss_reference(&with_params(p)?, reps.view(), &targets, k),
            ws.params(),
            cfg,
        )?;

        out.cases += 1;
        for (target, a, num) in [
            ("adjust_weight", &analytic.grads, &adjust_numeric),
            ("radius_loss", &radius_grad.grads, &radius_numeric),
        ] {
            let (err, idx) = max_relative_error(a, num, cfg.abs_tol);
            if out.worst.as_ref().is_none_or(|w| err > w.rel_error) {
                out.max_rel_error = err;
                out.worst = Some(WorstCoordinate {
                    case,
                    target,
                    param_index: idx,
                    analytic: a[idx],
                    numeric: num[idx],
                    rel_error: err,
                });
            }
        }
    }
    out.passed = out.cases > 0 && out.max_rel_error < cfg.rel_tol;
    Ok(out)
}

/// Radius loss evaluated through the forward adapter path, independent of
/// [`radius_loss_and_grad`].
fn radius_loss_reference(
    ws: &ScalingOperator,
    reps: ArrayView2<'_, f64>,
    targets: &[f64],
    k: Curvature,
) -> Result<f64> {
    let mut total = 0.0;
    for (row, &t) in reps.rows().into_iter().zip(targets) {
        let (s, _) = representation_radius_scale(row, ws, k)?;
        total += (s - t).powi(2);
    }
    Ok(total / targets.len() as f64)
}

fn kind_salt(kind: ScalingKind) -> u64 {
    match kind {
        ScalingKind::Diagonal => 1,
        ScalingKind::BlockDiagonal { .. } => 2,
        ScalingKind::Banded { .. } => 3,
        ScalingKind::Dense => 4,
    }
}
