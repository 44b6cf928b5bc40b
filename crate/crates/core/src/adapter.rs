//! Radius adjustment of frozen weights.
//!
//! Each column `w` of a frozen `n × m` weight is lifted with `exp₀`, rescaled
//! inside the ball, and mapped back with `log₀`:
//!
//! - scalar form: `log₀(s ⊗_c exp₀(w))`, which multiplies the column's
//!   hyperbolic radius by `s`;
//! - matrix form: `log₀(W_s ⊗_c exp₀(w))`, which multiplies it by
//!   `‖W_s ŵ‖/‖ŵ‖` with `ŵ = exp₀(w)`.
//!
//! A column whose lift is the origin passes through unchanged and reports an
//! effective scale of 1.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::Serialize;

use crate::error::{HyperError, Result};
use crate::poincare::{
    exp_map_origin, hyperbolic_radius, log_map_origin, mobius_matrix_mul, mobius_scalar_mul, norm,
    BallPoint, Curvature, LinearMap, TangentVector,
};
use crate::scaling::ScalingOperator;

/// Pre-trained weight `W₀`. Never modified once wrapped.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenWeight {
    matrix: Array2<f64>,
}

impl FrozenWeight {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(HyperError::domain("frozen weight must be at least 1 x 1"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(HyperError::domain("frozen weight has non-finite entries"));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    /// Feature dimension `n`.
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of columns `m`.
    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }
}

fn lift(col: ArrayView1<'_, f64>, k: Curvature) -> Result<BallPoint> {
    Ok(exp_map_origin(&TangentVector::new(col.to_owned(), k)?))
}

fn map_columns(
    w0: &FrozenWeight,
    k: Curvature,
    mut f: impl FnMut(&BallPoint) -> Result<BallPoint>,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(w0.matrix.raw_dim());
    for (src, mut dst) in w0.matrix.columns().into_iter().zip(out.columns_mut()) {
        let adjusted = f(&lift(src, k)?)?;
        dst.assign(&log_map_origin(&adjusted).coords());
    }
    Ok(out)
}

/// `W = log₀(s ⊗_c exp₀(W₀))`, column by column.
pub fn adjust_weight_scalar(w0: &FrozenWeight, s: f64, k: Curvature) -> Result<Array2<f64>> {
    if !s.is_finite() {
        return Err(HyperError::domain(format!("scale must be finite, got {s}")));
    }
    map_columns(w0, k, |x| mobius_scalar_mul(s, x))
}

/// `W = log₀(W_s ⊗_c exp₀(W₀))`, column by column.
pub fn adjust_weight_matrix<M: LinearMap + ?Sized>(
    w0: &FrozenWeight,
    ws: &M,
    k: Curvature,
) -> Result<Array2<f64>> {
    if ws.input_dim() != w0.rows() || ws.output_dim() != w0.rows() {
        return Err(HyperError::shape(format!(
            "scaling operator is {}x{}, frozen weight has {} rows",
            ws.output_dim(),
            ws.input_dim(),
            w0.rows()
        )));
    }
    map_columns(w0, k, |x| mobius_matrix_mul(ws, x))
}

/// Lift a representation `y₀`, apply `W_s` through Möbius matrix
/// multiplication and return `(‖W_s ŷ‖/‖ŷ‖, W_s ⊗_c ŷ)`. A zero
/// representation gives `(1, origin)`.
pub fn representation_radius_scale<M: LinearMap + ?Sized>(
    y0: ArrayView1<'_, f64>,
    ws: &M,
    k: Curvature,
) -> Result<(f64, BallPoint)> {
    let lifted = lift(y0, k)?;
    if ws.input_dim() != lifted.dim() {
        return Err(HyperError::shape(format!(
            "operator expects dimension {}, representation has {}",
            ws.input_dim(),
            lifted.dim()
        )));
    }
    if lifted.is_origin() {
        return Ok((1.0, BallPoint::origin(ws.output_dim(), k)));
    }
    let scale = norm(ws.apply(lifted.coords()).view()) / lifted.norm();
    Ok((scale, mobius_matrix_mul(ws, &lifted)?))
}

/// One frozen linear map together with its learnable scaling.
#[derive(Debug, Clone)]
pub struct AdapterLayer {
    frozen: FrozenWeight,
    scaling: ScalingOperator,
    curvature: Curvature,
    scalar_mode: Option<f64>,
}

impl AdapterLayer {
    pub fn new(
        frozen: FrozenWeight,
        scaling: ScalingOperator,
        curvature: Curvature,
    ) -> Result<Self> {
        if scaling.dim() != frozen.rows() {
            return Err(HyperError::shape(format!(
                "scaling dimension {} vs frozen rows {}",
                scaling.dim(),
                frozen.rows()
            )));
        }
        Ok(Self {
            frozen,
            scaling,
            curvature,
            scalar_mode: None,
        })
    }

    /// Switch to the single-scalar path. `None` restores the matrix path.
    pub fn with_scalar_mode(mut self, s: Option<f64>) -> Result<Self> {
        if let Some(v) = s {
            if !v.is_finite() {
                return Err(HyperError::domain(format!("scale must be finite, got {v}")));
            }
        }
        self.scalar_mode = s;
        Ok(self)
    }

    pub fn frozen(&self) -> &FrozenWeight {
        &self.frozen
    }

    pub fn scaling(&self) -> &ScalingOperator {
        &self.scaling
    }

    pub fn scaling_mut(&mut self) -> &mut ScalingOperator {
        &mut self.scaling
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn scalar_mode(&self) -> Option<f64> {
        self.scalar_mode
    }

    /// Learnable parameters of whichever path is active.
    pub fn param_overhead(&self) -> usize {
        match self.scalar_mode {
            Some(_) => 1,
            None => self.scaling.param_count(),
        }
    }

    pub fn adjusted_weight(&self) -> Result<Array2<f64>> {
        match self.scalar_mode {
            Some(s) => adjust_weight_scalar(&self.frozen, s, self.curvature),
            None => adjust_weight_matrix(&self.frozen, &self.scaling, self.curvature),
        }
    }

    /// `Y = W X` with `W` the adjusted weight.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.frozen.cols() {
            return Err(HyperError::shape(format!(
                "input has {} rows, layer expects {}",
                x.nrows(),
                self.frozen.cols()
            )));
        }
        Ok(self.adjusted_weight()?.dot(&x))
    }

    pub fn report(&self) -> Result<AdapterReport> {
        let adjusted = self.adjusted_weight()?;
        let k = self.curvature;
        let mut per_column = Vec::with_capacity(self.frozen.cols());
        for (before_col, after_col) in self
            .frozen
            .matrix
            .columns()
            .into_iter()
            .zip(adjusted.columns())
        {
            let before = lift(before_col, k)?;
            let after = lift(after_col, k)?;
            per_column.push(ColumnRadii::new(
                hyperbolic_radius(&before),
                hyperbolic_radius(&after),
                before.is_origin(),
            ));
        }
        let flattened = {
            let flat_before = Array1::from_iter(self.frozen.matrix.iter().copied());
            let flat_after = Array1::from_iter(adjusted.iter().copied());
            let before = lift(flat_before.view(), k)?;
            let after = lift(flat_after.view(), k)?;
            ColumnRadii::new(
                hyperbolic_radius(&before),
                hyperbolic_radius(&after),
                before.is_origin(),
            )
        };
        let aggregate = ScaleSummary::of(per_column.iter().map(|c| c.effective_scale));
        Ok(AdapterReport {
            per_column,
            aggregate,
            param_overhead: self.param_overhead(),
            flattened,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ColumnRadii {
    pub radius_before: f64,
    pub radius_after: f64,
    pub effective_scale: f64,
}

impl ColumnRadii {
    fn new(radius_before: f64, radius_after: f64, zero: bool) -> Self {
        let effective_scale = if zero {
            1.0
        } else {
            radius_after / radius_before
        };
        Self {
            radius_before,
            radius_after,
            effective_scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl ScaleSummary {
    pub fn of(values: impl Iterator<Item = f64>) -> Self {
        let (mut sum, mut count) = (0.0, 0usize);
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            sum += v;
            count += 1;
            min = min.min(v);
            max = max.max(v);
        }
        Self {
            mean: sum / count as f64,
            min,
            max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdapterReport {
    pub per_column: Vec<ColumnRadii>,
    pub aggregate: ScaleSummary,
    pub param_overhead: usize,
    /// Radii of the whole matrix flattened into one vector. Reported only; the
    /// adjustment itself is per column.
    pub flattened: ColumnRadii,
}

// Needed by the grad engine and toy task to iterate lifted columns.
pub(crate) fn lift_columns(w0: &FrozenWeight, k: Curvature) -> Result<Vec<BallPoint>> {
    w0.matrix.axis_iter(Axis(1)).map(|c| lift(c, k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scaling::ScalingKind;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn k(c: f64) -> Curvature {
        Curvature::new(c).unwrap()
    }

    fn sample_weight() -> FrozenWeight {
        FrozenWeight::new(array![
            [0.4, -1.2, 0.0],
            [2.0, 0.3, 0.0],
            [-0.7, 0.9, 0.0],
            [1.1, -0.2, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn frozen_weight_validation() {
        assert!(FrozenWeight::new(Array2::zeros((0, 3))).is_err());
        assert!(FrozenWeight::new(array![[f64::NAN]]).is_err());
    }

    #[test]
    fn scalar_identity_and_zero() {
        let w0 = sample_weight();
        let same = adjust_weight_scalar(&w0, 1.0, k(0.01)).unwrap();
        assert!((&same - &w0.matrix).iter().all(|d| d.abs() < 1e-12));
        let zero = adjust_weight_scalar(&w0, 0.0, k(0.01)).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        assert!(adjust_weight_scalar(&w0, f64::INFINITY, k(0.01)).is_err());
    }

    #[test]
    fn scalar_chain_closed_form() {
        // exp₀(v) = (0.5, 0) at c = 1, so v = (artanh 0.5, 0); doubling the
        // radius lands at (0.8, 0), whose log is (artanh 0.8, 0) = (ln 3, 0).
        let w0 = FrozenWeight::new(array![[0.5f64.atanh()], [0.0]]).unwrap();
        let out = adjust_weight_scalar(&w0, 2.0, k(1.0)).unwrap();
        assert_relative_eq!(out[[0, 0]], 3f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(out[[0, 0]], 1.098_612_288_668_11, epsilon = 1e-13);
        assert_eq!(out[[1, 0]], 0.0);
    }

    #[test]
    fn identity_operator_is_noop() {
        let w0 = sample_weight();
        for kind in [
            ScalingKind::Diagonal,
            ScalingKind::BlockDiagonal { block_size: 2 },
            ScalingKind::Banded { bandwidth: 1 },
            ScalingKind::Dense,
        ] {
            let ws = ScalingOperator::init_identity(kind, 4).unwrap();
            let out = adjust_weight_matrix(&w0, &ws, k(0.01)).unwrap();
            assert!(
                (&out - &w0.matrix).iter().all(|d| d.abs() < 1e-12),
                "{kind}"
            );
        }
    }

    #[test]
    fn uniform_diagonal_matches_scalar_path() {
        let w0 = sample_weight();
        for s in [0.3, 1.7, 2.0] {
            let ws = ScalingOperator::uniform_diagonal(4, s).unwrap();
            let a = adjust_weight_matrix(&w0, &ws, k(0.01)).unwrap();
            let b = adjust_weight_scalar(&w0, s, k(0.01)).unwrap();
            assert!((&a - &b).iter().all(|d| d.abs() < 1e-12));
        }
    }

    #[test]
    fn matrix_dimension_checked() {
        let ws = ScalingOperator::init_identity(ScalingKind::Dense, 3).unwrap();
        assert!(adjust_weight_matrix(&sample_weight(), &ws, k(0.01)).is_err());
        assert!(AdapterLayer::new(sample_weight(), ws, k(0.01)).is_err());
    }

    #[test]
    fn forward_with_identity_reproduces_frozen_output() {
        let w0 = sample_weight();
        let ws = ScalingOperator::init_identity(ScalingKind::Dense, 4).unwrap();
        let layer = AdapterLayer::new(w0.clone(), ws, k(0.01)).unwrap();
        let x = array![[1.0, 0.5], [-2.0, 0.1], [0.3, 3.0]];
        let y = layer.forward(x.view()).unwrap();
        let y0 = w0.matrix.dot(&x);
        assert!((&y - &y0).iter().all(|d| d.abs() < 1e-12));
        assert!(layer.forward(array![[1.0]].view()).is_err());
    }

    #[test]
    fn forward_scalar_probe_returns_adjusted_columns() {
        let w0 = sample_weight();
        let ws = ScalingOperator::init_identity(ScalingKind::Diagonal, 4).unwrap();
        let layer = AdapterLayer::new(w0.clone(), ws, k(0.01))
            .unwrap()
            .with_scalar_mode(Some(0.5))
            .unwrap();
        let y = layer.forward(Array2::eye(3).view()).unwrap();
        assert_eq!(y, adjust_weight_scalar(&w0, 0.5, k(0.01)).unwrap());
    }

    #[test]
    fn representation_scale_cases() {
        let kk = k(0.01);
        let y0 = array![1.0, -2.0, 0.5];
        let id = ScalingOperator::init_identity(ScalingKind::Dense, 3).unwrap();
        let (s, p) = representation_radius_scale(y0.view(), &id, kk).unwrap();
        assert_eq!(s, 1.0);
        let lifted = lift(y0.view(), kk).unwrap();
        assert!((&p.coords() - &lifted.coords())
            .iter()
            .all(|d| d.abs() < 1e-15));

        let two = ScalingOperator::uniform_diagonal(3, 2.0).unwrap();
        let (s, p) = representation_radius_scale(y0.view(), &two, kk).unwrap();
        assert_eq!(s, 2.0);
        assert_relative_eq!(
            hyperbolic_radius(&p),
            2.0 * hyperbolic_radius(&lifted),
            max_relative = 1e-12
        );

        let (s, p) = representation_radius_scale(Array1::zeros(3).view(), &two, kk).unwrap();
        assert_eq!(s, 1.0);
        assert!(p.is_origin());
    }

    #[test]
    fn report_cases() {
        let w0 = sample_weight();
        let id = ScalingOperator::init_identity(ScalingKind::Diagonal, 4).unwrap();
        let layer = AdapterLayer::new(w0.clone(), id.clone(), k(0.01)).unwrap();
        let r = layer.report().unwrap();
        assert_eq!(r.param_overhead, 4);
        for c in &r.per_column {
            assert_relative_eq!(c.effective_scale, 1.0, epsilon = 1e-12);
        }
        // Third column is zero: recorded as 1 exactly.
        assert_eq!(r.per_column[2].effective_scale, 1.0);
        assert_eq!(r.per_column[2].radius_before, 0.0);

        let half = AdapterLayer::new(w0, id, k(0.01))
            .unwrap()
            .with_scalar_mode(Some(0.5))
            .unwrap();
        let r = half.report().unwrap();
        assert_eq!(r.param_overhead, 1);
        for c in &r.per_column[..2] {
            assert_relative_eq!(c.effective_scale, 0.5, max_relative = 1e-9);
        }
        assert_eq!(r, half.report().unwrap());
    }
}
