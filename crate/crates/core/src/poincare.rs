//! Poincaré-ball primitives.
//!
//! Points live in the open ball `{x : c‖x‖² < 1}` of radius `1/√c`. All maps
//! are taken at the origin, which is the only base point the radius-adjustment
//! machinery needs.
//!
//! Numeric guards:
//! - before any `artanh`, `√c‖x‖` is clamped to `1 − ε_ball`, and the argument
//!   itself to `[−1 + 1e−12, 1 − 1e−12]`;
//! - results of ball-valued operations are projected back so that
//!   `√c‖x‖ ≤ 1 − ε_ball`;
//! - vectors with `‖x‖ < 1e−15` are treated as the origin whenever a direction
//!   has to be normalized.

use ndarray::{Array1, Array2, ArrayView1};
use serde::Serialize;

use crate::error::{HyperError, Result};

/// Curvature used when nothing else is configured.
pub const DEFAULT_CURVATURE: f64 = 0.01;
/// Default boundary margin `ε_ball`.
pub const DEFAULT_BALL_EPS: f64 = 1e-7;
/// Margin applied to the argument of every `artanh`.
pub const ARTANH_MARGIN: f64 = 1e-12;
/// Norms below this are the origin.
pub const ZERO_NORM: f64 = 1e-15;

/// Negative curvature `−c` of the ball, stored as `c > 0`, together with the
/// boundary margin used by every clamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Curvature {
    c: f64,
    eps: f64,
}

impl Curvature {
    pub fn new(c: f64) -> Result<Self> {
        Self::with_eps(c, DEFAULT_BALL_EPS)
    }

    pub fn with_eps(c: f64, eps: f64) -> Result<Self> {
        if !c.is_finite() || c <= 0.0 {
            return Err(HyperError::domain(format!(
                "curvature must be finite and > 0, got {c}"
            )));
        }
        if !eps.is_finite() || eps <= 0.0 || eps >= 1.0 {
            return Err(HyperError::domain(format!(
                "ball margin must lie in (0, 1), got {eps}"
            )));
        }
        Ok(Self { c, eps })
    }

    pub fn value(&self) -> f64 {
        self.c
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn sqrt(&self) -> f64 {
        self.c.sqrt()
    }

    /// Euclidean radius `1/√c` of the ball.
    pub fn ball_radius(&self) -> f64 {
        1.0 / self.sqrt()
    }

    /// Largest Euclidean norm a clamped point can have.
    pub fn max_norm(&self) -> f64 {
        (1.0 - self.eps) / self.sqrt()
    }

    /// Hyperbolic radius of a point sitting exactly on the clamp boundary.
    pub fn max_radius(&self) -> f64 {
        2.0 / self.sqrt() * artanh_guarded(1.0 - self.eps)
    }
}

impl Default for Curvature {
    fn default() -> Self {
        Self {
            c: DEFAULT_CURVATURE,
            eps: DEFAULT_BALL_EPS,
        }
    }
}

/// A point strictly inside the ball.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint {
    coords: Array1<f64>,
    curvature: Curvature,
}

impl BallPoint {
    pub fn new(coords: Array1<f64>, curvature: Curvature) -> Result<Self> {
        check_vector(coords.view())?;
        let norm_sq = coords.dot(&coords);
        if curvature.value() * norm_sq >= 1.0 {
            return Err(HyperError::domain(format!(
                "point with c·‖x‖² = {} is not inside the ball",
                curvature.value() * norm_sq
            )));
        }
        Ok(Self { coords, curvature })
    }

    pub fn origin(dim: usize, curvature: Curvature) -> Self {
        Self {
            coords: Array1::zeros(dim),
            curvature,
        }
    }

    pub fn coords(&self) -> ArrayView1<'_, f64> {
        self.coords.view()
    }

    pub fn into_coords(self) -> Array1<f64> {
        self.coords
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        norm(self.coords.view())
    }

    pub fn is_origin(&self) -> bool {
        self.norm() < ZERO_NORM
    }

    /// Möbius negation `⊖x`, which for the Poincaré ball is plain negation.
    pub fn neg(&self) -> Self {
        Self {
            coords: -&self.coords,
            curvature: self.curvature,
        }
    }
}

/// A vector in the tangent space at the origin (all of ℝⁿ).
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    coords: Array1<f64>,
    curvature: Curvature,
}

impl TangentVector {
    pub fn new(coords: Array1<f64>, curvature: Curvature) -> Result<Self> {
        check_vector(coords.view())?;
        Ok(Self { coords, curvature })
    }

    pub fn coords(&self) -> ArrayView1<'_, f64> {
        self.coords.view()
    }

    pub fn into_coords(self) -> Array1<f64> {
        self.coords
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        norm(self.coords.view())
    }
}

/// Anything that acts linearly on ℝⁿ: dense matrices and the structured
/// scaling operators.
pub trait LinearMap {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn apply(&self, x: ArrayView1<'_, f64>) -> Array1<f64>;
}

impl LinearMap for Array2<f64> {
    fn input_dim(&self) -> usize {
        self.ncols()
    }

    fn output_dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.dot(&x)
    }
}

pub fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// `artanh` with its argument kept `1e−12` away from ±1.
pub fn artanh_guarded(z: f64) -> f64 {
    z.clamp(-1.0 + ARTANH_MARGIN, 1.0 - ARTANH_MARGIN).atanh()
}

fn check_vector(v: ArrayView1<'_, f64>) -> Result<()> {
    if v.is_empty() {
        return Err(HyperError::domain("vectors must have dimension >= 1"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(HyperError::domain("vector has non-finite entries"));
    }
    Ok(())
}

fn check_same_space(x: &BallPoint, y: &BallPoint) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(HyperError::shape(format!(
            "dimension {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    if x.curvature != y.curvature {
        return Err(HyperError::shape(format!(
            "curvature {:?} vs {:?}",
            x.curvature, y.curvature
        )));
    }
    Ok(())
}

/// `√c‖x‖` with the boundary clamp applied.
fn clamped_scaled_norm(norm: f64, k: Curvature) -> f64 {
    (k.sqrt() * norm).min(1.0 - k.eps())
}

/// Rescale a finite vector so it sits inside the clamp boundary. The caller
/// guarantees finiteness.
pub(crate) fn clamp_into_ball(v: Array1<f64>, k: Curvature) -> BallPoint {
    let limit = 1.0 - k.eps();
    let n = norm(v.view());
    let coords = if k.value() * n * n < limit * limit {
        v
    } else {
        v * (k.max_norm() / n)
    };
    BallPoint {
        coords,
        curvature: k,
    }
}

/// Point `(t/√c)·d/‖d‖`, computed as `(t/(√c·‖d‖))·d`.
fn along_direction(d: Array1<f64>, d_norm: f64, t: f64, k: Curvature) -> BallPoint {
    let coef = t / (k.sqrt() * d_norm);
    clamp_into_ball(d * coef, k)
}

/// Lift an arbitrary finite vector into the ball, rescaling it onto the clamp
/// boundary when it lies outside.
pub fn project_to_ball(v: Array1<f64>, k: Curvature) -> Result<BallPoint> {
    check_vector(v.view())?;
    Ok(clamp_into_ball(v, k))
}

/// `λ_{c,x} = 2/(1 − c‖x‖²)`.
pub fn conformal_factor(x: &BallPoint) -> f64 {
    let norm_sq = x.coords.dot(&x.coords);
    2.0 / (1.0 - x.curvature.value() * norm_sq)
}

/// Möbius addition `x ⊕_c y`.
pub fn mobius_add(x: &BallPoint, y: &BallPoint) -> Result<BallPoint> {
    check_same_space(x, y)?;
    let c = x.curvature.value();
    let xy = x.coords.dot(&y.coords);
    let xx = x.coords.dot(&x.coords);
    let yy = y.coords.dot(&y.coords);
    let a = 1.0 + 2.0 * c * xy + c * yy;
    let b = 1.0 - c * xx;
    let denom = 1.0 + 2.0 * c * xy + c * c * xx * yy;
    let num = &x.coords * a + &y.coords * b;
    Ok(clamp_into_ball(num / denom, x.curvature))
}

/// `exp₀(v) = tanh(√c‖v‖)·v/(√c‖v‖)`.
pub fn exp_map_origin(v: &TangentVector) -> BallPoint {
    let k = v.curvature;
    let n = v.norm();
    if n < ZERO_NORM {
        return BallPoint::origin(v.dim(), k);
    }
    let z = k.sqrt() * n;
    clamp_into_ball(&v.coords * (z.tanh() / z), k)
}

/// `log₀(x) = artanh(√c‖x‖)·x/(√c‖x‖)`.
pub fn log_map_origin(x: &BallPoint) -> TangentVector {
    let k = x.curvature;
    let n = x.norm();
    if n < ZERO_NORM {
        return TangentVector {
            coords: Array1::zeros(x.dim()),
            curvature: k,
        };
    }
    let z = clamped_scaled_norm(n, k);
    let coef = artanh_guarded(z) / (k.sqrt() * n);
    TangentVector {
        coords: &x.coords * coef,
        curvature: k,
    }
}

/// Möbius scalar multiplication `s ⊗_c x`: keeps the direction of `x` and sets
/// `√c‖result‖ = tanh(s·artanh(√c‖x‖))`.
pub fn mobius_scalar_mul(s: f64, x: &BallPoint) -> Result<BallPoint> {
    if !s.is_finite() {
        return Err(HyperError::domain(format!(
            "scalar must be finite, got {s}"
        )));
    }
    let k = x.curvature;
    let n = x.norm();
    if n < ZERO_NORM {
        return Ok(BallPoint::origin(x.dim(), k));
    }
    let t = (s * artanh_guarded(clamped_scaled_norm(n, k))).tanh();
    Ok(along_direction(x.coords.clone(), n, t, k))
}

/// Möbius matrix multiplication `M ⊗_c x`: direction `Mx/‖Mx‖`, with
/// `√c‖result‖ = tanh((‖Mx‖/‖x‖)·artanh(√c‖x‖))`. Returns the origin when `x`
/// or `Mx` vanishes.
pub fn mobius_matrix_mul<M: LinearMap + ?Sized>(m: &M, x: &BallPoint) -> Result<BallPoint> {
    if m.input_dim() != x.dim() {
        return Err(HyperError::shape(format!(
            "operator expects dimension {}, point has {}",
            m.input_dim(),
            x.dim()
        )));
    }
    let k = x.curvature;
    let n = x.norm();
    if n < ZERO_NORM {
        return Ok(BallPoint::origin(m.output_dim(), k));
    }
    let mx = m.apply(x.coords());
    let mx_norm = norm(mx.view());
    if mx_norm < ZERO_NORM {
        return Ok(BallPoint::origin(m.output_dim(), k));
    }
    let ratio = mx_norm / n;
    let t = (ratio * artanh_guarded(clamped_scaled_norm(n, k))).tanh();
    Ok(along_direction(mx, mx_norm, t, k))
}

/// Distance to the origin, `(2/√c)·artanh(√c‖x‖)`.
pub fn hyperbolic_radius(x: &BallPoint) -> f64 {
    let k = x.curvature;
    2.0 / k.sqrt() * artanh_guarded(clamped_scaled_norm(x.norm(), k))
}

/// Gyrodistance `(2/√c)·artanh(√c‖(⊖x) ⊕_c y‖)`.
pub fn ball_distance(x: &BallPoint, y: &BallPoint) -> Result<f64> {
    Ok(hyperbolic_radius(&mobius_add(&x.neg(), y)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn k(c: f64) -> Curvature {
        Curvature::new(c).unwrap()
    }

    fn pt(v: Array1<f64>, c: f64) -> BallPoint {
        BallPoint::new(v, k(c)).unwrap()
    }

    #[test]
    fn curvature_rejects_non_positive() {
        assert!(Curvature::new(0.0).is_err());
        assert!(Curvature::new(-1.0).is_err());
        assert!(Curvature::new(f64::NAN).is_err());
        assert!(Curvature::with_eps(1.0, 0.0).is_err());
        assert_eq!(Curvature::default().value(), 0.01);
    }

    #[test]
    fn ball_point_requires_interior() {
        assert!(BallPoint::new(array![1.0, 0.0], k(1.0)).is_err());
        assert!(BallPoint::new(array![10.0], k(0.01)).is_err());
        assert!(BallPoint::new(array![f64::INFINITY], k(1.0)).is_err());
        assert!(BallPoint::new(Array1::zeros(0), k(1.0)).is_err());
        assert!(BallPoint::new(array![9.99], k(0.01)).is_ok());
    }

    #[test]
    fn conformal_factor_values() {
        assert_eq!(conformal_factor(&BallPoint::origin(3, k(0.3))), 2.0);
        assert_relative_eq!(
            conformal_factor(&pt(array![0.5, 0.0], 1.0)),
            8.0 / 3.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            conformal_factor(&pt(array![3.0, 4.0], 0.01)),
            8.0 / 3.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn mobius_add_identity_and_inverse() {
        let x = pt(array![0.2, -0.4, 0.1], 1.0);
        let zero = BallPoint::origin(3, k(1.0));
        assert_eq!(mobius_add(&x, &zero).unwrap(), x);
        let back = mobius_add(&x, &x.neg()).unwrap();
        assert!(back.norm() < 1e-12);
    }

    #[test]
    fn mobius_add_collinear_is_velocity_addition() {
        let r = mobius_add(&pt(array![0.3, 0.0], 1.0), &pt(array![0.4, 0.0], 1.0)).unwrap();
        assert_relative_eq!(r.coords()[0], 0.625, epsilon = 1e-15);
        assert_eq!(r.coords()[1], 0.0);
        let via_tanh = (0.3f64.atanh() + 0.4f64.atanh()).tanh();
        assert_relative_eq!(r.coords()[0], via_tanh, epsilon = 1e-15);
    }

    #[test]
    fn mobius_add_checks_space() {
        let x = pt(array![0.1, 0.0], 1.0);
        assert!(mobius_add(&x, &pt(array![0.1], 1.0)).is_err());
        assert!(mobius_add(&x, &pt(array![0.1, 0.0], 0.5)).is_err());
    }

    #[test]
    fn exp_log_closed_forms() {
        let v = TangentVector::new(array![0.5f64.atanh(), 0.0], k(1.0)).unwrap();
        let x = exp_map_origin(&v);
        assert_relative_eq!(x.coords()[0], 0.5, epsilon = 1e-15);
        let back = log_map_origin(&pt(array![0.5, 0.0], 1.0));
        assert_relative_eq!(back.coords()[0], 0.549_306_144_334_054_8, epsilon = 1e-15);

        let zero = TangentVector::new(Array1::zeros(2), k(1.0)).unwrap();
        assert!(exp_map_origin(&zero).is_origin());
        assert_eq!(log_map_origin(&BallPoint::origin(2, k(1.0))).norm(), 0.0);
        assert!(TangentVector::new(array![f64::NAN], k(1.0)).is_err());
    }

    #[test]
    fn exp_of_huge_vector_is_clamped() {
        let v = TangentVector::new(array![1e6, 0.0], k(1.0)).unwrap();
        let x = exp_map_origin(&v);
        assert_relative_eq!(x.norm(), 1.0 - DEFAULT_BALL_EPS, epsilon = 1e-15);
        assert!(hyperbolic_radius(&x).is_finite());
    }

    #[test]
    fn scalar_mul_examples() {
        let x = pt(array![0.5, 0.0], 1.0);
        let two = mobius_scalar_mul(2.0, &x).unwrap();
        assert_relative_eq!(two.coords()[0], 0.8, epsilon = 1e-15);
        assert!(mobius_scalar_mul(0.0, &x).unwrap().is_origin());
        let one = mobius_scalar_mul(1.0, &x).unwrap();
        assert_relative_eq!(one.coords()[0], 0.5, epsilon = 1e-15);
        assert!(mobius_scalar_mul(f64::NAN, &x).is_err());
    }

    #[test]
    fn matrix_mul_examples() {
        let x = pt(array![0.5, 0.0], 1.0);
        let id: Array2<f64> = Array2::eye(2);
        let same = mobius_matrix_mul(&id, &x).unwrap();
        assert_relative_eq!(same.coords()[0], 0.5, epsilon = 1e-15);
        let two = mobius_matrix_mul(&(Array2::eye(2) * 2.0), &x).unwrap();
        assert_relative_eq!(two.coords()[0], 0.8, epsilon = 1e-15);
        let singular = array![[0.0, 0.0], [0.0, 1.0]];
        assert!(mobius_matrix_mul(&singular, &x).unwrap().is_origin());
        assert!(mobius_matrix_mul(&Array2::<f64>::eye(3), &x).is_err());
    }

    #[test]
    fn scaled_identity_matches_scalar_mul() {
        let x = pt(array![0.3, -0.2, 0.1], 1.0);
        for s in [0.25, 0.5, 2.0, 4.0] {
            let a = mobius_matrix_mul(&(Array2::eye(3) * s), &x).unwrap();
            let b = mobius_scalar_mul(s, &x).unwrap();
            assert_eq!(a, b, "power-of-two scale {s} should agree bitwise");
        }
        let a = mobius_matrix_mul(&(Array2::eye(3) * 1.7), &x).unwrap();
        let b = mobius_scalar_mul(1.7, &x).unwrap();
        assert!((a.norm() - b.norm()).abs() < 1e-12);
    }

    #[test]
    fn radius_values() {
        assert_eq!(hyperbolic_radius(&BallPoint::origin(4, k(1.0))), 0.0);
        assert_relative_eq!(
            hyperbolic_radius(&pt(array![0.5, 0.0], 1.0)),
            3f64.ln(),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            hyperbolic_radius(&pt(array![3.0, 4.0], 0.01)),
            20.0 * 0.5f64.atanh(),
            epsilon = 1e-13
        );
    }

    #[test]
    fn distance_values() {
        let x = pt(array![0.3, 0.0], 1.0);
        let y = pt(array![-0.3, 0.0], 1.0);
        assert_eq!(ball_distance(&x, &x).unwrap(), 0.0);
        let d = ball_distance(&x, &y).unwrap();
        assert_relative_eq!(d, 2.0 * (0.6f64 / 1.09).atanh(), epsilon = 1e-14);
        // Same value through the 1-D velocity-addition route.
        assert_relative_eq!(d, 2.0 * (2.0 * 0.3f64.atanh()), epsilon = 1e-14);
        assert_relative_eq!(d, ball_distance(&y, &x).unwrap(), epsilon = 1e-15);
        assert_eq!(
            ball_distance(&x, &BallPoint::origin(2, k(1.0))).unwrap(),
            hyperbolic_radius(&x)
        );
    }

    #[test]
    fn projection_rules() {
        let kk = k(1.0);
        let inside = array![0.3, 0.4];
        assert_eq!(
            project_to_ball(inside.clone(), kk).unwrap().coords(),
            inside.view()
        );
        let out = project_to_ball(array![2.0, 0.0], kk).unwrap();
        assert_relative_eq!(out.norm(), 1.0 - DEFAULT_BALL_EPS, epsilon = 1e-15);
        assert!(out.coords()[0] > 0.0 && out.coords()[1] == 0.0);
        assert!(project_to_ball(Array1::zeros(3), kk).unwrap().is_origin());
        assert!(project_to_ball(array![f64::NAN], kk).is_err());
    }

    #[test]
    fn max_radius_is_clamped_radius() {
        let kk = k(0.01);
        let edge = project_to_ball(array![100.0], kk).unwrap();
        assert_relative_eq!(hyperbolic_radius(&edge), kk.max_radius(), epsilon = 1e-12);
    }
}
