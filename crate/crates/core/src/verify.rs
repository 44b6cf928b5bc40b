//! Seeded property suites run by the `verify` subcommand.
//!
//! | suite          | property                                                         | tolerance |
//! |----------------|------------------------------------------------------------------|-----------|
//! | `theorem1`     | `Rad(s ⊗ x) = s · Rad(x)`                                        | 1e−9 rel  |
//! | `theorem2`     | `Rad(M ⊗ x) = (‖Mx‖/‖x‖) · Rad(x)` for all four kinds            | 1e−9 rel  |
//! | `roundtrip`    | `exp₀ ∘ log₀` and `log₀ ∘ exp₀` are the identity                 | 1e−9 rel  |
//! | `degeneration` | banded `d = 0` and block size 1 coincide with diagonal           | 1e−12     |
//! | `equivalence`  | uniform diagonal `sI` and scalar `s` adjust weights identically  | 1e−12     |
//!
//! Cases whose exact result would land within `10·ε_ball` of the boundary are
//! clamped by construction, so they are skipped and counted as excluded.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::adapter::{adjust_weight_matrix, adjust_weight_scalar, FrozenWeight};
use crate::error::{HyperError, Result};
use crate::grad::BOUNDARY_BAND_FACTOR;
use crate::poincare::{
    exp_map_origin, hyperbolic_radius, log_map_origin, mobius_matrix_mul, mobius_scalar_mul, norm,
    BallPoint, Curvature, TangentVector,
};
use crate::scaling::{ScalingKind, ScalingOperator};

pub const CURVATURES: [f64; 3] = [0.01, 0.1, 1.0];
pub const DIMS: [usize; 3] = [2, 8, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Theorem1,
    Theorem2,
    Roundtrip,
    Degeneration,
    Equivalence,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Theorem1,
        Suite::Theorem2,
        Suite::Roundtrip,
        Suite::Degeneration,
        Suite::Equivalence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Theorem1 => "theorem1",
            Suite::Theorem2 => "theorem2",
            Suite::Roundtrip => "roundtrip",
            Suite::Degeneration => "degeneration",
            Suite::Equivalence => "equivalence",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.name() == s.trim())
            .ok_or_else(|| HyperError::config(format!("unknown suite {s:?}")))
    }

    pub fn tolerance(self) -> f64 {
        match self {
            Suite::Theorem1 | Suite::Theorem2 | Suite::Roundtrip => 1e-9,
            Suite::Degeneration | Suite::Equivalence => 1e-12,
        }
    }

    fn salt(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyConfig {
    /// Cases for the three identity suites.
    pub cases: usize,
    /// Random layers for the degeneration and equivalence suites.
    pub layers: usize,
    pub seed: u64,
    pub eps: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            cases: 10_000,
            layers: 100,
            seed: 0,
            eps: crate::poincare::DEFAULT_BALL_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub cases: usize,
    pub excluded: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub seconds: f64,
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

fn vec_rel_err(got: &Array1<f64>, want: &Array1<f64>) -> f64 {
    norm((got - want).view()) / norm(want.view()).max(f64::MIN_POSITIVE)
}

fn mat_rel_err(got: &Array2<f64>, want: &Array2<f64>) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = (got - want).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Closed-form radius used as the oracle.
fn radius_oracle(scaled_norm: f64, k: Curvature) -> f64 {
    2.0 / k.sqrt() * scaled_norm.atanh()
}

fn unit_direction(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    loop {
        let g = Array1::from_shape_simple_fn(n, || rng.sample::<f64, _>(StandardNormal));
        let len = norm(g.view());
        if len > 1e-8 {
            return g / len;
        }
    }
}

fn grid(i: usize, eps: f64) -> Result<(Curvature, usize)> {
    let k = Curvature::with_eps(CURVATURES[i % 3], eps)?;
    Ok((k, DIMS[(i / 3) % 3]))
}

/// Point with `√c‖x‖ = a` along a random direction.
fn point_at(rng: &mut ChaCha8Rng, n: usize, a: f64, k: Curvature) -> Result<BallPoint> {
    BallPoint::new(unit_direction(rng, n) * (a / k.sqrt()), k)
}

fn outside_band(scaled_norm: f64, k: Curvature) -> bool {
    scaled_norm < 1.0 - BOUNDARY_BAND_FACTOR * k.eps()
}

struct Tally {
    cases: usize,
    excluded: usize,
    max_error: f64,
}

impl Tally {
    fn new() -> Self {
        Self {
            cases: 0,
            excluded: 0,
            max_error: 0.0,
        }
    }

    fn record(&mut self, err: f64) {
        self.cases += 1;
        // NaN must surface as a failure rather than vanish in `max`.
        if err.is_nan() || self.max_error.is_nan() {
            self.max_error = f64::NAN;
        } else {
            self.max_error = self.max_error.max(err);
        }
    }
}

fn theorem1(cfg: &VerifyConfig, rng: &mut ChaCha8Rng) -> Result<Tally> {
    let mut t = Tally::new();
    for i in 0..cfg.cases {
        let (k, n) = grid(i, cfg.eps)?;
        let a: f64 = rng.random_range(0.01..0.95);
        let s: f64 = rng.random_range(0.1..=5.0);
        let want_norm = (s * a.atanh()).tanh();
        if !outside_band(want_norm, k) {
            t.excluded += 1;
            continue;
        }
        let x = point_at(rng, n, a, k)?;
        let got = hyperbolic_radius(&mobius_scalar_mul(s, &x)?);
        t.record(rel_err(got, s * radius_oracle(k.sqrt() * x.norm(), k)));
    }
    Ok(t)
}

fn random_operator(rng: &mut ChaCha8Rng, kind: ScalingKind, n: usize) -> Result<ScalingOperator> {
    let mut op = ScalingOperator::init_identity(kind, n)?;
    for p in op.params_mut() {
        *p += 0.5 * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(op)
}

fn kinds_for(n: usize) -> [ScalingKind; 4] {
    [
        ScalingKind::Diagonal,
        ScalingKind::BlockDiagonal {
            block_size: n.min(4),
        },
        ScalingKind::Banded { bandwidth: 1 },
        ScalingKind::Dense,
    ]
}

fn theorem2(cfg: &VerifyConfig, rng: &mut ChaCha8Rng) -> Result<Tally> {
    let mut t = Tally::new();
    for i in 0..cfg.cases {
        let (k, n) = grid(i, cfg.eps)?;
        let kind = kinds_for(n)[(i / 9) % 4];
        let op = random_operator(rng, kind, n)?;
        let a: f64 = rng.random_range(0.01..0.95);
        let x = point_at(rng, n, a, k)?;
        let mx = op.matvec(x.coords())?;
        let ratio = norm(mx.view()) / x.norm();
        let want_norm = (ratio * a.atanh()).tanh();
        if ratio < 1e-12 || !outside_band(want_norm, k) {
            t.excluded += 1;
            continue;
        }
        let got = hyperbolic_radius(&mobius_matrix_mul(&op, &x)?);
        t.record(rel_err(got, ratio * radius_oracle(k.sqrt() * x.norm(), k)));
    }
    Ok(t)
}

fn roundtrip(cfg: &VerifyConfig, rng: &mut ChaCha8Rng) -> Result<Tally> {
    let mut t = Tally::new();
    for i in 0..cfg.cases {
        let (k, n) = grid(i, cfg.eps)?;
        // Log-uniform scaled norms in [1e−6, 0.99].
        let a = 10f64.powf(rng.random_range(-6.0..(0.99f64).log10()));
        let x = point_at(rng, n, a, k)?;
        let back = exp_map_origin(&log_map_origin(&x));
        let e1 = vec_rel_err(&back.coords().to_owned(), &x.coords().to_owned());

        let b = a.atanh();
        let v = TangentVector::new(unit_direction(rng, n) * (b / k.sqrt()), k)?;
        let back = log_map_origin(&exp_map_origin(&v));
        let e2 = vec_rel_err(&back.coords().to_owned(), &v.coords().to_owned());
        t.record(e1.max(e2));
    }
    Ok(t)
}

/// Column norms `√c‖w‖` of roughly 0.05 to 0.5, so that after scaling by
/// `s ≤ 5` no column lands where one ulp of `tanh` is amplified by `artanh`
/// past the comparison tolerance.
fn random_layer(rng: &mut ChaCha8Rng, n: usize, k: Curvature) -> Result<FrozenWeight> {
    let m = rng.random_range(1..=16);
    let scale = rng.random_range(0.05..0.5) / (k.sqrt() * (n as f64).sqrt());
    FrozenWeight::new(Array2::from_shape_simple_fn((n, m), || {
        scale * rng.sample::<f64, _>(StandardNormal)
    }))
}

fn degeneration(cfg: &VerifyConfig, rng: &mut ChaCha8Rng) -> Result<Tally> {
    let mut t = Tally::new();
    for i in 0..cfg.layers {
        let (k, n) = grid(i, cfg.eps)?;
        let diag = random_operator(rng, ScalingKind::Diagonal, n)?;
        let w0 = random_layer(rng, n, k)?;
        let want = adjust_weight_matrix(&w0, &diag, k)?;
        for kind in [
            ScalingKind::Banded { bandwidth: 0 },
            ScalingKind::BlockDiagonal { block_size: 1 },
        ] {
            let op = ScalingOperator::from_params(kind, n, diag.params().to_vec())?;
            let expansion = if op.to_dense() == diag.to_dense() {
                0.0
            } else {
                f64::INFINITY
            };
            let got = adjust_weight_matrix(&w0, &op, k)?;
            t.record(expansion.max(mat_rel_err(&got, &want)));
        }
    }
    Ok(t)
}

fn equivalence(cfg: &VerifyConfig, rng: &mut ChaCha8Rng) -> Result<Tally> {
    let mut t = Tally::new();
    for i in 0..cfg.layers {
        let (k, n) = grid(i, cfg.eps)?;
        let s: f64 = rng.random_range(0.1..=5.0);
        let w0 = random_layer(rng, n, k)?;
        let scalar = adjust_weight_scalar(&w0, s, k)?;
        let matrix = adjust_weight_matrix(&w0, &ScalingOperator::uniform_diagonal(n, s)?, k)?;
        t.record(mat_rel_err(&matrix, &scalar));
    }
    Ok(t)
}

pub fn run_suite(suite: Suite, cfg: &VerifyConfig) -> Result<SuiteReport> {
    if cfg.cases == 0 || cfg.layers == 0 {
        return Err(HyperError::config("verify needs at least one case"));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(
        cfg.seed
            .wrapping_add(suite.salt().wrapping_mul(0x51_7cc1_b727_220a)),
    );
    let tally = match suite {
        Suite::Theorem1 => theorem1(cfg, &mut rng)?,
        Suite::Theorem2 => theorem2(cfg, &mut rng)?,
        Suite::Roundtrip => roundtrip(cfg, &mut rng)?,
        Suite::Degeneration => degeneration(cfg, &mut rng)?,
        Suite::Equivalence => equivalence(cfg, &mut rng)?,
    };
    let tolerance = suite.tolerance();
    Ok(SuiteReport {
        suite,
        cases: tally.cases,
        excluded: tally.excluded,
        max_error: tally.max_error,
        tolerance,
        passed: tally.cases > 0 && tally.max_error <= tolerance,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn run_suites(suites: &[Suite], cfg: &VerifyConfig) -> Result<Vec<SuiteReport>> {
    suites.iter().map(|&s| run_suite(s, cfg)).collect()
}
