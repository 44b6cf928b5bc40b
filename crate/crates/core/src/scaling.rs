//! Structured scaling matrices `W_s`.
//!
//! Four parametrizations share one storage type: a flat parameter array in a
//! fixed canonical order.
//!
//! | kind           | stored entries            | order                         |
//! |----------------|---------------------------|-------------------------------|
//! | diagonal       | `(i, i)`                  | row order                     |
//! | block-diagonal | `n/b` blocks of `b × b`   | blocks in order, row-major    |
//! | banded         | `|i − j| ≤ d`             | row-major over the band       |
//! | dense          | all `n²`                  | row-major                     |
//!
//! Banded with `d = 0` and block-diagonal with `b = 1` store exactly the
//! diagonal, in the same order, so they expand to the same matrix as a
//! diagonal operator with equal parameters.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{HyperError, Result};
use crate::poincare::LinearMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalingKind {
    Diagonal,
    BlockDiagonal { block_size: usize },
    Banded { bandwidth: usize },
    Dense,
}

impl ScalingKind {
    /// Short name used on the command line.
    pub fn name(&self) -> &'static str {
        match self {
            ScalingKind::Diagonal => "diagonal",
            ScalingKind::BlockDiagonal { .. } => "block",
            ScalingKind::Banded { .. } => "banded",
            ScalingKind::Dense => "dense",
        }
    }

    fn tag(&self) -> u8 {
        match self {
            ScalingKind::Diagonal => 0,
            ScalingKind::BlockDiagonal { .. } => 1,
            ScalingKind::Banded { .. } => 2,
            ScalingKind::Dense => 3,
        }
    }

    fn structural(&self) -> usize {
        match *self {
            ScalingKind::BlockDiagonal { block_size } => block_size,
            ScalingKind::Banded { bandwidth } => bandwidth,
            _ => 0,
        }
    }

    /// Number of learnable entries for an `n × n` operator, after checking the
    /// structural parameters.
    pub fn param_count(&self, dim: usize) -> Result<usize> {
        if dim == 0 {
            return Err(HyperError::config("scaling dimension must be >= 1"));
        }
        match *self {
            ScalingKind::Diagonal => Ok(dim),
            ScalingKind::BlockDiagonal { block_size } => {
                if block_size == 0 || !dim.is_multiple_of(block_size) {
                    return Err(HyperError::config(format!(
                        "block size {block_size} does not divide dimension {dim}"
                    )));
                }
                Ok(dim * block_size)
            }
            ScalingKind::Banded { bandwidth } => {
                if bandwidth >= dim {
                    return Err(HyperError::config(format!(
                        "bandwidth {bandwidth} must be < dimension {dim}"
                    )));
                }
                Ok(dim * (2 * bandwidth + 1) - bandwidth * (bandwidth + 1))
            }
            ScalingKind::Dense => Ok(dim * dim),
        }
    }
}

impl fmt::Display for ScalingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ScalingKind::BlockDiagonal { block_size } => write!(f, "block(size={block_size})"),
            ScalingKind::Banded { bandwidth } => write!(f, "banded(d={bandwidth})"),
            _ => f.write_str(self.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingOperator {
    kind: ScalingKind,
    dim: usize,
    params: Vec<f64>,
}

impl ScalingOperator {
    /// Operator whose dense expansion is the identity.
    pub fn init_identity(kind: ScalingKind, dim: usize) -> Result<Self> {
        let count = kind.param_count(dim)?;
        let mut op = Self {
            kind,
            dim,
            params: vec![0.0; count],
        };
        let mut ones = Vec::with_capacity(dim);
        op.visit(|i, j, k| {
            if i == j {
                ones.push(k);
            }
        });
        for k in ones {
            op.params[k] = 1.0;
        }
        Ok(op)
    }

    pub fn from_params(kind: ScalingKind, dim: usize, params: Vec<f64>) -> Result<Self> {
        let count = kind.param_count(dim)?;
        if params.len() != count {
            return Err(HyperError::config(format!(
                "{kind} operator of dimension {dim} needs {count} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(HyperError::domain("scaling parameters must be finite"));
        }
        Ok(Self { kind, dim, params })
    }

    /// Diagonal operator with every entry equal to `s`.
    pub fn uniform_diagonal(dim: usize, s: f64) -> Result<Self> {
        Self::from_params(ScalingKind::Diagonal, dim, vec![s; dim])
    }

    pub fn kind(&self) -> ScalingKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(HyperError::shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Call `f(row, col, param_index)` for every stored entry, in canonical
    /// parameter order.
    pub fn visit(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n = self.dim;
        match self.kind {
            ScalingKind::Diagonal => (0..n).for_each(|i| f(i, i, i)),
            ScalingKind::BlockDiagonal { block_size: b } => {
                let mut k = 0;
                for start in (0..n).step_by(b) {
                    for i in start..start + b {
                        for j in start..start + b {
                            f(i, j, k);
                            k += 1;
                        }
                    }
                }
            }
            ScalingKind::Banded { bandwidth: d } => {
                let mut k = 0;
                for i in 0..n {
                    for j in i.saturating_sub(d)..=(i + d).min(n - 1) {
                        f(i, j, k);
                        k += 1;
                    }
                }
            }
            ScalingKind::Dense => {
                for i in 0..n {
                    for j in 0..n {
                        f(i, j, i * n + j);
                    }
                }
            }
        }
    }

    pub fn matvec(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if x.len() != self.dim {
            return Err(HyperError::shape(format!(
                "operator dimension {} vs vector length {}",
                self.dim,
                x.len()
            )));
        }
        Ok(self.apply_unchecked(x))
    }

    fn apply_unchecked(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut y = Array1::zeros(self.dim);
        let p = &self.params;
        self.visit(|i, j, k| y[i] += p[k] * x[j]);
        y
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.dim, self.dim));
        self.visit(|i, j, k| m[[i, j]] = self.params[k]);
        m
    }

    /// Add `u_i · x_j` into `grad[k]` for every stored entry `(i, j) ↦ k`,
    /// i.e. the parameter gradient of `⟨u, W_s x⟩`.
    pub fn accumulate_outer(
        &self,
        u: ArrayView1<'_, f64>,
        x: ArrayView1<'_, f64>,
        grad: &mut [f64],
    ) {
        debug_assert_eq!(grad.len(), self.params.len());
        self.visit(|i, j, k| grad[k] += u[i] * x[j]);
    }

    /// Self-describing flat encoding: `[kind_tag, dim, block_size|bandwidth|0, params...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 + self.params.len());
        out.push(self.kind.tag() as f64);
        out.push(self.dim as f64);
        out.push(self.kind.structural() as f64);
        out.extend_from_slice(&self.params);
        out
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() < 3 {
            return Err(HyperError::format("scaling record shorter than its header"));
        }
        let as_int = |v: f64, what: &str| -> Result<usize> {
            if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
                return Err(HyperError::format(format!("bad {what} field {v}")));
            }
            Ok(v as usize)
        };
        let dim = as_int(values[1], "dimension")?;
        let structural = as_int(values[2], "structural")?;
        let kind = match as_int(values[0], "kind tag")? {
            0 => ScalingKind::Diagonal,
            1 => ScalingKind::BlockDiagonal {
                block_size: structural,
            },
            2 => ScalingKind::Banded {
                bandwidth: structural,
            },
            3 => ScalingKind::Dense,
            t => return Err(HyperError::format(format!("unknown scaling kind tag {t}"))),
        };
        Self::from_params(kind, dim, values[3..].to_vec())
    }
}

impl LinearMap for ScalingOperator {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        assert_eq!(x.len(), self.dim, "scaling operator dimension mismatch");
        self.apply_unchecked(x)
    }
}
