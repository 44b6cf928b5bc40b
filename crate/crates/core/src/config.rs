//! Run configuration shared by every subcommand.
//!
//! Values are resolved in three layers: built-in defaults, then an optional
//! flat `key = value` file, then command-line flags. Keys in the file use the
//! flag names without the leading dashes (`max-steps` and `max_steps` are both
//! accepted). `HYPERADAPT_EPS` overrides the ball margin for testing.

use std::path::Path;

use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::error::{HyperError, Result};
use crate::poincare::{Curvature, DEFAULT_BALL_EPS, DEFAULT_CURVATURE};
use crate::scaling::ScalingKind;
use crate::toy::{TargetSpec, ToyTask};

pub const EPS_ENV: &str = "HYPERADAPT_EPS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    Diagonal,
    Block,
    Banded,
    Dense,
}

impl KindName {
    fn parse(s: &str) -> Result<Self> {
        <Self as ValueEnum>::from_str(s, true)
            .map_err(|_| HyperError::config(format!("unknown matrix kind {s:?}")))
    }
}

/// Optional settings from one layer. Every field maps to a `--flag` and to a
/// config-file key of the same name.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigOverrides {
    /// Ball curvature c (> 0)
    #[arg(long, allow_negative_numbers = true)]
    pub curvature: Option<f64>,
    /// Scaling matrix kind
    #[arg(long, value_enum)]
    pub kind: Option<KindName>,
    /// Block size for the block kind
    #[arg(long)]
    pub block_size: Option<usize>,
    /// Off-diagonal bandwidth for the banded kind
    #[arg(long)]
    pub bandwidth: Option<usize>,
    /// Use uniform scalar scaling with this factor
    #[arg(long, allow_negative_numbers = true)]
    pub scalar: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Learning rate
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Train against a single uniform target scale instead of mixed targets
    #[arg(long, allow_negative_numbers = true)]
    pub targets_uniform: Option<f64>,
    /// Representation dimension of the toy task
    #[arg(long)]
    pub dim: Option<usize>,
    /// Frozen-weight columns of the toy task
    #[arg(long)]
    pub columns: Option<usize>,
    /// Samples in the toy dataset
    #[arg(long)]
    pub train_samples: Option<usize>,
    /// Histogram bins
    #[arg(long)]
    pub bins: Option<usize>,
    /// Gradient-check cases per kind
    #[arg(long)]
    pub samples: Option<usize>,
    /// Finite-difference step
    #[arg(long, allow_negative_numbers = true)]
    pub step: Option<f64>,
    /// Relative tolerance for gradient checks
    #[arg(long, allow_negative_numbers = true)]
    pub rel_tol: Option<f64>,
    /// Property-suite cases
    #[arg(long)]
    pub cases: Option<usize>,
    /// Ball margin epsilon
    #[arg(long, allow_negative_numbers = true)]
    pub eps: Option<f64>,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| HyperError::config(format!("invalid value {value:?} for {key}")))
}

impl ConfigOverrides {
    /// Parses the flat `key = value` format. Blank lines and `#` comments are
    /// ignored.
    pub fn parse_file_contents(text: &str) -> Result<Self> {
        let mut out = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HyperError::config(format!("line {}: expected key = value", lineno + 1))
            })?;
            out.set(key.trim(), value.trim())?;
        }
        Ok(out)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse_file_contents(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let key = key.replace('_', "-");
        match key.as_str() {
            "curvature" => self.curvature = Some(parse_value(&key, v)?),
            "kind" => self.kind = Some(KindName::parse(v)?),
            "block-size" => self.block_size = Some(parse_value(&key, v)?),
            "bandwidth" => self.bandwidth = Some(parse_value(&key, v)?),
            "scalar" => self.scalar = Some(parse_value(&key, v)?),
            "seed" => self.seed = Some(parse_value(&key, v)?),
            "lr" => self.lr = Some(parse_value(&key, v)?),
            "momentum" => self.momentum = Some(parse_value(&key, v)?),
            "max-steps" => self.max_steps = Some(parse_value(&key, v)?),
            "targets-uniform" => self.targets_uniform = Some(parse_value(&key, v)?),
            "dim" => self.dim = Some(parse_value(&key, v)?),
            "columns" => self.columns = Some(parse_value(&key, v)?),
            "train-samples" => self.train_samples = Some(parse_value(&key, v)?),
            "bins" => self.bins = Some(parse_value(&key, v)?),
            "samples" => self.samples = Some(parse_value(&key, v)?),
            "step" => self.step = Some(parse_value(&key, v)?),
            "rel-tol" => self.rel_tol = Some(parse_value(&key, v)?),
            "cases" => self.cases = Some(parse_value(&key, v)?),
            "eps" => self.eps = Some(parse_value(&key, v)?),
            other => return Err(HyperError::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Fields set in `top` replace those in `self`.
    pub fn layered(self, top: &Self) -> Self {
        macro_rules! pick {
            ($($f:ident),*) => { Self { $($f: top.$f.or(self.$f)),* } };
        }
        pick!(
            curvature,
            kind,
            block_size,
            bandwidth,
            scalar,
            seed,
            lr,
            momentum,
            max_steps,
            targets_uniform,
            dim,
            columns,
            train_samples,
            bins,
            samples,
            step,
            rel_tol,
            cases,
            eps
        )
    }
}

/// Fully resolved and validated configuration. Serialized into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub curvature: f64,
    pub eps: f64,
    /// `None` means "not chosen"; each subcommand applies its own default.
    pub kind: Option<KindName>,
    pub block_size: usize,
    pub bandwidth: usize,
    pub scalar: Option<f64>,
    pub seed: u64,
    pub lr: f64,
    pub momentum: f64,
    pub max_steps: usize,
    pub targets_uniform: Option<f64>,
    pub dim: usize,
    pub columns: usize,
    pub train_samples: usize,
    pub bins: usize,
    pub samples: usize,
    pub step: f64,
    pub rel_tol: f64,
    pub cases: usize,
}

pub const DEFAULT_LR: f64 = 1e-2;
pub const DEFAULT_MOMENTUM: f64 = 0.97;

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            curvature: DEFAULT_CURVATURE,
            eps: DEFAULT_BALL_EPS,
            kind: None,
            block_size: 4,
            bandwidth: 1,
            scalar: None,
            seed: 0,
            lr: DEFAULT_LR,
            momentum: DEFAULT_MOMENTUM,
            max_steps: 500,
            targets_uniform: None,
            dim: 32,
            columns: 64,
            train_samples: 256,
            bins: 20,
            samples: 100,
            step: 1e-6,
            rel_tol: 1e-5,
            cases: 10_000,
        }
    }
}

impl RunConfig {
    /// Defaults, then `file`, then `flags`, then the environment margin.
    pub fn resolve(file: Option<&Path>, flags: &ConfigOverrides) -> Result<Self> {
        let base = match file {
            Some(p) => ConfigOverrides::from_file(p)?,
            None => ConfigOverrides::default(),
        };
        let mut merged = base.layered(flags);
        if let Ok(v) = std::env::var(EPS_ENV) {
            merged.eps = Some(parse_value(EPS_ENV, &v)?);
        }
        Self::from_overrides(&merged)
    }

    pub fn from_overrides(o: &ConfigOverrides) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            curvature: o.curvature.unwrap_or(d.curvature),
            eps: o.eps.unwrap_or(d.eps),
            kind: o.kind.or(d.kind),
            block_size: o.block_size.unwrap_or(d.block_size),
            bandwidth: o.bandwidth.unwrap_or(d.bandwidth),
            scalar: o.scalar.or(d.scalar),
            seed: o.seed.unwrap_or(d.seed),
            lr: o.lr.unwrap_or(d.lr),
            momentum: o.momentum.unwrap_or(d.momentum),
            max_steps: o.max_steps.unwrap_or(d.max_steps),
            targets_uniform: o.targets_uniform.or(d.targets_uniform),
            dim: o.dim.unwrap_or(d.dim),
            columns: o.columns.unwrap_or(d.columns),
            train_samples: o.train_samples.unwrap_or(d.train_samples),
            bins: o.bins.unwrap_or(d.bins),
            samples: o.samples.unwrap_or(d.samples),
            step: o.step.unwrap_or(d.step),
            rel_tol: o.rel_tol.unwrap_or(d.rel_tol),
            cases: o.cases.unwrap_or(d.cases),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.curvature()?;
        if self.block_size == 0 {
            return Err(HyperError::config("block-size must be >= 1"));
        }
        if let Some(s) = self.scalar {
            if !s.is_finite() {
                return Err(HyperError::config("scalar must be finite"));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(HyperError::config(format!(
                "lr must be > 0, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(HyperError::config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.bins == 0 {
            return Err(HyperError::config("bins must be >= 1"));
        }
        if self.samples == 0 {
            return Err(HyperError::config("samples must be >= 1"));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(HyperError::config(format!(
                "step must be > 0, got {}",
                self.step
            )));
        }
        if !(self.rel_tol.is_finite() && self.rel_tol > 0.0) {
            return Err(HyperError::config("rel-tol must be > 0"));
        }
        if self.cases == 0 {
            return Err(HyperError::config("cases must be >= 1"));
        }
        self.toy_task()?.validate()
    }

    pub fn curvature(&self) -> Result<Curvature> {
        Curvature::with_eps(self.curvature, self.eps).map_err(|e| match e {
            HyperError::Domain(msg) => HyperError::Config(msg),
            other => other,
        })
    }

    pub fn scaling_kind(&self, kind: KindName) -> ScalingKind {
        match kind {
            KindName::Diagonal => ScalingKind::Diagonal,
            KindName::Block => ScalingKind::BlockDiagonal {
                block_size: self.block_size,
            },
            KindName::Banded => ScalingKind::Banded {
                bandwidth: self.bandwidth,
            },
            KindName::Dense => ScalingKind::Dense,
        }
    }

    /// Chosen kind, or `fallback` when none was given.
    pub fn kind_or(&self, fallback: KindName) -> ScalingKind {
        self.scaling_kind(self.kind.unwrap_or(fallback))
    }

    pub fn toy_task(&self) -> Result<ToyTask> {
        let targets = match self.targets_uniform {
            Some(scale) => TargetSpec::Uniform { scale },
            None => TargetSpec::default(),
        };
        Ok(ToyTask {
            dim: self.dim,
            columns: self.columns,
            samples: self.train_samples,
            curvature: self.curvature()?,
            targets,
            seed: self.seed,
        })
    }
}
