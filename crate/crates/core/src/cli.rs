//! Subcommands of the `hyperadapt` binary.
//!
//! Every subcommand prints a JSON report to stdout (and to `--out` when
//! given) carrying the resolved configuration and the crate version. Exit
//! codes: 0 pass, 1 property failure, 2 invalid configuration, 3 I/O or file
//! format error, 4 training divergence.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::adapter::{AdapterLayer, FrozenWeight};
use crate::config::{ConfigOverrides, KindName, RunConfig};
use crate::error::{HyperError, Result};
use crate::grad::{check_kind, CheckShape, GradCheckConfig, KindCheck};
use crate::scaling::{ScalingKind, ScalingOperator};
use crate::tensor_file::{read_matrix_any, write_atomic, DType, TensorFile};
use crate::toy::{
    adjusted_points, generate_dataset, radius_histogram, train_on, RadiusHistogram, TrainConfig,
};
use crate::verify::{run_suites, Suite, VerifyConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PROPERTY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "hyperadapt",
    version,
    about = "Hyperbolic radius adjustment of frozen weights"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Shared {
    /// Flat key = value configuration file; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the JSON report here as well as to stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the seeded property suites
    Verify {
        #[command(flatten)]
        shared: Shared,
        /// Comma-separated subset of theorem1,theorem2,roundtrip,degeneration,equivalence
        #[arg(long, value_delimiter = ',')]
        suites: Vec<String>,
    },
    /// Apply a scaling to a weight file
    Adjust {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        source: ScalingSource,
        /// Output tensor file
        #[arg(long)]
        output: PathBuf,
    },
    /// Train a scaling operator on the synthetic radius-alignment task
    Train {
        #[command(flatten)]
        shared: Shared,
        /// CSV histogram of normalized radii before training
        #[arg(long)]
        histogram_before: Option<PathBuf>,
        /// CSV histogram of normalized radii after training
        #[arg(long)]
        histogram_after: Option<PathBuf>,
        /// Save the trained operator in the flat scaling format
        #[arg(long)]
        save_scaling: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences
    CheckGrad {
        #[command(flatten)]
        shared: Shared,
    },
    /// Parameter counts per kind and, with --input, per-column radius effects
    Report {
        #[command(flatten)]
        shared: Shared,
        /// Weight tensor (HYPT or .csv)
        #[arg(long)]
        input: Option<PathBuf>,
        /// Flat parameter vector in canonical order for the chosen kind
        #[arg(long)]
        params: Option<PathBuf>,
        /// Scaling operator in the flat format written by `train --save-scaling`
        #[arg(long, conflicts_with = "params")]
        scaling: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ScalingSource {
    /// Weight tensor (HYPT or .csv)
    #[arg(long)]
    pub input: PathBuf,
    /// Flat parameter vector in canonical order for the chosen kind
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Scaling operator in the flat format written by `train --save-scaling`
    #[arg(long, conflicts_with = "params")]
    pub scaling: Option<PathBuf>,
}

pub fn exit_code(e: &HyperError) -> i32 {
    match e {
        HyperError::Config(_) | HyperError::Domain(_) | HyperError::Shape(_) => EXIT_CONFIG,
        HyperError::Format(_) | HyperError::Io(_) => EXIT_IO,
        HyperError::Divergence { .. } => EXIT_DIVERGENCE,
        HyperError::NearBoundary(_) => EXIT_PROPERTY,
    }
}

/// Runs one subcommand and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let (name, result) = match cli.command {
        Command::Verify { shared, suites } => {
            ("verify", with_config(&shared, |c| cmd_verify(c, &suites)))
        }
        Command::Adjust {
            shared,
            source,
            output,
        } => (
            "adjust",
            with_config(&shared, |c| cmd_adjust(c, &source, &output)),
        ),
        Command::Train {
            shared,
            histogram_before,
            histogram_after,
            save_scaling,
        } => (
            "train",
            with_config(&shared, |c| {
                cmd_train(
                    c,
                    histogram_before.as_deref(),
                    histogram_after.as_deref(),
                    save_scaling.as_deref(),
                )
            }),
        ),
        Command::CheckGrad { shared } => ("check-grad", with_config(&shared, cmd_check_grad)),
        Command::Report {
            shared,
            input,
            params,
            scaling,
        } => (
            "report",
            with_config(&shared, |c| {
                cmd_report(c, input.as_deref(), params.as_deref(), scaling.as_deref())
            }),
        ),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("hyperadapt {name}: {e}");
            exit_code(&e)
        }
    }
}

/// Outcome of a subcommand body: the report payload and whether it passed.
struct Outcome {
    payload: Value,
    code: i32,
}

fn with_config(shared: &Shared, body: impl FnOnce(&RunConfig) -> Result<Outcome>) -> Result<i32> {
    let cfg = RunConfig::resolve(shared.config.as_deref(), &shared.overrides)?;
    let outcome = match body(&cfg) {
        Ok(o) => o,
        Err(HyperError::Divergence {
            step,
            loss_curve,
            params,
        }) => Outcome {
            payload: json!({
                "diverged": true,
                "step": step,
                "loss_curve": loss_curve,
                "last_finite_params": params,
            }),
            code: EXIT_DIVERGENCE,
        },
        Err(e) => return Err(e),
    };
    let report = envelope(&cfg, outcome.payload);
    let text =
        serde_json::to_string_pretty(&report).map_err(|e| HyperError::format(e.to_string()))?;
    // A closed stdout (e.g. piped into `head`) must not abort the run.
    let _ = writeln!(std::io::stdout(), "{text}");
    if let Some(path) = &shared.out {
        write_atomic(path, format!("{text}\n").as_bytes())?;
    }
    Ok(outcome.code)
}

fn envelope(cfg: &RunConfig, payload: Value) -> Value {
    let mut v = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
    });
    if let (Value::Object(dst), Value::Object(src)) = (&mut v, payload) {
        dst.extend(src);
    }
    v
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| HyperError::format(e.to_string()))
}

fn cmd_verify(cfg: &RunConfig, names: &[String]) -> Result<Outcome> {
    let suites = if names.is_empty() {
        Suite::ALL.to_vec()
    } else {
        names
            .iter()
            .map(|n| Suite::parse(n))
            .collect::<Result<Vec<_>>>()?
    };
    let vcfg = VerifyConfig {
        cases: cfg.cases,
        seed: cfg.seed,
        eps: cfg.eps,
        ..Default::default()
    };
    let reports = run_suites(&suites, &vcfg)?;
    let passed = reports.iter().all(|r| r.passed);
    for r in &reports {
        eprintln!(
            "{:<13} {} max_error {:.3e} (tol {:.0e}) cases {} excluded {}",
            r.suite.name(),
            if r.passed { "PASS" } else { "FAIL" },
            r.max_error,
            r.tolerance,
            r.cases,
            r.excluded
        );
    }
    Ok(Outcome {
        payload: json!({ "command": "verify", "passed": passed, "suites": reports }),
        code: if passed { EXIT_OK } else { EXIT_PROPERTY },
    })
}

fn read_weight(path: &Path) -> Result<(FrozenWeight, DType)> {
    let dtype = if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        DType::F64
    } else {
        TensorFile::read(path)?.dtype
    };
    Ok((FrozenWeight::new(read_matrix_any(path)?)?, dtype))
}

fn read_vector(path: &Path) -> Result<Vec<f64>> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        Ok(read_matrix_any(path)?.into_iter().collect())
    } else {
        Ok(TensorFile::read(path)?.data.into_iter().collect())
    }
}

/// Scaling chosen by `--scaling`, `--params`, or identity of the configured
/// kind (diagonal when none is given).
fn build_layer(
    cfg: &RunConfig,
    w0: FrozenWeight,
    params: Option<&Path>,
    scaling: Option<&Path>,
) -> Result<AdapterLayer> {
    let dim = w0.rows();
    let kind = cfg.kind_or(KindName::Diagonal);
    let op = match (scaling, params) {
        (Some(p), _) => ScalingOperator::from_flat(&read_vector(p)?)?,
        (None, Some(p)) => ScalingOperator::from_params(kind, dim, read_vector(p)?)?,
        (None, None) => ScalingOperator::init_identity(kind, dim)?,
    };
    AdapterLayer::new(w0, op, cfg.curvature()?)?.with_scalar_mode(cfg.scalar)
}

fn describe_layer(layer: &AdapterLayer) -> Value {
    match layer.scalar_mode() {
        Some(s) => json!({ "mode": "scalar", "scalar": s }),
        None => json!({ "mode": "matrix", "kind": layer.scaling().kind() }),
    }
}

fn cmd_adjust(cfg: &RunConfig, src: &ScalingSource, output: &Path) -> Result<Outcome> {
    let (w0, dtype) = read_weight(&src.input)?;
    let layer = build_layer(cfg, w0, src.params.as_deref(), src.scaling.as_deref())?;
    let adjusted = layer.adjusted_weight()?;
    TensorFile::from_matrix(dtype, adjusted).write(output)?;
    let report = layer.report()?;
    Ok(Outcome {
        payload: json!({
            "command": "adjust",
            "input": src.input,
            "output": output,
            "scaling": describe_layer(&layer),
            "report": report,
        }),
        code: EXIT_OK,
    })
}

fn write_histogram(path: Option<&Path>, h: &RadiusHistogram) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, h.to_csv()?.as_bytes()),
        None => Ok(()),
    }
}

fn cmd_train(
    cfg: &RunConfig,
    hist_before: Option<&Path>,
    hist_after: Option<&Path>,
    save_scaling: Option<&Path>,
) -> Result<Outcome> {
    let task = cfg.toy_task()?;
    let kind = cfg.kind_or(KindName::Dense);
    let data = generate_dataset(&task)?;
    let tcfg = TrainConfig {
        kind,
        lr: cfg.lr,
        momentum: cfg.momentum,
        max_steps: cfg.max_steps,
    };
    let result = train_on(&data, task.dim, &tcfg)?;

    let before = radius_histogram(&data.points, cfg.bins)?;
    let after_points = adjusted_points(&result.scaling, &data)?;
    let after = radius_histogram(&after_points, cfg.bins)?;
    write_histogram(hist_before, &before)?;
    write_histogram(hist_after, &after)?;
    if let Some(p) = save_scaling {
        let flat = ndarray::Array1::from(result.scaling.to_flat()).into_dyn();
        TensorFile::new(DType::F64, flat).write(p)?;
    }

    let mean_target = data.target_scales.iter().sum::<f64>() / data.target_scales.len() as f64;
    let target_implied_mean = data
        .points
        .iter()
        .zip(&data.target_scales)
        .map(|(p, s)| s * crate::poincare::hyperbolic_radius(p))
        .sum::<f64>()
        / data.points.len() as f64;
    let layer = AdapterLayer::new(data.frozen.clone(), result.scaling.clone(), task.curvature)?;
    eprintln!(
        "train {}: {} steps, final loss {:.3e}, converged {}",
        kind,
        result.steps,
        result.final_loss(),
        result.converged
    );
    Ok(Outcome {
        payload: json!({
            "command": "train",
            "task": task,
            "kind": kind,
            "result": to_value(&result)?,
            "final_loss": result.final_loss(),
            "histograms": {
                "normalization": before.normalization,
                "before": before,
                "after": after,
                "mean_target_scale": mean_target,
                "target_implied_mean_radius": target_implied_mean,
            },
            "frozen_weight_report": layer.report()?,
        }),
        code: EXIT_OK,
    })
}

fn check_kinds(cfg: &RunConfig) -> Vec<ScalingKind> {
    match cfg.kind {
        Some(k) => vec![cfg.scaling_kind(k)],
        None => [
            KindName::Diagonal,
            KindName::Block,
            KindName::Banded,
            KindName::Dense,
        ]
        .into_iter()
        .map(|k| cfg.scaling_kind(k))
        .collect(),
    }
}

fn cmd_check_grad(cfg: &RunConfig) -> Result<Outcome> {
    let gcfg = GradCheckConfig {
        step: cfg.step,
        rel_tol: cfg.rel_tol,
        samples: cfg.samples,
        seed: cfg.seed,
        ..Default::default()
    };
    gcfg.validate()?;
    let shape = CheckShape::default();
    let k = cfg.curvature()?;
    let checks = check_kinds(cfg)
        .into_iter()
        .map(|kind| check_kind(kind, shape, k, &gcfg))
        .collect::<Result<Vec<KindCheck>>>()?;
    for c in &checks {
        eprintln!(
            "{:<16} {} max_rel_error {:.3e} cases {} excluded {}",
            c.kind.to_string(),
            if c.passed { "PASS" } else { "FAIL" },
            c.max_rel_error,
            c.cases,
            c.excluded
        );
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(Outcome {
        payload: json!({
            "command": "check-grad",
            "passed": passed,
            "shape": { "dim": shape.dim, "columns": shape.columns, "points": shape.points },
            "kinds": checks,
        }),
        code: if passed { EXIT_OK } else { EXIT_PROPERTY },
    })
}

fn cmd_report(
    cfg: &RunConfig,
    input: Option<&Path>,
    params: Option<&Path>,
    scaling: Option<&Path>,
) -> Result<Outcome> {
    let dim = match input {
        Some(p) => read_weight(p)?.0.rows(),
        None => cfg.dim,
    };
    let counts = [
        KindName::Diagonal,
        KindName::Block,
        KindName::Banded,
        KindName::Dense,
    ]
    .into_iter()
    .map(|k| {
        let kind = cfg.scaling_kind(k);
        json!({ "kind": kind, "params": kind.param_count(dim).ok() })
    })
    .collect::<Vec<_>>();
    let adapter = match input {
        Some(p) => {
            let layer = build_layer(cfg, read_weight(p)?.0, params, scaling)?;
            json!({ "scaling": describe_layer(&layer), "report": layer.report()? })
        }
        None => Value::Null,
    };
    Ok(Outcome {
        payload: json!({
            "command": "report",
            "dim": dim,
            "param_counts": counts,
            "adapter": adapter,
        }),
        code: EXIT_OK,
    })
}
