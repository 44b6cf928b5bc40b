//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so the lines are always
//! printed.

use std::process::Command;
use std::time::{Duration, Instant};

use hyperadapt::adapter::{adjust_weight_matrix, adjust_weight_scalar, FrozenWeight};
use hyperadapt::config::DEFAULT_MOMENTUM;
use hyperadapt::grad::{check_kind, CheckShape, GradCheckConfig, BOUNDARY_BAND_FACTOR};
use hyperadapt::poincare::{
    exp_map_origin, hyperbolic_radius, log_map_origin, mobius_matrix_mul, mobius_scalar_mul,
    BallPoint, Curvature, TangentVector,
};
use hyperadapt::scaling::{ScalingKind, ScalingOperator};
use hyperadapt::toy::{train, TargetSpec, ToyTask, TrainConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

const CURVATURES: [f64; 3] = [0.01, 0.1, 1.0];
const DIMS: [usize; 3] = [2, 8, 64];
const CASES: usize = 10_000;

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> (bool, String) {
    let s = elapsed.as_secs_f64();
    (s < limit_s, format!("{s:.2}s < {limit_s}s"))
}

// Oracles over plain slices.

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn vnorm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn radius_oracle(x: &[f64], c: f64) -> f64 {
    2.0 / c.sqrt() * (c.sqrt() * vnorm(x)).atanh()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn grid(i: usize) -> (Curvature, usize) {
    (
        Curvature::new(CURVATURES[i % 3]).unwrap(),
        DIMS[(i / 3) % 3],
    )
}

/// Random point with `√c‖x‖ = a`.
fn point(rng: &mut ChaCha8Rng, n: usize, a: f64, k: Curvature) -> BallPoint {
    let g = gaussian_vec(rng, n);
    let len = vnorm(&g);
    BallPoint::new(g.iter().map(|v| v / len * a / k.sqrt()).collect(), k).unwrap()
}

fn in_band(scaled_norm: f64, k: Curvature) -> bool {
    scaled_norm >= 1.0 - BOUNDARY_BAND_FACTOR * k.eps()
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut max_err, mut cases, mut excluded) = (0.0f64, 0, 0);
    for i in 0..CASES {
        let (k, n) = grid(i);
        let a: f64 = rng.random_range(0.01..0.95);
        let s: f64 = rng.random_range(0.1..=5.0);
        if in_band((s * a.atanh()).tanh(), k) {
            excluded += 1;
            continue;
        }
        let x = point(&mut rng, n, a, k);
        let want = s * radius_oracle(&x.coords().to_vec(), k.value());
        let got = hyperbolic_radius(&mobius_scalar_mul(s, &x).unwrap());
        max_err = max_err.max(rel(got, want));
        cases += 1;
    }
    let (fast, t) = within(start.elapsed(), 5.0);
    verdict(
        max_err <= 1e-9 && fast,
        format!("max rel err {max_err:.2e} <= 1e-9 over {cases} cases ({excluded} in boundary band), {t}"),
    )
}

fn random_kind(rng: &mut ChaCha8Rng, n: usize) -> ScalingKind {
    match rng.random_range(0..4) {
        0 => ScalingKind::Diagonal,
        1 => {
            let divisors: Vec<usize> = (1..=n).filter(|b| n.is_multiple_of(*b)).collect();
            ScalingKind::BlockDiagonal {
                block_size: divisors[rng.random_range(0..divisors.len())],
            }
        }
        2 => ScalingKind::Banded {
            bandwidth: rng.random_range(0..n),
        },
        _ => ScalingKind::Dense,
    }
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut max_err, mut cases, mut excluded) = (0.0f64, 0, 0);
    for i in 0..CASES {
        let (k, n) = grid(i);
        let kind = random_kind(&mut rng, n);
        let count = kind.param_count(n).unwrap();
        let params: Vec<f64> = (0..count)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let op = ScalingOperator::from_params(kind, n, params).unwrap();
        let a: f64 = rng.random_range(0.01..0.95);
        let x = point(&mut rng, n, a, k);
        let xs = x.coords().to_vec();
        let dense = op.to_dense();
        let mx: Vec<f64> = dense
            .rows()
            .into_iter()
            .map(|r| dot(r.as_slice().unwrap(), &xs))
            .collect();
        let ratio = vnorm(&mx) / vnorm(&xs);
        if ratio < 1e-12 || in_band((ratio * a.atanh()).tanh(), k) {
            excluded += 1;
            continue;
        }
        let want = ratio * radius_oracle(&xs, k.value());
        let got = hyperbolic_radius(&mobius_matrix_mul(&op, &x).unwrap());
        max_err = max_err.max(rel(got, want));
        cases += 1;
    }
    let (fast, t) = within(start.elapsed(), 10.0);
    verdict(
        max_err <= 1e-9 && fast,
        format!("max rel err {max_err:.2e} <= 1e-9 over {cases} cases ({excluded} in boundary band), {t}"),
    )
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut log_exp, mut exp_log) = (0.0f64, 0.0f64);
    for i in 0..CASES {
        let (k, n) = grid(i);
        // Stay clear of the clamp band: √c‖x‖ ≤ 0.99.
        let a = 10f64.powf(rng.random_range(-6.0..0.99f64.log10()));
        let x = point(&mut rng, n, a, k);
        let back = exp_map_origin(&log_map_origin(&x));
        let diff: Vec<f64> = back
            .coords()
            .iter()
            .zip(x.coords())
            .map(|(p, q)| p - q)
            .collect();
        exp_log = exp_log.max(vnorm(&diff) / x.norm());

        let g = gaussian_vec(&mut rng, n);
        let len = vnorm(&g);
        let b = a.atanh() / k.sqrt();
        let v = TangentVector::new(g.iter().map(|e| e / len * b).collect(), k).unwrap();
        let back = log_map_origin(&exp_map_origin(&v));
        let diff: Vec<f64> = back
            .coords()
            .iter()
            .zip(v.coords())
            .map(|(p, q)| p - q)
            .collect();
        log_exp = log_exp.max(vnorm(&diff) / v.norm());
    }
    verdict(
        exp_log <= 1e-9 && log_exp <= 1e-9,
        format!("exp∘log {exp_log:.2e}, log∘exp {log_exp:.2e} <= 1e-9 over {CASES} points"),
    )
}

fn random_weight(rng: &mut ChaCha8Rng, n: usize, m: usize, k: Curvature) -> FrozenWeight {
    // Column norms √c‖w‖ around 0.05 to 0.5 keep scaled columns well inside the ball.
    let scale = rng.random_range(0.05..0.5) / (k.sqrt() * (n as f64).sqrt());
    FrozenWeight::new(Array2::from_shape_fn((n, m), |_| {
        scale * rng.sample::<f64, _>(StandardNormal)
    }))
    .unwrap()
}

fn max_rel_entry(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = b
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut identical = true;
    let mut max_err = 0.0f64;
    for i in 0..100 {
        let (k, n) = grid(i);
        let params = gaussian_vec(&mut rng, n);
        let diag = ScalingOperator::from_params(ScalingKind::Diagonal, n, params.clone()).unwrap();
        let mut expected = Array2::<f64>::zeros((n, n));
        for (j, p) in params.iter().enumerate() {
            expected[[j, j]] = *p;
        }
        identical &= diag.to_dense() == expected;
        let m = rng.random_range(1..=8);
        let w0 = random_weight(&mut rng, n, m, k);
        let want = adjust_weight_matrix(&w0, &diag, k).unwrap();
        for kind in [
            ScalingKind::Banded { bandwidth: 0 },
            ScalingKind::BlockDiagonal { block_size: 1 },
        ] {
            let op = ScalingOperator::from_params(kind, n, params.clone()).unwrap();
            identical &= op.to_dense() == expected;
            max_err = max_err.max(max_rel_entry(
                &adjust_weight_matrix(&w0, &op, k).unwrap(),
                &want,
            ));
        }
    }
    verdict(
        identical && max_err <= 1e-12,
        format!("dense expansions entry-identical: {identical}; adjusted weights max rel diff {max_err:.2e} <= 1e-12"),
    )
}

fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut max_err = 0.0f64;
    for i in 0..100 {
        let (k, n) = grid(i);
        let s = rng.random_range(0.1..=5.0);
        let m = rng.random_range(1..=16);
        let w0 = random_weight(&mut rng, n, m, k);
        let scalar = adjust_weight_scalar(&w0, s, k).unwrap();
        let matrix =
            adjust_weight_matrix(&w0, &ScalingOperator::uniform_diagonal(n, s).unwrap(), k)
                .unwrap();
        max_err = max_err.max(max_rel_entry(&matrix, &scalar));
    }
    verdict(
        max_err <= 1e-12,
        format!("max rel diff {max_err:.2e} <= 1e-12 over 100 layers"),
    )
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let cfg = GradCheckConfig::default();
    let k = Curvature::default();
    let kinds = [
        ScalingKind::Diagonal,
        ScalingKind::BlockDiagonal { block_size: 4 },
        ScalingKind::Banded { bandwidth: 1 },
        ScalingKind::Dense,
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in kinds {
        let r = check_kind(kind, CheckShape::default(), k, &cfg).unwrap();
        ok &= r.passed && r.max_rel_error < 1e-5 && r.cases + r.excluded == 100;
        parts.push(format!(
            "{kind} {:.1e} ({} excl)",
            r.max_rel_error, r.excluded
        ));
    }
    let (fast, t) = within(start.elapsed(), 30.0);
    verdict(ok && fast, format!("{} < 1e-5, {t}", parts.join(", ")))
}

fn criterion_7() -> Verdict {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for s in [0.5, 2.0] {
        let task = ToyTask {
            targets: TargetSpec::Uniform { scale: s },
            ..Default::default()
        };
        let cfg = TrainConfig {
            kind: ScalingKind::Diagonal,
            lr: 1e-2,
            momentum: DEFAULT_MOMENTUM,
            max_steps: 500,
        };
        let r = train(&task, &cfg).unwrap();
        let worst = r
            .final_scales
            .iter()
            .map(|a| (a / s - 1.0).abs())
            .fold(0.0f64, f64::max);
        ok &= task.dim == 32 && r.steps <= 500 && worst <= 0.01;
        parts.push(format!(
            "s*={s}: worst {:.2e} after {} steps",
            worst, r.steps
        ));
    }
    let (fast, t) = within(start.elapsed(), 10.0);
    verdict(ok && fast, format!("{} (<= 1%), {t}", parts.join("; ")))
}

fn criterion_8() -> Verdict {
    let start = Instant::now();
    let task = ToyTask::default();
    let loss = |kind| {
        let cfg = TrainConfig {
            kind,
            lr: 1e-2,
            momentum: DEFAULT_MOMENTUM,
            max_steps: 500,
        };
        train(&task, &cfg).unwrap().final_loss()
    };
    let dense = loss(ScalingKind::Dense);
    let banded = loss(ScalingKind::Banded { bandwidth: 1 });
    let diagonal = loss(ScalingKind::Diagonal);
    let (fast, t) = within(start.elapsed(), 60.0);
    verdict(
        dense < 1e-3 && dense <= banded && banded <= diagonal && fast,
        format!("dense {dense:.2e} < 1e-3; dense <= banded(d=1) {banded:.2e} <= diagonal {diagonal:.2e}; {t}"),
    )
}

/// Count of stored entries by enumerating the allowed pattern.
fn pattern_count(n: usize, allowed: impl Fn(usize, usize) -> bool) -> usize {
    (0..n)
        .map(|i| (0..n).filter(|&j| allowed(i, j)).count())
        .sum()
}

fn criterion_9() -> Verdict {
    let mut ok = true;
    let mut checked = 0;
    for n in [1usize, 2, 8, 64, 1024, 4096, 5120] {
        let mut expect = |kind: ScalingKind, formula: usize, pattern: usize| {
            ok &= kind.param_count(n).ok() == Some(formula) && formula == pattern;
            checked += 1;
        };
        expect(ScalingKind::Diagonal, n, pattern_count(n, |i, j| i == j));
        expect(ScalingKind::Dense, n * n, n * n);
        for b in [1usize, 2, 4, 8].into_iter().filter(|b| n % b == 0) {
            expect(
                ScalingKind::BlockDiagonal { block_size: b },
                n * b,
                (n / b) * b * b,
            );
        }
        for d in [0usize, 1, 2, 4].into_iter().filter(|&d| d < n) {
            let pattern = if n <= 1024 {
                pattern_count(n, |i, j| i.abs_diff(j) <= d)
            } else {
                (0..n)
                    .map(|i| (i + d).min(n - 1) - i.saturating_sub(d) + 1)
                    .sum()
            };
            expect(
                ScalingKind::Banded { bandwidth: d },
                n * (2 * d + 1) - d * (d + 1),
                pattern,
            );
        }
    }
    let anchor = ScalingKind::Banded { bandwidth: 1 }.param_count(1024).ok();
    ok &= anchor == Some(3070);
    verdict(
        ok,
        format!("{checked} kind/size configurations; n=1024, d=1 -> {anchor:?}"),
    )
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hyperadapt"));
    c.env_remove("HYPERADAPT_EPS");
    c
}

fn csv_mean(path: &std::path::Path) -> (f64, usize) {
    let text = std::fs::read_to_string(path).unwrap();
    let (mut weighted, mut total) = (0.0, 0usize);
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (lo, hi, count): (f64, f64, usize) = (
            f[0].parse().unwrap(),
            f[1].parse().unwrap(),
            f[2].parse().unwrap(),
        );
        weighted += 0.5 * (lo + hi) * count as f64;
        total += count;
    }
    (weighted / total as f64, total)
}

fn criterion_10() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let before = dir.path().join("before.csv");
    let after = dir.path().join("after.csv");
    let out = bin()
        .args([
            "train",
            "--histogram-before",
            before.to_str().unwrap(),
            "--histogram-after",
            after.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    if out.status.code() != Some(0) || !before.exists() || !after.exists() {
        return verdict(
            false,
            format!("train failed: {}", String::from_utf8_lossy(&out.stderr)),
        );
    }
    let json: Value = serde_json::from_slice(&out.stdout).unwrap();
    let h = &json["histograms"];
    let norm = h["normalization"].as_f64().unwrap();
    let mean_before = h["before"]["mean_normalized"].as_f64().unwrap();
    let mean_after = h["after"]["mean_normalized"].as_f64().unwrap();
    let implied = h["target_implied_mean_radius"].as_f64().unwrap() / norm;
    let mean_s = h["mean_target_scale"].as_f64().unwrap();
    let dev_implied = rel(mean_after, implied);
    let dev_product = rel(mean_after, mean_s * mean_before);
    // Bin-center means from the emitted CSVs must tell the same story.
    let (csv_before, n_before) = csv_mean(&before);
    let (csv_after, n_after) = csv_mean(&after);
    let shifted =
        (csv_after - csv_before).signum() == (mean_s * mean_before - mean_before).signum();
    verdict(
        dev_implied <= 0.05 && dev_product <= 0.05 && shifted && n_before == 256 && n_after == 256,
        format!(
            "normalized mean {mean_before:.4} -> {mean_after:.4}; target-implied {implied:.4} ({:.2}%), mean(s)·before {:.4} ({:.2}%), normalization {norm:.3}",
            100.0 * dev_implied,
            mean_s * mean_before,
            100.0 * dev_product
        ),
    )
}

fn criterion_11() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.csv");
    std::fs::write(&w, "1.0,-2.0\n0.5,3.0\n").unwrap();
    let o = dir.path().join("o.hypt");
    let runs: Vec<Vec<&str>> = vec![
        vec!["verify", "--cases", "30"],
        vec![
            "adjust",
            "--input",
            w.to_str().unwrap(),
            "--output",
            o.to_str().unwrap(),
        ],
        vec!["train", "--max-steps", "2"],
        vec!["check-grad", "--samples", "1"],
        vec!["report"],
    ];
    let mut ok = Curvature::default().value() == 0.01;
    let mut seen = 0;
    for args in &runs {
        let out = bin().args(args).output().unwrap();
        let json: Value = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
        ok &= out.status.code() == Some(0) && json["config"]["curvature"].as_f64() == Some(0.01);
        seen += 1;
    }
    verdict(
        ok,
        format!(
            "default c = 0.01 in the resolved config of {seen}/{} subcommand reports",
            runs.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        (
            "scalar Möbius multiplication scales the radius by s",
            criterion_1,
        ),
        (
            "matrix Möbius multiplication scales the radius by ‖Mx‖/‖x‖",
            criterion_2,
        ),
        ("exp₀/log₀ inversion", criterion_3),
        (
            "banded d=0 and block size 1 degenerate to diagonal",
            criterion_4,
        ),
        ("uniform diagonal matches scalar adjustment", criterion_5),
        ("analytic gradients match central differences", criterion_6),
        ("uniform-target training recovers s*", criterion_7),
        ("mixed-target training and capacity ordering", criterion_8),
        ("parameter-count formulas", criterion_9),
        ("radius histograms shift after training", criterion_10),
        ("default curvature in every report", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let v = f();
        if !v.passed {
            failed += 1;
        }
        println!(
            "[{}] criterion {:>2}: {name}: {}",
            if v.passed { "PASS" } else { "FAIL" },
            i + 1,
            v.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
