use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use mono3d::kitti_io::{assign_difficulty, parse_label_bytes};
use mono3d::losses::{finite_difference_check, Differentiable, UncertaintyL1};
use mono3d::simulate::{
    expectation_consistency_check, fit_uncertainty, sample_scene, self_consistency_experiment,
    ErrorModel, FitOptions, SceneDistribution,
};

use crate::config::{required, RunConfig};
use crate::error::{core_in_file, CliError, CliResult};
use crate::fsio::{create_dir, id_path, list_ids, read_bytes, to_sorted_json, write_text};
use crate::RunOutput;

pub const DEFAULT_SIM_SAMPLES: usize = 1_000_000;
pub const DEFAULT_GRAD_TRIALS: usize = 1000;
/// Factor-error correlation reported for the trained network.
pub const REFERENCE_RHO: f64 = -0.472;
pub const GRAD_TOL: f64 = 1e-6;
const GRAD_STEP: f64 = 1e-5;
/// Stationary point of the fit on `{0, 1, 2, 3, 4}` with λ = 1.
const FIT_FIXTURE: [f64; 5] = [0.0, 1.0, 2.0, 3.0, 4.0];
const FIT_EXPECTED: (f64, f64) = (2.0, 1.2);

fn core(e: mono3d::Error) -> CliError {
    CliError::Input(e.to_string())
}

fn finish(
    cfg: &RunConfig,
    file: &str,
    report: serde_json::Value,
    passed: bool,
    what: &str,
) -> CliResult<RunOutput> {
    if let Some(out) = &cfg.out {
        create_dir(out)?;
        write_text(&out.join(file), &to_sorted_json(&report))?;
    }
    if !passed {
        return Err(CliError::Assertion {
            message: format!("{what} failed"),
            report,
        });
    }
    Ok(RunOutput {
        summary: report,
        warnings: Vec::new(),
    })
}

/// Expectation consistency, self-consistency at the reported correlation,
/// and the uncertainty fit on a fixed fixture.
pub fn run_simulate(cfg: &RunConfig) -> CliResult<RunOutput> {
    let n = cfg.n.unwrap_or(DEFAULT_SIM_SAMPLES);
    let dist = SceneDistribution {
        seed: cfg.seed,
        ..SceneDistribution::default()
    };
    let samples = sample_scene(&dist, n).map_err(core)?;
    let consistency = expectation_consistency_check(&samples, dist.focal).map_err(core)?;

    let em = ErrorModel {
        std_h: 0.05,
        std_hrec: 0.05,
        rho: REFERENCE_RHO,
    };
    let sc = self_consistency_experiment(&dist, &em, n).map_err(core)?;
    let within = |got: f64, want: f64| (got - want).abs() <= 0.05 * want;
    let sc_passed = sc.rmse_correlated < sc.rmse_independent
        && within(sc.rmse_correlated, sc.predicted_correlated)
        && within(sc.rmse_independent, sc.predicted_independent);

    let fit = fit_uncertainty(&FIT_FIXTURE, &FitOptions::default()).map_err(core)?;
    let fit_passed = (fit.value - FIT_EXPECTED.0).abs() <= 0.01 * FIT_EXPECTED.0
        && (fit.sigma - FIT_EXPECTED.1).abs() <= 0.01 * FIT_EXPECTED.1;

    let passed = consistency.passed() && sc_passed && fit_passed;
    let report = json!({
        "command": "simulate",
        "seed": cfg.seed,
        "n": n,
        "consistency": consistency,
        "consistency_passed": consistency.passed(),
        "error_model": em,
        "self_consistency": sc,
        "self_consistency_passed": sc_passed,
        "fit": fit,
        "fit_expected": { "value": FIT_EXPECTED.0, "sigma": FIT_EXPECTED.1 },
        "fit_passed": fit_passed,
        "passed": passed,
    });
    finish(cfg, "simulate.json", report, passed, "simulation checks")
}

/// Random non-kink point `[pred, σ]` and loss for the gradient check.
pub fn random_grad_case(rng: &mut impl Rng) -> (UncertaintyL1, [f64; 2]) {
    loop {
        let f = UncertaintyL1 {
            gt: rng.random_range(-5.0..5.0),
            lambda: rng.random_range(0.1..2.0),
        };
        let x = [rng.random_range(-5.0..5.0), rng.random_range(0.1..5.0)];
        if f.kink_distance(&x).is_some_and(|d| d > 1e-3) {
            return (f, x);
        }
    }
}

/// Maximum relative gradient error over `--n` random points.
pub fn run_check_grad(cfg: &RunConfig) -> CliResult<RunOutput> {
    let trials = cfg.n.unwrap_or(DEFAULT_GRAD_TRIALS);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst = 0.0_f64;
    let mut worst_point = [0.0; 2];
    for _ in 0..trials {
        let (f, x) = random_grad_case(&mut rng);
        let err = finite_difference_check(&f, &x, GRAD_STEP).map_err(core)?;
        if !(err <= worst) {
            worst = err;
            worst_point = x;
        }
    }
    let passed = worst < GRAD_TOL;
    let report = json!({
        "command": "check-grad",
        "seed": cfg.seed,
        "trials": trials,
        "step": GRAD_STEP,
        "tolerance": GRAD_TOL,
        "max_rel_error": worst,
        "worst_point": worst_point,
        "passed": passed,
    });
    finish(cfg, "check_grad.json", report, passed, "gradient check")
}

/// Object counts per category and difficulty of a label directory.
pub fn run_parse(cfg: &RunConfig) -> CliResult<RunOutput> {
    let dir = required(&cfg.gt_dir, "--gt-dir")?;
    let ids = list_ids(dir, "txt")?;
    let mut categories: BTreeMap<String, usize> = BTreeMap::new();
    let mut difficulties: BTreeMap<&str, usize> = BTreeMap::new();
    let mut objects = 0;
    for id in &ids {
        let path = id_path(dir, id, "txt");
        let labels = parse_label_bytes(&read_bytes(&path)?).map_err(|e| core_in_file(&path, e))?;
        for l in &labels {
            *categories.entry(l.category.clone()).or_default() += 1;
            *difficulties.entry(assign_difficulty(l).name()).or_default() += 1;
        }
        objects += labels.len();
    }
    let mut warnings = Vec::new();
    if ids.is_empty() {
        warnings.push(format!("no .txt label files in {}", dir.display()));
    }
    let report = json!({
        "command": "parse",
        "files": ids.len(),
        "objects": objects,
        "categories": categories,
        "difficulties": difficulties,
    });
    let mut out = finish(cfg, "parse.json", report, true, "parse")?;
    out.warnings = warnings;
    Ok(out)
}
