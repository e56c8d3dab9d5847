use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use log::info;
use serde::{Deserialize, Serialize};
use vicsynth_core::sim::{
    compare, simulate, Comparison, ForceSchedule, ForceWindow, KInterpolation, SimConfig, SimMetrics, SimResult,
    SpringEnvironment, StiffnessSource,
};
use vicsynth_core::stiffness::{build_profile, ControllerSolution};

use crate::commands::design::load_model;
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::output;

/// Slack on certified bounds, in their own units.
const BOUND_TOL: f64 = 1e-6;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Controller JSON written by `design`, or a bare `{k_max, k_min, d, h}`.
    #[arg(long)]
    pub controller: PathBuf,
    /// Force scenario JSON: `{"windows": [...], "environment": {...}}`.
    #[arg(long)]
    pub forces: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Also run a constant-stiffness baseline, N/m (defaults to K_max).
    #[arg(long, num_args = 0..=1, value_name = "K")]
    pub baseline: Option<Option<f64>>,
    /// Controller sampling period, s.
    #[arg(long, default_value_t = 1e-3)]
    pub ts: f64,
    /// Interpolate the stiffness profile linearly instead of holding it.
    #[arg(long)]
    pub linear_k: bool,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ForceScenario {
    #[serde(default)]
    windows: Vec<ForceWindow>,
    #[serde(default)]
    environment: Option<SpringEnvironment>,
}

#[derive(Debug, Default)]
struct Certificate {
    t_star: Option<f64>,
    dp_max: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BoundCheck {
    pub effort_bound: Option<f64>,
    pub max_abs_effort: f64,
    pub error_bound: Option<f64>,
    pub max_abs_error: f64,
    pub holds: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BaselineMetrics {
    pub k: f64,
    pub metrics: SimMetrics,
}

/// Contents of `metrics.json` in a run directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run_id: String,
    pub axis_label: String,
    pub controller: ControllerSolution,
    pub ts: f64,
    pub schedule: ForceSchedule,
    pub environment: Option<SpringEnvironment>,
    pub metrics: SimMetrics,
    pub bounds: Option<BoundCheck>,
    pub baseline: Option<BaselineMetrics>,
    pub comparison: Option<Comparison>,
}

fn parse_controller(path: &Path, bytes: &[u8]) -> Result<(ControllerSolution, Certificate), CliError> {
    let value: serde_json::Value = output::read_json(path, bytes)?;
    let (sol_value, cert) = match value.get("best") {
        Some(best) => {
            let cert = Certificate {
                t_star: value.pointer("/score/t_star").and_then(|v| v.as_f64()),
                dp_max: value.get("dp_max").and_then(|v| v.as_f64()),
            };
            (best.clone(), cert)
        }
        None => (value, Certificate::default()),
    };
    let sol: ControllerSolution = serde_json::from_value(sol_value).map_err(|e| CliError::json(path, e))?;
    sol.validate()?;
    Ok((sol, cert))
}

fn check_bounds(metrics: &SimMetrics, cert: &Certificate) -> Option<BoundCheck> {
    let effort_bound = cert.t_star?.sqrt();
    let effort_ok = metrics.max_abs_effort_pre_force <= effort_bound + BOUND_TOL;
    let error_ok = cert.dp_max.is_none_or(|b| metrics.max_abs_error <= b + BOUND_TOL);
    Some(BoundCheck {
        effort_bound: Some(effort_bound),
        max_abs_effort: metrics.max_abs_effort_pre_force,
        error_bound: cert.dp_max,
        max_abs_error: metrics.max_abs_error,
        holds: effort_ok && error_ok,
    })
}

fn series_csv(run: &SimResult) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    run.write_csv(&mut buf)?;
    Ok(buf)
}

/// Refuses to replace a directory that is not a previous run.
fn prepare_target(out: &Path) -> Result<(), CliError> {
    if !out.exists() {
        return Ok(());
    }
    if !out.is_dir() {
        return Err(CliError::Usage(format!("{} exists and is not a directory", out.display())));
    }
    let empty = fs::read_dir(out).map_err(|e| CliError::io(out, e))?.next().is_none();
    if !empty && !out.join("metrics.json").exists() {
        return Err(CliError::Usage(format!("{} is not empty and holds no previous run", out.display())));
    }
    Ok(())
}

pub fn run(args: &SimulateArgs) -> Result<(), CliError> {
    prepare_target(&args.out)?;
    let mut manifest = RunManifest::start("simulate");
    let model = load_model(&mut manifest, &args.model)?;
    let controller_bytes = manifest.read(&args.controller)?;
    let (sol, cert) = parse_controller(&args.controller, &controller_bytes)?;
    let forces_bytes = manifest.read(&args.forces)?;
    let scenario: ForceScenario = output::read_json(&args.forces, &forces_bytes)?;
    let baseline_k = args.baseline.map(|k| k.unwrap_or(sol.k_max));
    manifest.set_config(&(&scenario, args.ts, args.linear_k, baseline_k));

    let mut cfg = SimConfig::new(
        args.ts,
        ForceSchedule {
            windows: scenario.windows.clone(),
        },
    );
    cfg.environment = scenario.environment;
    if args.linear_k {
        cfg.interpolation = KInterpolation::Linear;
    }
    let profile = build_profile(&model, &sol)?;
    let vic = simulate(&model, StiffnessSource::Profile(&profile), &sol, &cfg)?;
    let baseline = match baseline_k {
        Some(k) => Some(simulate(&model, StiffnessSource::Constant(k), &sol, &cfg)?),
        None => None,
    };
    let comparison = match &baseline {
        Some(b) => Some(compare(&vic, b)?),
        None => None,
    };
    let bounds = if scenario.environment.is_none() {
        check_bounds(&vic.metrics, &cert)
    } else {
        None
    };

    let run_id = args
        .out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string());
    let metrics = RunMetrics {
        run_id,
        axis_label: vic.axis_label.clone(),
        controller: sol,
        ts: args.ts,
        schedule: cfg.schedule.clone(),
        environment: cfg.environment,
        metrics: vic.metrics.clone(),
        bounds,
        baseline: baseline.as_ref().map(|b| BaselineMetrics {
            k: baseline_k.unwrap_or(sol.k_max),
            metrics: b.metrics.clone(),
        }),
        comparison,
    };

    let staging = output::with_suffix(&args.out, ".partial");
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
    let write = |name: &str, bytes: &[u8]| fs::write(staging.join(name), bytes).map_err(|e| CliError::io(&staging.join(name), e));
    write("series.csv", &series_csv(&vic)?)?;
    let mut profile_csv = Vec::new();
    profile.write_csv(&mut profile_csv)?;
    write("stiffness.csv", &profile_csv)?;
    if let Some(b) = &baseline {
        write("baseline_series.csv", &series_csv(b)?)?;
    }
    output::write_json(&staging.join("metrics.json"), &metrics)?;
    for name in ["series.csv", "stiffness.csv", "metrics.json"] {
        manifest.output(&args.out.join(name));
    }
    if baseline.is_some() {
        manifest.output(&args.out.join("baseline_series.csv"));
    }
    manifest.finish(&staging.join("manifest.json"))?;

    if args.out.exists() {
        fs::remove_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    }
    fs::rename(&staging, &args.out).map_err(|e| CliError::io(&args.out, e))?;
    info!("wrote run to {}", args.out.display());

    if let Some(check) = &metrics.bounds {
        if !check.holds {
            return Err(CliError::Violation(format!(
                "certified bounds exceeded: max|u| = {:.6e} (bound {:?}), max|e| = {:.6e} m (bound {:?})",
                check.max_abs_effort, check.effort_bound, check.max_abs_error, check.error_bound
            )));
        }
    }
    Ok(())
}
