use std::collections::HashMap;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use crate::commands::simulate::RunMetrics;
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::output;

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories written by `simulate`.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    /// Report JSON to write; a CSV table is written alongside.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct ReportRow {
    /// Axis label, suffixed with `@run_id` when several runs share it.
    key: String,
    run_id: String,
    axis_label: String,
    max_abs_error: f64,
    max_abs_effort: f64,
    accumulated_force: f64,
    overshoot_percent: Vec<Option<f64>>,
    deviation_at_end: Vec<f64>,
    bounds_hold: Option<bool>,
    mean_reduction_percent: Option<f64>,
    final_reduction_percent: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Report {
    runs: Vec<ReportRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn to_csv(rows: &[ReportRow]) -> Result<Vec<u8>, CliError> {
    let n_windows = rows.iter().map(|r| r.overshoot_percent.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["key", "run_id", "axis_label", "max_abs_error", "max_abs_effort", "accumulated_force"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for i in 1..=n_windows {
        header.push(format!("overshoot_percent_{i}"));
        header.push(format!("deviation_at_end_{i}"));
    }
    header.extend(["bounds_hold", "mean_reduction_percent", "final_reduction_percent"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.key.clone(),
            r.run_id.clone(),
            r.axis_label.clone(),
            r.max_abs_error.to_string(),
            r.max_abs_effort.to_string(),
            r.accumulated_force.to_string(),
        ];
        for i in 0..n_windows {
            rec.push(fmt_opt(r.overshoot_percent.get(i).copied().flatten()));
            rec.push(fmt_opt(r.deviation_at_end.get(i).copied()));
        }
        rec.push(r.bounds_hold.map(|b| b.to_string()).unwrap_or_default());
        rec.push(fmt_opt(r.mean_reduction_percent));
        rec.push(fmt_opt(r.final_reduction_percent));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| CliError::Usage(e.to_string()))
}

pub fn run(args: &ReportArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("report");
    let mut runs = Vec::with_capacity(args.runs.len());
    for dir in &args.runs {
        if !dir.is_dir() {
            return Err(CliError::Usage(format!("run directory {} does not exist", dir.display())));
        }
        let path = dir.join("metrics.json");
        let bytes = manifest.read(&path)?;
        let mut run: RunMetrics = output::read_json(&path, &bytes)?;
        if let Some(name) = dir.file_name() {
            run.run_id = name.to_string_lossy().into_owned();
        }
        runs.push(run);
    }
    manifest.set_config(&args.runs);

    let mut label_count: HashMap<&str, usize> = HashMap::new();
    for r in &runs {
        *label_count.entry(r.axis_label.as_str()).or_default() += 1;
    }
    let rows: Vec<ReportRow> = runs
        .iter()
        .map(|r| ReportRow {
            key: if label_count[r.axis_label.as_str()] > 1 {
                format!("{}@{}", r.axis_label, r.run_id)
            } else {
                r.axis_label.clone()
            },
            run_id: r.run_id.clone(),
            axis_label: r.axis_label.clone(),
            max_abs_error: r.metrics.max_abs_error,
            max_abs_effort: r.metrics.max_abs_effort,
            accumulated_force: r.metrics.accumulated_force,
            overshoot_percent: r.metrics.windows.iter().map(|w| w.overshoot_percent).collect(),
            deviation_at_end: r.metrics.windows.iter().map(|w| w.deviation_at_end).collect(),
            bounds_hold: r.bounds.as_ref().map(|b| b.holds),
            mean_reduction_percent: r.comparison.as_ref().map(|c| c.mean_reduction_percent),
            final_reduction_percent: r.comparison.as_ref().map(|c| c.final_reduction_percent),
        })
        .collect();

    let mut keys: Vec<&str> = rows.iter().map(|r| r.key.as_str()).collect();
    keys.sort_unstable();
    if keys.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Usage("two run directories share the same name and axis".into()));
    }

    let csv_path = args.out.with_extension("csv");
    output::write_atomic(&csv_path, &to_csv(&rows)?)?;
    output::write_json(&args.out, &Report { runs: rows })?;
    manifest.output(&args.out);
    manifest.output(&csv_path);
    manifest.finish(&crate::manifest::manifest_path(&args.out))?;
    Ok(())
}
