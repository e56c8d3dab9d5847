use std::path::PathBuf;

use clap::Args;
use log::info;
use serde::Serialize;
use vicsynth_core::demo_corpus::{align, read_demonstration};
use vicsynth_core::hgp::{fit_hgp_with, HgpOptions};

use crate::error::CliError;
use crate::manifest::{manifest_path, RunManifest};
use crate::output;

#[derive(Debug, Args)]
pub struct LearnArgs {
    /// Glob matching the demonstration CSV files (`t,p` columns).
    #[arg(long)]
    pub demos: String,
    /// Resampling period of the aligned corpus, s.
    #[arg(long)]
    pub period: f64,
    /// Task model JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Axis label stored in the model.
    #[arg(long, default_value = "x")]
    pub axis: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 25)]
    pub max_em_iters: usize,
}

#[derive(Serialize)]
struct LearnConfig<'a> {
    axis: &'a str,
    period: f64,
    seed: u64,
    max_em_iters: usize,
}

fn demo_paths(pattern: &str) -> Result<Vec<PathBuf>, CliError> {
    let entries = glob::glob(pattern).map_err(|e| CliError::Usage(format!("bad --demos pattern: {e}")))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::Usage(e.to_string()))?;
        if path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Usage(format!("--demos `{pattern}` matched no files")));
    }
    Ok(paths)
}

pub fn run(args: &LearnArgs) -> Result<(), CliError> {
    if !(args.period > 0.0 && args.period.is_finite()) {
        return Err(CliError::Usage("--period must be a positive number of seconds".into()));
    }
    let paths = demo_paths(&args.demos)?;
    let mut manifest = RunManifest::start("learn");
    manifest.seed = Some(args.seed);
    manifest.set_config(&LearnConfig {
        axis: &args.axis,
        period: args.period,
        seed: args.seed,
        max_em_iters: args.max_em_iters,
    });

    let mut demos = Vec::with_capacity(paths.len());
    for path in &paths {
        let bytes = manifest.read(path)?;
        demos.push(read_demonstration(bytes.as_slice(), path, &args.axis)?);
    }
    let corpus = align(&demos, args.period)?;
    info!("aligned {} demonstrations on {} grid points", corpus.n_demos(), corpus.n_points());

    let opts = HgpOptions {
        max_em_iters: args.max_em_iters,
        seed: args.seed,
        ..HgpOptions::default()
    };
    let model = fit_hgp_with(&corpus, &opts)?;
    info!("H-GP fit: {} EM iterations, converged = {}", model.em_iterations, model.converged);

    output::write_json(&args.out, &model)?;
    manifest.output(&args.out);
    manifest.finish(&manifest_path(&args.out))?;
    Ok(())
}
