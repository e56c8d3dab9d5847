use std::path::PathBuf;

use clap::Args;
use log::info;
use vicsynth_core::design::DesignConfig;
use vicsynth_core::hgp::TaskModel;
use vicsynth_core::search::search;
use vicsynth_core::Error;

use crate::error::CliError;
use crate::manifest::{manifest_path, RunManifest};
use crate::output;

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// Task model JSON written by `learn`.
    #[arg(long)]
    pub model: PathBuf,
    /// Design session configuration JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Controller JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn load_model(manifest: &mut RunManifest, path: &std::path::Path) -> Result<TaskModel, CliError> {
    let bytes = manifest.read(path)?;
    let model: TaskModel = output::read_json(path, &bytes)?;
    model.validate()?;
    Ok(model)
}

pub fn run(args: &DesignArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("design");
    let model = load_model(&mut manifest, &args.model)?;
    let config_bytes = manifest.read(&args.config)?;
    let text = String::from_utf8(config_bytes).map_err(|e| CliError::Usage(format!("{}: {e}", args.config.display())))?;
    let config = DesignConfig::from_json(&text)?;
    manifest.set_config(&config);
    manifest.seed = Some(config.seed);

    let result = match search(&model, config.design, &config.preference(), &config, config.seed) {
        Ok(r) => r,
        Err(Error::Search(msg)) => return Err(CliError::Infeasible(msg)),
        Err(e) => return Err(e.into()),
    };
    info!(
        "design {:?}: K_max = {:.1}, K_min = {:.1}, D = {:.1}, f_s = {:.4} after {} iterations",
        result.design, result.best.k_max, result.best.k_min, result.best.d, result.score.f_s, result.iterations
    );
    output::write_json(&args.out, &result)?;
    manifest.output(&args.out);
    manifest.finish(&manifest_path(&args.out))?;
    Ok(())
}
