//! Batch front end for `qlevel-core`: read a TOML run config, run one
//! pipeline, write CSV artifacts plus a `manifest.csv` of their SHA-256
//! hashes.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod failure;

use std::fs;
use std::path::PathBuf;

use clap::Parser;

use crate::artifacts::ArtifactSet;
use crate::commands::{command_registry, config_dir, Context};
use crate::config::RunConfig;
use crate::failure::CliError;

#[derive(Debug, Parser)]
#[command(name = "qlevel", version, about = "Level-set quantum control pipelines")]
pub struct Cli {
    /// simulate | track | optimize | mesh | contour | intersect
    pub command: String,
    /// Run config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Artifact directory; overrides `output_dir` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for mesh sweeps.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Run one invocation and return the artifact directory.
pub fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    let cmd = command_registry()
        .get(&cli.command)
        .map_err(|e| CliError::usage(e.to_string()))?;
    if cli.threads == Some(0) {
        return Err(CliError::usage("--threads must be at least 1"));
    }
    let text = fs::read_to_string(&cli.config).map_err(|e| CliError::io(&cli.config.display().to_string(), &e))?;
    let config = RunConfig::parse(&text)?;
    let present = config.command()?;
    if present != cli.command {
        return Err(CliError::validation(
            present,
            format!("config holds a `{present}` block but `{}` was requested", cli.command),
        ));
    }
    let base_dir = config_dir(&cli.config);
    let out_dir = match (&cli.out, &config.output_dir) {
        (Some(dir), _) => dir.clone(),
        (None, Some(dir)) => base_dir.join(dir),
        (None, None) => base_dir.join("out"),
    };
    let ctx = Context { config: &config, base_dir };

    let mut artifacts = ArtifactSet::new();
    let outcome = match cli.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| CliError::usage(e.to_string()))?
            .install(|| cmd.run(&ctx, &mut artifacts)),
        None => cmd.run(&ctx, &mut artifacts),
    };
    if !artifacts.is_empty() {
        artifacts.write_to(&out_dir)?;
    }
    outcome.map(|_| out_dir)
}
