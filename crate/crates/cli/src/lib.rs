//! The `deeplm` command line: each subcommand is one pipeline stage that
//! reads earlier stages' artifacts from the run directory and writes its own
//! with a digest manifest.

pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;
pub mod stages;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::error::Result;
use crate::stages::ModelChoice;

#[derive(Debug, Parser)]
#[command(name = "deeplm", version, about = "Landmark competing-risks prediction with a CNN risk score")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// key = value config file; see `deeplm config`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory shared by all stages.
    #[arg(long, global = true, default_value = "run")]
    pub out_dir: PathBuf,
    /// `key=value` override, repeatable; applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic cohort.
    Simulate,
    /// Cut labelled windows and undersample controls.
    Extract,
    /// Train one CNN per patient fold.
    TrainCnn,
    /// Score every patient with the fold network that did not see them.
    Score,
    /// Fit the landmark competing-risks models.
    LandmarkFit(ModelArg),
    /// Validate the models, with bootstrap intervals and CIF quartiles.
    Evaluate(ModelArg),
    /// Per-covariate AUROC impact across landmarks.
    Heatmap(HeatmapArg),
    /// Train day models and extract salient windows.
    Saliency,
    /// Classify salient windows and compare infected with non-infected.
    Cluster,
    /// Summarize the run as Markdown.
    Report,
    /// Print the resolved configuration with its documented defaults.
    Config,
}

#[derive(Debug, Args)]
pub struct ModelArg {
    #[arg(long, value_enum, default_value = "both")]
    pub model: ModelChoice,
}

#[derive(Debug, Args)]
pub struct HeatmapArg {
    #[arg(long, value_enum, default_value = "pi2")]
    pub model: ModelChoice,
}

pub fn run(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    let cfg = Config::load(c.config.as_deref(), &c.overrides, c.seed)?;
    let root = c.out_dir.as_path();
    match &cli.command {
        Command::Simulate => stages::simulate(root, &cfg),
        Command::Extract => stages::extract(root, &cfg),
        Command::TrainCnn => stages::train_cnn(root, &cfg),
        Command::Score => stages::score(root, &cfg),
        Command::LandmarkFit(m) => stages::landmark_fit(root, &cfg, m.model),
        Command::Evaluate(m) => stages::evaluate(root, &cfg, m.model),
        Command::Heatmap(m) => stages::heatmap(root, &cfg, m.model),
        Command::Saliency => stages::saliency(root, &cfg),
        Command::Cluster => stages::cluster(root, &cfg),
        Command::Report => stages::report(root, &cfg),
        Command::Config => {
            if c.config.is_none() && c.overrides.is_empty() && c.seed.is_none() {
                print!("{}", config::schema_text());
            } else {
                print!("{}", cfg.to_text());
            }
            Ok(())
        }
    }
}
