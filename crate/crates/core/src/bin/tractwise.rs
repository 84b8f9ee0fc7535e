use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;
use tractwise::pipeline::{parse_depths, Command, FeatureSetName, ModelKind, Overrides, Pipeline};

/// Clean tract-level census/health tables, explore them and fit models.
#[derive(Debug, Parser)]
#[command(name = "tractwise", version)]
struct Cli {
    /// What to run.
    command: Command,
    /// Pipeline config (JSON, "schema": 1).
    #[arg(long)]
    config: PathBuf,
    /// Seed for fold plans, splits and forests; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model family for fit, cv, sweep and report.
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    /// Polynomial degree (1-4) for --model poly.
    #[arg(long)]
    degree: Option<usize>,
    /// Input column for --model poly.
    #[arg(long)]
    feature: Option<String>,
    /// Target column for fit, cv and sweep.
    #[arg(long)]
    target: Option<String>,
    /// Maximum tree depth.
    #[arg(long)]
    max_depth: Option<usize>,
    /// Number of trees for --model forest.
    #[arg(long)]
    n_trees: Option<usize>,
    /// Number of folds for cv and report.
    #[arg(long)]
    k: Option<usize>,
    /// Depths for sweep, as a range like 1..15 or a list like 1,3,5.
    #[arg(long, value_parser = parse_depths)]
    depths: Option<Vec<usize>>,
    /// Feature set for fit, cv and sweep.
    #[arg(long, value_enum)]
    feature_set: Option<FeatureSetName>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        out_dir: cli.out.clone(),
        model: cli.model,
        degree: cli.degree,
        feature: cli.feature.clone(),
        target: cli.target.clone(),
        max_depth: cli.max_depth,
        n_trees: cli.n_trees,
        k: cli.k,
        depths: cli.depths.clone(),
        feature_set: cli.feature_set,
    };
    let context = json!({
        "command": cli.command.to_string(),
        "config": cli.config.display().to_string(),
    });
    let result = Pipeline::load(&cli.config, &overrides).and_then(|p| p.run(cli.command));
    match result {
        Ok(summary) => {
            for path in summary.artifacts {
                println!("{}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json(context));
            ExitCode::FAILURE
        }
    }
}
