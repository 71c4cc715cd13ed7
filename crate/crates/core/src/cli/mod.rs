//! The `tatk` command line: generate, train, attribute, evaluate, or all four.

pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{AttributionBlock, BlackBoxEntry, ExperimentConfig, MethodEntry, MetricsBlock, ModelSpec};
pub use pipeline::{
    attribute_cmd, evaluate_cmd, generate_cmd, run, train_cmd, AttributeOverrides, MetricRow, Stage, StageError,
};

/// Exit code of a configuration or usage error.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code of a failed stage.
pub const EXIT_STAGE: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "tatk", version, about = "Feature attribution benchmarks for time-series models")]
pub struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` of the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replaces every seed of the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Allow `run` and `generate` to overwrite a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// All four stages in order.
    Run,
    /// Synthesise the dataset.
    Generate,
    /// Train the model, or store the white-box one.
    Train,
    /// Explain the held-out series with every configured method.
    Attribute {
        /// Run only this method.
        #[arg(long)]
        method: Option<String>,
        /// Override the interpolation steps of the selected methods.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Score the stored attributions.
    Evaluate,
}

fn setup(cli: &Cli) -> Result<(ExperimentConfig, PathBuf), String> {
    let path = cli.config.as_ref().ok_or("--config is required")?;
    let mut cfg = ExperimentConfig::load(path).map_err(|e| e.to_string())?;
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or("no output directory: pass --out or set output_dir")?;
    Ok((cfg, out))
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let (cfg, out) = match setup(&cli) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_CONFIG;
        }
    };
    let result = match &cli.command {
        Command::Run => run(&cfg, &out, cli.force).map(|rows| {
            println!("wrote {} metric rows to {}", rows.len(), out.join("metrics.csv").display());
        }),
        Command::Generate => generate_cmd(&cfg, &out, cli.force),
        Command::Train => train_cmd(&cfg, &out),
        Command::Attribute { method, steps } => attribute_cmd(
            &cfg,
            &out,
            &AttributeOverrides {
                method: method.clone(),
                steps: *steps,
            },
        ),
        Command::Evaluate => evaluate_cmd(&cfg, &out).map(|_| ()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_STAGE
        }
    }
}
