use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evload_core::scenario::{load_config, run_cases, Case, ErrorCategory, ScenarioConfig, ScenarioError};

/// Simulate residential EV charging demand and demand response.
#[derive(Debug, Parser)]
#[command(name = "evload", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every case listed in the scenario.
    Run(RunArgs),
    /// Write only the analytic expected-profile curves.
    Expected(RunArgs),
    /// Check a scenario file and print the resolved settings.
    Validate { config: PathBuf },
}

#[derive(Debug, Args)]
struct RunArgs {
    config: PathBuf,
    /// Override `fleet.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `output.dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override `comparison.samples`.
    #[arg(long)]
    samples: Option<usize>,
    /// Also write the expected profile before folding onto the day.
    #[arg(long)]
    emit_extended: bool,
}

impl RunArgs {
    fn load(&self) -> Result<ScenarioConfig, ScenarioError> {
        let mut cfg = load_config(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &self.out_dir {
            cfg.output_dir = dir.clone();
        }
        if let Some(samples) = self.samples {
            cfg.samples = samples;
        }
        cfg.emit_extended |= self.emit_extended;
        Ok(cfg)
    }
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Config => 2,
        ErrorCategory::Numeric => 3,
        ErrorCategory::Io => 4,
    }
}

fn execute(cli: Cli) -> Result<(), ScenarioError> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            print!("{}", cfg.describe());
        }
        Command::Run(args) => {
            let cfg = args.load()?;
            report(&cfg, run_cases(&cfg)?.summary);
        }
        Command::Expected(args) => {
            let mut cfg = args.load()?;
            cfg.cases = vec![Case::AnalyticComparison];
            report(&cfg, run_cases(&cfg)?.summary);
        }
    }
    Ok(())
}

fn report(cfg: &ScenarioConfig, summary: Vec<(String, String)>) {
    for (k, v) in summary {
        println!("{k}={v}");
    }
    eprintln!("wrote results to {}", cfg.output_dir.display());
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.category()))
        }
    }
}
