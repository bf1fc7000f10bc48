use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dtrq_cli::config::{
    load_analyze_plan, load_simulate_plan, validate_config_file, OutputFormat, Overrides,
};
use dtrq_cli::{commands, CliError};

/// Q-learning for dynamic treatment regimes with misclassified binary
/// outcomes: simulation studies and fixed-rate sensitivity analysis.
#[derive(Parser)]
#[command(name = "dtrq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation study (one_stage | two_stage | predictive).
    Simulate {
        /// TOML config with [simulation] and [output] sections.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scenario, overriding the config file.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of Monte Carlo replications.
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        gamma10: Option<f64>,
        #[arg(long)]
        gamma01: Option<f64>,
        /// Report file path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report format: csv or json.
        #[arg(long)]
        format: Option<String>,
    },
    /// Fixed-rate sensitivity analysis of a CSV dataset.
    Analyze {
        /// TOML config with [data], [model], [sensitivity] sections.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Replace the gamma grid with this single gamma10 (gamma01 from
        /// --gamma01, default 0).
        #[arg(long)]
        gamma10: Option<f64>,
        #[arg(long)]
        gamma01: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        format: Option<String>,
    },
    /// Parse and validate a config file without running anything.
    ValidateConfig { path: PathBuf },
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("DTRQ_THREADS") {
        let threads: usize = v
            .parse()
            .map_err(|_| CliError::Config(format!("DTRQ_THREADS='{v}' is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn run() -> Result<(), CliError> {
    init_threads()?;
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate {
            config,
            scenario,
            seed,
            reps,
            n,
            rho,
            gamma10,
            gamma01,
            out,
            format,
        } => {
            let overrides = Overrides {
                n,
                rho,
                gamma10,
                gamma01,
                replications: reps,
                seed,
                out,
                format: format.as_deref().map(OutputFormat::parse).transpose()?,
            };
            let plan = load_simulate_plan(config.as_deref(), scenario.as_deref(), &overrides)?;
            commands::run_simulate(&plan)
        }
        Command::Analyze { config, seed, gamma10, gamma01, out, format } => {
            let overrides = Overrides {
                seed,
                gamma10,
                gamma01,
                out,
                format: format.as_deref().map(OutputFormat::parse).transpose()?,
                ..Default::default()
            };
            let plan = load_analyze_plan(&config, &overrides)?;
            commands::run_analyze(&plan)
        }
        Command::ValidateConfig { path } => {
            let summary = validate_config_file(&path)?;
            println!("{summary}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
