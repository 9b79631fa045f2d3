use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qgraph_harness::audit::audit_run;
use qgraph_harness::config::load_config;
use qgraph_harness::matrix::{run_matrix, MatrixAxis};
use qgraph_harness::plots::plot_runs;
use qgraph_harness::runner::run_experiment;
use qgraph_harness::variance::prediction_variance;
use qgraph_harness::HarnessError;

/// Experiment harness for graph-bounded Q-learning runs.
#[derive(Parser)]
#[command(name = "qgraph-harness", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configured experiment into its output directory.
    Run {
        /// TOML config file.
        #[arg(long)]
        config: PathBuf,
        /// Config override as key.path=value; repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run every cell of a one-axis sweep into subdirectories.
    Matrix {
        /// TOML config file for the base cell.
        #[arg(long)]
        config: PathBuf,
        /// Axis to sweep: lr, capacity, sigma, or variant.
        #[arg(long)]
        axis: String,
    },
    /// Compute cross-seed critic spread grids for finished runs.
    Variance {
        /// Run directories (each needs checkpoints from >= 2 seeds).
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
    },
    /// Render SVG plots from finished runs.
    Plot {
        /// Run directories to plot.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Directory for the rendered SVGs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-verify the persisted artifacts of one finished run.
    Audit {
        /// Run directory to audit.
        #[arg(long)]
        run: PathBuf,
    },
}

fn main() -> ExitCode {
    match try_main(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn try_main(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Run { config, overrides } => {
            let config = load_config(&config, &overrides)?;
            let summary = run_experiment(&config)?;
            for status in &summary.statuses {
                println!("  {}: {}", status.label, status.status);
            }
            println!("run written to {}", summary.dir.display());
            Ok(summary.all_ok())
        }
        Command::Matrix { config, axis } => {
            let axis: MatrixAxis = axis.parse()?;
            let config = load_config(&config, &[] as &[String])?;
            let outcomes = run_matrix(&config, axis)?;
            for cell in &outcomes {
                println!("  {}: {}", cell.name, cell.status);
            }
            println!("sweep written to {}", config.out.display());
            Ok(outcomes.iter().all(|c| c.is_ok()))
        }
        Command::Variance { runs } => {
            for dir in &runs {
                let report = prediction_variance(dir)?;
                println!(
                    "  {}: {} evaluations, {} spread cells",
                    dir.display(),
                    report.records.len(),
                    report.spreads.len()
                );
            }
            Ok(true)
        }
        Command::Plot { runs, out } => {
            let written = plot_runs(&runs, &out)?;
            for path in &written {
                println!("  wrote {}", path.display());
            }
            Ok(true)
        }
        Command::Audit { run } => {
            let report = audit_run(&run)?;
            if report.passed() {
                println!("audit passed ({} artifacts)", report.checks);
                Ok(true)
            } else {
                for violation in &report.violations {
                    println!("  {violation}");
                }
                println!("audit failed: {} violations", report.violations.len());
                Ok(false)
            }
        }
    }
}
