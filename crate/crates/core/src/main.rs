use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kdshare::experiment::{self, ExperimentConfig};
use kdshare::train::GRID_VALUES;
use kdshare::Error;

/// Exit codes: 1 other failures, 2 usage, 3 invalid configuration,
/// 4 training diverged.
const EXIT_CONFIG: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "kdshare", version, about = "Distillation and mutual-learning experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one configuration for every seed in the config file.
    Run { config: PathBuf },
    /// Train all twelve configuration × strategy cells.
    Sweep { config: PathBuf },
    /// Search loss weights on the validation split.
    Gridsearch {
        config: PathBuf,
        /// Comma-separated values tried for every weight.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Epochs per grid cell.
        #[arg(long, default_value_t = 5)]
        budget: usize,
    },
    /// Print a summary table and the strategy/configuration ordering.
    Report {
        /// summary.csv files or directories containing one.
        inputs: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> kdshare::Result<()> {
    match cli.cmd {
        Cmd::Run { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let out = experiment::run_experiment(&cfg)?;
            print!("{}", experiment::render_table(&out.rows));
            println!("wrote {}", cfg.output.display());
        }
        Cmd::Sweep { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let rows = experiment::sweep(&cfg)?;
            print!("{}", experiment::render_table(&rows));
            print!("{}", experiment::render_compare(&experiment::compare_report(&rows)));
        }
        Cmd::Gridsearch { config, values, budget } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let values = values.unwrap_or_else(|| GRID_VALUES.to_vec());
            let r = experiment::gridsearch(&cfg, &values, budget)?;
            println!("best score {:.4} over {} cells", r.score, r.evaluated);
            let (a, b) = (r.best.s1, r.best.s2);
            println!("[weights]");
            println!("alpha = {}\nbeta = {}\ngamma = {}", a.alpha, a.beta, a.gamma);
            println!("alpha_prime = {}\nbeta_prime = {}\ngamma_prime = {}", b.alpha, b.beta, b.gamma);
        }
        Cmd::Report { inputs } => {
            let mut rows = Vec::new();
            for p in inputs {
                let p = if p.is_dir() { p.join("summary.csv") } else { p };
                rows.extend(experiment::read_csv(&p)?);
            }
            print!("{}", experiment::render_table(&rows));
            print!("{}", experiment::render_compare(&experiment::compare_report(&rows)));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => EXIT_CONFIG,
                Error::NonFinite { .. } => EXIT_DIVERGED,
                _ => 1,
            })
        }
    }
}
