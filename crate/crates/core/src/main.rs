use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use covert_qcd::cli::commands;
use covert_qcd::cli::config::ExperimentConfig;

const DEFAULT_CONFIG: &str = "scenarios/paper_scenario.json";

#[derive(Parser)]
#[command(name = "covert-qcd", version, about = "Covert Bayesian quickest change detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every policy on the grid and write fig1/fig2 CSV and SVG files.
    Reproduce {
        #[arg(long, default_value = DEFAULT_CONFIG)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the consistency checks and print one PASS/FAIL line per check.
    Verify {
        #[arg(long, default_value = DEFAULT_CONFIG)]
        config: PathBuf,
    },
    /// Solve the belief-grid DP at every grid point and write the policies as JSON.
    DpSolve {
        #[arg(long, default_value = DEFAULT_CONFIG)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact covertness comparison for a constant sensing rate.
    Oracle {
        #[arg(long, default_value = DEFAULT_CONFIG)]
        config: PathBuf,
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        beta: f64,
    },
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("COVERT_QCD_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().map_err(|_| format!("COVERT_QCD_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn run(cli: Cli) -> covert_qcd::Result<bool> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Reproduce { config, out: dir } => {
            let cfg = ExperimentConfig::load(&config)?;
            for f in commands::reproduce(&cfg, dir.as_deref(), &mut out)? {
                let _ = writeln!(out, "wrote {}", f.display());
            }
            Ok(true)
        }
        Command::Verify { config } => commands::verify(&ExperimentConfig::load(&config)?, &mut out),
        Command::DpSolve { config, out: path } => {
            commands::dp_solve(&ExperimentConfig::load(&config)?, &path, &mut out)?;
            let _ = writeln!(out, "wrote {}", path.display());
            Ok(true)
        }
        Command::Oracle { config, horizon, beta } => {
            commands::oracle(&ExperimentConfig::load(&config)?, horizon, beta, &mut out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
