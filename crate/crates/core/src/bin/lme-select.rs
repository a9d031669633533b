use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand};
use lme_select::bench::{self, exit, BenchSpec, FitConfig};
use lme_select::simulator::SimConfig;
use lme_select::verify::{self, Level, VerifyOptions};
use lme_select::{Error, Result};

/// Sparse feature selection for linear mixed-effects models.
#[derive(Parser)]
#[command(name = "lme-select", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write problem_<seed>.json and truth_<seed>.json for consecutive seeds.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one problem and write the solve report.
    Fit {
        problem: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Choose eta on a grid by BIC.
    SelectEta {
        problem: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy and timing comparison over simulated seeds.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        /// First seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derivative, prox, spectral and (with --full) consistency checks.
    Verify {
        #[arg(long)]
        full: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => writeln!(std::io::stdout(), "{text}")?,
    }
    Ok(())
}

fn load<T: Default>(path: Option<&Path>, read: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read)
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Simulate { config, seed, seeds, out } => {
            let cfg: SimConfig = load(config.as_deref(), |p| Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?))?;
            let files = bench::cmd_simulate(&cfg, seed, seeds, &out)?;
            eprintln!("wrote {} files to {}", files.len(), out.display());
            Ok(exit::SUCCESS)
        }
        Command::Fit { problem, config, out } => {
            let cfg = load(config.as_deref(), FitConfig::from_file)?;
            let report = bench::cmd_fit(&problem, &cfg)?;
            emit(out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
            if report.converged() {
                Ok(exit::SUCCESS)
            } else {
                eprintln!("{} stopped without converging: {:?}", report.algorithm, report.termination);
                Ok(exit::CONVERGENCE)
            }
        }
        Command::SelectEta { problem, config, out } => {
            let cfg = load(config.as_deref(), FitConfig::from_file)?;
            let sel = bench::cmd_select_eta(&problem, &cfg)?;
            emit(out.as_deref(), &serde_json::to_string_pretty(&sel)?)?;
            Ok(exit::SUCCESS)
        }
        Command::Bench { config, seed, seeds, workers, out } => {
            let mut spec = load(config.as_deref(), BenchSpec::from_file)?;
            if let Some(s) = seed {
                spec.first_seed = s;
            }
            if let Some(n) = seeds {
                spec.seeds = n;
            }
            if out.is_some() {
                spec.output_dir = out;
            }
            let workers = bench::resolve_workers(workers)?;
            let result = bench::cmd_bench(&spec, workers)?;
            let mut table = Vec::new();
            result.write_table_csv(&mut table)?;
            std::io::stdout().write_all(&table)?;
            if result.too_many_failures() {
                eprintln!("{:.0}% of trials failed", 100.0 * result.failure_rate);
                return Ok(exit::BENCH_FAILURES);
            }
            Ok(exit::SUCCESS)
        }
        Command::Verify { full, out } => {
            let level = if full { Level::Full } else { Level::Quick };
            let report = verify::run(level, &VerifyOptions::default());
            for s in &report.suites {
                eprintln!(
                    "{} {:<16} checks={:<5} worst={:.3e} tol={:.1e} {:.1}s",
                    if s.passed { "PASS" } else { "FAIL" },
                    s.name,
                    s.checks,
                    s.worst,
                    s.tolerance,
                    s.seconds
                );
            }
            emit(out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
            Ok(if report.passed { exit::SUCCESS } else { exit::VALIDATION })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => exit::SUCCESS,
                _ => exit::USAGE,
            };
            return ExitCode::from(code as u8);
        }
    };
    let code = run(cli.command).unwrap_or_else(|e: Error| {
        eprintln!("error: {e}");
        bench::exit_code(&e)
    });
    ExitCode::from(code as u8)
}
