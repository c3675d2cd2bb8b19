use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use finslab::analysis::{self, RunOptions};
use finslab::catalog;
use finslab::config::{self, Analysis, AnalysisConfig, RawConfig};
use finslab::report::AnalysisReport;

#[derive(Parser)]
#[command(name = "finslab", version, about = "Spray, connection and curvature analysis for Riemannian and Finsler metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the analyses requested by a JSON configuration file.
    Run {
        /// Path to the configuration (see `example --print-config` for the schema).
        config: PathBuf,
        /// Also write the JSON report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated subset of analyses, overriding the config.
        #[arg(long, value_delimiter = ',')]
        analyses: Option<Vec<String>>,
        /// Override the sampling seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the numerical rank cutoff.
        #[arg(long)]
        rank_tol: Option<f64>,
        /// Maximum Lie-bracket depth for the freedom analysis.
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Run a built-in catalog example (or just print its configuration).
    Example {
        /// One of: ex1, ex2, ex3, ex3-quartic, ex4, ex5, sphere2, euclidean-N (N = 2..4).
        name: String,
        /// Print the configuration JSON instead of running it.
        #[arg(long)]
        print_config: bool,
    },
    /// Run every catalog example and report a verdict per metric.
    Check,
}

fn parse_analyses(names: &[String]) -> Result<Vec<Analysis>, String> {
    names
        .iter()
        .map(|s| {
            serde_json::from_value::<Analysis>(serde_json::Value::String(s.clone()))
                .map_err(|_| format!("unknown analysis `{s}`"))
        })
        .collect()
}

fn apply_overrides(
    mut raw: RawConfig,
    analyses: &Option<Vec<String>>,
    seed: Option<u64>,
    rank_tol: Option<f64>,
) -> Result<AnalysisConfig, String> {
    if let Some(names) = analyses {
        raw.analyses = parse_analyses(names)?;
    }
    if let Some(seed) = seed {
        raw.seed = seed;
    }
    if let Some(tol) = rank_tol {
        raw.tolerances.rank_tol = tol;
    }
    config::validate(raw).map_err(|e| e.to_string())
}

fn execute(cfg: &AnalysisConfig, opts: &RunOptions) -> Result<AnalysisReport, String> {
    analysis::run(cfg, opts).map_err(|e| e.to_string())
}

fn emit(report: &AnalysisReport, out: &Option<PathBuf>) -> Result<(), String> {
    let text = report.to_json();
    if let Some(path) = out {
        std::fs::write(path, &text).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn verdict_code(report: &AnalysisReport) -> ExitCode {
    if report.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn run_command(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Run { config: path, out, analyses, seed, rank_tol, depth } => {
            let raw = config::load_config(&path).map_err(|e| e.to_string())?.raw;
            let cfg = apply_overrides(raw, &analyses, seed, rank_tol)?;
            let mut opts = RunOptions::default();
            if let Some(depth) = depth {
                opts.freedom_depth = depth;
            }
            let report = execute(&cfg, &opts)?;
            emit(&report, &out)?;
            Ok(verdict_code(&report))
        }
        Command::Example { name, print_config } => {
            let raw = catalog::get(&name)
                .ok_or_else(|| format!("unknown example `{name}` (try one of: {})", catalog::NAMES.join(", ")))?;
            if print_config {
                println!("{}", serde_json::to_string_pretty(&raw).expect("config serializes"));
                return Ok(ExitCode::SUCCESS);
            }
            let cfg = config::validate(raw).map_err(|e| e.to_string())?;
            let report = execute(&cfg, &RunOptions::default())?;
            emit(&report, &None)?;
            Ok(verdict_code(&report))
        }
        Command::Check => {
            let names =
                ["ex1", "ex2", "ex3", "ex3-quartic", "ex4", "ex5", "sphere2", "euclidean-3"];
            let mut all_pass = true;
            for name in names {
                let raw = catalog::get(name).expect("catalog entry");
                let cfg = config::validate(raw).map_err(|e| e.to_string())?;
                let report = execute(&cfg, &RunOptions::default())?;
                let ok = report.all_pass();
                all_pass &= ok;
                println!("{name}: {}", if ok { "PASS" } else { "FAIL" });
            }
            Ok(if all_pass { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_command(cli) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
