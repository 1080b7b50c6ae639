//! Scenario runner for the jump-SDE particle simulator.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 numeric/model failure,
//! 4 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use mvjump::scenario::{self, Scenario};

const USAGE: &str = "\
mvjump - interacting particle simulator for jump SDEs with law-dependent coefficients

USAGE:
  mvjump --config PATH [FLAGS]

FLAGS:
  --config PATH      TOML scenario configuration (required)
  --scenario NAME    Override the configured scenario:
                     simulate | density | tv-estimate | convergence-study |
                     validate-model | tail-quantities
  --seed U64         Override the configured seed
  --threads N        Cap worker threads (results do not depend on N)
  --out DIR          Output directory (default: from config)
  --help             Show this help

OUTPUT:
  Writes scenario artifacts (CSV/JSON) plus manifest.json into the output
  directory. The manifest echoes the fully resolved configuration; rerunning
  with it reproduces every data file byte-for-byte.
";

struct Args {
    config: PathBuf,
    scenario: Option<String>,
    seed: Option<u64>,
    threads: Option<usize>,
    out: Option<PathBuf>,
}

fn parse_args() -> Result<Args, String> {
    let mut config = None;
    let mut scenario = None;
    let mut seed = None;
    let mut threads = None;
    let mut out = None;
    let mut it = std::env::args().skip(1);
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--help" | "-h" => {
                println!("{USAGE}");
                std::process::exit(0);
            }
            "--config" => {
                let v = it.next().ok_or("missing value for --config")?;
                config = Some(PathBuf::from(v));
            }
            "--scenario" => {
                scenario = Some(it.next().ok_or("missing value for --scenario")?);
            }
            "--seed" => {
                let v = it.next().ok_or("missing value for --seed")?;
                seed = Some(v.parse::<u64>().map_err(|_| "invalid --seed")?);
            }
            "--threads" => {
                let v = it.next().ok_or("missing value for --threads")?;
                threads = Some(v.parse::<usize>().map_err(|_| "invalid --threads")?);
            }
            "--out" => {
                out = Some(PathBuf::from(it.next().ok_or("missing value for --out")?));
            }
            other => return Err(format!("unknown flag '{other}'")),
        }
    }
    Ok(Args {
        config: config.ok_or("--config is required")?,
        scenario,
        seed,
        threads,
        out,
    })
}

fn scenario_from_name(name: &str) -> Result<Scenario, String> {
    match name {
        "simulate" => Ok(Scenario::Simulate),
        "density" => Ok(Scenario::Density),
        "tv-estimate" => Ok(Scenario::TvEstimate),
        "convergence-study" => Ok(Scenario::ConvergenceStudy),
        "validate-model" => Ok(Scenario::ValidateModel),
        "tail-quantities" => Ok(Scenario::TailQuantities),
        other => Err(format!("unknown scenario '{other}'")),
    }
}

fn main() -> ExitCode {
    let args = match parse_args() {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}\n\n{USAGE}");
            return ExitCode::from(2);
        }
    };
    let mut cfg = match scenario::parse_config_file(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(name) = &args.scenario {
        cfg.scenario = match scenario_from_name(name) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("error: {e}\n\n{USAGE}");
                return ExitCode::from(2);
            }
        };
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let threads = args.threads.unwrap_or(cfg.threads);
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let out_dir = args.out.unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    match scenario::run_scenario(&cfg, &out_dir) {
        Ok(outcome) => {
            println!(
                "{}: wrote {} file(s) to {} in {:.3}s",
                outcome.manifest.scenario,
                outcome.manifest.files.len() + 1,
                out_dir.display(),
                outcome.manifest.wall_secs
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
