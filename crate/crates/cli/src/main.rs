//! `hkprop`: runs configured experiments, eps/seed sweeps, the acceptance
//! criteria, and summarizes result directories.
//!
//! Exit codes: 0 pass, 1 acceptance failure, 2 configuration error,
//! 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use hk_core::harness::config::ExperimentConfig;
use hk_core::harness::experiments::{read_summaries, run_criterion, run_sweep, ExperimentSummary, CRITERIA};

#[derive(Parser)]
#[command(name = "hkprop", version, about = "Semiclassical wave-packet propagation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment over its eps list.
    Run {
        config: PathBuf,
        /// Output directory (overrides the configuration).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment once per seed.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance criteria.
    Check {
        /// Subset of criteria, e.g. `--criteria 1,4,8`.
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u8>,
        /// Write `acceptance.json` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize the `*_summary.json` files of a results directory.
    Report { dir: PathBuf },
}

const PASS: u8 = 0;
const FAIL: u8 = 1;

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<hk_core::Error>())
        .map(|e| e.exit_code() as u8)
        .unwrap_or(3)
}

fn print_summary(s: &ExperimentSummary) {
    println!("{}", s.name);
    for r in &s.runs {
        println!("  eps = {:<10} error = {:.4e}  ({:.1} s)", r.eps, r.error, r.seconds);
    }
    if let Some(rep) = &s.report {
        let verdict = match rep.pass {
            Some(true) => " PASS",
            Some(false) => " FAIL",
            None => "",
        };
        println!(
            "  slope = {:.3} (95% CI {:.3} .. {:.3}){}",
            rep.slope, rep.confidence.0, rep.confidence.1, verdict
        );
    }
}

fn load(config: &Path, out: Option<PathBuf>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    if out.is_some() {
        cfg.output.dir = out;
    }
    Ok(cfg)
}

fn verdict(summaries: &[ExperimentSummary]) -> u8 {
    if summaries.iter().any(|s| s.pass == Some(false)) {
        FAIL
    } else {
        PASS
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = load(&config, out)?;
            let s = run_sweep(&cfg, &[])?;
            s.iter().for_each(print_summary);
            Ok(verdict(&s))
        }
        Command::Sweep { config, seeds, out } => {
            let cfg = load(&config, out)?;
            let s = run_sweep(&cfg, &seeds)?;
            s.iter().for_each(print_summary);
            Ok(verdict(&s))
        }
        Command::Check { criteria, out } => {
            let ids: Vec<u8> = if criteria.is_empty() { CRITERIA.iter().map(|c| c.0).collect() } else { criteria };
            let mut outcomes = Vec::new();
            for id in ids {
                let o = run_criterion(id)?;
                println!("{o}");
                outcomes.push(o);
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("acceptance.json"), serde_json::to_string_pretty(&outcomes)?)?;
            }
            Ok(if outcomes.iter().all(|o| o.pass) { PASS } else { FAIL })
        }
        Command::Report { dir } => {
            let summaries = read_summaries(&dir)?;
            if summaries.is_empty() {
                anyhow::bail!(hk_core::Error::Config(format!("no *_summary.json files in {}", dir.display())));
            }
            summaries.iter().for_each(print_summary);
            Ok(verdict(&summaries))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
