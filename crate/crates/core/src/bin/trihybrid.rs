use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trihybrid::harness::{
    convergence_trace, emit_csv, project_saved, records_to_csv, run_and_save, run_trials, summarize,
    summary_to_gnuplot, trace_to_csv, Mode, RunConfig, SavedRun, TrialRecord,
};
use trihybrid::projection::load_candidates;
use trihybrid::Error;

#[derive(Parser)]
#[command(name = "trihybrid", about = "Tri-hybrid precoding simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo batch at the configured budgets.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also save the converged tri-hybrid states for `project`.
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Per-iteration sum rate of the tri-hybrid and hybrid solvers.
    Trace {
        #[command(flatten)]
        common: Common,
    },
    /// Power sweep over every mode.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Project a saved run onto a candidate set.
    Project {
        #[command(flatten)]
        common: Common,
        /// Output of `run --save`.
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// JSON (or .toml) configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated budgets in dBm.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pmax_dbm: Option<Vec<f64>>,
    /// trihybrid, hybrid, projected or all.
    #[arg(long)]
    mode: Option<String>,
    /// Candidate-pattern file.
    #[arg(long)]
    patterns: Option<PathBuf>,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep the precoder from the unconstrained solve after projection.
    #[arg(long)]
    no_refit: bool,
    /// Write mean rates per mode and budget in gnuplot layout.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Record wall-clock times in the CSV.
    #[arg(long)]
    timing: bool,
}

enum Failure {
    Config(String),
    Batch(usize),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Load(_) => Failure::Config(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

fn resolve(common: &Common, sweep: bool) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = common.trials {
        cfg.trials = trials;
    }
    if let Some(list) = &common.pmax_dbm {
        if sweep {
            cfg.sweep_dbm = list.clone();
        } else {
            cfg.pmax_dbm = list.clone();
        }
    }
    if let Some(mode) = &common.mode {
        cfg.mode = Mode::parse(mode)?;
    }
    if sweep {
        cfg.mode = Mode::All;
    }
    if let Some(p) = &common.patterns {
        cfg.patterns = Some(p.clone());
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    if common.no_refit {
        cfg.refit = false;
    }
    if common.timing {
        cfg.timing = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_output(text: &str, path: Option<&Path>) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Other(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn finish(records: &[TrialRecord], cfg: &RunConfig, summary: Option<&Path>) -> Result<(), Failure> {
    match &cfg.out {
        Some(p) => emit_csv(records, p).map_err(|e| Failure::Other(e.to_string()))?,
        None => write_output(&records_to_csv(records), None)?,
    }
    if let Some(path) = summary {
        write_output(&summary_to_gnuplot(&summarize(records)), Some(path))?;
    }
    let failures: Vec<&TrialRecord> = records.iter().filter(|r| r.error.is_some()).collect();
    for r in &failures {
        eprintln!(
            "trial seed={} mode={} pmax_dbm={} failed: {}",
            r.seed,
            r.mode.name(),
            r.pmax_dbm,
            r.error.as_deref().unwrap_or("")
        );
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Batch(failures.len()))
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { common, save } => {
            let cfg = resolve(&common, false)?;
            let records = match &save {
                Some(path) => {
                    if cfg.mode != Mode::Trihybrid {
                        return Err(Failure::Config("--save requires --mode trihybrid".into()));
                    }
                    let (records, saved) = run_and_save(&cfg, &cfg.pmax_dbm)?;
                    let text = serde_json::to_string(&saved).map_err(|e| Failure::Other(e.to_string()))?;
                    write_output(&text, Some(path))?;
                    records
                }
                None => run_trials(&cfg, &cfg.pmax_dbm, cfg.mode)?,
            };
            finish(&records, &cfg, common.summary.as_deref())
        }
        Command::Sweep { common } => {
            let cfg = resolve(&common, true)?;
            let records = run_trials(&cfg, &cfg.sweep_dbm, Mode::All)?;
            finish(&records, &cfg, common.summary.as_deref())
        }
        Command::Trace { common } => {
            let cfg = resolve(&common, false)?;
            let rows = convergence_trace(&cfg, cfg.seed)?;
            write_output(&trace_to_csv(&rows), cfg.out.as_deref())
        }
        Command::Project { common, run } => {
            let text = std::fs::read_to_string(&run)
                .map_err(|e| Failure::Config(format!("{}: {e}", run.display())))?;
            let mut saved: SavedRun = serde_json::from_str(&text)
                .map_err(|e| Failure::Config(format!("{}: {e}", run.display())))?;
            if let Some(p) = &common.patterns {
                saved.config.patterns = Some(p.clone());
            }
            if let Some(o) = &common.out {
                saved.config.out = Some(o.clone());
            }
            let refit = saved.config.refit && !common.no_refit;
            let set = match &saved.config.patterns {
                Some(p) => load_candidates(p)?,
                None => saved.config.candidate_set()?,
            };
            let records = project_saved(&saved, &set, refit)?;
            finish(&records, &saved.config, common.summary.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Batch(n)) => {
            eprintln!("{n} trial(s) failed");
            ExitCode::from(2)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
