//! Command-line entry point: questionnaire measurement, tournament
//! execution with resume, run status, and report generation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use dilemma_lab::analysis;
use dilemma_lab::bfi::{self, Dimension, TraitScores};
use dilemma_lab::config::{BackendKind, ModelSpec, RunConfig};
use dilemma_lab::gateway::backends::{PersonaBackend, ReplayBackend, ScriptedBackend};
use dilemma_lab::gateway::live::LiveBackend;
use dilemma_lab::gateway::{AgentHandle, ChatBackend, RateLimiter, SystemClock};
use dilemma_lab::prompts::{PersonalityProfile, ProfileSource};
use dilemma_lab::runner::{self, RunOptions, RunSummary};

#[derive(Parser)]
#[command(
    name = "dilemma-lab",
    version,
    about = "Big Five measurement and repeated prisoner's dilemma tournaments for chat-model agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Administer the questionnaire to every configured model and write
    /// per-run scores under <out>/bfi/.
    MeasureBfi {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the configured number of measurement runs.
        #[arg(long)]
        runs: Option<u32>,
    },
    /// Play every configured condition, continuing idempotently if the
    /// output directory already holds part of this run.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the configured worker count.
        #[arg(long)]
        parallelism: Option<usize>,
        /// Stop after this many matches, leaving the run resumable.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Continue an interrupted run; refuses to start a fresh one.
    Resume {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Show per-condition completion, reconciled against the transcripts
    /// actually on disk.
    Status {
        /// Run directory, or a run id looked up under runs/.
        #[arg(long)]
        run: String,
    },
    /// Write one report into <run>/reports/.
    Analyze {
        /// Run directory, or a run id looked up under runs/.
        #[arg(long)]
        run: String,
        #[arg(long, value_enum)]
        report: Report,
        /// Also render radar.svg (radar report only).
        #[arg(long)]
        svg: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Report {
    Coop,
    Payoff,
    Diff,
    Radar,
}

fn main() -> ExitCode {
    env_logger::init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::MeasureBfi { config, out, runs } => measure_bfi(&config, &out, runs),
        Command::Run {
            config,
            out,
            parallelism,
            limit,
        } => {
            let config = RunConfig::from_path(&config)?;
            let options = RunOptions {
                out_dir: out,
                parallelism,
                limit,
            };
            report_summary(runner::run_experiment(&config, &options)?)
        }
        Command::Resume {
            config,
            out,
            parallelism,
            limit,
        } => {
            let config = RunConfig::from_path(&config)?;
            let options = RunOptions {
                out_dir: out,
                parallelism,
                limit,
            };
            report_summary(runner::resume(&config, &options)?)
        }
        Command::Status { run } => status(&run),
        Command::Analyze { run, report, svg } => analyze(&run, report, svg),
    }
}

fn measure_bfi(config_path: &Path, out: &Path, runs: Option<u32>) -> anyhow::Result<ExitCode> {
    let config = RunConfig::from_path(config_path)?;
    let n_runs = runs.unwrap_or(config.bfi.n_runs);
    if n_runs == 0 {
        bail!("--runs must be at least 1");
    }
    let bfi_dir = out.join("bfi");
    fs::create_dir_all(&bfi_dir).with_context(|| format!("creating {}", bfi_dir.display()))?;
    for (index, spec) in config.models.iter().enumerate() {
        let seed = runner::derive_seed(config.run.master_seed, index, 0, "bfi");
        let backend = questionnaire_backend(&config, spec, seed)?;
        let mut agent = AgentHandle::new(backend, spec.max_retries);
        if spec.backend == BackendKind::Live {
            agent = agent.with_rate_limiter(Arc::new(RateLimiter::new(
                spec.requests_per_minute as usize,
                Arc::new(SystemClock),
            )));
        }
        let measurement =
            bfi::measure_personality(&mut agent, n_runs as usize, config.bfi.max_attempts)
                .with_context(|| format!("measuring {}", spec.name))?;
        let path = bfi_dir.join(format!("{}.csv", spec.name));
        bfi::write_scores_csv(&path, &measurement.runs)
            .with_context(|| format!("writing {}", path.display()))?;
        println!("{} ({} runs) -> {}", spec.name, n_runs, path.display());
        for d in Dimension::ALL {
            println!(
                "  {} {:<17} mean {:.2}  sd {:.2}",
                d.code(),
                d.trait_name(),
                measurement.stats.mean.get(d),
                measurement.stats.sd.get(d),
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn questionnaire_backend(
    config: &RunConfig,
    spec: &ModelSpec,
    seed: u64,
) -> anyhow::Result<Box<dyn ChatBackend>> {
    Ok(match spec.backend {
        BackendKind::Scripted => Box::new(ScriptedBackend::cycling(
            spec.script.clone().expect("validated at parse time"),
        )),
        BackendKind::Persona => {
            let scores = config
                .profile_for(&spec.name)?
                .unwrap_or(TraitScores::uniform(3.0));
            let profile = PersonalityProfile::new(scores, ProfileSource::Measured)?;
            Box::new(PersonaBackend::new(profile, seed))
        }
        BackendKind::Replay => Box::new(ReplayBackend::from_file(
            spec.replay_file.as_ref().expect("validated at parse time"),
        )?),
        BackendKind::Live => Box::new(LiveBackend::new(spec.live_config()?)?),
    })
}

/// Prints the run outcome and lists every failed (condition, trial) pair
/// so they can be re-run; any failure makes the exit status nonzero.
fn report_summary(summary: RunSummary) -> anyhow::Result<ExitCode> {
    println!("run {}", summary.run_id);
    println!("  executed:  {}", summary.executed);
    println!("  skipped:   {} (already on disk)", summary.skipped);
    println!("  remaining: {}", summary.remaining);
    if summary.failed.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    println!("  failed pairs ({}):", summary.failed.len());
    for f in &summary.failed {
        println!("    {} trial {}: {}", f.condition_id, f.trial, f.error);
    }
    Ok(ExitCode::FAILURE)
}

fn status(run: &str) -> anyhow::Result<ExitCode> {
    let dir = resolve_run_dir(run)?;
    let manifest = runner::status(&dir)?;
    println!("run {} in {}", manifest.run_id, dir.display());
    println!("  config: sha256 {}", &manifest.config_sha256[..12]);
    println!("  fixture mode: {}", manifest.fixture_mode);
    for condition in &manifest.conditions {
        let done = condition.completed_trials.len() as u32;
        let failed = condition.failed_trials.len();
        let mark = if failed > 0 {
            format!("  ({failed} failed)")
        } else {
            String::new()
        };
        println!(
            "  {:<32} {:>4}/{}{}",
            condition.condition.id, done, condition.condition.trials, mark
        );
    }
    println!(
        "  total {}/{} matches",
        manifest.completed_trials(),
        manifest.total_trials()
    );
    Ok(ExitCode::SUCCESS)
}

fn analyze(run: &str, report: Report, svg: bool) -> anyhow::Result<ExitCode> {
    if svg && report != Report::Radar {
        bail!("--svg only applies to the radar report");
    }
    let dir = resolve_run_dir(run)?;
    let path = match report {
        Report::Coop => analysis::report_coop(&dir)?,
        Report::Payoff => analysis::report_payoff(&dir)?,
        Report::Diff => analysis::report_diff(&dir)?,
        Report::Radar => analysis::report_radar(&dir, svg)?,
    };
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

/// Accepts either a run directory or a bare run id stored under runs/.
fn resolve_run_dir(arg: &str) -> anyhow::Result<PathBuf> {
    let direct = PathBuf::from(arg);
    if direct.join("manifest.json").is_file() {
        return Ok(direct);
    }
    let nested = Path::new("runs").join(arg);
    if nested.join("manifest.json").is_file() {
        return Ok(nested);
    }
    bail!(
        "no manifest.json under {} or {}",
        direct.display(),
        nested.display()
    );
}
