use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use astnlab::experiment::{self, ExperimentConfig};
use astnlab::AstnError;

#[derive(Parser)]
#[command(name = "astnlab", version, about = "Freezing-of-gait detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a cohort and write it as a cohort file.
    GenData(Common),
    /// Train every variant on every split seed.
    Train(Resumable),
    /// Evaluate a checkpoint on one side of a split.
    Eval(Common),
    /// Train the first variant across the configured adversarial scales.
    SweepLambda(Resumable),
    /// Run the finite-difference gradient suite.
    GradCheck(Common),
    /// Write principal-component projections of each representation level.
    Project(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    config: PathBuf,
    /// Override a config field, e.g. `--set train.max_iterations=200`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct Resumable {
    #[command(flatten)]
    common: Common,
    /// Skip finished cells and continue interrupted ones from their snapshots.
    #[arg(long)]
    resume: bool,
}

enum Failure {
    Validation(AstnError),
    Runtime(AstnError),
    Check(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) | Failure::Runtime(AstnError::Config(_)) => 1,
            Failure::Runtime(_) => 2,
            Failure::Check(_) => 3,
        }
    }
}

fn load(c: &Common) -> Result<ExperimentConfig, Failure> {
    let cfg = ExperimentConfig::load(&c.config, &c.overrides).map_err(Failure::Validation)?;
    cfg.validate().map_err(Failure::Validation)?;
    experiment::init_thread_pool().map_err(Failure::Validation)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let rt = Failure::Runtime;
    match cli.command {
        Command::GenData(c) => {
            let cfg = load(&c)?;
            let s = experiment::gen_data(&cfg, &c.out_dir).map_err(rt)?;
            println!(
                "{} subjects, {} trials, {} s of {}x{} frames at {} Hz, event rate {:.3}",
                s.subjects, s.trials, s.seconds, s.width, s.height, s.sample_rate, s.event_rate
            );
        }
        Command::Train(r) => {
            let cfg = load(&r.common)?;
            let m = experiment::train(&cfg, &r.common.out_dir, r.resume).map_err(rt)?;
            print!("{}", experiment::format_summary(&m.summary));
        }
        Command::SweepLambda(r) => {
            let cfg = load(&r.common)?;
            let m = experiment::sweep_lambda(&cfg, &r.common.out_dir, r.resume).map_err(rt)?;
            print!("{}", experiment::format_summary(&m.summary));
        }
        Command::Eval(c) => {
            let cfg = load(&c)?;
            require_checkpoint(&cfg)?;
            let e = experiment::eval(&cfg, &c.out_dir).map_err(rt)?;
            let r = &e.report;
            println!(
                "{} trials ({}): auc {:.4} J {:.4} sens {:.4} spec {:.4} threshold {:.4}",
                e.trial_count,
                e.trials.name(),
                r.auc,
                r.youden_j,
                r.sensitivity,
                r.specificity,
                r.threshold
            );
        }
        Command::Project(c) => {
            let cfg = load(&c)?;
            require_checkpoint(&cfg)?;
            for p in experiment::project(&cfg, &c.out_dir).map_err(rt)? {
                println!(
                    "{:<10} {} points, explained variance {:?}",
                    p.level.name(),
                    p.points,
                    p.explained_variance_ratio
                );
            }
        }
        Command::GradCheck(c) => {
            let cfg = load(&c)?;
            let results = experiment::grad_check(&cfg, &c.out_dir).map_err(rt)?;
            let mut failed = Vec::new();
            for r in &results {
                println!(
                    "{} {:<24} max rel err {:.3e} (seed {})",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.max_relative_error,
                    r.worst_seed
                );
                if !r.passed {
                    failed.push(r.name.clone());
                }
            }
            if !failed.is_empty() {
                return Err(Failure::Check(format!("gradient checks failed: {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}

fn require_checkpoint(cfg: &ExperimentConfig) -> Result<&Path, Failure> {
    cfg.checkpoint
        .as_deref()
        .ok_or_else(|| Failure::Validation(AstnError::Config("checkpoint is not set".into())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Validation(e) | Failure::Runtime(e) => eprintln!("error: {e}"),
                Failure::Check(msg) => eprintln!("{msg}"),
            }
            ExitCode::from(f.code())
        }
    }
}
