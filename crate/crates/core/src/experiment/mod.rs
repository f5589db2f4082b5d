//! Reproducible experiments driven by a single JSON config: cohort
//! generation, the variant × seed training matrix, λ sweeps, evaluation,
//! projections and the gradient suite. Every command writes its artifacts
//! and a `manifest.json` under one output directory.

mod commands;
mod config;

pub use commands::{
    eval, gen_data, grad_check, lambda_variants, obtain_cohort, project, run_matrix, summarize, sweep_lambda, train,
    format_summary, Artifact, CellReport, CohortSummary, EvalReport, Manifest, MatrixOutcome, ProjectionSummary, Stat,
    SummaryRow,
};
pub use config::{apply_override, default_variants, ExperimentConfig, SplitSettings, TrialSet, Variant};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "ASTNLAB_THREADS";

/// Sizes the global rayon pool from `ASTNLAB_THREADS` when set. Later
/// calls are no-ops.
pub fn init_thread_pool() -> crate::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| crate::AstnError::Config(format!("{THREADS_ENV}={raw:?} is not a positive integer")))?;
    // Fails only when a pool already exists.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
