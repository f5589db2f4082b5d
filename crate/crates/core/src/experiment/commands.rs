use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, TrialSet, Variant};
use crate::data::{derive_seed, generate_cohort, load_cohort, make_split, save_cohort, Cohort, SplitMode, SplitPlan, TrialId};
use crate::error::{AstnError, Result};
use crate::evaluation::{
    discriminator_auc, evaluate_model, project_level, run_model, sample_pairs, write_json, write_projection_csv,
    write_roc_csv, Level, MetricReport,
};
use crate::model::Astn;
use crate::training::{write_trace_csv, IterationTrace, Trainer};
use crate::verification::{run_suite, CheckOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the output directory.
    pub path: String,
    pub kind: String,
}

/// Index of everything a command wrote, plus the effective config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: ExperimentConfig,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Manifest {
            command: command.to_string(),
            config: config.clone(),
            artifacts: Vec::new(),
        }
    }

    fn add(&mut self, out: &Path, path: &Path, kind: &str) {
        let rel = path.strip_prefix(out).unwrap_or(path);
        self.artifacts.push(Artifact {
            path: rel.to_string_lossy().replace('\\', "/"),
            kind: kind.to_string(),
        });
    }

    pub fn write(&mut self, out: &Path) -> Result<()> {
        let path = out.join("manifest.json");
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        write_json(&path, self)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| AstnError::io(dir, e))
}

/// Loads the configured cohort file or synthesizes one.
pub fn obtain_cohort(cfg: &ExperimentConfig) -> Result<Cohort> {
    match &cfg.cohort {
        Some(p) => load_cohort(p),
        None => generate_cohort(&cfg.synth),
    }
}

fn check_geometry(cohort: &Cohort, model: &crate::model::AstnConfig, what: &str) -> Result<()> {
    if (cohort.width, cohort.height, cohort.sample_rate) != (model.width, model.height, model.sample_rate) {
        return Err(AstnError::Config(format!(
            "{what} expects {}×{} frames at {} Hz but the cohort has {}×{} at {} Hz",
            model.width, model.height, model.sample_rate, cohort.width, cohort.height, cohort.sample_rate
        )));
    }
    Ok(())
}

/// Summary of a cohort written by `gen-data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub subjects: usize,
    pub trials: usize,
    pub seconds: usize,
    pub width: usize,
    pub height: usize,
    pub sample_rate: usize,
    pub event_rate: f64,
}

impl CohortSummary {
    pub fn of(c: &Cohort) -> Self {
        CohortSummary {
            subjects: c.subject_count(),
            trials: c.len(),
            seconds: c.total_seconds(),
            width: c.width,
            height: c.height,
            sample_rate: c.sample_rate,
            event_rate: c.event_rate(),
        }
    }
}

pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<CohortSummary> {
    let cohort = generate_cohort(&cfg.synth)?;
    ensure_dir(out)?;
    let mut manifest = Manifest::new("gen-data", cfg);
    let path = out.join("cohort.fpsq");
    save_cohort(&cohort, &path)?;
    manifest.add(out, &path, "cohort");
    let summary = CohortSummary::of(&cohort);
    let spath = out.join("cohort_summary.json");
    write_json(&spath, &summary)?;
    manifest.add(out, &spath, "cohort_summary");
    manifest.write(out)?;
    Ok(summary)
}

/// Outcome of one (variant, seed) training cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub variant: String,
    pub seed: u64,
    pub split_mode: SplitMode,
    pub adversarial_scale: Option<f64>,
    pub test: MetricReport,
    /// Discriminator pair AUC on test trials, for variants that train one.
    pub test_disc_auc: Option<f64>,
    pub best_iteration: Option<usize>,
    pub best_val_auc: Option<f64>,
    pub iterations: usize,
    pub stopped_early: bool,
    /// Mean validation discriminator AUC over the first and last quarter
    /// of the validation checks.
    pub disc_auc_first_quarter: Option<f64>,
    pub disc_auc_last_quarter: Option<f64>,
}

fn quarter_means(trace: &[IterationTrace]) -> (Option<f64>, Option<f64>) {
    let d: Vec<f64> = trace.iter().filter_map(|t| t.disc_auc).collect();
    if d.len() < 4 {
        return (None, None);
    }
    let q = d.len() / 4;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (Some(mean(&d[..q])), Some(mean(&d[d.len() - q..])))
}

fn select(plan: &SplitPlan, set: TrialSet) -> Vec<TrialId> {
    let mut ids = match set {
        TrialSet::Train => plan.train.clone(),
        TrialSet::Validation => plan.validation.clone(),
        TrialSet::Test => plan.test.clone(),
        TrialSet::All => plan.train.iter().chain(&plan.validation).chain(&plan.test).copied().collect(),
    };
    ids.sort();
    ids
}

fn cell_dir(out: &Path, variant: &Variant, seed: u64) -> PathBuf {
    out.join("cells").join(&variant.name).join(format!("seed{seed}"))
}

fn run_cell(cfg: &ExperimentConfig, cohort: &Cohort, variant: &Variant, seed: u64, dir: &Path, resume: bool) -> Result<CellReport> {
    let report_path = dir.join("report.json");
    if resume && report_path.is_file() {
        let text = std::fs::read_to_string(&report_path).map_err(|e| AstnError::io(&report_path, e))?;
        log::info!("{}: seed {seed} already complete", variant.name);
        return Ok(serde_json::from_str(&text)?);
    }
    ensure_dir(dir)?;
    let mode = variant.split_mode(cfg.split.mode);
    let split = make_split(cohort, mode, cfg.split.ratios, seed)?;
    write_json(&dir.join("split.json"), &split)?;
    let state = dir.join("state.astn");
    let mut trainer = if resume && state.is_file() {
        log::info!("{}: seed {seed} resuming from {}", variant.name, state.display());
        Trainer::resume(cohort, &split, &state)?
    } else {
        Trainer::new(cohort, &split, variant.model(&cfg.model), variant.train(&cfg.train, seed))?
    };
    let chunk = (cfg.snapshot_every > 0).then_some(cfg.snapshot_every);
    while !trainer.advance(chunk)? {
        trainer.save_state(&state)?;
    }
    let outcome = trainer.into_outcome();
    if state.is_file() {
        std::fs::remove_file(&state).map_err(|e| AstnError::io(&state, e))?;
    }
    outcome.best.save(&dir.join("model.astn"))?;
    write_trace_csv(&dir.join("trace.csv"), &outcome.trace)?;

    let test_ids = select(&split, TrialSet::Test);
    let eval = evaluate_model(&outcome.best, cohort, &test_ids, cfg.aggregation)?;
    let test_disc_auc = if variant.use_discriminator {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[4]));
        match sample_pairs(&test_ids, cfg.train.pair_budget, &mut rng) {
            Ok(pairs) => Some(discriminator_auc(&outcome.best, &eval.outputs, &pairs)?),
            Err(_) => None,
        }
    } else {
        None
    };
    let (first, last) = quarter_means(&outcome.trace);
    let report = CellReport {
        variant: variant.name.clone(),
        seed,
        split_mode: mode,
        adversarial_scale: variant.use_discriminator.then(|| variant.train(&cfg.train, seed).adversarial_scale),
        test: eval.report,
        test_disc_auc,
        best_iteration: outcome.best_iteration,
        best_val_auc: outcome.best_val_auc,
        iterations: outcome.trace.len(),
        stopped_early: outcome.stopped_early,
        disc_auc_first_quarter: first,
        disc_auc_last_quarter: last,
    };
    write_roc_csv(&dir.join("roc.csv"), &eval.roc)?;
    write_json(&report_path, &report)?;
    log::info!("{}: seed {seed} test auc {:.4}", variant.name, report.test.auc);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Stat {
    /// Mean and sample standard deviation of the defined values.
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Option<Stat> {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, sd, n: v.len() })
    }
}

/// Mean and sd across seeds of one variant's cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    pub split_mode: SplitMode,
    pub adversarial_scale: Option<f64>,
    pub cells: usize,
    pub auc: Stat,
    pub youden_j: Stat,
    pub sensitivity: Stat,
    pub specificity: Stat,
    pub lr_positive: Option<Stat>,
    pub lr_negative: Option<Stat>,
    pub accuracy: Stat,
    pub test_disc_auc: Option<Stat>,
    pub disc_auc_last_quarter: Option<Stat>,
}

pub fn summarize(variants: &[Variant], cfg: &ExperimentConfig, cells: &[CellReport]) -> Vec<SummaryRow> {
    variants
        .iter()
        .filter_map(|v| {
            let mine: Vec<&CellReport> = cells.iter().filter(|c| c.variant == v.name).collect();
            let first = mine.first()?;
            let stat = |f: fn(&CellReport) -> Option<f64>| Stat::of(mine.iter().map(|c| f(c)));
            Some(SummaryRow {
                variant: v.name.clone(),
                split_mode: v.split_mode(cfg.split.mode),
                adversarial_scale: first.adversarial_scale,
                cells: mine.len(),
                auc: stat(|c| Some(c.test.auc))?,
                youden_j: stat(|c| Some(c.test.youden_j))?,
                sensitivity: stat(|c| Some(c.test.sensitivity))?,
                specificity: stat(|c| Some(c.test.specificity))?,
                lr_positive: stat(|c| c.test.lr_positive),
                lr_negative: stat(|c| c.test.lr_negative),
                accuracy: stat(|c| Some(c.test.accuracy))?,
                test_disc_auc: stat(|c| c.test_disc_auc),
                disc_auc_last_quarter: stat(|c| c.disc_auc_last_quarter),
            })
        })
        .collect()
}

fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| AstnError::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record([
        "variant",
        "split_mode",
        "lambda",
        "cells",
        "auc_mean",
        "auc_sd",
        "youden_j",
        "sensitivity",
        "specificity",
        "lr_positive",
        "lr_negative",
        "accuracy",
        "test_disc_auc",
    ])?;
    let opt = |s: &Option<Stat>| s.map(|s| format!("{:.4}", s.mean)).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.variant.clone(),
            r.split_mode.to_string(),
            r.adversarial_scale.map(|l| l.to_string()).unwrap_or_default(),
            r.cells.to_string(),
            format!("{:.4}", r.auc.mean),
            format!("{:.4}", r.auc.sd),
            format!("{:.4}", r.youden_j.mean),
            format!("{:.4}", r.sensitivity.mean),
            format!("{:.4}", r.specificity.mean),
            opt(&r.lr_positive),
            opt(&r.lr_negative),
            format!("{:.4}", r.accuracy.mean),
            opt(&r.test_disc_auc),
        ])?;
    }
    w.flush().map_err(|e| AstnError::io(path, e))
}

/// Human-readable summary table.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:<24} {:<14} {:>6} {:>16} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
        "variant", "split", "cells", "auc (mean±sd)", "J", "sens", "spec", "LR+", "LR-"
    );
    let opt = |v: &Option<Stat>| v.map(|s| format!("{:.2}", s.mean)).unwrap_or_else(|| "-".into());
    for r in rows {
        s.push_str(&format!(
            "{:<24} {:<14} {:>6} {:>16} {:>7.3} {:>7.3} {:>7.3} {:>7} {:>7}\n",
            r.variant,
            r.split_mode.to_string(),
            r.cells,
            format!("{:.3}±{:.3}", r.auc.mean, r.auc.sd),
            r.youden_j.mean,
            r.sensitivity.mean,
            r.specificity.mean,
            opt(&r.lr_positive),
            opt(&r.lr_negative),
        ));
    }
    s
}

/// Result of `train` or `sweep-lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixOutcome {
    pub cells: Vec<CellReport>,
    pub summary: Vec<SummaryRow>,
}

/// Trains every (variant, seed) cell, in parallel across cells, and
/// writes per-cell artifacts and the summary under `out`.
pub fn run_matrix(
    command: &str,
    cfg: &ExperimentConfig,
    variants: &[Variant],
    out: &Path,
    resume: bool,
) -> Result<MatrixOutcome> {
    let cohort = obtain_cohort(cfg)?;
    for v in variants {
        check_geometry(&cohort, &v.model(&cfg.model), &v.name)?;
    }
    ensure_dir(out)?;
    let mut manifest = Manifest::new(command, cfg);
    if cfg.cohort.is_none() {
        let path = out.join("cohort.fpsq");
        save_cohort(&cohort, &path)?;
        manifest.add(out, &path, "cohort");
    }
    let jobs: Vec<(&Variant, u64)> = variants
        .iter()
        .flat_map(|v| cfg.split.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let cells: Vec<CellReport> = jobs
        .par_iter()
        .map(|&(v, seed)| run_cell(cfg, &cohort, v, seed, &cell_dir(out, v, seed), resume))
        .collect::<Result<_>>()?;
    for &(v, seed) in &jobs {
        let dir = cell_dir(out, v, seed);
        for (file, kind) in [
            ("model.astn", "checkpoint"),
            ("trace.csv", "trace"),
            ("report.json", "report"),
            ("roc.csv", "roc"),
            ("split.json", "split"),
        ] {
            manifest.add(out, &dir.join(file), kind);
        }
    }
    let summary = summarize(variants, cfg, &cells);
    let outcome = MatrixOutcome { cells, summary };
    let sj = out.join("summary.json");
    write_json(&sj, &outcome)?;
    manifest.add(out, &sj, "summary");
    let sc = out.join("summary.csv");
    write_summary_csv(&sc, &outcome.summary)?;
    manifest.add(out, &sc, "summary");
    manifest.write(out)?;
    Ok(outcome)
}

pub fn train(cfg: &ExperimentConfig, out: &Path, resume: bool) -> Result<MatrixOutcome> {
    run_matrix("train", cfg, &cfg.variants, out, resume)
}

/// The first variant with the discriminator on, once per configured λ.
pub fn lambda_variants(cfg: &ExperimentConfig) -> Vec<Variant> {
    let base = &cfg.variants[0];
    cfg.lambdas
        .iter()
        .map(|&l| Variant {
            name: format!("lambda={l}"),
            use_discriminator: true,
            adversarial_scale: Some(l),
            ..base.clone()
        })
        .collect()
}

pub fn sweep_lambda(cfg: &ExperimentConfig, out: &Path, resume: bool) -> Result<MatrixOutcome> {
    run_matrix("sweep-lambda", cfg, &lambda_variants(cfg), out, resume)
}

fn load_for_eval(cfg: &ExperimentConfig) -> Result<(Astn<f32>, Cohort, SplitPlan)> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| AstnError::Config("this command needs a checkpoint".into()))?;
    let net = Astn::<f32>::load(path)?;
    let cohort = obtain_cohort(cfg)?;
    check_geometry(&cohort, &net.config, &path.display().to_string())?;
    let split = make_split(&cohort, cfg.split.mode, cfg.split.ratios, cfg.split.seeds[0])?;
    Ok((net, cohort, split))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trials: TrialSet,
    pub split_mode: SplitMode,
    pub split_seed: u64,
    pub trial_count: usize,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSummary {
    pub level: Level,
    pub points: usize,
    pub explained_variance_ratio: Vec<f64>,
}

fn write_projections(
    out: &Path,
    manifest: &mut Manifest,
    outputs: &[(TrialId, crate::model::TrialOutput)],
    cohort: &Cohort,
    threshold: f64,
    prefix: &str,
) -> Result<Vec<ProjectionSummary>> {
    let mut all = Vec::new();
    for level in Level::ALL {
        let p = project_level(outputs, cohort, level, threshold)?;
        let path = out.join(format!("{prefix}pca_{}.csv", level.name()));
        write_projection_csv(&path, &p)?;
        manifest.add(out, &path, "projection");
        all.push(ProjectionSummary {
            level,
            points: p.projection.n,
            explained_variance_ratio: p.projection.explained_variance_ratio.clone(),
        });
    }
    Ok(all)
}

pub fn eval(cfg: &ExperimentConfig, out: &Path) -> Result<EvalReport> {
    let (net, cohort, split) = load_for_eval(cfg)?;
    let ids = select(&split, cfg.trials);
    let evaluation = evaluate_model(&net, &cohort, &ids, cfg.aggregation)?;
    ensure_dir(out)?;
    let mut manifest = Manifest::new("eval", cfg);
    let report = EvalReport {
        trials: cfg.trials,
        split_mode: cfg.split.mode,
        split_seed: cfg.split.seeds[0],
        trial_count: ids.len(),
        report: evaluation.report,
    };
    let prefix = format!("{}_", cfg.trials.name());
    let rp = out.join(format!("{prefix}report.json"));
    write_json(&rp, &report)?;
    manifest.add(out, &rp, "report");
    let roc = out.join(format!("{prefix}roc.csv"));
    write_roc_csv(&roc, &evaluation.roc)?;
    manifest.add(out, &roc, "roc");
    write_projections(out, &mut manifest, &evaluation.outputs, &cohort, report.report.threshold, &prefix)?;
    manifest.write(out)?;
    Ok(report)
}

pub fn project(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<ProjectionSummary>> {
    let (net, cohort, split) = load_for_eval(cfg)?;
    let ids = select(&split, cfg.trials);
    let outputs = run_model(&net, &cohort, &ids)?;
    ensure_dir(out)?;
    let mut manifest = Manifest::new("project", cfg);
    let prefix = format!("{}_", cfg.trials.name());
    let all = write_projections(out, &mut manifest, &outputs, &cohort, 0.5, &prefix)?;
    let path = out.join(format!("{prefix}projection.json"));
    write_json(&path, &all)?;
    manifest.add(out, &path, "projection_summary");
    manifest.write(out)?;
    Ok(all)
}

pub fn grad_check(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<CheckOutcome>> {
    let results = run_suite(&cfg.grad_check)?;
    ensure_dir(out)?;
    let mut manifest = Manifest::new("grad-check", cfg);
    let path = out.join("grad_check.json");
    write_json(&path, &results)?;
    manifest.add(out, &path, "grad_check");
    manifest.write(out)?;
    Ok(results)
}
