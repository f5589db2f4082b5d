use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{youden_threshold, MetricReport};
use super::pca::{pca_project, Projection};
use super::roc::{roc_auc, RocCurve};
use crate::autograd::{Scalar, Tape, Tensor};
use crate::data::{Cohort, TrialId};
use crate::error::{AstnError, Result};
use crate::model::{Astn, TrialOutput, TrialVars};

/// How per-second results from several trials are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Pool every second of every trial into one ROC.
    #[default]
    Micro,
    /// Average per-trial metrics over trials containing both classes.
    Macro,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricReport,
    pub roc: RocCurve,
    pub outputs: Vec<(TrialId, TrialOutput)>,
}

/// Forward passes for the listed trials, in the given order.
pub fn run_model<F: Scalar>(net: &Astn<F>, cohort: &Cohort, ids: &[TrialId]) -> Result<Vec<(TrialId, TrialOutput)>> {
    ids.par_iter()
        .map(|&id| {
            let seq = cohort
                .get(id)
                .ok_or_else(|| AstnError::Data(format!("trial {id} not in cohort")))?;
            Ok((id, net.infer(seq)?))
        })
        .collect()
}

fn pooled(outputs: &[(TrialId, TrialOutput)], cohort: &Cohort) -> Result<(Vec<f64>, Vec<u8>)> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (id, out) in outputs {
        let seq = cohort.get(*id).ok_or_else(|| AstnError::Data(format!("trial {id} not in cohort")))?;
        scores.extend_from_slice(&out.prob);
        labels.extend_from_slice(seq.labels());
    }
    Ok((scores, labels))
}

/// ROC and Youden-optimal metrics of already computed outputs.
pub fn evaluate_outputs(
    outputs: &[(TrialId, TrialOutput)],
    cohort: &Cohort,
    aggregation: Aggregation,
) -> Result<(MetricReport, RocCurve)> {
    if outputs.is_empty() {
        return Err(AstnError::Metric("no trials to evaluate".into()));
    }
    let (scores, labels) = pooled(outputs, cohort)?;
    let roc = roc_auc(&scores, &labels)?;
    let report = match aggregation {
        Aggregation::Micro => youden_threshold(&roc),
        Aggregation::Macro => {
            let mut per = Vec::new();
            for (id, out) in outputs {
                let y = cohort.get(*id).expect("checked above").labels();
                if let Ok(r) = roc_auc(&out.prob, y) {
                    per.push(youden_threshold(&r));
                }
            }
            if per.is_empty() {
                return Err(AstnError::Metric("no trial contains both classes".into()));
            }
            let mean = |f: fn(&MetricReport) -> f64| per.iter().map(f).sum::<f64>() / per.len() as f64;
            MetricReport::from_rates(
                mean(|r| r.auc),
                mean(|r| r.sensitivity),
                mean(|r| r.specificity),
                mean(|r| r.accuracy),
                mean(|r| r.threshold),
            )
        }
    };
    Ok((report, roc))
}

pub fn evaluate_model<F: Scalar>(
    net: &Astn<F>,
    cohort: &Cohort,
    ids: &[TrialId],
    aggregation: Aggregation,
) -> Result<Evaluation> {
    let outputs = run_model(net, cohort, ids)?;
    let (report, roc) = evaluate_outputs(&outputs, cohort, aggregation)?;
    Ok(Evaluation { report, roc, outputs })
}

/// A scored trial pair; `different` marks a different-subject pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialPair {
    pub a: TrialId,
    pub b: TrialId,
    pub different: bool,
}

pub const DEFAULT_PAIR_BUDGET: usize = 200;

/// Draws `budget` pairs, half same-subject and half different-subject.
pub fn sample_pairs<R: Rng>(ids: &[TrialId], budget: usize, rng: &mut R) -> Result<Vec<TrialPair>> {
    let mut by_subject = std::collections::BTreeMap::<u32, Vec<TrialId>>::new();
    for id in ids {
        by_subject.entry(id.subject).or_default().push(*id);
    }
    let multi: Vec<&Vec<TrialId>> = by_subject.values().filter(|v| v.len() >= 2).collect();
    if multi.is_empty() || by_subject.len() < 2 {
        return Err(AstnError::Sampling(format!(
            "pairs need a subject with two trials and two subjects; have {} subjects, {} with repeats",
            by_subject.len(),
            multi.len()
        )));
    }
    let subjects: Vec<u32> = by_subject.keys().copied().collect();
    let mut pairs = Vec::with_capacity(budget);
    for i in 0..budget {
        if i % 2 == 0 {
            let trials = multi.choose(rng).expect("non-empty");
            let picked: Vec<&TrialId> = trials.choose_multiple(rng, 2).collect();
            pairs.push(TrialPair {
                a: *picked[0],
                b: *picked[1],
                different: false,
            });
        } else {
            let two: Vec<&u32> = subjects.choose_multiple(rng, 2).collect();
            pairs.push(TrialPair {
                a: *by_subject[two[0]].choose(rng).expect("non-empty"),
                b: *by_subject[two[1]].choose(rng).expect("non-empty"),
                different: true,
            });
        }
    }
    Ok(pairs)
}

/// Discriminator probability that a pair comes from different subjects.
pub fn pair_score<F: Scalar>(net: &Astn<F>, a: &TrialOutput, b: &TrialOutput) -> Result<f64> {
    let mut tape = Tape::<F>::new();
    let bound = net.params.bind(&mut tape, &[]);
    let c = &net.config;
    let mut vars = |o: &TrialOutput| -> Result<TrialVars> {
        let mk = |tape: &mut Tape<F>, v: &[f64], cols: usize| -> Result<crate::autograd::Var> {
            Ok(tape.constant(Tensor::from_f64(&[v.len() / cols, cols], v)?))
        };
        Ok(TrialVars {
            seconds: o.seconds,
            spatial: mk(&mut tape, &o.spatial, c.spatial_dim)?,
            intrinsic: mk(&mut tape, &o.intrinsic, c.intrinsic_dim)?,
            dynamic: mk(&mut tape, &o.dynamic, c.dynamic_dim())?,
            prob: mk(&mut tape, &o.prob, 1)?,
        })
    };
    let (x, y) = (vars(a)?, vars(b)?);
    let d = net.discriminate_pair(&mut tape, &bound, &x, &y)?;
    let p = Scalar::to_f64(tape.value(d).item());
    Ok(if c.flip_pair_coding { 1.0 - p } else { p })
}

/// AUC of the discriminator separating different-subject pairs (positive)
/// from same-subject pairs.
pub fn discriminator_auc<F: Scalar>(net: &Astn<F>, outputs: &[(TrialId, TrialOutput)], pairs: &[TrialPair]) -> Result<f64> {
    let find = |id: TrialId| {
        outputs
            .iter()
            .find(|(t, _)| *t == id)
            .map(|(_, o)| o)
            .ok_or_else(|| AstnError::Metric(format!("no output for trial {id}")))
    };
    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|p| pair_score(net, find(p.a)?, find(p.b)?))
        .collect::<Result<_>>()?;
    let labels: Vec<u8> = pairs.iter().map(|p| p.different as u8).collect();
    Ok(roc_auc(&scores, &labels)?.auc)
}

/// Representation level used for projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Spatial,
    Intrinsic,
    Dynamic,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Spatial, Level::Intrinsic, Level::Dynamic];

    pub fn name(self) -> &'static str {
        match self {
            Level::Spatial => "spatial",
            Level::Intrinsic => "intrinsic",
            Level::Dynamic => "dynamic",
        }
    }
}

/// Per-second points of one level with their true and predicted labels.
#[derive(Debug, Clone)]
pub struct LevelProjection {
    pub level: Level,
    pub projection: Projection,
    pub true_labels: Vec<u8>,
    pub pred_labels: Vec<u8>,
}

/// Two-component projection of every second of `outputs` at `level`. The
/// spatial level is averaged over the frames of each second first.
pub fn project_level(
    outputs: &[(TrialId, TrialOutput)],
    cohort: &Cohort,
    level: Level,
    threshold: f64,
) -> Result<LevelProjection> {
    let mut data = Vec::new();
    let mut dim = 0;
    let mut true_labels = Vec::new();
    let mut pred_labels = Vec::new();
    for (id, out) in outputs {
        let seq = cohort.get(*id).ok_or_else(|| AstnError::Data(format!("trial {id} not in cohort")))?;
        let t = out.seconds;
        let (rows, per_row) = match level {
            Level::Spatial => (&out.spatial, seq.sample_rate),
            Level::Intrinsic => (&out.intrinsic, 1),
            Level::Dynamic => (&out.dynamic, 1),
        };
        dim = rows.len() / (t * per_row);
        for s in 0..t {
            let block = &rows[s * per_row * dim..(s + 1) * per_row * dim];
            for j in 0..dim {
                data.push(block.iter().skip(j).step_by(dim).sum::<f64>() / per_row as f64);
            }
        }
        true_labels.extend_from_slice(seq.labels());
        pred_labels.extend(out.prob.iter().map(|&p| u8::from(p >= threshold)));
    }
    let projection = pca_project(&data, true_labels.len(), dim, 2)?;
    Ok(LevelProjection {
        level,
        projection,
        true_labels,
        pred_labels,
    })
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| AstnError::io(path, e))?,
    ))
}

/// `threshold,fpr,tpr` rows, first row at an infinite threshold.
pub fn write_roc_csv(path: &Path, roc: &RocCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["threshold", "fpr", "tpr"])?;
    for p in &roc.points {
        w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
    }
    w.flush().map_err(|e| AstnError::io(path, e))
}

/// `pc1,pc2,true_label,pred_label` rows.
pub fn write_projection_csv(path: &Path, p: &LevelProjection) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["pc1", "pc2", "true_label", "pred_label"])?;
    for i in 0..p.projection.n {
        let r = p.projection.row(i);
        w.write_record([
            r[0].to_string(),
            r[1].to_string(),
            p.true_labels[i].to_string(),
            p.pred_labels[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| AstnError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n").map_err(|e| AstnError::io(path, e))?;
    f.flush().map_err(|e| AstnError::io(path, e))
}
