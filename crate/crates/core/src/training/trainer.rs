use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{check_batchable, group_by_subject, sample_batch, Batch};
use crate::autograd::{decode_checkpoint, encode_checkpoint, AdamConfig, AdamState, Tape, Tensor};
use crate::data::{derive_seed, Cohort, PressureSequence, SplitPlan, TrialId};
use crate::error::{AstnError, Result};
use crate::evaluation::{discriminator_auc, evaluate_outputs, run_model, sample_pairs, Aggregation, TrialPair};
use crate::model::{loss_jc, AdversarialObjective, Astn, AstnConfig, Partition, TrialVars};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_iterations: usize,
    /// Validation checks without improvement before stopping.
    pub patience: usize,
    pub eval_every: usize,
    /// Weight λ of the adversarial generator objective.
    pub adversarial_scale: f64,
    pub adversarial_objective: AdversarialObjective,
    /// When false the discriminator phases are skipped entirely.
    pub use_discriminator: bool,
    pub seed: u64,
    pub classifier_adam: AdamConfig,
    pub discriminator_adam: AdamConfig,
    pub adversarial_adam: AdamConfig,
    pub pair_budget: usize,
    /// Assert every iteration that frozen partitions stay bit-identical.
    pub check_freeze: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iterations: 2000,
            patience: 10,
            eval_every: 20,
            adversarial_scale: 1.0,
            adversarial_objective: AdversarialObjective::default(),
            use_discriminator: true,
            seed: 0,
            classifier_adam: AdamConfig::default(),
            discriminator_adam: AdamConfig::default(),
            adversarial_adam: AdamConfig::default(),
            pair_budget: crate::evaluation::DEFAULT_PAIR_BUDGET,
            check_freeze: cfg!(debug_assertions),
        }
    }
}

impl TrainConfig {
    /// Adam normalizes away any constant factor on the loss, so λ also
    /// scales the adversarial step size.
    pub fn adversarial_step(&self) -> AdamConfig {
        let mut a = self.adversarial_adam;
        if self.adversarial_scale > 0.0 {
            a.lr *= self.adversarial_scale;
        }
        a
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AstnError::Config(m));
        if self.max_iterations == 0 || self.eval_every == 0 {
            return bad("max_iterations and eval_every must be positive".into());
        }
        if !(self.adversarial_scale >= 0.0 && self.adversarial_scale.is_finite()) {
            return bad(format!("adversarial_scale {} must be finite and >= 0", self.adversarial_scale));
        }
        if self.pair_budget < 2 {
            return bad("pair_budget must be at least 2".into());
        }
        for a in [self.classifier_adam, self.discriminator_adam, self.adversarial_adam] {
            if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
                return bad(format!("invalid Adam settings {a:?}"));
            }
        }
        Ok(())
    }
}

/// Losses of one iteration, plus validation results when it was a check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub j_c: f64,
    pub j_d: Option<f64>,
    pub j_a: Option<f64>,
    pub val_auc: Option<f64>,
    pub disc_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validation check.
    pub best: Astn<f32>,
    pub final_net: Astn<f32>,
    pub trace: Vec<IterationTrace>,
    pub best_iteration: Option<usize>,
    pub best_val_auc: Option<f64>,
    pub stopped_early: bool,
}

const GC: [Partition; 2] = [Partition::Generator, Partition::Classifier];

/// Adversarial training loop state. Each iteration draws one batch and
/// runs the classifier, discriminator and adversarial phases in order.
pub struct Trainer<'a> {
    cohort: &'a Cohort,
    config: TrainConfig,
    net: Astn<f32>,
    opt_gc: AdamState<f32>,
    opt_d: AdamState<f32>,
    opt_adv: AdamState<f32>,
    groups: BTreeMap<u32, Vec<TrialId>>,
    validation: Vec<TrialId>,
    val_pairs: Vec<TrialPair>,
    batch_rng: ChaCha8Rng,
    iteration: usize,
    trace: Vec<IterationTrace>,
    best: Option<(f64, usize, Astn<f32>)>,
    stale_checks: usize,
}

fn non_finite(what: &str, iteration: usize, batch: &Batch, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        let ids: Vec<String> = batch.all().iter().map(|t| t.to_string()).collect();
        Err(AstnError::NonFinite(format!(
            "{what} = {v} at iteration {iteration} on batch [{}]",
            ids.join(", ")
        )))
    }
}

impl<'a> Trainer<'a> {
    pub fn new(cohort: &'a Cohort, split: &SplitPlan, model: AstnConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        split.check(cohort)?;
        let groups = group_by_subject(&split.train);
        check_batchable(&groups)?;
        let net = Astn::new(model, derive_seed(config.seed, &[1]))?;
        let mut pair_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[3]));
        let val_pairs = if config.use_discriminator {
            match sample_pairs(&split.validation, config.pair_budget, &mut pair_rng) {
                Ok(p) => p,
                Err(_) => {
                    let mut pool = split.validation.clone();
                    pool.extend(&split.train);
                    log::warn!("validation trials cannot form both pair kinds; scoring the discriminator on training trials too");
                    sample_pairs(&pool, config.pair_budget, &mut pair_rng)?
                }
            }
        } else {
            Vec::new()
        };
        Ok(Trainer {
            cohort,
            opt_gc: AdamState::for_tensors(config.classifier_adam, GC.iter().flat_map(|&p| net.params.tensors(p))),
            opt_d: AdamState::for_tensors(config.discriminator_adam, net.params.tensors(Partition::Discriminator)),
            opt_adv: AdamState::for_tensors(config.adversarial_step(), net.params.tensors(Partition::Generator)),
            batch_rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[2])),
            groups,
            validation: split.validation.clone(),
            val_pairs,
            iteration: 0,
            trace: Vec::new(),
            best: None,
            stale_checks: 0,
            config,
            net,
        })
    }

    pub fn net(&self) -> &Astn<f32> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Astn<f32> {
        &mut self.net
    }

    pub fn trace(&self) -> &[IterationTrace] {
        &self.trace
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn optimizer_steps(&self) -> [u64; 3] {
        [self.opt_gc.step_count(), self.opt_d.step_count(), self.opt_adv.step_count()]
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        sample_batch(&self.groups, &mut self.batch_rng)
    }

    fn seqs(&self, ids: &[TrialId]) -> Result<Vec<&'a PressureSequence>> {
        let cohort = self.cohort;
        ids.iter()
            .map(|&id| cohort.get(id).ok_or_else(|| AstnError::Data(format!("trial {id} not in cohort"))))
            .collect()
    }

    /// Classifier loss over all four trials; updates generator and classifier.
    pub fn phase_classifier(&mut self, batch: &Batch) -> Result<f64> {
        let seqs = self.seqs(&batch.all())?;
        let mut tape = Tape::new();
        let b = self.net.params.bind(&mut tape, &GC);
        let mut probs = Vec::with_capacity(4);
        for s in &seqs {
            probs.push(self.net.forward(&mut tape, &b, s)?.prob);
        }
        let labels: Vec<&[u8]> = seqs.iter().map(|s| s.labels()).collect();
        let loss = loss_jc(&mut tape, &probs, &labels)?;
        let value = non_finite("J_C", self.iteration, batch, tape.value(loss).item() as f64)?;
        tape.backward(loss)?;
        for p in GC {
            self.net.params.pull_grads(&tape, &b, p)?;
        }
        self.opt_gc.update(&mut self.net.params.tensors_mut_in(&GC))?;
        Ok(value)
    }

    fn pair_forward(&self, tape: &mut Tape<f32>, b: &crate::model::Bound, ids: [TrialId; 2]) -> Result<(TrialVars, TrialVars)> {
        let s = self.seqs(&ids)?;
        Ok((self.net.forward(tape, b, s[0])?, self.net.forward(tape, b, s[1])?))
    }

    /// Discriminator loss on both pairs with generator and classifier
    /// frozen; updates the discriminator. Returns `(J_D, J_A)` values.
    pub fn phase_discriminator(&mut self, batch: &Batch) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let b = self.net.params.bind(&mut tape, &[Partition::Discriminator]);
        let (x1, x2) = self.pair_forward(&mut tape, &b, batch.different)?;
        let (x3, x4) = self.pair_forward(&mut tape, &b, batch.same)?;
        let d_diff = self.net.discriminate_pair(&mut tape, &b, &x1, &x2)?;
        let d_same = self.net.discriminate_pair(&mut tape, &b, &x3, &x4)?;
        let jd = self.net.loss_jd(&mut tape, d_same, d_diff)?;
        let ja = self.net.loss_ja(&mut tape, d_same)?;
        let jd_value = non_finite("J_D", self.iteration, batch, tape.value(jd).item() as f64)?;
        let ja_value = tape.value(ja).item() as f64;
        tape.backward(jd)?;
        self.net.params.pull_grads(&tape, &b, Partition::Discriminator)?;
        self.opt_d
            .update(&mut self.net.params.tensors_mut(Partition::Discriminator))?;
        Ok((jd_value, ja_value))
    }

    /// Generator step against the frozen discriminator on the same-subject
    /// pair, weighted by λ. Returns the discriminator's loss on that pair.
    pub fn phase_adversarial(&mut self, batch: &Batch) -> Result<f64> {
        let mut tape = Tape::new();
        let b = self.net.params.bind(&mut tape, &[Partition::Generator]);
        let (x3, x4) = self.pair_forward(&mut tape, &b, batch.same)?;
        let d_same = self.net.discriminate_pair(&mut tape, &b, &x3, &x4)?;
        let ja = self.net.loss_ja(&mut tape, d_same)?;
        let value = non_finite("J_A", self.iteration, batch, tape.value(ja).item() as f64)?;
        let objective = self.net.adversarial_objective(
            &mut tape,
            d_same,
            self.config.adversarial_objective,
            self.config.adversarial_scale,
        )?;
        tape.backward(objective)?;
        self.net.params.pull_grads(&tape, &b, Partition::Generator)?;
        self.opt_adv
            .update(&mut self.net.params.tensors_mut(Partition::Generator))?;
        Ok(value)
    }

    fn freeze_check(&self, before: &[Vec<Vec<f32>>], parts: &[Partition], phase: &str) -> Result<()> {
        for (snap, &p) in before.iter().zip(parts) {
            let now = self.net.params.snapshot(p);
            let same = snap.len() == now.len()
                && snap
                    .iter()
                    .zip(&now)
                    .all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
            if !same {
                return Err(AstnError::Config(format!("{p:?} parameters changed during the {phase} phase")));
            }
        }
        Ok(())
    }

    /// One training iteration (no validation).
    pub fn step(&mut self) -> Result<IterationTrace> {
        let batch = self.next_batch()?;
        let j_c = self.phase_classifier(&batch)?;
        let (mut j_d, mut j_a) = (None, None);
        if self.config.use_discriminator {
            let check = self.config.check_freeze;
            let before: Vec<_> = if check { GC.iter().map(|&p| self.net.params.snapshot(p)).collect() } else { vec![] };
            let (d, a) = self.phase_discriminator(&batch)?;
            if check {
                self.freeze_check(&before, &GC, "discriminator")?;
            }
            j_d = Some(d);
            j_a = Some(a);
            if self.config.adversarial_scale > 0.0 {
                let parts = [Partition::Discriminator, Partition::Classifier];
                let before: Vec<_> = if check { parts.iter().map(|&p| self.net.params.snapshot(p)).collect() } else { vec![] };
                j_a = Some(self.phase_adversarial(&batch)?);
                if check {
                    self.freeze_check(&before, &parts, "adversarial")?;
                }
            }
        }
        let t = IterationTrace {
            iteration: self.iteration,
            j_c,
            j_d,
            j_a,
            val_auc: None,
            disc_auc: None,
        };
        self.iteration += 1;
        Ok(t)
    }

    /// Classifier AUC and discriminator pair AUC on the validation trials.
    pub fn validate(&self) -> Result<(Option<f64>, Option<f64>)> {
        let mut ids = self.validation.clone();
        for p in &self.val_pairs {
            ids.push(p.a);
            ids.push(p.b);
        }
        ids.sort();
        ids.dedup();
        let outputs = run_model(&self.net, self.cohort, &ids)?;
        let val: Vec<_> = outputs
            .iter()
            .filter(|(id, _)| self.validation.binary_search(id).is_ok())
            .cloned()
            .collect();
        let val_auc = if val.is_empty() {
            None
        } else {
            evaluate_outputs(&val, self.cohort, Aggregation::Micro).ok().map(|(r, _)| r.auc)
        };
        let disc_auc = if self.val_pairs.is_empty() {
            None
        } else {
            Some(discriminator_auc(&self.net, &outputs, &self.val_pairs)?)
        };
        Ok((val_auc, disc_auc))
    }

    fn finished(&self) -> bool {
        self.iteration >= self.config.max_iterations || self.stale_checks >= self.config.patience.max(1)
    }

    /// Runs iterations until `max_iterations`, patience exhaustion, or
    /// `stop_after` further iterations, whichever comes first. Returns true
    /// once training is finished.
    pub fn advance(&mut self, stop_after: Option<usize>) -> Result<bool> {
        let mut budget = stop_after.unwrap_or(usize::MAX);
        while !self.finished() && budget > 0 {
            let mut t = self.step()?;
            budget -= 1;
            let due = self.iteration % self.config.eval_every == 0 || self.iteration == self.config.max_iterations;
            if due {
                let (val_auc, disc_auc) = self.validate()?;
                t.val_auc = val_auc;
                t.disc_auc = disc_auc;
                let improved = match (val_auc, &self.best) {
                    (Some(v), Some((b, _, _))) => v > *b,
                    (Some(_), None) => true,
                    (None, _) => false,
                };
                if improved {
                    self.best = Some((val_auc.expect("improved"), t.iteration, self.net.clone()));
                    self.stale_checks = 0;
                } else {
                    self.stale_checks += 1;
                }
                log::debug!(
                    "iteration {} j_c {:.4} val_auc {:?} disc_auc {:?}",
                    t.iteration,
                    t.j_c,
                    val_auc,
                    disc_auc
                );
            }
            self.trace.push(t);
        }
        Ok(self.finished())
    }

    pub fn run(mut self) -> Result<TrainOutcome> {
        self.advance(None)?;
        Ok(self.into_outcome())
    }

    pub fn into_outcome(self) -> TrainOutcome {
        let stopped_early = self.iteration < self.config.max_iterations;
        let (best_val_auc, best_iteration, best) = match self.best {
            Some((a, i, net)) => (Some(a), Some(i), net),
            None => (None, None, self.net.clone()),
        };
        TrainOutcome {
            best,
            final_net: self.net,
            trace: self.trace,
            best_iteration,
            best_val_auc,
            stopped_early,
        }
    }

    /// Serializes the complete loop state for [`Trainer::resume`].
    pub fn save_state(&self, path: &Path) -> Result<()> {
        let mut named: Vec<(String, Tensor<f32>)> = self
            .net
            .params
            .iter()
            .map(|p| (format!("net/{}", p.name), p.tensor.clone()))
            .collect();
        if let Some((_, _, best)) = &self.best {
            named.extend(best.params.iter().map(|p| (format!("best/{}", p.name), p.tensor.clone())));
        }
        for (k, opt) in [&self.opt_gc, &self.opt_d, &self.opt_adv].into_iter().enumerate() {
            let (m, v) = opt.moments();
            for (i, (a, b)) in m.iter().zip(v).enumerate() {
                named.push((format!("opt{k}/m{i}"), Tensor::new(&[a.len()], a.clone())?));
                named.push((format!("opt{k}/v{i}"), Tensor::new(&[b.len()], b.clone())?));
            }
        }
        let meta = serde_json::json!({
            "iteration": self.iteration,
            "batch_word_pos": self.batch_rng.get_word_pos().to_string(),
            "trace": self.trace,
            "best": self.best.as_ref().map(|(a, i, _)| (a, i)),
            "stale_checks": self.stale_checks,
            "optimizer_steps": self.optimizer_steps(),
            "train_config": self.config,
            "astn_config": self.net.config,
        });
        let refs: Vec<(&str, &Tensor<f32>)> = named.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let bytes = encode_checkpoint(&refs, meta)?;
        std::fs::write(path, bytes).map_err(|e| AstnError::io(path, e))
    }

    /// Rebuilds a trainer from [`Trainer::save_state`] output. Continuing it
    /// reproduces the uninterrupted run exactly.
    pub fn resume(cohort: &'a Cohort, split: &SplitPlan, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| AstnError::io(path, e))?;
        let (tensors, meta) = decode_checkpoint::<f32>(&bytes, path)?;
        let bad = |d: &str| AstnError::format("training state", path, d.to_string());
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| bad(&format!("missing {k}")));
        let config: TrainConfig = serde_json::from_value(field("train_config")?)?;
        let model: AstnConfig = serde_json::from_value(field("astn_config")?)?;
        let mut t = Trainer::new(cohort, split, model, config)?;
        let map: BTreeMap<String, Tensor<f32>> = tensors.into_iter().collect();
        let take = |name: &str| map.get(name).cloned().ok_or_else(|| bad(&format!("missing tensor {name}")));
        for i in 0..t.net.params.len() {
            let name = format!("net/{}", t.net.params.get(i).name);
            t.net.params.get_mut(i).tensor = take(&name)?;
        }
        let best: Option<(f64, usize)> = serde_json::from_value(field("best")?)?;
        if let Some((auc, it)) = best {
            let mut net = t.net.clone();
            for i in 0..net.params.len() {
                let name = format!("best/{}", net.params.get(i).name);
                net.params.get_mut(i).tensor = take(&name)?;
            }
            t.best = Some((auc, it, net));
        }
        let steps: [u64; 3] = serde_json::from_value(field("optimizer_steps")?)?;
        let configs = [t.config.classifier_adam, t.config.discriminator_adam, t.config.adversarial_step()];
        let counts = [t.opt_gc.moments().0.len(), t.opt_d.moments().0.len(), t.opt_adv.moments().0.len()];
        let mut opts = Vec::new();
        for k in 0..3 {
            let mut m = Vec::new();
            let mut v = Vec::new();
            for i in 0..counts[k] {
                m.push(take(&format!("opt{k}/m{i}"))?.into_data());
                v.push(take(&format!("opt{k}/v{i}"))?.into_data());
            }
            opts.push(AdamState::from_parts(configs[k], steps[k], m, v)?);
        }
        t.opt_adv = opts.pop().expect("three");
        t.opt_d = opts.pop().expect("three");
        t.opt_gc = opts.pop().expect("three");
        t.iteration = serde_json::from_value(field("iteration")?)?;
        t.stale_checks = serde_json::from_value(field("stale_checks")?)?;
        t.trace = serde_json::from_value(field("trace")?)?;
        let pos: String = serde_json::from_value(field("batch_word_pos")?)?;
        t.batch_rng
            .set_word_pos(pos.parse::<u128>().map_err(|e| bad(&format!("batch_word_pos: {e}")))?);
        Ok(t)
    }
}

/// Convenience wrapper: build a trainer and run it to completion.
pub fn train(cohort: &Cohort, split: &SplitPlan, model: AstnConfig, config: TrainConfig) -> Result<TrainOutcome> {
    Trainer::new(cohort, split, model, config)?.run()
}

/// Writes `iteration,j_c,j_d,j_a,val_auc,disc_auc`; missing values are empty.
pub fn write_trace_csv(path: &Path, trace: &[IterationTrace]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| AstnError::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(["iteration", "j_c", "j_d", "j_a", "val_auc", "disc_auc"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for t in trace {
        w.write_record([
            t.iteration.to_string(),
            t.j_c.to_string(),
            opt(t.j_d),
            opt(t.j_a),
            opt(t.val_auc),
            opt(t.disc_auc),
        ])?;
    }
    w.flush().map_err(|e| AstnError::io(path, e))
}
