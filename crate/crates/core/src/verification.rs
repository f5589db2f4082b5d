//! Finite-difference suite over every tape primitive and the training
//! objectives, run in 64-bit on small random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{finite_difference_check_with, GradCheckReport, Tape, Tensor, Var};
use crate::data::{PressureSequence, TrialId};
use crate::error::{AstnError, Result};
use crate::model::{loss_jc, AdversarialObjective, Astn, AstnConfig, Bound, ConvSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteOptions {
    pub seeds: u64,
    pub eps: f64,
    pub tolerance: f64,
    /// Name of a check whose analytic gradient is deliberately perturbed.
    pub corrupt: Option<String>,
    /// Model used by the objective checks.
    pub model: AstnConfig,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seeds: 10,
            // smaller than the single-check default: through a whole model a
            // leaky_relu input occasionally sits within 1e-4 of its kink
            eps: 1e-5,
            tolerance: 1e-6,
            corrupt: None,
            model: toy_config(true),
        }
    }
}

impl SuiteOptions {
    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(AstnError::Config("grad-check needs at least one seed".into()));
        }
        if !(self.eps > 0.0 && self.tolerance > 0.0) {
            return Err(AstnError::Config(format!(
                "eps {} and tolerance {} must be positive",
                self.eps, self.tolerance
            )));
        }
        if let Some(name) = &self.corrupt {
            if !check_names().contains(&name.as_str()) {
                return Err(AstnError::Config(format!("no check named {name:?}")));
            }
        }
        self.model.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub seeds: u64,
    pub max_relative_error: f64,
    pub worst_seed: u64,
    pub passed: bool,
}

/// A small model that still exercises pooling, both encoders and the GRU.
pub fn toy_config(bidirectional: bool) -> AstnConfig {
    AstnConfig {
        width: 6,
        height: 4,
        sample_rate: 4,
        spatial_layers: vec![ConvSpec::new(2, 3, 2), ConvSpec::new(3, 3, 0)],
        spatial_dim: 4,
        intrinsic_layers: vec![ConvSpec::new(3, 3, 2)],
        intrinsic_dim: 4,
        hidden_dim: 3,
        bidirectional,
        classifier_hidden: vec![4],
        ..AstnConfig::default()
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_f64(shape, &data).expect("shape matches")
}

/// Values in ±[0.1, 1], clear of the kinks of leaky_relu and abs.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_f64(shape, &data).expect("shape matches")
}

/// Distinct values 0.01 apart, so no pooling window holds a near tie.
fn spaced(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.5).collect();
    vals.shuffle(rng);
    Tensor::from_f64(shape, &vals).expect("shape matches")
}

fn weighted_sum(t: &mut Tape<f64>, y: Var, salt: f64) -> Result<Var> {
    // fixed non-uniform weights keep every output coordinate in play
    let n = t.value(y).len();
    let shape = t.shape(y).to_vec();
    let w: Vec<f64> = (0..n).map(|i| ((i as f64 + salt) * 0.7).sin()).collect();
    let wv = t.constant(Tensor::from_f64(&shape, &w)?);
    let p = t.mul(y, wv)?;
    Ok(t.sum(p))
}

type Inputs = fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>;
type Build = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

struct Primitive {
    name: &'static str,
    inputs: Inputs,
    build: Build,
}

fn primitives() -> Vec<Primitive> {
    vec![
        Primitive {
            name: "leaky_relu",
            inputs: |r| vec![away_from_zero(r, &[3, 4])],
            build: |t, v| {
                let y = t.leaky_relu(v[0], 0.01);
                weighted_sum(t, y, 1.0)
            },
        },
        Primitive {
            name: "sigmoid",
            inputs: |r| vec![uniform(r, &[5], -3.0, 3.0)],
            build: |t, v| {
                let y = t.sigmoid(v[0]);
                weighted_sum(t, y, 2.0)
            },
        },
        Primitive {
            name: "tanh",
            inputs: |r| vec![uniform(r, &[5], -2.0, 2.0)],
            build: |t, v| {
                let y = t.tanh(v[0]);
                weighted_sum(t, y, 3.0)
            },
        },
        Primitive {
            name: "matmul",
            inputs: |r| vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 2], -1.0, 1.0)],
            build: |t, v| {
                let y = t.matmul(v[0], v[1])?;
                weighted_sum(t, y, 4.0)
            },
        },
        Primitive {
            name: "linear",
            inputs: |r| {
                vec![
                    uniform(r, &[3, 4], -1.0, 1.0),
                    uniform(r, &[2, 4], -1.0, 1.0),
                    uniform(r, &[2], -1.0, 1.0),
                ]
            },
            build: |t, v| {
                let y = t.matmul_bt(v[0], v[1])?;
                let y = t.add_row_bias(y, v[2])?;
                weighted_sum(t, y, 5.0)
            },
        },
        Primitive {
            name: "conv1d",
            inputs: |r| {
                vec![
                    uniform(r, &[2, 3, 7], -1.0, 1.0),
                    uniform(r, &[4, 3, 3], -1.0, 1.0),
                    uniform(r, &[4], -1.0, 1.0),
                ]
            },
            build: |t, v| {
                let y = t.conv1d(v[0], v[1], 1, 1)?;
                let y = t.add_channel_bias(y, v[2], true)?;
                weighted_sum(t, y, 6.0)
            },
        },
        Primitive {
            name: "conv2d",
            inputs: |r| {
                vec![
                    uniform(r, &[2, 2, 5, 4], -1.0, 1.0),
                    uniform(r, &[3, 2, 3, 3], -1.0, 1.0),
                    uniform(r, &[3], -1.0, 1.0),
                ]
            },
            build: |t, v| {
                let y = t.conv2d(v[0], v[1], 2, 1)?;
                let y = t.add_channel_bias(y, v[2], true)?;
                weighted_sum(t, y, 7.0)
            },
        },
        Primitive {
            name: "max_pool2d",
            inputs: |r| vec![spaced(r, &[2, 4, 6])],
            build: |t, v| {
                let y = t.max_pool2d(v[0], 2)?;
                weighted_sum(t, y, 8.0)
            },
        },
        Primitive {
            name: "max_pool1d",
            inputs: |r| vec![spaced(r, &[3, 7])],
            build: |t, v| {
                let y = t.max_pool1d(v[0], 3)?;
                weighted_sum(t, y, 9.0)
            },
        },
        Primitive {
            name: "add_sub_mul",
            inputs: |r| vec![uniform(r, &[6], -1.0, 1.0), uniform(r, &[6], -1.0, 1.0)],
            build: |t, v| {
                let a = t.add(v[0], v[1])?;
                let s = t.sub(v[0], v[1])?;
                let m = t.mul(a, s)?;
                weighted_sum(t, m, 10.0)
            },
        },
        Primitive {
            name: "square_abs_affine",
            inputs: |r| vec![away_from_zero(r, &[6])],
            build: |t, v| {
                let a = t.square(v[0]);
                let b = t.abs(v[0]);
                let c = t.affine(v[0], -0.5, 2.0);
                let ab = t.add(a, b)?;
                let y = t.mul(ab, c)?;
                weighted_sum(t, y, 11.0)
            },
        },
        Primitive {
            name: "mean",
            inputs: |r| vec![uniform(r, &[4, 3], -1.0, 1.0)],
            build: |t, v| {
                let sq = t.square(v[0]);
                let rows = t.mean_rows(sq)?;
                let w = weighted_sum(t, rows, 12.0)?;
                let m = t.mean(v[0]);
                t.add(w, m)
            },
        },
        Primitive {
            name: "concat_slice_stack",
            inputs: |r| vec![uniform(r, &[3, 2], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)],
            build: |t, v| {
                let c = t.concat_cols(&[v[0], v[1]])?;
                let s = t.slice_rows(c, 1, 2)?;
                let r0 = t.slice_rows(c, 0, 1)?;
                let r2 = t.slice_rows(c, 2, 1)?;
                let st = t.stack_rows(&[r2, r0])?;
                let all = t.concat_cols(&[s, st])?;
                let rev = t.reverse_rows(all)?;
                let sq = t.square(rev);
                weighted_sum(t, sq, 13.0)
            },
        },
        Primitive {
            name: "reshape_permute",
            inputs: |r| vec![uniform(r, &[2, 3, 4], -1.0, 1.0)],
            build: |t, v| {
                let p = t.permute_021(v[0])?;
                let f = t.reshape(p, &[6, 4])?;
                let sq = t.square(f);
                weighted_sum(t, sq, 14.0)
            },
        },
        Primitive {
            name: "bce",
            // the clamp is inactive well inside (0, 1)
            inputs: |r| vec![uniform(r, &[7], 0.15, 0.85)],
            build: |t, v| t.bce(v[0], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]),
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Objective {
    Classifier,
    Discriminator,
    AdversarialAscent,
    AdversarialConfusion,
    Composite,
}

const OBJECTIVES: [(&str, Objective); 5] = [
    ("loss_jc", Objective::Classifier),
    ("loss_jd", Objective::Discriminator),
    ("adversarial_ascent", Objective::AdversarialAscent),
    ("adversarial_confusion", Objective::AdversarialConfusion),
    ("composite", Objective::Composite),
];

/// λ used by the objective checks; anything other than 0 or 1 will do.
const CHECK_LAMBDA: f64 = 0.7;

/// Names of all checks, primitives first.
pub fn check_names() -> Vec<&'static str> {
    primitives()
        .iter()
        .map(|p| p.name)
        .chain(OBJECTIVES.iter().map(|(n, _)| *n))
        .collect()
}

fn random_trial(cfg: &AstnConfig, id: TrialId, seconds: usize, rng: &mut ChaCha8Rng) -> Result<PressureSequence> {
    let frames = seconds * cfg.sample_rate;
    let data = (0..frames * cfg.width * cfg.height).map(|_| rng.random::<f32>()).collect();
    let labels = (0..frames).map(|_| u8::from(rng.random_bool(0.3))).collect();
    PressureSequence::new(id, cfg.width, cfg.height, cfg.sample_rate, data, labels)
}

fn objective(net: &Astn<f64>, trials: &[PressureSequence], which: Objective, tape: &mut Tape<f64>, vars: &[Var]) -> Result<Var> {
    let b = Bound::from_vars(vars.to_vec());
    let x = net.forward(tape, &b, &trials[0])?;
    let y = net.forward(tape, &b, &trials[1])?;
    let z = net.forward(tape, &b, &trials[2])?;
    let d_same = net.discriminate_pair(tape, &b, &x, &z)?;
    let d_diff = net.discriminate_pair(tape, &b, &x, &y)?;
    match which {
        Objective::Classifier => loss_jc(
            tape,
            &[x.prob, y.prob, z.prob],
            &[trials[0].labels(), trials[1].labels(), trials[2].labels()],
        ),
        Objective::Discriminator => net.loss_jd(tape, d_same, d_diff),
        Objective::AdversarialAscent => {
            net.adversarial_objective(tape, d_same, AdversarialObjective::Ascent, CHECK_LAMBDA)
        }
        Objective::AdversarialConfusion => {
            net.adversarial_objective(tape, d_same, AdversarialObjective::Confusion, CHECK_LAMBDA)
        }
        Objective::Composite => {
            let c = loss_jc(tape, &[x.prob, y.prob], &[trials[0].labels(), trials[1].labels()])?;
            let d = net.loss_jd(tape, d_same, d_diff)?;
            let a = net.loss_ja(tape, d_same)?;
            let a = tape.scale(a, CHECK_LAMBDA);
            let cd = tape.add(c, d)?;
            tape.add(cd, a)
        }
    }
}

fn tamper_for(corrupt: bool) -> impl FnMut(usize, &mut [f64]) {
    move |i, g| {
        if corrupt && i == 0 {
            if let Some(v) = g.first_mut() {
                *v += 1e-3 * (1.0 + v.abs());
            }
        }
    }
}

/// One check at one seed.
pub fn run_check(name: &str, seed: u64, eps: f64, model: &AstnConfig, corrupt: bool) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(crate::data::derive_seed(seed, &[0x6C]));
    if let Some(p) = primitives().into_iter().find(|p| p.name == name) {
        let inputs = (p.inputs)(&mut rng);
        return finite_difference_check_with(&inputs, eps, p.build, tamper_for(corrupt));
    }
    let (_, which) = OBJECTIVES
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| AstnError::Config(format!("no check named {name:?}")))?;
    let net = Astn::<f64>::new(model.clone(), seed)?;
    // three trials of unequal length: two from one subject, one from another
    let trials = vec![
        random_trial(model, TrialId::new(0, 0), 3, &mut rng)?,
        random_trial(model, TrialId::new(1, 0), 2, &mut rng)?,
        random_trial(model, TrialId::new(0, 1), 3, &mut rng)?,
    ];
    let params: Vec<Tensor<f64>> = net.params.iter().map(|p| p.tensor.clone()).collect();
    finite_difference_check_with(
        &params,
        eps,
        |tape, vars| objective(&net, &trials, *which, tape, vars),
        tamper_for(corrupt),
    )
}

/// Runs every check over `seeds` seeds; a check passes when its worst
/// relative error stays below the tolerance.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<CheckOutcome>> {
    opts.validate()?;
    let mut out = Vec::new();
    for name in check_names() {
        let corrupt = opts.corrupt.as_deref() == Some(name);
        let mut worst = (0.0f64, 0u64);
        for seed in 0..opts.seeds {
            let r = run_check(name, seed, opts.eps, &opts.model, corrupt)?;
            if r.max_relative_error > worst.0 || seed == 0 {
                worst = (r.max_relative_error, seed);
            }
        }
        log::debug!("{name}: max relative error {:.3e}", worst.0);
        out.push(CheckOutcome {
            name: name.to_string(),
            seeds: opts.seeds,
            max_relative_error: worst.0,
            worst_seed: worst.1,
            passed: worst.0 < opts.tolerance,
        });
    }
    Ok(out)
}

/// Worst error over the smooth checks at each step size. Truncation error
/// dominates at large steps and round-off at small ones.
pub fn eps_sweep(epsilons: &[f64], seeds: u64, model: &AstnConfig) -> Result<Vec<(f64, f64)>> {
    let smooth = ["sigmoid", "tanh", "bce", "loss_jc", "composite"];
    epsilons
        .iter()
        .map(|&eps| {
            let mut worst = 0.0f64;
            for name in smooth {
                for seed in 0..seeds {
                    worst = worst.max(run_check(name, seed, eps, model, false)?.max_relative_error);
                }
            }
            Ok((eps, worst))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut n = check_names();
        let len = n.len();
        n.sort();
        n.dedup();
        assert_eq!(n.len(), len);
    }

    #[test]
    fn corrupted_check_fails_by_name() {
        let opts = SuiteOptions {
            seeds: 1,
            corrupt: Some("conv2d".into()),
            ..SuiteOptions::default()
        };
        let out = run_suite(&opts).unwrap();
        let failed: Vec<&str> = out.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        assert_eq!(failed, vec!["conv2d"]);
    }

    #[test]
    fn unknown_corruption_target_rejected() {
        let opts = SuiteOptions {
            corrupt: Some("nope".into()),
            ..SuiteOptions::default()
        };
        assert!(run_suite(&opts).is_err());
    }
}
