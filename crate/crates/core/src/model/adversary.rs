//! Pair discriminator and the three training objectives.

use super::config::{DiscriminatorLevels, DiscriminatorVariant};
use super::network::{Astn, TrialVars};
use super::params::Bound;
use crate::autograd::{Scalar, Tape, Var};
use crate::error::{AstnError, Result};
use serde::{Deserialize, Serialize};

fn pair_level<F: Scalar>(tape: &mut Tape<F>, a: Var, b: Var, rows: usize, variant: DiscriminatorVariant) -> Result<Var> {
    if tape.shape(a)[1] != tape.shape(b)[1] {
        return Err(AstnError::shape(
            "discriminator_features",
            format!("{:?} vs {:?}", tape.shape(a), tape.shape(b)),
        ));
    }
    let a = tape.slice_rows(a, 0, rows)?;
    let b = tape.slice_rows(b, 0, rows)?;
    let per_t = match variant {
        DiscriminatorVariant::SecondOrder => {
            let d = tape.sub(a, b)?;
            tape.square(d)
        }
        DiscriminatorVariant::FirstOrder => tape.sub(a, b)?,
        DiscriminatorVariant::AbsFirstOrder => {
            let d = tape.sub(a, b)?;
            tape.abs(d)
        }
        DiscriminatorVariant::Concatenated => tape.concat_cols(&[a, b])?,
    };
    tape.mean_rows(per_t)
}

/// Pair feature vector: per-level differences over the common prefix of
/// `T* = min(T_a, T_b)` seconds, mean-pooled over time (and over frames for
/// the spatial level), levels concatenated as spatial, intrinsic, dynamic.
pub fn discriminator_features<F: Scalar>(
    tape: &mut Tape<F>,
    a: &TrialVars,
    b: &TrialVars,
    sample_rate: usize,
    variant: DiscriminatorVariant,
    levels: DiscriminatorLevels,
) -> Result<Var> {
    let t = a.seconds.min(b.seconds);
    let mut parts = Vec::with_capacity(3);
    if levels == DiscriminatorLevels::MultiLevel {
        parts.push(pair_level(tape, a.spatial, b.spatial, t * sample_rate, variant)?);
        parts.push(pair_level(tape, a.intrinsic, b.intrinsic, t, variant)?);
    }
    parts.push(pair_level(tape, a.dynamic, b.dynamic, t, variant)?);
    tape.concat_cols(&parts)
}

impl<F: Scalar> Astn<F> {
    /// Probability, as a `[1]` tensor, that a feature vector comes from a
    /// pair coded 1 (different subjects under the default coding).
    pub fn discriminate(&self, tape: &mut Tape<F>, b: &Bound, features: Var) -> Result<Var> {
        let d = self.layout.discriminator;
        let want = self.config.discriminator_input_dim();
        if tape.shape(features) != [want] {
            return Err(AstnError::shape(
                "discriminate",
                format!("features {:?}, discriminator expects [{want}]", tape.shape(features)),
            ));
        }
        let y = tape.matmul_bt(features, b.var(d.weight))?;
        let y = tape.add_row_bias(y, b.var(d.bias))?;
        let y = tape.sigmoid(y);
        tape.reshape(y, &[1])
    }

    /// Discriminator output for a pair of forward passes.
    pub fn discriminate_pair(&self, tape: &mut Tape<F>, b: &Bound, x: &TrialVars, y: &TrialVars) -> Result<Var> {
        let f = discriminator_features(
            tape,
            x,
            y,
            self.config.sample_rate,
            self.config.discriminator_variant,
            self.config.discriminator_levels,
        )?;
        self.discriminate(tape, b, f)
    }

    /// Discriminator loss on one same-subject and one different-subject pair.
    pub fn loss_jd(&self, tape: &mut Tape<F>, d_same: Var, d_diff: Var) -> Result<Var> {
        let (same, diff) = self.config.pair_targets();
        loss_jd(tape, d_same, d_diff, same, diff)
    }

    /// The discriminator's loss on the same-subject pair, which the
    /// generator works against.
    pub fn loss_ja(&self, tape: &mut Tape<F>, d_same: Var) -> Result<Var> {
        tape.bce(d_same, &[F::from_f64(self.config.pair_targets().0)])
    }

    /// The generator's adversarial objective on the same-subject verdict,
    /// scaled by `lambda`; minimized with the discriminator frozen.
    pub fn adversarial_objective(
        &self,
        tape: &mut Tape<F>,
        d_same: Var,
        kind: AdversarialObjective,
        lambda: f64,
    ) -> Result<Var> {
        let lambda = F::from_f64(lambda);
        match kind {
            AdversarialObjective::Ascent => {
                let ja = self.loss_ja(tape, d_same)?;
                Ok(tape.scale(ja, -lambda))
            }
            AdversarialObjective::Confusion => {
                let c = tape.bce(d_same, &[F::from_f64(0.5)])?;
                Ok(tape.scale(c, lambda))
            }
        }
    }
}

/// How the generator opposes the frozen discriminator on the same-subject
/// pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialObjective {
    /// Gradient ascent on the discriminator's same-pair loss.
    Ascent,
    /// Cross-entropy of the same-pair verdict against 0.5; stationary once
    /// the discriminator is reduced to guessing.
    #[default]
    Confusion,
}

/// Mean over trials of each trial's mean per-second cross-entropy.
pub fn loss_jc<F: Scalar>(tape: &mut Tape<F>, probs: &[Var], labels: &[&[u8]]) -> Result<Var> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(AstnError::shape(
            "loss_jc",
            format!("{} prediction sets for {} label sets", probs.len(), labels.len()),
        ));
    }
    let mut total: Option<Var> = None;
    for (&p, y) in probs.iter().zip(labels) {
        let targets: Vec<F> = y.iter().map(|&v| F::from_f64(v as f64)).collect();
        let l = tape.bce(p, &targets)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, l)?,
            None => l,
        });
    }
    let total = total.expect("non-empty");
    Ok(tape.scale(total, F::from_f64(1.0 / probs.len() as f64)))
}

/// `bce(d_same, same_target) + bce(d_diff, diff_target)`.
pub fn loss_jd<F: Scalar>(tape: &mut Tape<F>, d_same: Var, d_diff: Var, same_target: f64, diff_target: f64) -> Result<Var> {
    let a = tape.bce(d_same, &[F::from_f64(same_target)])?;
    let b = tape.bce(d_diff, &[F::from_f64(diff_target)])?;
    tape.add(a, b)
}
