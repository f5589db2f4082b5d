use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sequence::{Cohort, TrialId};
use crate::error::{AstnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Whole subjects go to one side of the train/test boundary.
    SubjectLevel,
    /// Trials are assigned independently of their subject.
    TrialLevel,
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitMode::SubjectLevel => "subject_level",
            SplitMode::TrialLevel => "trial_level",
        })
    }
}

/// Train/test proportions (summing to one) and the share of the training
/// side withheld for validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub test: f64,
    pub validation_fraction: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.5,
            test: 0.5,
            validation_fraction: 0.2,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        if !(self.train > 0.0 && self.test > 0.0) || (self.train + self.test - 1.0).abs() > 1e-9 {
            return Err(AstnError::Split(format!(
                "train/test ratios must be positive and sum to 1, got {}:{}",
                self.train, self.test
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(AstnError::Split(format!(
                "validation fraction {} outside [0,1)",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub train: Vec<TrialId>,
    pub validation: Vec<TrialId>,
    pub test: Vec<TrialId>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn subjects(ids: &[TrialId]) -> BTreeSet<u32> {
        ids.iter().map(|t| t.subject).collect()
    }

    /// Checks the partition and, for subject-level plans, subject
    /// disjointness between the training side and the test side.
    pub fn check(&self, cohort: &Cohort) -> Result<()> {
        let mut all: Vec<TrialId> = self
            .train
            .iter()
            .chain(&self.validation)
            .chain(&self.test)
            .copied()
            .collect();
        let n = all.len();
        all.sort();
        all.dedup();
        if all.len() != n {
            return Err(AstnError::Split("partitions overlap".into()));
        }
        let mut ids = cohort.ids();
        ids.sort();
        if all != ids {
            return Err(AstnError::Split("partitions do not cover the cohort".into()));
        }
        if self.mode == SplitMode::SubjectLevel {
            let mut fit = Self::subjects(&self.train);
            fit.extend(Self::subjects(&self.validation));
            if !fit.is_disjoint(&Self::subjects(&self.test)) {
                return Err(AstnError::Split("a subject appears on both sides".into()));
            }
        }
        Ok(())
    }
}

fn count_for(total: usize, frac: f64) -> usize {
    (total as f64 * frac).round() as usize
}

/// Withholds a share of training trials for validation, never taking a
/// subject's last training trial.
fn carve_validation(train: &mut Vec<TrialId>, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<TrialId> {
    let want = count_for(train.len(), fraction);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let mut remaining = std::collections::BTreeMap::new();
    for t in train.iter() {
        *remaining.entry(t.subject).or_insert(0usize) += 1;
    }
    let mut taken = BTreeSet::new();
    for i in order {
        if taken.len() == want {
            break;
        }
        let left = remaining.get_mut(&train[i].subject).expect("counted");
        if *left > 1 {
            *left -= 1;
            taken.insert(i);
        }
    }
    let mut val = Vec::new();
    let mut keep = Vec::new();
    for (i, t) in train.iter().enumerate() {
        if taken.contains(&i) {
            val.push(*t);
        } else {
            keep.push(*t);
        }
    }
    *train = keep;
    val
}

/// Draws a seeded train/validation/test plan.
pub fn make_split(cohort: &Cohort, mode: SplitMode, ratios: SplitRatios, seed: u64) -> Result<SplitPlan> {
    ratios.validate()?;
    if cohort.is_empty() {
        return Err(AstnError::Split("empty cohort".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = match mode {
        SplitMode::SubjectLevel => {
            let by_subject = cohort.trials_by_subject();
            if by_subject.len() < 3 {
                return Err(AstnError::Split(format!(
                    "subject-level split needs at least 3 subjects, cohort has {}",
                    by_subject.len()
                )));
            }
            let mut subjects: Vec<u32> = by_subject.keys().copied().collect();
            subjects.shuffle(&mut rng);
            let n_test = count_for(subjects.len(), ratios.test);
            if n_test == 0 || n_test >= subjects.len() {
                return Err(AstnError::Split(format!(
                    "{} subjects cannot be split {}:{}",
                    subjects.len(),
                    ratios.train,
                    ratios.test
                )));
            }
            let test: Vec<TrialId> = subjects[..n_test]
                .iter()
                .flat_map(|s| by_subject[s].iter().copied())
                .collect();
            let train: Vec<TrialId> = subjects[n_test..]
                .iter()
                .flat_map(|s| by_subject[s].iter().copied())
                .collect();
            (train, test)
        }
        SplitMode::TrialLevel => {
            let mut ids = cohort.ids();
            ids.sort();
            if ids.len() < 2 {
                return Err(AstnError::Split(format!("{} trials cannot be split", ids.len())));
            }
            ids.shuffle(&mut rng);
            let n_test = count_for(ids.len(), ratios.test);
            if n_test == 0 || n_test >= ids.len() {
                return Err(AstnError::Split(format!(
                    "{} trials cannot be split {}:{}",
                    ids.len(),
                    ratios.train,
                    ratios.test
                )));
            }
            let test = ids[..n_test].to_vec();
            let train = ids[n_test..].to_vec();
            (train, test)
        }
    };
    let mut validation = carve_validation(&mut train, ratios.validation_fraction, &mut rng);
    train.sort();
    validation.sort();
    test.sort();
    let plan = SplitPlan {
        mode,
        train,
        validation,
        test,
        seed,
    };
    plan.check(cohort)?;
    Ok(plan)
}
