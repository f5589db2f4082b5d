use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::data::TrialId;
use crate::error::{AstnError, Result};

/// Four trials for one iteration: `different` holds two trials of distinct
/// subjects, `same` two distinct trials of one subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Batch {
    pub different: [TrialId; 2],
    pub same: [TrialId; 2],
}

impl Batch {
    pub fn all(&self) -> [TrialId; 4] {
        [self.different[0], self.different[1], self.same[0], self.same[1]]
    }
}

pub fn group_by_subject(ids: &[TrialId]) -> BTreeMap<u32, Vec<TrialId>> {
    let mut map: BTreeMap<u32, Vec<TrialId>> = BTreeMap::new();
    for id in ids {
        map.entry(id.subject).or_default().push(*id);
    }
    for v in map.values_mut() {
        v.sort();
        v.dedup();
    }
    map
}

/// Checks that batches can be drawn from `groups`.
pub fn check_batchable(groups: &BTreeMap<u32, Vec<TrialId>>) -> Result<()> {
    if groups.len() < 2 {
        return Err(AstnError::Sampling(format!(
            "training trials span {} subject(s); a different-subject pair needs 2",
            groups.len()
        )));
    }
    if groups.values().all(|v| v.len() < 2) {
        return Err(AstnError::Sampling(
            "no training subject has two trials; a same-subject pair needs one".into(),
        ));
    }
    Ok(())
}

/// Uniform draw: two distinct subjects with one trial each, then a subject
/// among those with at least two trials and two of its distinct trials.
pub fn sample_batch<R: Rng>(groups: &BTreeMap<u32, Vec<TrialId>>, rng: &mut R) -> Result<Batch> {
    check_batchable(groups)?;
    let subjects: Vec<u32> = groups.keys().copied().collect();
    let two: Vec<&u32> = subjects.choose_multiple(rng, 2).collect();
    let a = *groups[two[0]].choose(rng).expect("non-empty");
    let b = *groups[two[1]].choose(rng).expect("non-empty");
    let repeat: Vec<u32> = groups.iter().filter(|(_, v)| v.len() >= 2).map(|(&m, _)| m).collect();
    let m3 = *repeat.choose(rng).expect("checked");
    let pick: Vec<&TrialId> = groups[&m3].choose_multiple(rng, 2).collect();
    Ok(Batch {
        different: [a, b],
        same: [*pick[0], *pick[1]],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ids(spec: &[(u32, u32)]) -> Vec<TrialId> {
        spec.iter()
            .flat_map(|&(m, k)| (0..k).map(move |n| TrialId::new(m, n)))
            .collect()
    }

    #[test]
    fn only_repeat_subject_supplies_same_pair() {
        let g = group_by_subject(&ids(&[(0, 2), (1, 1)]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let b = sample_batch(&g, &mut rng).unwrap();
            assert_eq!(b.same[0].subject, 0);
            assert_ne!(b.same[0], b.same[1]);
            assert_ne!(b.different[0].subject, b.different[1].subject);
        }
    }

    #[test]
    fn one_subject_rejected() {
        let g = group_by_subject(&ids(&[(0, 4)]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_batch(&g, &mut rng).unwrap_err().to_string();
        assert!(err.contains("subject"), "{err}");
        let g = group_by_subject(&ids(&[(0, 1), (1, 1)]));
        assert!(sample_batch(&g, &mut rng).is_err());
    }
}
