use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{AstnError, Result};

/// Identity of one trial within a cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrialId {
    pub subject: u32,
    pub trial: u32,
}

impl TrialId {
    pub fn new(subject: u32, trial: u32) -> Self {
        TrialId { subject, trial }
    }
}

impl std::fmt::Display for TrialId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "s{}t{}", self.subject, self.trial)
    }
}

/// One trial: `seconds · sample_rate` pressure frames of `width × height`
/// sensors, values normalized to `[0, 1]`, with per-frame and per-second
/// FoG labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureSequence {
    pub id: TrialId,
    pub width: usize,
    pub height: usize,
    pub sample_rate: usize,
    frames: Vec<f32>,
    frame_labels: Vec<u8>,
    labels: Vec<u8>,
}

impl PressureSequence {
    /// Builds a sequence from whole seconds of frames. `frames` holds
    /// `frame_labels.len() · width · height` values in `(frame, w, h)` order.
    pub fn new(
        id: TrialId,
        width: usize,
        height: usize,
        sample_rate: usize,
        frames: Vec<f32>,
        frame_labels: Vec<u8>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || sample_rate == 0 {
            return Err(AstnError::Data(format!("{id}: zero dimension")));
        }
        let plane = width * height;
        if frames.len() != frame_labels.len() * plane {
            return Err(AstnError::Data(format!(
                "{id}: {} values for {} frames of {width}×{height}",
                frames.len(),
                frame_labels.len()
            )));
        }
        if frame_labels.is_empty() {
            return Err(AstnError::Data(format!("{id}: no frames")));
        }
        if let Some(v) = frames.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(AstnError::Data(format!("{id}: pressure {v} outside [0,1]")));
        }
        let labels = super::label_windows(&frame_labels, sample_rate)?;
        Ok(PressureSequence {
            id,
            width,
            height,
            sample_rate,
            frames,
            frame_labels,
            labels,
        })
    }

    /// Like [`PressureSequence::new`] but drops a trailing partial second.
    pub fn truncated(
        id: TrialId,
        width: usize,
        height: usize,
        sample_rate: usize,
        mut frames: Vec<f32>,
        mut frame_labels: Vec<u8>,
    ) -> Result<Self> {
        if sample_rate == 0 {
            return Err(AstnError::Data(format!("{id}: zero sample rate")));
        }
        let keep = frame_labels.len() / sample_rate * sample_rate;
        frame_labels.truncate(keep);
        frames.truncate(keep * width * height);
        Self::new(id, width, height, sample_rate, frames, frame_labels)
    }

    pub fn seconds(&self) -> usize {
        self.labels.len()
    }

    pub fn frame_count(&self) -> usize {
        self.frame_labels.len()
    }

    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn frame_labels(&self) -> &[u8] {
        &self.frame_labels
    }

    /// Per-second labels `y_t`.
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn frame(&self, k: usize) -> &[f32] {
        let plane = self.width * self.height;
        &self.frames[k * plane..(k + 1) * plane]
    }

    pub fn positive_seconds(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }
}

/// All trials of a study, sharing one sensor geometry and sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub width: usize,
    pub height: usize,
    pub sample_rate: usize,
    sequences: Vec<PressureSequence>,
}

impl Cohort {
    pub fn new(sequences: Vec<PressureSequence>) -> Result<Self> {
        let first = sequences
            .first()
            .ok_or_else(|| AstnError::Data("cohort has no trials".into()))?;
        let (w, h, p) = (first.width, first.height, first.sample_rate);
        let mut seen = BTreeSet::new();
        for s in &sequences {
            if (s.width, s.height, s.sample_rate) != (w, h, p) {
                return Err(AstnError::Data(format!(
                    "{}: geometry {}×{}@{} differs from cohort {w}×{h}@{p}",
                    s.id, s.width, s.height, s.sample_rate
                )));
            }
            if !seen.insert(s.id) {
                return Err(AstnError::Data(format!("duplicate trial {}", s.id)));
            }
        }
        Ok(Cohort {
            width: w,
            height: h,
            sample_rate: p,
            sequences,
        })
    }

    pub fn sequences(&self) -> &[PressureSequence] {
        &self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn get(&self, id: TrialId) -> Option<&PressureSequence> {
        self.sequences.iter().find(|s| s.id == id)
    }

    pub fn ids(&self) -> Vec<TrialId> {
        self.sequences.iter().map(|s| s.id).collect()
    }

    /// Trial ids grouped by subject, both in ascending order.
    pub fn trials_by_subject(&self) -> BTreeMap<u32, Vec<TrialId>> {
        let mut map: BTreeMap<u32, Vec<TrialId>> = BTreeMap::new();
        for s in &self.sequences {
            map.entry(s.id.subject).or_default().push(s.id);
        }
        for v in map.values_mut() {
            v.sort();
        }
        map
    }

    pub fn subject_count(&self) -> usize {
        self.trials_by_subject().len()
    }

    /// Fraction of positive seconds over all trials.
    pub fn event_rate(&self) -> f64 {
        let (pos, total) = self
            .sequences
            .iter()
            .fold((0usize, 0usize), |(p, t), s| (p + s.positive_seconds(), t + s.seconds()));
        pos as f64 / total.max(1) as f64
    }

    pub fn total_seconds(&self) -> usize {
        self.sequences.iter().map(|s| s.seconds()).sum()
    }
}

/// Maps raw discrete force levels `0..levels` to `[0, 1]`.
pub fn normalize_levels(raw: &[f32], levels: u32) -> Result<Vec<f32>> {
    if levels < 2 {
        return Err(AstnError::Data(format!("need at least 2 pressure levels, got {levels}")));
    }
    let top = (levels - 1) as f32;
    raw.iter()
        .map(|&v| {
            if !(0.0..=top).contains(&v) {
                Err(AstnError::Data(format!("raw level {v} outside 0..={top}")))
            } else {
                Ok(v / top)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(subject: u32, trial: u32, secs: usize) -> PressureSequence {
        PressureSequence::new(
            TrialId::new(subject, trial),
            2,
            2,
            4,
            vec![0.5; secs * 4 * 4],
            vec![0; secs * 4],
        )
        .unwrap()
    }

    #[test]
    fn partial_second_is_truncated() {
        let s = PressureSequence::truncated(TrialId::new(0, 0), 1, 1, 4, vec![0.0; 10], vec![0; 10]).unwrap();
        assert_eq!(s.frame_count(), 8);
        assert_eq!(s.seconds(), 2);
    }

    #[test]
    fn out_of_range_pressure_rejected() {
        let r = PressureSequence::new(TrialId::new(0, 0), 1, 1, 1, vec![1.5], vec![0]);
        assert!(r.is_err());
    }

    #[test]
    fn duplicate_trial_rejected() {
        assert!(Cohort::new(vec![seq(0, 0, 1), seq(0, 0, 2)]).is_err());
        assert!(Cohort::new(vec![]).is_err());
        let c = Cohort::new(vec![seq(0, 0, 1), seq(1, 0, 2), seq(0, 1, 1)]).unwrap();
        assert_eq!(c.subject_count(), 2);
        assert_eq!(c.trials_by_subject()[&0].len(), 2);
    }

    #[test]
    fn levels_normalize_to_unit_interval() {
        assert_eq!(normalize_levels(&[0.0, 9.0, 4.5], 10).unwrap(), vec![0.0, 1.0, 0.5]);
        assert!(normalize_levels(&[10.0], 10).is_err());
    }
}
