use astnlab::data::{
    decode_cohort, encode_cohort, generate_cohort, label_windows, load_cohort, make_split, save_cohort, Cohort,
    PressureSequence, SplitMode, SplitPlan, SplitRatios, SynthConfig, TrialId,
};
use proptest::prelude::*;
use std::path::Path;

#[test]
fn every_four_frame_pattern_labels_by_any_rule() {
    for bits in 0u8..16 {
        let frames: Vec<u8> = (0..4).map(|i| (bits >> i) & 1).collect();
        let expected = u8::from(frames.iter().any(|&f| f == 1));
        assert_eq!(label_windows(&frames, 4).unwrap(), vec![expected], "pattern {bits:04b}");
    }
}

#[test]
fn event_rate_tracks_target() {
    let cfg = SynthConfig {
        n_subjects: 10,
        trials_per_subject: 5,
        width: 16,
        height: 8,
        min_seconds: 20,
        max_seconds: 40,
        ..SynthConfig::default()
    };
    let c = generate_cohort(&cfg).unwrap();
    assert_eq!(c.len(), 50);
    let rate = c.event_rate();
    assert!((0.13..=0.33).contains(&rate), "rate {rate}");
}

#[test]
fn header_drives_dimensions() {
    let frames = vec![0.25f32; 2 * 12 * 32 * 16];
    let labels = vec![0u8; 24];
    let s = PressureSequence::new(TrialId::new(0, 0), 32, 16, 12, frames, labels).unwrap();
    let bytes = encode_cohort(&Cohort::new(vec![s]).unwrap()).unwrap();
    let c = decode_cohort(&bytes, Path::new("mem")).unwrap();
    assert_eq!((c.width, c.height, c.sample_rate), (32, 16, 12));
    assert_eq!(c.sequences()[0].seconds(), 2);
}

#[test]
fn generated_cohort_file_round_trip() {
    let cfg = SynthConfig {
        n_subjects: 3,
        trials_per_subject: 2,
        min_seconds: 3,
        max_seconds: 5,
        ..SynthConfig::default()
    };
    let c = generate_cohort(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.fpsq");
    save_cohort(&c, &path).unwrap();
    let back = load_cohort(&path).unwrap();
    assert_eq!(back, c);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(load_cohort(&path).is_err());
}

#[test]
fn four_subjects_split_two_and_two() {
    let seqs = (0..4u32)
        .flat_map(|m| (0..2u32).map(move |n| (m, n)))
        .map(|(m, n)| PressureSequence::new(TrialId::new(m, n), 1, 1, 1, vec![0.0], vec![0]).unwrap())
        .collect();
    let c = Cohort::new(seqs).unwrap();
    let plan = make_split(&c, SplitMode::SubjectLevel, SplitRatios::default(), 3).unwrap();
    let mut fit = SplitPlan::subjects(&plan.train);
    fit.extend(SplitPlan::subjects(&plan.validation));
    assert_eq!(fit.len(), 2);
    assert_eq!(SplitPlan::subjects(&plan.test).len(), 2);
    assert_eq!(plan, make_split(&c, SplitMode::SubjectLevel, SplitRatios::default(), 3).unwrap());

    let one = Cohort::new(vec![PressureSequence::new(TrialId::new(0, 0), 1, 1, 1, vec![0.0], vec![0]).unwrap()]).unwrap();
    assert!(make_split(&one, SplitMode::SubjectLevel, SplitRatios::default(), 0).is_err());
}

fn cohort_from_counts(counts: &[usize]) -> Cohort {
    let seqs = counts
        .iter()
        .enumerate()
        .flat_map(|(m, &k)| (0..k).map(move |n| (m as u32, n as u32)))
        .map(|(m, n)| PressureSequence::new(TrialId::new(m, n), 1, 1, 1, vec![0.5], vec![0]).unwrap())
        .collect();
    Cohort::new(seqs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn subject_split_never_leaks(counts in prop::collection::vec(1usize..6, 3..14), seed in any::<u64>()) {
        let c = cohort_from_counts(&counts);
        let plan = make_split(&c, SplitMode::SubjectLevel, SplitRatios::default(), seed).unwrap();
        let mut fit = SplitPlan::subjects(&plan.train);
        fit.extend(SplitPlan::subjects(&plan.validation));
        prop_assert!(fit.is_disjoint(&SplitPlan::subjects(&plan.test)));
        prop_assert_eq!(plan.train.len() + plan.validation.len() + plan.test.len(), c.len());
        prop_assert!(plan.check(&c).is_ok());
    }

    #[test]
    fn trial_split_partitions(counts in prop::collection::vec(1usize..6, 1..10), seed in any::<u64>()) {
        let c = cohort_from_counts(&counts);
        prop_assume!(c.len() >= 2);
        let plan = make_split(&c, SplitMode::TrialLevel, SplitRatios::default(), seed).unwrap();
        prop_assert!(plan.check(&c).is_ok());
        prop_assert!(!plan.train.is_empty());
    }

    #[test]
    fn window_count_matches(labels in prop::collection::vec(0u8..2, 0..64), p in 1usize..9) {
        let keep = labels.len() / p * p;
        let y = label_windows(&labels[..keep], p).unwrap();
        prop_assert_eq!(y.len(), keep / p);
    }
}
