//! Generate a small synthetic cohort, inspect its labels, split it both
//! ways and round-trip it through the cohort file format.

use astnlab::data::{generate_cohort, label_windows, load_cohort, make_split, save_cohort, SplitMode, SplitPlan, SplitRatios, SynthConfig};

fn main() -> astnlab::Result<()> {
    let cfg = SynthConfig {
        n_subjects: 8,
        trials_per_subject: 4,
        width: 16,
        height: 8,
        sample_rate: 6,
        min_seconds: 10,
        max_seconds: 20,
        ..SynthConfig::default()
    };
    let cohort = generate_cohort(&cfg)?;
    println!(
        "{} subjects, {} trials, {} s, event rate {:.3} (target {})",
        cohort.subject_count(),
        cohort.len(),
        cohort.total_seconds(),
        cohort.event_rate(),
        cfg.fog_episode_rate
    );

    let seq = &cohort.sequences()[0];
    let row: String = seq.labels().iter().map(|&l| if l == 1 { '#' } else { '.' }).collect();
    println!("trial {} seconds: {row}", seq.id);
    // a second is positive when any of its frames is
    assert_eq!(label_windows(seq.frame_labels(), seq.sample_rate)?, seq.labels());

    for mode in [SplitMode::SubjectLevel, SplitMode::TrialLevel] {
        let plan = make_split(&cohort, mode, SplitRatios::default(), 0)?;
        let train = SplitPlan::subjects(&plan.train);
        let test = SplitPlan::subjects(&plan.test);
        println!(
            "{mode}: {} train / {} validation / {} test trials, {} subjects on both sides",
            plan.train.len(),
            plan.validation.len(),
            plan.test.len(),
            train.intersection(&test).count()
        );
    }

    let dir = std::env::temp_dir().join("astnlab-example");
    std::fs::create_dir_all(&dir).map_err(|e| astnlab::AstnError::Data(e.to_string()))?;
    let path = dir.join("cohort.fpsq");
    save_cohort(&cohort, &path)?;
    assert_eq!(load_cohort(&path)?, cohort);
    println!("wrote {}", path.display());
    Ok(())
}
