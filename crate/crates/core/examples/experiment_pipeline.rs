//! The same pipeline the `astnlab` binary runs: build an experiment config
//! in code, train the variant matrix over two split seeds, then evaluate
//! one checkpoint on its held-out trials.

use astnlab::experiment::{self, ExperimentConfig, SplitSettings, TrialSet};

fn main() -> astnlab::Result<()> {
    let mut cfg: ExperimentConfig = serde_json::from_str(include_str!("../../../configs/smoke.json"))?;
    cfg.train.max_iterations = 60;
    cfg.split = SplitSettings {
        seeds: vec![0, 1],
        ..cfg.split
    };
    cfg.validate()?;

    let out = std::env::temp_dir().join("astnlab-example").join("experiment");
    let matrix = experiment::train(&cfg, &out, false)?;
    print!("{}", experiment::format_summary(&matrix.summary));

    cfg.checkpoint = Some(out.join("cells/bidirectional+disc/seed0/model.astn"));
    cfg.cohort = Some(out.join("cohort.fpsq"));
    cfg.trials = TrialSet::Test;
    let report = experiment::eval(&cfg, &out.join("eval"))?;
    println!("re-evaluated checkpoint: test auc {:.3}", report.report.auc);
    println!("artifacts under {}", out.display());
    Ok(())
}
