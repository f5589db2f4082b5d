//! Two-component projections of the spatial, intrinsic and dynamic
//! representations of a briefly trained network, written as CSV.

use astnlab::data::{generate_cohort, SynthConfig};
use astnlab::evaluation::{project_level, run_model, write_projection_csv, Level};
use astnlab::model::{AstnConfig, ConvSpec};
use astnlab::training::{train, TrainConfig};

fn main() -> astnlab::Result<()> {
    let cohort = generate_cohort(&SynthConfig {
        n_subjects: 4,
        trials_per_subject: 3,
        width: 16,
        height: 8,
        sample_rate: 6,
        min_seconds: 10,
        max_seconds: 15,
        ..SynthConfig::default()
    })?;
    let model = AstnConfig {
        width: 16,
        height: 8,
        sample_rate: 6,
        spatial_layers: vec![ConvSpec::new(4, 3, 2), ConvSpec::new(8, 3, 2)],
        spatial_dim: 8,
        intrinsic_layers: vec![ConvSpec::new(8, 3, 2)],
        intrinsic_dim: 8,
        hidden_dim: 8,
        classifier_hidden: vec![8],
        ..AstnConfig::default()
    };
    let ids = cohort.ids();
    let split = astnlab::data::SplitPlan {
        mode: astnlab::data::SplitMode::TrialLevel,
        train: ids.clone(),
        validation: vec![],
        test: vec![],
        seed: 0,
    };
    let out = train(&cohort, &split, model, TrainConfig { max_iterations: 100, ..TrainConfig::default() })?;

    let outputs = run_model(&out.final_net, &cohort, &ids)?;
    let dir = std::env::temp_dir().join("astnlab-example");
    std::fs::create_dir_all(&dir).map_err(|e| astnlab::AstnError::Data(e.to_string()))?;
    for level in Level::ALL {
        let p = project_level(&outputs, &cohort, level, 0.5)?;
        let path = dir.join(format!("pca_{}.csv", level.name()));
        write_projection_csv(&path, &p)?;
        println!(
            "{:<10} {} seconds, explained variance {:.3} + {:.3} -> {}",
            level.name(),
            p.projection.n,
            p.projection.explained_variance_ratio[0],
            p.projection.explained_variance_ratio[1],
            path.display()
        );
    }
    Ok(())
}
