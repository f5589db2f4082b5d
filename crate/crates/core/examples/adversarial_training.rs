//! Train the network with and without the subject discriminator on a
//! subject-level split and compare held-out subjects.

use astnlab::data::{generate_cohort, make_split, SplitMode, SplitRatios, SynthConfig};
use astnlab::evaluation::{evaluate_model, Aggregation};
use astnlab::model::{AstnConfig, ConvSpec};
use astnlab::training::{train, TrainConfig};

fn main() -> astnlab::Result<()> {
    let cohort = generate_cohort(&SynthConfig {
        n_subjects: 8,
        trials_per_subject: 4,
        width: 16,
        height: 8,
        sample_rate: 6,
        min_seconds: 10,
        max_seconds: 20,
        ..SynthConfig::default()
    })?;
    let model = AstnConfig {
        width: 16,
        height: 8,
        sample_rate: 6,
        spatial_layers: vec![ConvSpec::new(4, 3, 2), ConvSpec::new(8, 3, 2)],
        spatial_dim: 16,
        intrinsic_layers: vec![ConvSpec::new(16, 3, 2)],
        intrinsic_dim: 16,
        hidden_dim: 16,
        classifier_hidden: vec![16],
        ..AstnConfig::default()
    };
    let split = make_split(&cohort, SplitMode::SubjectLevel, SplitRatios::default(), 0)?;

    for use_discriminator in [false, true] {
        let out = train(
            &cohort,
            &split,
            model.clone(),
            TrainConfig {
                max_iterations: 200,
                use_discriminator,
                ..TrainConfig::default()
            },
        )?;
        for t in out.trace.iter().filter(|t| t.val_auc.is_some()).step_by(3) {
            println!(
                "  it {:>4}  J_C {:.3}  J_D {}  val auc {:.3}  disc auc {}",
                t.iteration,
                t.j_c,
                t.j_d.map_or("-".into(), |v| format!("{v:.3}")),
                t.val_auc.unwrap(),
                t.disc_auc.map_or("-".into(), |v| format!("{v:.3}")),
            );
        }
        let eval = evaluate_model(&out.best, &cohort, &split.test, Aggregation::Micro)?;
        println!(
            "discriminator {use_discriminator}: best iteration {:?}, test auc {:.3}, J {:.3}",
            out.best_iteration, eval.report.auc, eval.report.youden_j
        );
    }
    Ok(())
}
