use astnlab::autograd::{AdamConfig, AdamState, Tape, Tensor};
use astnlab::data::TrialId;
use astnlab::evaluation::{
    discriminator_auc, pca_project, roc_auc, sample_pairs, youden_threshold, MetricReport, TrialPair,
};
use astnlab::model::{Astn, AstnConfig, ConvSpec, DiscriminatorLevels, Partition, TrialOutput, TrialVars};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// P(s+ > s-) + 0.5 P(s+ = s-) over all positive/negative pairs.
fn concordance(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.random_range(2..=200);
    let levels = if rng.random_bool(0.5) { rng.random_range(1..6) } else { 0 };
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.4) as u8).collect();
    labels[0] = 1;
    labels[1] = 0;
    let scores = (0..n)
        .map(|i| {
            let s: f64 = rng.random::<f64>() + 0.3 * labels[i] as f64;
            if levels > 0 {
                (s * levels as f64).floor()
            } else {
                s
            }
        })
        .collect();
    (scores, labels)
}

#[test]
fn trapezoid_matches_concordance_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..100 {
        let (s, y) = random_instance(&mut rng);
        let auc = roc_auc(&s, &y).unwrap().auc;
        assert!((auc - concordance(&s, &y)).abs() < 1e-9);
    }
}

#[test]
fn shuffled_labels_score_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 20_000;
    let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let mut labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    labels.shuffle(&mut rng);
    let auc = roc_auc(&scores, &labels).unwrap().auc;
    assert!((auc - 0.5).abs() < 0.05, "{auc}");
}

#[test]
fn table_operating_point_metrics() {
    let r = MetricReport::from_rates(0.847, 0.834, 0.729, 0.75, 0.5);
    assert!((r.youden_j - 0.563).abs() < 1e-9);
    assert!((r.lr_positive.unwrap() - 0.834 / 0.271).abs() < 1e-12);
    assert!((r.lr_positive.unwrap() - 3.08).abs() < 0.005);
    assert!((r.lr_negative.unwrap() - 0.23).abs() < 0.005);
    r.check_identities(1e-12).unwrap();
}

#[test]
fn youden_reports_are_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let (s, y) = random_instance(&mut rng);
        let roc = roc_auc(&s, &y).unwrap();
        let r = youden_threshold(&roc);
        r.check_identities(1e-12).unwrap();
        let best = roc.points.iter().map(|p| p.tpr - p.fpr).fold(f64::MIN, f64::max);
        assert!((r.youden_j - best).abs() < 1e-12, "{} vs {best}", r.youden_j);
    }
}

#[test]
fn isotropic_cloud_spreads_variance_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let p = pca_project(&data, 1000, 5, 2).unwrap();
    for r in p.explained_variance_ratio {
        assert!((r - 0.2).abs() < 0.05, "{r}");
    }
}

#[test]
fn planar_data_projection_preserves_distances() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data: Vec<f64> = (0..60).map(|_| rng.random_range(-3.0..3.0)).collect();
    let p = pca_project(&data, 30, 2, 2).unwrap();
    for i in 0..30 {
        for j in 0..30 {
            let d0 = ((data[2 * i] - data[2 * j]).powi(2) + (data[2 * i + 1] - data[2 * j + 1]).powi(2)).sqrt();
            let (a, b) = (p.row(i), p.row(j));
            let d1 = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            assert!((d0 - d1).abs() < 1e-9);
        }
    }
}

fn probe_config(subjects: usize) -> AstnConfig {
    AstnConfig {
        width: 4,
        height: 4,
        sample_rate: 2,
        spatial_layers: vec![ConvSpec::new(1, 1, 0)],
        spatial_dim: 2,
        intrinsic_layers: vec![],
        intrinsic_dim: 2,
        hidden_dim: subjects,
        bidirectional: false,
        classifier_hidden: vec![],
        discriminator_levels: DiscriminatorLevels::DynamicOnly,
        ..AstnConfig::default()
    }
}

/// Outputs whose dynamic level is a noisy one-hot subject code.
fn probe_outputs(subjects: u32, trials: u32, rng: &mut ChaCha8Rng, with_id: bool) -> Vec<(TrialId, TrialOutput)> {
    let k = subjects as usize;
    let mut out = Vec::new();
    for m in 0..subjects {
        for n in 0..trials {
            let t = 3;
            let dynamic: Vec<f64> = (0..t * k)
                .map(|i| {
                    let hot = if with_id && i % k == m as usize { 1.0 } else { 0.0 };
                    hot + 0.1 * rng.random::<f64>()
                })
                .collect();
            out.push((
                TrialId::new(m, n),
                TrialOutput {
                    seconds: t,
                    spatial: vec![0.0; t * 2 * 2],
                    intrinsic: vec![0.0; t * 2],
                    dynamic,
                    prob: vec![0.5; t],
                },
            ));
        }
    }
    out
}

fn fit_discriminator(net: &mut Astn<f64>, outputs: &[(TrialId, TrialOutput)], pairs: &[TrialPair]) {
    let mut opt = AdamState::for_tensors(
        AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        },
        net.params.tensors(Partition::Discriminator),
    );
    let k = net.config.hidden_dim;
    let find = |id: TrialId| &outputs.iter().find(|(t, _)| *t == id).unwrap().1;
    for _ in 0..200 {
        let mut tape = Tape::new();
        let b = net.params.bind(&mut tape, &[Partition::Discriminator]);
        let mut preds = Vec::new();
        let mut targets = Vec::new();
        for p in pairs.iter().take(40) {
            let vars = |tape: &mut Tape<f64>, o: &TrialOutput| {
                let c = |tape: &mut Tape<f64>, v: &[f64], w: usize| tape.constant(Tensor::new(&[v.len() / w, w], v.to_vec()).unwrap());
                TrialVars {
                    seconds: o.seconds,
                    spatial: c(tape, &o.spatial, 2),
                    intrinsic: c(tape, &o.intrinsic, 2),
                    dynamic: c(tape, &o.dynamic, k),
                    prob: c(tape, &o.prob, 1),
                }
            };
            let (x, y) = (vars(&mut tape, find(p.a)), vars(&mut tape, find(p.b)));
            preds.push(net.discriminate_pair(&mut tape, &b, &x, &y).unwrap());
            targets.push(p.different as u8 as f64);
        }
        let stacked = tape.concat_cols(&preds).unwrap();
        let loss = tape.bce(stacked, &targets).unwrap();
        tape.backward(loss).unwrap();
        net.params.pull_grads(&tape, &b, Partition::Discriminator).unwrap();
        opt.update(&mut net.params.tensors_mut(Partition::Discriminator)).unwrap();
    }
}

#[test]
fn discriminator_finds_explicit_subject_code() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let outputs = probe_outputs(6, 4, &mut rng, true);
    let ids: Vec<TrialId> = outputs.iter().map(|(id, _)| *id).collect();
    let pairs = sample_pairs(&ids, 200, &mut rng).unwrap();
    let mut net = Astn::<f64>::new(probe_config(6), 0).unwrap();
    fit_discriminator(&mut net, &outputs, &pairs);
    let auc = discriminator_auc(&net, &outputs, &pairs).unwrap();
    assert!(auc > 0.9, "{auc}");

    let swapped: Vec<TrialPair> = pairs
        .iter()
        .map(|p| TrialPair {
            a: p.b,
            b: p.a,
            different: p.different,
        })
        .collect();
    assert_eq!(discriminator_auc(&net, &outputs, &swapped).unwrap(), auc);
}

#[test]
fn untrained_discriminator_is_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let outputs = probe_outputs(6, 4, &mut rng, false);
    let ids: Vec<TrialId> = outputs.iter().map(|(id, _)| *id).collect();
    let pairs = sample_pairs(&ids, 200, &mut rng).unwrap();
    let net = Astn::<f64>::new(probe_config(6), 3).unwrap();
    let auc = discriminator_auc(&net, &outputs, &pairs).unwrap();
    assert!((auc - 0.5).abs() < 0.1, "{auc}");
}

#[test]
fn pair_sampling_is_balanced() {
    let ids: Vec<TrialId> = (0..3).flat_map(|m| (0..2).map(move |n| TrialId::new(m, n))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pairs = sample_pairs(&ids, 200, &mut rng).unwrap();
    assert_eq!(pairs.iter().filter(|p| p.different).count(), 100);
    for p in &pairs {
        assert_eq!(p.different, p.a.subject != p.b.subject);
        assert_ne!(p.a, p.b);
    }
    assert!(sample_pairs(&[TrialId::new(0, 0), TrialId::new(1, 0)], 10, &mut rng).is_err());
}

proptest! {
    #[test]
    fn auc_invariant_under_monotone_maps(seed in any::<u64>(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, y) = random_instance(&mut rng);
        let mapped: Vec<f64> = s.iter().map(|v| (a * v + b).exp()).collect();
        let base = roc_auc(&s, &y).unwrap();
        prop_assert!((base.auc - roc_auc(&mapped, &y).unwrap().auc).abs() < 1e-12);
        let pts = &base.points;
        prop_assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
        prop_assert_eq!((pts[pts.len() - 1].fpr, pts[pts.len() - 1].tpr), (1.0, 1.0));
        for w in pts.windows(2) {
            prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
    }
}
