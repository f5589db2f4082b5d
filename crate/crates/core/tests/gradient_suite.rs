use std::time::Instant;

use astnlab::verification::{eps_sweep, run_suite, toy_config, SuiteOptions};

#[test]
fn full_suite_passes_within_a_minute() {
    let start = Instant::now();
    let out = run_suite(&SuiteOptions::default()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    for c in &out {
        assert!(c.passed, "{c:?}");
        assert_eq!(c.seeds, 10);
    }
    assert!(out.iter().any(|c| c.name == "composite"));
    assert!(elapsed < 60.0, "{elapsed:.1}s");
}

#[test]
fn forward_only_model_passes_objective_checks() {
    let opts = SuiteOptions {
        seeds: 2,
        model: toy_config(false),
        ..SuiteOptions::default()
    };
    assert!(run_suite(&opts).unwrap().iter().all(|c| c.passed));
}

#[test]
fn step_size_trades_truncation_for_round_off() {
    let grid = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];
    let sweep = eps_sweep(&grid, 2, &toy_config(true)).unwrap();
    println!("{sweep:?}");
    let err = |i: usize| sweep[i].1;
    assert!(err(1) < err(0) && err(2) < err(1), "{sweep:?}");
    let best = (0..grid.len()).min_by(|&a, &b| err(a).total_cmp(&err(b))).unwrap();
    assert!(best > 0 && best < grid.len() - 1, "{sweep:?}");
    assert!(err(5) > err(best) * 10.0, "{sweep:?}");
}

#[test]
fn corrupted_gradient_is_named() {
    for target in ["bce", "composite"] {
        let opts = SuiteOptions {
            seeds: 1,
            corrupt: Some(target.into()),
            ..SuiteOptions::default()
        };
        let failed: Vec<String> = run_suite(&opts)
            .unwrap()
            .into_iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect();
        assert_eq!(failed, vec![target.to_string()]);
    }
}
