use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use astnlab::data::make_split;
use astnlab::evaluation::MetricReport;
use astnlab::experiment::{default_variants, obtain_cohort, ExperimentConfig, MatrixOutcome, Manifest};
use astnlab::training::Trainer;

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json")
}

fn astnlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_astnlab"))
        .args(args)
        .env("ASTNLAB_THREADS", "1")
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn astnlab")
}

fn run_ok(args: &[&str]) -> String {
    let out = astnlab(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir`, relative path and bytes, sorted.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut v = Vec::new();
    walk(dir, dir, &mut v);
    v.sort();
    v
}

fn assert_same_tree(a: &Path, b: &Path) {
    let (x, y) = (snapshot(a), snapshot(b));
    assert_eq!(
        x.iter().map(|f| &f.0).collect::<Vec<_>>(),
        y.iter().map(|f| &f.0).collect::<Vec<_>>()
    );
    for (fa, fb) in x.iter().zip(&y) {
        assert!(fa.1 == fb.1, "{} differs", fa.0.display());
    }
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn gen_data_is_repeatable_and_reports_event_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = config_path();
    let stdout = run_ok(&["gen-data", s(&cfg), "--out-dir", s(&a)]);
    run_ok(&["gen-data", s(&cfg), "--out-dir", s(&b)]);
    assert!(stdout.contains("event rate"), "{stdout}");
    assert_same_tree(&a, &b);
    let m = manifest(&a);
    assert_eq!(m.command, "gen-data");
    assert!(m.artifacts.iter().any(|x| x.path == "cohort.fpsq"));
    let other = tmp.path().join("c");
    run_ok(&["gen-data", s(&cfg), "--set", "synth.seed=5", "--out-dir", s(&other)]);
    assert_ne!(fs::read(a.join("cohort.fpsq")).unwrap(), fs::read(other.join("cohort.fpsq")).unwrap());
}

#[test]
fn train_covers_every_cell_and_repeats_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = config_path();
    let table = run_ok(&["train", s(&cfg), "--out-dir", s(&a)]);
    run_ok(&["train", s(&cfg), "--out-dir", s(&b)]);
    assert_same_tree(&a, &b);

    let outcome: MatrixOutcome = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(outcome.cells.len(), 4 * 2);
    assert_eq!(outcome.summary.len(), 4);
    for (row, v) in outcome.summary.iter().zip(default_variants()) {
        assert_eq!(row.variant, v.name);
        assert_eq!(row.cells, 2);
        assert!(table.contains(&v.name));
    }
    let m = manifest(&a);
    for art in &m.artifacts {
        assert!(a.join(&art.path).is_file(), "{} listed but missing", art.path);
    }
    assert!(a.join("cells/forward+disc/seed1/trace.csv").is_file());
}

#[test]
fn lambda_sweep_has_one_row_per_scale() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    run_ok(&[
        "sweep-lambda",
        s(&config_path()),
        "--set",
        "lambdas=[0, 0.5, 2]",
        "--set",
        "split.seeds=[3]",
        "--out-dir",
        s(&out),
    ]);
    let outcome: MatrixOutcome = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    let scales: Vec<Option<f64>> = outcome.summary.iter().map(|r| r.adversarial_scale).collect();
    assert_eq!(scales, vec![Some(0.0), Some(0.5), Some(2.0)]);
}

#[test]
fn interrupted_train_resumes_to_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let (full, resumed) = (tmp.path().join("full"), tmp.path().join("resumed"));
    let cfg_path = config_path();
    let overrides = ["split.seeds=[0]".to_string()];
    let sets = ["--set", overrides[0].as_str()];
    run_ok(&[&["train", s(&cfg_path), "--out-dir", s(&full)], &sets[..]].concat());

    // Leave a mid-run snapshot for one cell and nothing else, as if the
    // process had been killed after its first snapshot.
    let cfg = ExperimentConfig::load(&cfg_path, &overrides).unwrap();
    let cohort = obtain_cohort(&cfg).unwrap();
    let variant = &cfg.variants[1];
    let split = make_split(&cohort, cfg.split.mode, cfg.split.ratios, 0).unwrap();
    let mut trainer = Trainer::new(&cohort, &split, variant.model(&cfg.model), variant.train(&cfg.train, 0)).unwrap();
    assert!(!trainer.advance(Some(cfg.snapshot_every)).unwrap());
    let cell = resumed.join("cells").join(&variant.name).join("seed0");
    fs::create_dir_all(&cell).unwrap();
    trainer.save_state(&cell.join("state.astn")).unwrap();

    run_ok(&[&["train", s(&cfg_path), "--resume", "--out-dir", s(&resumed)], &sets[..]].concat());
    assert_same_tree(&full, &resumed);

    // A second resume finds every cell done and rewrites the same summary.
    run_ok(&[&["train", s(&cfg_path), "--resume", "--out-dir", s(&resumed)], &sets[..]].concat());
    assert_same_tree(&full, &resumed);
}

#[test]
fn eval_is_repeatable_labeled_and_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let train_dir = tmp.path().join("train");
    let cfg = config_path();
    run_ok(&["train", s(&cfg), "--set", "split.seeds=[0]", "--out-dir", s(&train_dir)]);
    let ckpt = format!("checkpoint={}", s(&train_dir.join("cells/bidirectional/seed0/model.astn")));
    let cohort = format!("cohort={}", s(&train_dir.join("cohort.fpsq")));
    let eval = |trials: &str, dir: &Path| {
        let t = format!("trials=\"{trials}\"");
        run_ok(&["eval", s(&cfg), "--set", &ckpt, "--set", &cohort, "--set", &t, "--out-dir", s(dir)])
    };
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    eval("test", &a);
    eval("test", &b);
    eval("train", &c);
    assert_same_tree(&a, &b);
    for (dir, label) in [(&a, "test"), (&c, "train")] {
        let raw: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.join(format!("{label}_report.json"))).unwrap()).unwrap();
        assert_eq!(raw["trials"], label);
        let report: MetricReport = serde_json::from_value(raw["report"].clone()).unwrap();
        report.check_identities(1e-9).unwrap();
        for level in ["spatial", "intrinsic", "dynamic"] {
            assert!(dir.join(format!("{label}_pca_{level}.csv")).is_file());
        }
    }
    let cell: serde_json::Value =
        serde_json::from_slice(&fs::read(train_dir.join("cells/bidirectional/seed0/report.json")).unwrap()).unwrap();
    let own: serde_json::Value = serde_json::from_slice(&fs::read(a.join("test_report.json")).unwrap()).unwrap();
    assert_eq!(cell["test"], own["report"]);

    let p = tmp.path().join("p");
    run_ok(&["project", s(&cfg), "--set", &ckpt, "--set", &cohort, "--out-dir", s(&p)]);
    assert!(p.join("test_pca_dynamic.csv").is_file());
}

#[test]
fn mismatched_checkpoint_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let train_dir = tmp.path().join("train");
    let cfg = config_path();
    run_ok(&["train", s(&cfg), "--set", "split.seeds=[0]", "--set", "train.max_iterations=2", "--out-dir", s(&train_dir)]);
    let ckpt = format!("checkpoint={}", s(&train_dir.join("cells/forward/seed0/model.astn")));
    let out_dir = tmp.path().join("eval");
    let out = astnlab(&[
        "eval",
        s(&cfg),
        "--set",
        &ckpt,
        "--set",
        "synth.height=7",
        "--set",
        "model.height=7",
        "--out-dir",
        s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("8×6"));
    assert!(!out_dir.exists());
}

#[test]
fn invalid_configs_exit_one_without_side_effects() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("never");
    let cfg = config_path();
    for extra in [
        vec!["--set", "train.iterations=3"],
        vec!["--set", "split.seeds=[]"],
        vec!["--set", "model.hidden_dim=0"],
        vec!["--set", "cohort=missing.fpsq"],
        vec!["--set", "lambdas=[-1]"],
    ] {
        let args = [&["train", s(&cfg), "--out-dir", s(&out_dir)], &extra[..]].concat();
        let out = astnlab(&args);
        assert_eq!(out.status.code(), Some(1), "{extra:?}");
        assert!(!out_dir.exists(), "{extra:?} wrote output");
    }
    let out = Command::new(env!("CARGO_BIN_EXE_astnlab"))
        .args(["gen-data", s(&cfg), "--out-dir", s(&out_dir)])
        .env("ASTNLAB_THREADS", "none")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(astnlab(&["train"]).status.code(), Some(1));
    assert_eq!(astnlab(&["train", "/nonexistent.json"]).status.code(), Some(1));
    assert!(!out_dir.exists());
}

#[test]
fn grad_check_exit_code_tracks_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_path();
    let ok = tmp.path().join("ok");
    let stdout = run_ok(&["grad-check", s(&cfg), "--set", "grad_check.seeds=2", "--out-dir", s(&ok)]);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
    assert!(ok.join("grad_check.json").is_file());

    let bad = tmp.path().join("bad");
    let out = astnlab(&[
        "grad-check",
        s(&cfg),
        "--set",
        "grad_check.seeds=2",
        "--set",
        "grad_check.corrupt=conv2d",
        "--out-dir",
        s(&bad),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let failed: Vec<&str> = stdout.lines().filter(|l| l.starts_with("FAIL")).collect();
    assert_eq!(failed.len(), 1, "{stdout}");
    assert!(failed[0].contains("conv2d"));
}
