use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use biasbench_cli::tables::{read_csv, write_csv, MetricRow, SampleRow, TTestRow};

fn tiny_config(dir: &Path, scenario: &str) -> PathBuf {
    let cfg = serde_json::json!({
        "scenario": scenario,
        "image_size": 24,
        "splits": {"train": 10, "val": 6, "test": 10},
        "training": {"learning_rate": 0.001, "rho": 0.9, "epsilon": 1e-8, "batch_size": 5,
                     "max_epochs": 1, "patience": 1, "seed": 0},
        "metrics": {"ig_steps": 4, "aopc_steps": 5, "aopc_region": 3},
        "seeds": {"data": 3, "train": 4, "perturbation": 5}
    });
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn biasbench(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biasbench"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn run_ok(stage: &str, cfg: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![stage, "--config", cfg.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = biasbench(&args, out);
    assert!(o.status.success(), "{stage} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn full_run(cfg: &Path, out: &Path) {
    for stage in ["synth", "train", "attribute", "evaluate", "report"] {
        run_ok(stage, cfg, out, &[]);
    }
}

const OUTPUTS: [&str; 7] = [
    "samples.csv",
    "metrics.csv",
    "aopc.csv",
    "accuracy.csv",
    "evaluation.json",
    "ttest.csv",
    "report.json",
];

#[test]
fn pipeline_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "marker_bias");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    full_run(&cfg, &a);
    full_run(&cfg, &b);
    for name in OUTPUTS {
        let x = fs::read(a.join("results").join(name)).unwrap();
        assert_eq!(x, fs::read(b.join("results").join(name)).unwrap(), "{name} differs");
    }
    assert!(a.join("models/biased-0.history.json").exists());
    assert!(a.join("datasets/unbiased/manifest.json").exists());

    let metrics: Vec<MetricRow> = read_csv(&a.join("results/metrics.csv")).unwrap();
    let mut gts: Vec<&str> = metrics.iter().map(|m| m.gt_object.as_str()).collect();
    gts.sort();
    gts.dedup();
    assert_eq!(gts, ["marker", "shapeA", "shapeB"]);
    let ttests: Vec<TTestRow> = read_csv(&a.join("results/ttest.csv")).unwrap();
    for t in &ttests {
        assert_eq!(t.reject, t.p.is_some_and(|p| p <= 0.05));
    }
}

#[test]
fn background_scenario_covers_every_class() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "background_bias");
    let out = dir.path();
    for stage in ["synth", "train", "attribute", "evaluate"] {
        run_ok(stage, &cfg, out, &["--methods", "gradcam"]);
    }
    let metrics: Vec<MetricRow> = read_csv(&out.join("results/metrics.csv")).unwrap();
    let mut classes: Vec<usize> = metrics.iter().map(|m| m.class).collect();
    classes.sort();
    classes.dedup();
    assert_eq!(classes, [0, 1, 2, 3, 4]);
}

#[test]
fn method_subset_only_writes_those_maps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "marker_bias");
    let out = dir.path();
    for stage in ["synth", "train", "attribute"] {
        run_ok(stage, &cfg, out, &["--methods", "ig"]);
    }
    let net_dirs: Vec<_> = fs::read_dir(out.join("maps/biased-0")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(net_dirs, ["ig"]);
}

#[test]
fn misspelled_method_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "marker_bias");
    let o = biasbench(&["attribute", "--config", cfg.to_str().unwrap(), "--methods", "gradcma"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for name in ["gradcam", "scorecam", "ig", "lrp"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn invalid_scenario_and_unknown_keys_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"scenario": "cats_and_balls"}"#).unwrap();
    let o = biasbench(&["synth", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    fs::write(&path, r#"{"scenario": "marker_bias", "colour": true}"#).unwrap();
    let o = biasbench(&["synth", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = biasbench(&["synth"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_dataset_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "marker_bias");
    let o = biasbench(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(&dir.path().join("datasets").join("biased").display().to_string()), "{err}");
}

#[test]
fn evaluate_without_maps_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "marker_bias");
    run_ok("synth", &cfg, dir.path(), &[]);
    let o = biasbench(&["evaluate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("results").exists());
    fs::create_dir_all(dir.path().join("maps")).unwrap();
    let o = biasbench(&["evaluate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("results/samples.csv").exists());
}

fn sample(biased: bool, gt: &str, id: usize, value: f64) -> SampleRow {
    SampleRow {
        network: format!("{}-0", if biased { "biased" } else { "unbiased" }),
        scenario: "marker_bias".into(),
        biased,
        method: "lrp".into(),
        class: 0,
        gt_object: gt.into(),
        metric: "rma".into(),
        sample_id: format!("{id:06}"),
        value,
    }
}

fn metric(biased: bool, gt: &str) -> MetricRow {
    MetricRow {
        network: format!("{}-0", if biased { "biased" } else { "unbiased" }),
        scenario: "marker_bias".into(),
        biased,
        method: "lrp".into(),
        class: 0,
        gt_object: gt.into(),
        metric: "rma".into(),
        mean: None,
        std: None,
        n: 0,
    }
}

/// Writes hand-made result tables for the report stage.
fn write_results(dir: &Path, samples: &[SampleRow], metrics: &[MetricRow]) {
    let results = dir.join("results");
    fs::create_dir_all(&results).unwrap();
    write_csv(&results.join("samples.csv"), samples).unwrap();
    write_csv(&results.join("metrics.csv"), metrics).unwrap();
    write_csv::<SampleRow>(&results.join("aopc.csv"), &[]).unwrap();
    write_csv::<SampleRow>(&results.join("accuracy.csv"), &[]).unwrap();
}

#[test]
fn identical_result_sets_give_no_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "marker_bias");
    let values = [0.2, 0.5, 0.35, 0.9];
    let mut samples = Vec::new();
    for biased in [true, false] {
        for gt in ["marker", "shapeA"] {
            samples.extend(values.iter().enumerate().map(|(i, &v)| sample(biased, gt, i, v)));
        }
    }
    let metrics = [metric(true, "marker"), metric(true, "shapeA"), metric(false, "marker"), metric(false, "shapeA")];
    write_results(dir.path(), &samples, &metrics);
    run_ok("report", &cfg, dir.path(), &[]);
    let rows: Vec<TTestRow> = read_csv(&dir.path().join("results/ttest.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!((r.t, r.p, r.reject), (Some(0.0), Some(1.0), false));
    }
}

#[test]
fn missing_cell_is_reported_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "marker_bias");
    let samples = [sample(true, "marker", 0, 0.5), sample(false, "shapeA", 0, 0.5)];
    write_results(dir.path(), &samples, &[metric(true, "marker"), metric(false, "shapeA")]);
    let o = biasbench(&["report", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("lrp/rma/marker/class0") && err.contains("lrp/rma/shapeA/class0"), "{err}");
}
