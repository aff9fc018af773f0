use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ppgbench(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ppgbench"));
    c.args(args).env_remove("PPGBENCH_SEED");
    if let Some(s) = env_seed {
        c.env("PPGBENCH_SEED", s);
    }
    c.output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = ppgbench(args, None);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn small_synth(dir: &Path, name: &str, extra: &[&str]) {
    let mut args = vec![
        "synth",
        "--out",
        p(dir),
        "--name",
        name,
        "--subjects",
        "24",
        "--segments",
        "6",
        "--length",
        "160",
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn synth_then_split_writes_bundle_and_split_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    let config = dir.path().join("c.json");
    fs::write(
        &config,
        r#"{"name": "toy", "n_subjects": 20, "segments_per_subject": 5, "segment_length": 200, "seed": 3}"#,
    )
    .unwrap();
    ok(&["synth", "--config", p(&config), "--out", p(&d)]);
    for f in ["manifest.json", "records.csv", "waveforms.f32le", "synth.manifest.json"] {
        assert!(d.join(f).is_file(), "missing {f}");
    }
    assert_eq!(json(&d.join("manifest.json"))["n_records"], 100);
    assert_eq!(fs::metadata(d.join("waveforms.f32le")).unwrap().len(), 100 * 200 * 4);

    ok(&["split", "--out", p(&d), "--scenario", "calibfree"]);
    let csv = fs::read_to_string(d.join("split.csv")).unwrap();
    assert!(csv.starts_with("segment_id,role\n"));
    assert_eq!(csv.lines().count(), 101);
    assert_eq!(json(&d.join("split.json"))["spec"]["scenario"], "calibfree");
    let first = fs::read(d.join("split.csv")).unwrap();
    ok(&["split", "--out", p(&d), "--scenario", "calibfree"]);
    assert_eq!(first, fs::read(d.join("split.csv")).unwrap(), "split is not idempotent");
}

#[test]
fn weights_on_identical_histograms_are_ones() {
    let dir = tempfile::tempdir().unwrap();
    let h = dir.path().join("h.json");
    fs::write(
        &h,
        r#"{"low": 40, "high": 60, "bin_width": 5, "values": [0.1, 0.4, 0.0, 0.5]}"#,
    )
    .unwrap();
    let out = dir.path().join("w");
    ok(&[
        "weights",
        "--train-hist",
        p(&h),
        "--test-hist",
        p(&h),
        "--tau",
        "1",
        "--out",
        p(&out),
    ]);
    let w = json(&out.join("weights.json"));
    assert_eq!(w["values"], serde_json::json!([1.0, 1.0, 1.0, 1.0]));
    assert_eq!(w["tau"], 1.0);
    assert!(out.join("weights.manifest.json").is_file());

    let e = ppgbench(
        &["emd", "--train-hist", p(&h), "--test-hist", p(&h), "--out", p(&out)],
        None,
    );
    assert_eq!(e.status.code(), Some(0));
    assert_eq!(json(&out.join("emd.json"))["emd"], 0.0);
}

#[test]
fn weights_and_emd_from_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    small_synth(&a, "a", &["--seed", "1"]);
    small_synth(&b, "b", &["--seed", "2", "--sbp-mean", "140"]);
    let out = dir.path().join("w");
    ok(&[
        "weights",
        "--train-bundle",
        p(&a),
        "--test-bundle",
        p(&b),
        "--out",
        p(&out),
    ]);
    let w = json(&out.join("weights.json"));
    assert!(w["sbp"]["values"]
        .as_array()
        .unwrap()
        .iter()
        .all(|v| v.as_f64().unwrap() >= 1.0));
    assert!(out.join("histograms.json").is_file());
    ok(&["emd", "--train-bundle", p(&a), "--test-bundle", p(&b), "--out", p(&out)]);
    assert!(json(&out.join("emd.json"))["sbp"].as_f64().unwrap() > 10.0);
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    small_synth(&d, "d", &["--seed", "4"]);
    ok(&["split", "--out", p(&d), "--scenario", "calibfree", "--seed", "4"]);
    let cfg = dir.path().join("train.json");
    fs::write(
        &cfg,
        r#"{"model": {"architecture": "lenet1d", "width_multiplier": 0.25},
            "train": {"effective_batch_size": 32, "micro_batch_size": 16, "epochs": 2}}"#,
    )
    .unwrap();
    let run = dir.path().join("run");
    let split = d.join("split.csv");
    ok(&[
        "train",
        "--config",
        p(&cfg),
        "--bundle",
        p(&d),
        "--split",
        p(&split),
        "--out",
        p(&run),
        "--seed",
        "9",
    ]);
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_mae_sbp,val_mae_dbp,is_best\n"));
    assert_eq!(history.lines().count(), 3);
    assert!(run.join("model/index.json").is_file());
    assert_eq!(json(&run.join("train.manifest.json"))["seeds"]["model"], 9);

    let ev = dir.path().join("eval");
    ok(&[
        "eval",
        "--run",
        p(&run),
        "--bundle",
        p(&d),
        "--split",
        p(&split),
        "--out",
        p(&ev),
    ]);
    let result = json(&ev.join("eval.json"));
    assert!(result["mae_sbp"].as_f64().unwrap().is_finite());
    assert!(result["mase_dbp"].as_f64().unwrap() > 0.0);
    let preds = fs::read_to_string(ev.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count() as u64 - 1, result["n"].as_u64().unwrap());
}

#[test]
fn grid_twice_gives_identical_grid_csv() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(&dir.path().join("src"), "src", &["--seed", "1"]);
    small_synth(&dir.path().join("tgt"), "tgt", &["--seed", "2", "--sbp-mean", "130"]);
    let cfg = dir.path().join("exp.json");
    fs::write(
        &cfg,
        r#"{
          "train_sets": [{"name": "src", "bundle": "src", "split": {"scenario": "calibfree"}}],
          "test_sets": [{"name": "tgt", "bundle": "tgt"}],
          "model": {"architecture": "lenet1d", "width_multiplier": 0.25},
          "train": {"effective_batch_size": 32, "micro_batch_size": 32, "epochs": 1},
          "weighting": "off"
        }"#,
    )
    .unwrap();
    let (o1, o2) = (dir.path().join("o1"), dir.path().join("o2"));
    ok(&["grid", "--config", p(&cfg), "--out", p(&o1), "--jobs", "2"]);
    ok(&["grid", "--config", p(&cfg), "--out", p(&o2), "--jobs", "1"]);
    let g1 = fs::read(o1.join("grid.csv")).unwrap();
    assert_eq!(g1, fs::read(o2.join("grid.csv")).unwrap());
    assert!(o1.join("run_manifest.json").is_file());

    let r = dir.path().join("r");
    ok(&["report", "--grid", p(&o1.join("grid.csv")), "--out", p(&r)]);
    assert_eq!(
        fs::read(r.join("grid.md")).unwrap(),
        fs::read(o1.join("grid.md")).unwrap()
    );
}

#[test]
fn seed_precedence_flag_config_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_with = dir.path().join("with.json");
    let cfg_without = dir.path().join("without.json");
    fs::write(
        &cfg_with,
        r#"{"n_subjects": 4, "segments_per_subject": 2, "segment_length": 50, "seed": 7}"#,
    )
    .unwrap();
    fs::write(
        &cfg_without,
        r#"{"n_subjects": 4, "segments_per_subject": 2, "segment_length": 50}"#,
    )
    .unwrap();
    let seed_of = |cfg: &Path, flag: Option<&str>, env: Option<&str>| {
        let out = tempfile::tempdir().unwrap();
        let mut args = vec!["synth", "--config", p(cfg), "--out", p(out.path())];
        if let Some(f) = flag {
            args.extend(["--seed", f]);
        }
        let o = ppgbench(&args, env);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        json(&out.path().join("synth.manifest.json"))["seeds"]["data"]
            .as_u64()
            .unwrap()
    };
    assert_eq!(seed_of(&cfg_with, Some("11"), Some("13")), 11);
    assert_eq!(seed_of(&cfg_with, None, Some("13")), 7);
    assert_eq!(seed_of(&cfg_without, None, Some("13")), 13);
    assert_eq!(seed_of(&cfg_without, None, None), 0);
    let bad = ppgbench(
        &["synth", "--config", p(&cfg_without), "--out", p(dir.path())],
        Some("abc"),
    );
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = ppgbench(&["frobnicate"], None);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));
    assert_eq!(
        ppgbench(&["synth", "--out", "x", "--bogus"], None).status.code(),
        Some(1)
    );
    assert_eq!(ppgbench(&[], None).status.code(), Some(1));
    assert_eq!(ppgbench(&["--help"], None).status.code(), Some(0));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(
        ppgbench(&["synth", "--config", p(&bad), "--out", p(dir.path())], None)
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        ppgbench(&["synth", "--coupling", "2", "--out", p(dir.path())], None)
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        ppgbench(&["split", "--out", p(&dir.path().join("missing"))], None)
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        ppgbench(&["weights", "--tau", "1", "--out", p(dir.path())], None)
            .status
            .code(),
        Some(1),
        "no label source"
    );

    // Output path occupied by a regular file: the run itself fails.
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = ppgbench(
        &[
            "synth",
            "--subjects",
            "2",
            "--segments",
            "1",
            "--length",
            "20",
            "--out",
            p(&blocker),
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
