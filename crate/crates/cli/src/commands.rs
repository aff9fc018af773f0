use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ppgbench_bench::render::{read_grid_csv, render_diff, render_grid};
use ppgbench_bench::{diff_grids, mark_top_k, run_experiment, BenchError, ExperimentConfig, RunManifest};
use ppgbench_core::adaptation::{
    build_histogram, compute_weights, emd, HistogramBinning, LabelHistogram, WeightTables,
};
use ppgbench_core::data::{generate_synthetic, load_bundle, write_bundle, DatasetBundle};
use ppgbench_core::metrics::evaluate;
use ppgbench_core::splits::{make_split, Role, Scenario, SplitAssignment, SplitSpec};
use ppgbench_core::{BpPair, SynthConfig};
use ppgbench_models::{build_model, load_checkpoint, save_checkpoint, ModelSpec};
use ppgbench_train::{predict, train, LearningRate, TrainConfig, TrainError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{
    resolve_seed, Classify, CliError, Command, EmdArgs, EvalArgs, GridArgs, LabelSources, ReportArgs, SplitArgs,
    SynthArgs, TrainArgs, WeightsArgs,
};

pub(crate) fn run(command: Command, argv: Vec<String>) -> Result<(), CliError> {
    if let Command::Grid(a) = command {
        return grid(a, argv);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().runtime()?;
    pool.install(|| match command {
        Command::Synth(a) => synth(a, argv),
        Command::Split(a) => split(a, argv),
        Command::Train(a) => train_cmd(a, argv),
        Command::Eval(a) => eval(a, argv),
        Command::Weights(a) => weights(a, argv),
        Command::Emd(a) => emd_cmd(a, argv),
        Command::Report(a) => report(a, argv),
        Command::Grid(_) => unreachable!("handled above"),
    })
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// Whether the JSON object at `path` sets `key` explicitly.
fn sets_key(path: &Path, key: &str) -> Result<bool, CliError> {
    let v: Value = read_json(path)?;
    Ok(v.get(key).is_some())
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).runtime()?;
    text.push('\n');
    write_text(dir, name, &text)
}

fn write_manifest(dir: &Path, name: &str, manifest: &RunManifest) -> Result<(), CliError> {
    write_text(dir, &format!("{name}.manifest.json"), &manifest.to_json())
}

fn load_split_file(csv: &Path) -> Result<SplitAssignment, CliError> {
    let sidecar = csv.with_extension("json");
    SplitAssignment::from_csv_and_sidecar(&read_text(csv)?, &read_text(&sidecar)?).invalid()
}

fn load(dir: &Path) -> Result<DatasetBundle, CliError> {
    load_bundle(dir).map_err(|e| CliError::Invalid(format!("{}: {e}", dir.display())))
}

fn synth(a: SynthArgs, argv: Vec<String>) -> Result<(), CliError> {
    let (mut cfg, config_seed) = match &a.config {
        Some(p) => {
            let cfg: SynthConfig = read_json(p)?;
            let seed = sets_key(p, "seed")?.then_some(cfg.seed);
            (cfg, seed)
        }
        None => (SynthConfig::default(), None),
    };
    if let Some(v) = a.name {
        cfg.name = v;
    }
    if let Some(v) = a.subjects {
        cfg.n_subjects = v;
    }
    if let Some(v) = a.segments {
        cfg.segments_per_subject = v;
    }
    if let Some(v) = a.length {
        cfg.segment_length = v;
    }
    if let Some(v) = a.sbp_mean {
        cfg.sbp_mean = v;
    }
    if let Some(v) = a.coupling {
        cfg.morphology_coupling = v;
    }
    if let Some(s) = resolve_seed(a.seed, config_seed)? {
        cfg.seed = s;
    }
    cfg.validate().invalid()?;
    let t = Instant::now();
    let bundle = generate_synthetic(&cfg).runtime()?;
    write_bundle(&bundle, &a.out).runtime()?;
    let mut m = RunManifest::new(argv, &cfg);
    m.seeds.insert("data".into(), cfg.seed);
    m.timings.insert("synth".into(), t.elapsed().as_secs_f64());
    write_manifest(&a.out, "synth", &m)?;
    println!("wrote {} segments to {}", bundle.len(), a.out.display());
    Ok(())
}

fn split(a: SplitArgs, argv: Vec<String>) -> Result<(), CliError> {
    let bundle_dir = a.bundle.clone().unwrap_or_else(|| a.out.clone());
    let bundle = load(&bundle_dir)?;
    let (mut spec, config_seed) = match &a.config {
        Some(p) => {
            let spec: SplitSpec = read_json(p)?;
            let seed = sets_key(p, "seed")?.then_some(spec.seed);
            (spec, seed)
        }
        None => (SplitSpec::default(), None),
    };
    if let Some(s) = &a.scenario {
        spec.scenario = s.parse::<Scenario>().invalid()?;
    }
    if let Some(v) = a.test_fraction {
        spec.test_fraction = v;
    }
    if let Some(v) = a.val_fraction {
        spec.val_fraction = v;
    }
    if let Some(s) = resolve_seed(a.seed, config_seed)? {
        spec.seed = s;
    }
    let t = Instant::now();
    let assignment = make_split(&bundle, &spec).invalid()?;
    write_text(&a.out, &format!("{}.csv", a.name), &assignment.to_csv())?;
    write_text(&a.out, &format!("{}.json", a.name), &assignment.sidecar_json())?;
    let mut m = RunManifest::new(argv, &spec);
    m.seeds.insert("split".into(), spec.seed);
    m.timings.insert("split".into(), t.elapsed().as_secs_f64());
    write_manifest(&a.out, &a.name, &m)?;
    let counts: Vec<String> = [Role::Train, Role::Validation, Role::Calibration, Role::Test]
        .into_iter()
        .map(|r| format!("{r} {}", assignment.indices(&bundle, r).len()))
        .collect();
    println!("{}", counts.join(", "));
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    model: ModelSpec,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainSummary {
    best_epoch: usize,
    learning_rate: f64,
    baseline: BpPair,
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::InvalidConfig(_) | TrainError::EmptyRole(_) | TrainError::Uncovered(_) => {
            CliError::Invalid(e.to_string())
        }
        other => CliError::Runtime(other.to_string()),
    }
}

fn train_cmd(a: TrainArgs, argv: Vec<String>) -> Result<(), CliError> {
    let mut file: TrainFile = read_json(&a.config)?;
    if let Some(s) = resolve_seed(a.seed, file.seed)? {
        file.seed = Some(s);
        file.model.seed = s;
        file.train.seed = s;
    }
    if let Some(e) = a.epochs {
        file.train.epochs = e;
    }
    if let Some(lr) = &a.lr {
        file.train.learning_rate = lr.parse::<LearningRate>().invalid()?;
    }
    file.train.checkpoint_dir = None;
    file.model.validate().invalid()?;
    file.train.validate().map_err(CliError::Invalid)?;
    let bundle = load(&a.bundle)?;
    let assignment = load_split_file(&a.split)?;
    let tables: Option<WeightTables> = a.weights.as_deref().map(read_json).transpose()?;
    let model = build_model(&file.model).invalid()?;

    let t = Instant::now();
    let (trained, history) = train(model, &bundle, &assignment, &file.train, tables.as_ref()).map_err(train_error)?;
    let seconds = t.elapsed().as_secs_f64();
    write_text(&a.out, "history.csv", &history.to_csv())?;
    save_checkpoint(&trained.model, a.out.join("model")).runtime()?;
    let summary = TrainSummary {
        best_epoch: trained.best_epoch,
        learning_rate: history.learning_rate,
        baseline: trained.baseline,
    };
    write_json(&a.out, "summary.json", &summary)?;
    let mut m = RunManifest::new(argv, &json!({ "config": file, "weighted": tables.is_some() }));
    m.seeds.insert("model".into(), file.model.seed);
    m.seeds.insert("train".into(), file.train.seed);
    m.timings.insert("train".into(), seconds);
    write_manifest(&a.out, "train", &m)?;
    let best = history.best();
    println!(
        "best epoch {} of {}: val MAE {:.2} / {:.2} mmHg",
        best.epoch,
        history.epochs.len(),
        best.val_mae_sbp,
        best.val_mae_dbp
    );
    Ok(())
}

fn eval(a: EvalArgs, argv: Vec<String>) -> Result<(), CliError> {
    let model = load_checkpoint(a.run.join("model")).invalid()?;
    let summary: TrainSummary = read_json(&a.run.join("summary.json"))?;
    let bundle = load(&a.bundle)?;
    let indices = match &a.split {
        Some(p) => load_split_file(p)?.indices(&bundle, a.role.parse::<Role>().invalid()?),
        None => (0..bundle.len()).collect(),
    };
    if indices.is_empty() {
        return Err(CliError::Invalid(format!("no segments with role {}", a.role)));
    }
    let t = Instant::now();
    let preds = predict(&model, &bundle, &indices).runtime()?;
    let refs: Vec<BpPair> = indices
        .iter()
        .map(|&i| BpPair::new(bundle.records[i].sbp, bundle.records[i].dbp))
        .collect();
    let result = evaluate(&preds, &refs, summary.baseline).runtime()?;
    write_json(&a.out, "eval.json", &result)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["segment_id", "sbp", "dbp", "sbp_pred", "dbp_pred"])
        .runtime()?;
    for (&i, p) in indices.iter().zip(&preds) {
        let r = &bundle.records[i];
        w.write_record([
            r.segment_id.clone(),
            r.sbp.to_string(),
            r.dbp.to_string(),
            p.sbp.to_string(),
            p.dbp.to_string(),
        ])
        .runtime()?;
    }
    let text = String::from_utf8(w.into_inner().runtime()?).runtime()?;
    write_text(&a.out, "predictions.csv", &text)?;
    let config = json!({ "run": a.run, "bundle": a.bundle, "split": a.split, "role": a.role });
    let mut m = RunManifest::new(argv, &config);
    m.timings.insert("eval".into(), t.elapsed().as_secs_f64());
    write_manifest(&a.out, "eval", &m)?;
    println!(
        "MAE {:.2} / {:.2} mmHg, MASE {:.4} / {:.4} over {} segments",
        result.mae_sbp, result.mae_dbp, result.mase_sbp, result.mase_dbp, result.n
    );
    Ok(())
}

fn bench_error(e: BenchError) -> CliError {
    match e {
        BenchError::Io(_) | BenchError::ShapeMismatch(_) => CliError::Runtime(e.to_string()),
        other => CliError::Invalid(other.to_string()),
    }
}

fn grid(a: GridArgs, argv: Vec<String>) -> Result<(), CliError> {
    let mut config = ExperimentConfig::from_json(&read_text(&a.config)?).map_err(bench_error)?;
    if let Some(s) = resolve_seed(a.seed, config.seed)? {
        config.apply_seed(s);
    }
    config.validate().map_err(bench_error)?;
    let base = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = match (&a.out, &config.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) if o.is_absolute() => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => base.join("results"),
    };
    if a.jobs == Some(0) {
        return Err(CliError::Invalid("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()
        .runtime()?;
    let outcome = pool
        .install(|| run_experiment(&config, &base, &out, argv))
        .map_err(bench_error)?;
    let failed = [&outcome.unweighted, &outcome.weighted]
        .into_iter()
        .flatten()
        .flat_map(|g| g.report.cells.iter().flatten())
        .filter(|c| c.metrics().is_none())
        .count();
    println!("wrote grid reports to {}", out.display());
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} grid cells failed; see grid.md")));
    }
    Ok(())
}

enum Labels {
    Histograms(LabelHistogram, LabelHistogram),
    Pairs(Vec<(f64, f64)>, Vec<(f64, f64)>),
}

fn bundle_labels(bundle: &Path, split: Option<&PathBuf>, role: Role) -> Result<Vec<(f64, f64)>, CliError> {
    let b = load(bundle)?;
    let indices = match split {
        Some(p) => load_split_file(p)?.indices(&b, role),
        None => (0..b.len()).collect(),
    };
    if indices.is_empty() {
        return Err(CliError::Invalid(format!(
            "{}: no segments with role {role}",
            bundle.display()
        )));
    }
    Ok(indices.iter().map(|&i| (b.records[i].sbp, b.records[i].dbp)).collect())
}

fn labels(s: &LabelSources) -> Result<Labels, CliError> {
    match (&s.train_hist, &s.test_hist, &s.train_bundle, &s.test_bundle) {
        (Some(a), Some(b), _, _) => Ok(Labels::Histograms(read_json(a)?, read_json(b)?)),
        (_, _, Some(a), Some(b)) => Ok(Labels::Pairs(
            bundle_labels(a, s.train_split.as_ref(), Role::Train)?,
            bundle_labels(b, s.test_split.as_ref(), s.test_role.parse::<Role>().invalid()?)?,
        )),
        _ => Err(CliError::Invalid(
            "give --train-hist and --test-hist, or --train-bundle and --test-bundle".into(),
        )),
    }
}

fn histograms(train: &[(f64, f64)], test: &[(f64, f64)]) -> Result<Value, CliError> {
    let h = |v: &[(f64, f64)], sbp: bool| {
        let xs: Vec<f64> = v.iter().map(|p| if sbp { p.0 } else { p.1 }).collect();
        let binning = if sbp {
            HistogramBinning::sbp_default()
        } else {
            HistogramBinning::dbp_default()
        };
        build_histogram(&xs, binning).invalid()
    };
    Ok(json!({
        "train": { "sbp": h(train, true)?, "dbp": h(train, false)? },
        "test": { "sbp": h(test, true)?, "dbp": h(test, false)? },
    }))
}

fn weights(a: WeightsArgs, argv: Vec<String>) -> Result<(), CliError> {
    let t = Instant::now();
    match labels(&a.sources)? {
        Labels::Histograms(train, test) => {
            let table = compute_weights(&train, &test, a.tau).invalid()?;
            write_json(&a.out, "weights.json", &table)?;
        }
        Labels::Pairs(train, test) => {
            let tables = WeightTables::from_labels(
                &train,
                &test,
                HistogramBinning::sbp_default(),
                HistogramBinning::dbp_default(),
                a.tau,
            )
            .invalid()?;
            write_json(&a.out, "weights.json", &tables)?;
            write_json(&a.out, "histograms.json", &histograms(&train, &test)?)?;
        }
    }
    let s = &a.sources;
    let config = json!({
        "train_hist": s.train_hist, "test_hist": s.test_hist,
        "train_bundle": s.train_bundle, "train_split": s.train_split,
        "test_bundle": s.test_bundle, "test_split": s.test_split, "test_role": s.test_role,
        "tau": a.tau,
    });
    let mut m = RunManifest::new(argv, &config);
    m.timings.insert("weights".into(), t.elapsed().as_secs_f64());
    write_manifest(&a.out, "weights", &m)
}

fn emd_cmd(a: EmdArgs, argv: Vec<String>) -> Result<(), CliError> {
    let t = Instant::now();
    let result = match labels(&a.sources)? {
        Labels::Histograms(x, y) => {
            let d = emd(&x, &y).invalid()?;
            println!("emd {d}");
            json!({ "emd": d })
        }
        Labels::Pairs(train, test) => {
            let h = histograms(&train, &test)?;
            let get = |side: &str, out: &str| -> Result<LabelHistogram, CliError> {
                serde_json::from_value(h[side][out].clone()).runtime()
            };
            let sbp = emd(&get("train", "sbp")?, &get("test", "sbp")?).invalid()?;
            let dbp = emd(&get("train", "dbp")?, &get("test", "dbp")?).invalid()?;
            println!("emd {sbp} / {dbp} mmHg");
            json!({ "sbp": sbp, "dbp": dbp })
        }
    };
    write_json(&a.out, "emd.json", &result)?;
    let s = &a.sources;
    let config = json!({
        "train_hist": s.train_hist, "test_hist": s.test_hist,
        "train_bundle": s.train_bundle, "train_split": s.train_split,
        "test_bundle": s.test_bundle, "test_split": s.test_split, "test_role": s.test_role,
    });
    let mut m = RunManifest::new(argv, &config);
    m.timings.insert("emd".into(), t.elapsed().as_secs_f64());
    write_manifest(&a.out, "emd", &m)
}

fn read_grid(path: &Path, top_k: Option<usize>) -> Result<ppgbench_bench::GridReport, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let g = read_grid_csv(f).map_err(bench_error)?;
    Ok(match top_k {
        Some(k) => mark_top_k(&g, k),
        None => g,
    })
}

fn report(a: ReportArgs, argv: Vec<String>) -> Result<(), CliError> {
    let t = Instant::now();
    let unweighted = read_grid(&a.grid, a.top_k)?;
    render_grid(&unweighted, &a.out, "").map_err(bench_error)?;
    if let Some(p) = &a.weighted {
        let weighted = read_grid(p, a.top_k)?;
        let diff = diff_grids(&weighted, &unweighted).map_err(|e| CliError::Invalid(e.to_string()))?;
        render_grid(&weighted, &a.out, "weighted_").map_err(bench_error)?;
        render_diff(&diff, &a.out).map_err(bench_error)?;
        if let Some(mean) = diff.mean {
            println!(
                "mean change (weighted - unweighted): {:+.2} / {:+.2} mmHg",
                mean.sbp, mean.dbp
            );
        }
    }
    let config = json!({ "grid": a.grid, "weighted": a.weighted, "top_k": a.top_k });
    let mut m = RunManifest::new(argv, &config);
    m.timings.insert("report".into(), t.elapsed().as_secs_f64());
    write_manifest(&a.out, "report", &m)
}
