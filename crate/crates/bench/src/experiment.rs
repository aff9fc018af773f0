use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ppgbench_core::adaptation::build_histogram;
use ppgbench_core::data::load_bundle;
use ppgbench_core::splits::make_split;
use ppgbench_core::{DatasetBundle, Role, SplitAssignment, SplitSpec};
use ppgbench_models::ModelSpec;
use ppgbench_train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::diff::{diff_grids, DiffGrid};
use crate::emd_table::{emd_mae_table, EmdInput, EmdMaeTable};
use crate::manifest::RunManifest;
use crate::render::{render_diff, render_grid, render_scatter, write, ScatterPoint};
use crate::run::{run_grid, GridOutcome, GridSpec, TestSet, TrainSet, WeightingConfig};
use crate::BenchError;

/// Where a split comes from: a CSV written earlier (its JSON sidecar sits
/// next to it with a `.json` extension) or a spec evaluated on the fly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitSource {
    File { file: PathBuf },
    Spec(SplitSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSetConfig {
    pub name: String,
    pub bundle: PathBuf,
    pub split: SplitSource,
}

/// A test column. With a split, its `role` segments (default `test`) are
/// used; without one, every segment of the bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSetConfig {
    pub name: String,
    pub bundle: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingMode {
    Off,
    On,
    /// Both grids plus their difference.
    #[default]
    Both,
}

fn default_top_k() -> usize {
    3
}

fn default_name() -> String {
    "experiment".into()
}

/// One declarative grid experiment. Relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Overrides the model, training and inline split seeds when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub train_sets: Vec<TrainSetConfig>,
    pub test_sets: Vec<TestSetConfig>,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub weighting: WeightingMode,
    #[serde(default)]
    pub weights: WeightingConfig,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    /// Copies `seed` into every seeded component.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.model.seed = seed;
        self.train.seed = seed;
        for s in self
            .train_sets
            .iter_mut()
            .map(|t| &mut t.split)
            .chain(self.test_sets.iter_mut().filter_map(|t| t.split.as_mut()))
        {
            if let SplitSource::Spec(spec) = s {
                spec.seed = seed;
            }
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.train_sets.is_empty() || self.test_sets.is_empty() {
            return bad("an experiment needs at least one train set and one test set".into());
        }
        for names in [
            self.train_sets.iter().map(|t| &t.name).collect::<Vec<_>>(),
            self.test_sets.iter().map(|t| &t.name).collect::<Vec<_>>(),
        ] {
            let mut seen = std::collections::BTreeSet::new();
            if let Some(dup) = names.into_iter().find(|n| !seen.insert(*n)) {
                return bad(format!("duplicate set name {dup:?}"));
            }
        }
        self.model.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        self.train.validate().map_err(BenchError::Config)?;
        if !(self.weights.tau.is_finite() && self.weights.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.weights.tau));
        }
        Ok(())
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let mut s = BTreeMap::from([
            ("model".to_string(), self.model.seed),
            ("train".to_string(), self.train.seed),
        ]);
        if let Some(seed) = self.seed {
            s.insert("experiment".into(), seed);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub unweighted: Option<GridOutcome>,
    pub weighted: Option<GridOutcome>,
    pub diff: Option<DiffGrid>,
    pub scatter: Vec<ScatterPoint>,
    /// Per train set, the (EMD, SBP MAE) table over all test sets.
    pub emd_tables: BTreeMap<String, EmdMaeTable>,
    pub manifest: RunManifest,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_split(base: &Path, source: &SplitSource, bundle: &DatasetBundle) -> Result<SplitAssignment, BenchError> {
    match source {
        SplitSource::Spec(spec) => Ok(make_split(bundle, spec)?),
        SplitSource::File { file } => {
            let csv_path = resolve(base, file);
            let sidecar = csv_path.with_extension("json");
            let read =
                |p: &Path| std::fs::read_to_string(p).map_err(|e| BenchError::Io(format!("{}: {e}", p.display())));
            Ok(SplitAssignment::from_csv_and_sidecar(
                &read(&csv_path)?,
                &read(&sidecar)?,
            )?)
        }
    }
}

/// Loads every bundle and split, runs the grids the weighting mode asks for
/// and writes all report files plus `run_manifest.json` into `out_dir`.
pub fn run_experiment(
    config: &ExperimentConfig,
    base_dir: &Path,
    out_dir: &Path,
    command: Vec<String>,
) -> Result<ExperimentOutcome, BenchError> {
    config.validate()?;
    let mut manifest = RunManifest::new(command, config);
    manifest.seeds = config.seeds();
    let t0 = Instant::now();

    let mut bundles: BTreeMap<PathBuf, DatasetBundle> = BTreeMap::new();
    for p in config
        .train_sets
        .iter()
        .map(|t| &t.bundle)
        .chain(config.test_sets.iter().map(|t| &t.bundle))
    {
        let path = resolve(base_dir, p);
        if let std::collections::btree_map::Entry::Vacant(slot) = bundles.entry(path) {
            let b = load_bundle(slot.key())?;
            slot.insert(b);
        }
    }
    let bundle_of = |p: &Path| &bundles[&resolve(base_dir, p)];
    let train_splits = config
        .train_sets
        .iter()
        .map(|t| load_split(base_dir, &t.split, bundle_of(&t.bundle)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut test_sets = Vec::with_capacity(config.test_sets.len());
    for t in &config.test_sets {
        let bundle = bundle_of(&t.bundle);
        let indices = match &t.split {
            Some(s) => load_split(base_dir, s, bundle)?.indices(bundle, t.role.unwrap_or(Role::Test)),
            None => (0..bundle.len()).collect(),
        };
        if indices.is_empty() {
            return Err(BenchError::Config(format!("test set {:?} selects no segments", t.name)));
        }
        test_sets.push(TestSet {
            name: &t.name,
            bundle,
            indices,
        });
    }
    let train_sets: Vec<TrainSet<'_>> = config
        .train_sets
        .iter()
        .zip(&train_splits)
        .map(|(t, split)| TrainSet {
            name: &t.name,
            bundle: bundle_of(&t.bundle),
            split,
        })
        .collect();
    manifest.timings.insert("load".into(), t0.elapsed().as_secs_f64());

    let spec = |weighting| GridSpec {
        model: config.model.clone(),
        train: config.train.clone(),
        weighting,
        top_k: config.top_k,
    };
    let run = |weighting: Option<WeightingConfig>, key: &str, manifest: &mut RunManifest| {
        let t = Instant::now();
        let out = run_grid(&train_sets, &test_sets, &spec(weighting));
        manifest.timings.insert(key.into(), t.elapsed().as_secs_f64());
        out
    };
    let unweighted = matches!(config.weighting, WeightingMode::Off | WeightingMode::Both)
        .then(|| run(None, "grid_unweighted", &mut manifest));
    let weighted = matches!(config.weighting, WeightingMode::On | WeightingMode::Both)
        .then(|| run(Some(config.weights.clone()), "grid_weighted", &mut manifest));
    let diff = match (&weighted, &unweighted) {
        (Some(w), Some(u)) => Some(diff_grids(&w.report, &u.report)?),
        _ => None,
    };

    let primary = unweighted.as_ref().or(weighted.as_ref()).expect("at least one grid");
    let w = &config.weights;
    let mut scatter = Vec::new();
    let mut emd_tables = BTreeMap::new();
    let test_hists = test_sets
        .iter()
        .map(|t| {
            let labels = t.labels();
            let s: Vec<f64> = labels.iter().map(|p| p.0).collect();
            let d: Vec<f64> = labels.iter().map(|p| p.1).collect();
            Ok((build_histogram(&s, w.sbp_binning)?, build_histogram(&d, w.dbp_binning)?))
        })
        .collect::<Result<Vec<_>, BenchError>>()?;
    for (r, set) in train_sets.iter().enumerate() {
        let labels = set.labels(Role::Train);
        let s: Vec<f64> = labels.iter().map(|p| p.0).collect();
        let d: Vec<f64> = labels.iter().map(|p| p.1).collect();
        let (hs, hd) = (build_histogram(&s, w.sbp_binning)?, build_histogram(&d, w.dbp_binning)?);
        let mut inputs = Vec::new();
        for (c, test) in test_sets.iter().enumerate() {
            let Some(m) = primary.report.cells[r][c].metrics() else {
                continue;
            };
            for (output, train_h, test_h, mae) in [
                ("sbp", &hs, &test_hists[c].0, m.mae_sbp),
                ("dbp", &hd, &test_hists[c].1, m.mae_dbp),
            ] {
                scatter.push(ScatterPoint {
                    row: set.name.to_string(),
                    col: test.name.to_string(),
                    output: output.into(),
                    emd: ppgbench_core::adaptation::emd(train_h, test_h)?,
                    mae,
                });
            }
            inputs.push(EmdInput {
                name: test.name.to_string(),
                histogram: &test_hists[c].0,
                mae: m.mae_sbp,
            });
        }
        emd_tables.insert(set.name.to_string(), emd_mae_table(&hs, &inputs)?);
    }

    let t = Instant::now();
    if let Some(u) = &unweighted {
        render_grid(&u.report, out_dir, "")?;
    }
    if let Some(wt) = &weighted {
        let prefix = if unweighted.is_some() { "weighted_" } else { "" };
        render_grid(&wt.report, out_dir, prefix)?;
    }
    if let Some(d) = &diff {
        render_diff(d, out_dir)?;
    }
    render_scatter(&scatter, out_dir)?;
    let trainings: Vec<_> = unweighted
        .iter()
        .chain(weighted.iter())
        .flat_map(|g| g.trainings.iter())
        .collect();
    let mut histories = serde_json::to_string_pretty(&trainings).map_err(|e| BenchError::Io(e.to_string()))?;
    histories.push('\n');
    write(out_dir, "trainings.json", &histories)?;
    manifest.timings.insert("render".into(), t.elapsed().as_secs_f64());
    manifest.timings.insert("total".into(), t0.elapsed().as_secs_f64());
    write(out_dir, "run_manifest.json", &manifest.to_json())?;

    Ok(ExperimentOutcome {
        unweighted,
        weighted,
        diff,
        scatter,
        emd_tables,
        manifest,
    })
}
