use std::time::Instant;

use ppgbench_core::adaptation::{HistogramBinning, WeightTables};
use ppgbench_core::metrics::evaluate;
use ppgbench_core::{BpPair, DatasetBundle, Role, SplitAssignment};
use ppgbench_models::{build_model, ModelSpec};
use ppgbench_train::{predict, train, TrainConfig, TrainHistory, TrainedModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{mark_top_k, Cell, CellMetrics, GridReport};

/// A grid row: a bundle and the split whose train/validation roles train it.
#[derive(Debug, Clone, Copy)]
pub struct TrainSet<'a> {
    pub name: &'a str,
    pub bundle: &'a DatasetBundle,
    pub split: &'a SplitAssignment,
}

impl TrainSet<'_> {
    pub fn labels(&self, role: Role) -> Vec<(f64, f64)> {
        self.split
            .indices(self.bundle, role)
            .into_iter()
            .map(|i| (self.bundle.records[i].sbp, self.bundle.records[i].dbp))
            .collect()
    }
}

/// A grid column: a subset of a bundle's segments.
#[derive(Debug, Clone)]
pub struct TestSet<'a> {
    pub name: &'a str,
    pub bundle: &'a DatasetBundle,
    pub indices: Vec<usize>,
}

impl TestSet<'_> {
    pub fn labels(&self) -> Vec<(f64, f64)> {
        self.indices
            .iter()
            .map(|&i| (self.bundle.records[i].sbp, self.bundle.records[i].dbp))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightingConfig {
    pub tau: f64,
    pub sbp_binning: HistogramBinning,
    pub dbp_binning: HistogramBinning,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            sbp_binning: HistogramBinning::sbp_default(),
            dbp_binning: HistogramBinning::dbp_default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridSpec {
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// `Some` trains with label-shift weights toward each test set.
    pub weighting: Option<WeightingConfig>,
    pub top_k: usize,
}

/// One training run inside a grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub row: String,
    /// Test set the weights targeted; `None` for unweighted runs.
    pub col: Option<String>,
    pub history: Option<TrainHistory>,
    pub error: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub report: GridReport,
    /// `[row][col]` predictions, `None` for failed cells.
    pub predictions: Vec<Vec<Option<Vec<BpPair>>>>,
    pub trainings: Vec<TrainingRecord>,
}

fn fit(
    set: &TrainSet<'_>,
    spec: &GridSpec,
    weights: Option<&WeightTables>,
) -> (Result<TrainedModel, String>, Option<TrainHistory>, f64) {
    let start = Instant::now();
    let result = build_model(&spec.model)
        .map_err(|e| e.to_string())
        .and_then(|m| train(m, set.bundle, set.split, &spec.train, weights).map_err(|e| e.to_string()));
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok((model, history)) => (Ok(model), Some(history), secs),
        Err(e) => (Err(e), None, secs),
    }
}

fn evaluate_cell(model: &Result<TrainedModel, String>, test: &TestSet<'_>) -> (Cell, Option<Vec<BpPair>>) {
    let trained = match model {
        Ok(t) => t,
        Err(e) => {
            return (
                Cell::Failed {
                    cause: format!("training failed: {e}"),
                },
                None,
            )
        }
    };
    let preds = match predict(&trained.model, test.bundle, &test.indices) {
        Ok(p) => p,
        Err(e) => {
            return (
                Cell::Failed {
                    cause: format!("prediction failed: {e}"),
                },
                None,
            )
        }
    };
    let refs: Vec<BpPair> = test.labels().into_iter().map(BpPair::from).collect();
    match evaluate(&preds, &refs, trained.baseline) {
        Ok(r) => (
            Cell::Ok(CellMetrics {
                mae_sbp: r.mae_sbp,
                mae_dbp: r.mae_dbp,
                mase_sbp: Some(r.mase_sbp),
                mase_dbp: Some(r.mase_dbp),
            }),
            Some(preds),
        ),
        Err(e) => (
            Cell::Failed {
                cause: format!("evaluation failed: {e}"),
            },
            None,
        ),
    }
}

/// Trains and evaluates every (train set, test set) pair.
///
/// Unweighted grids train one model per row and reuse it on every column.
/// Weighted grids train one model per cell, since the weights depend on the
/// test set's label distribution. MASE in each cell is scaled by the row's
/// training-set median predictor. Failures become [`Cell::Failed`] entries.
/// Independent trainings run in parallel on the current rayon pool; results
/// are gathered by coordinate, so the outcome does not depend on scheduling.
pub fn run_grid(train_sets: &[TrainSet<'_>], test_sets: &[TestSet<'_>], spec: &GridSpec) -> GridOutcome {
    let rows: Vec<String> = train_sets.iter().map(|t| t.name.to_string()).collect();
    let cols: Vec<String> = test_sets.iter().map(|t| t.name.to_string()).collect();
    type CellOut = (Cell, Option<Vec<BpPair>>);

    let (cells, trainings): (Vec<Vec<CellOut>>, Vec<Vec<TrainingRecord>>) = match &spec.weighting {
        None => train_sets
            .par_iter()
            .map(|set| {
                let (model, history, seconds) = fit(set, spec, None);
                let record = TrainingRecord {
                    row: set.name.to_string(),
                    col: None,
                    error: model.as_ref().err().cloned(),
                    history,
                    seconds,
                };
                let row: Vec<CellOut> = test_sets.par_iter().map(|t| evaluate_cell(&model, t)).collect();
                (row, vec![record])
            })
            .unzip(),
        Some(w) => train_sets
            .par_iter()
            .map(|set| {
                let train_labels = set.labels(Role::Train);
                test_sets
                    .par_iter()
                    .map(|t| {
                        let tables =
                            WeightTables::from_labels(&train_labels, &t.labels(), w.sbp_binning, w.dbp_binning, w.tau)
                                .map_err(|e| format!("weights: {e}"));
                        let (model, history, seconds) = match &tables {
                            Ok(tables) => fit(set, spec, Some(tables)),
                            Err(e) => (Err(e.clone()), None, 0.0),
                        };
                        let record = TrainingRecord {
                            row: set.name.to_string(),
                            col: Some(t.name.to_string()),
                            error: model.as_ref().err().cloned(),
                            history,
                            seconds,
                        };
                        (evaluate_cell(&model, t), record)
                    })
                    .unzip::<_, _, Vec<_>, Vec<_>>()
            })
            .unzip(),
    };

    let mut grid_cells = Vec::with_capacity(rows.len());
    let mut predictions = Vec::with_capacity(rows.len());
    for row in cells {
        let (c, p): (Vec<Cell>, Vec<Option<Vec<BpPair>>>) = row.into_iter().unzip();
        grid_cells.push(c);
        predictions.push(p);
    }
    let report = mark_top_k(&GridReport::new(rows, cols, grid_cells), spec.top_k);
    GridOutcome {
        report,
        predictions,
        trainings: trainings.into_iter().flatten().collect(),
    }
}
