use serde::{Deserialize, Serialize};

use crate::grid::GridReport;
use crate::BenchError;

/// `weighted - unweighted` MAE per cell; negative values are improvements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeDelta {
    pub sbp: f64,
    pub dbp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffGrid {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    /// `None` where either grid's cell failed.
    pub cells: Vec<Vec<Option<MaeDelta>>>,
    /// Mean delta over cells that are present and not on the diagonal
    /// (row name equal to column name). `None` when no such cell exists.
    pub mean: Option<MaeDelta>,
    /// Number of cells entering `mean`.
    pub n_summarized: usize,
}

pub fn diff_grids(weighted: &GridReport, unweighted: &GridReport) -> Result<DiffGrid, BenchError> {
    if weighted.rows != unweighted.rows || weighted.cols != unweighted.cols {
        return Err(BenchError::ShapeMismatch(format!(
            "{}x{} grid vs {}x{} grid, or differing labels",
            weighted.rows.len(),
            weighted.cols.len(),
            unweighted.rows.len(),
            unweighted.cols.len()
        )));
    }
    let mut cells = Vec::with_capacity(weighted.rows.len());
    let (mut sum_s, mut sum_d, mut n) = (0.0, 0.0, 0usize);
    for (r, row) in weighted.rows.iter().enumerate() {
        let mut out = Vec::with_capacity(weighted.cols.len());
        for (c, col) in weighted.cols.iter().enumerate() {
            let delta = match (weighted.cells[r][c].metrics(), unweighted.cells[r][c].metrics()) {
                (Some(w), Some(u)) => Some(MaeDelta {
                    sbp: w.mae_sbp - u.mae_sbp,
                    dbp: w.mae_dbp - u.mae_dbp,
                }),
                _ => None,
            };
            if let Some(d) = delta.filter(|_| row != col) {
                sum_s += d.sbp;
                sum_d += d.dbp;
                n += 1;
            }
            out.push(delta);
        }
        cells.push(out);
    }
    let mean = (n > 0).then(|| MaeDelta {
        sbp: sum_s / n as f64,
        dbp: sum_d / n as f64,
    });
    Ok(DiffGrid {
        rows: weighted.rows.clone(),
        cols: weighted.cols.clone(),
        cells,
        mean,
        n_summarized: n,
    })
}
