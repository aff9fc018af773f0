use serde::{Deserialize, Serialize};

/// Errors and scaled errors of one (train set, test set) evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub mae_sbp: f64,
    pub mae_dbp: f64,
    /// Absent for grids transcribed from MAE-only tables.
    pub mase_sbp: Option<f64>,
    pub mase_dbp: Option<f64>,
}

impl CellMetrics {
    pub fn from_mae(mae_sbp: f64, mae_dbp: f64) -> Self {
        Self {
            mae_sbp,
            mae_dbp,
            mase_sbp: None,
            mase_dbp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Cell {
    Ok(CellMetrics),
    Failed { cause: String },
}

impl Cell {
    pub fn metrics(&self) -> Option<&CellMetrics> {
        match self {
            Cell::Ok(m) => Some(m),
            Cell::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub sbp: bool,
    pub dbp: bool,
}

/// A train-by-test result matrix with its top-k annotation.
///
/// `cells[r][c]` is the model trained on `rows[r]` evaluated on `cols[c]`.
/// `flags` and `counts` are empty until [`mark_top_k`] fills them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub cells: Vec<Vec<Cell>>,
    pub top_k: usize,
    pub flags: Vec<Vec<Flags>>,
    /// Flagged cells per row, `(sbp, dbp)`.
    pub counts: Vec<(usize, usize)>,
}

impl GridReport {
    pub fn new(rows: Vec<String>, cols: Vec<String>, cells: Vec<Vec<Cell>>) -> Self {
        assert_eq!(cells.len(), rows.len(), "one cell row per train set");
        assert!(cells.iter().all(|r| r.len() == cols.len()), "one cell per test set");
        let flags = vec![vec![Flags::default(); cols.len()]; rows.len()];
        let counts = vec![(0, 0); rows.len()];
        Self {
            rows,
            cols,
            cells,
            top_k: 0,
            flags,
            counts,
        }
    }

    /// Grid from two MAE matrices indexed `[row][col]`.
    pub fn from_mae(rows: Vec<String>, cols: Vec<String>, sbp: &[Vec<f64>], dbp: &[Vec<f64>]) -> Self {
        let cells = sbp
            .iter()
            .zip(dbp)
            .map(|(s, d)| {
                s.iter()
                    .zip(d)
                    .map(|(s, d)| Cell::Ok(CellMetrics::from_mae(*s, *d)))
                    .collect()
            })
            .collect();
        Self::new(rows, cols, cells)
    }

    pub fn row_index(&self, name: &str) -> Option<usize> {
        self.rows.iter().position(|r| r == name)
    }

    fn column(&self, c: usize, sbp: bool) -> Vec<(usize, f64)> {
        (0..self.rows.len())
            .filter_map(|r| {
                let m = self.cells[r][c].metrics()?;
                let v = if sbp { m.mae_sbp } else { m.mae_dbp };
                v.is_finite().then_some((r, v))
            })
            .collect()
    }

    /// Cells holding the smallest MAE of their column, per output.
    pub fn column_best(&self) -> Vec<Vec<Flags>> {
        let mut best = vec![vec![Flags::default(); self.cols.len()]; self.rows.len()];
        for c in 0..self.cols.len() {
            for sbp in [true, false] {
                let col = self.column(c, sbp);
                let min = col.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
                for (r, v) in col {
                    if v == min {
                        let f = &mut best[r][c];
                        *if sbp { &mut f.sbp } else { &mut f.dbp } = true;
                    }
                }
            }
        }
        best
    }
}

/// Flags, per column and output, every cell whose MAE is at most the k-th
/// smallest finite MAE in that column. Ties at the boundary are all flagged,
/// so a column may carry more than `k` flags. Failed and non-finite cells are
/// never flagged. Counts are recomputed from the flags.
pub fn mark_top_k(grid: &GridReport, k: usize) -> GridReport {
    let mut out = grid.clone();
    out.top_k = k;
    out.flags = vec![vec![Flags::default(); grid.cols.len()]; grid.rows.len()];
    if k > 0 {
        for c in 0..grid.cols.len() {
            for sbp in [true, false] {
                let col = grid.column(c, sbp);
                let mut values: Vec<f64> = col.iter().map(|(_, v)| *v).collect();
                values.sort_by(f64::total_cmp);
                let Some(&threshold) = values.get(k.min(values.len()).wrapping_sub(1)) else {
                    continue;
                };
                for (r, v) in col {
                    if v <= threshold {
                        let f = &mut out.flags[r][c];
                        *if sbp { &mut f.sbp } else { &mut f.dbp } = true;
                    }
                }
            }
        }
    }
    out.counts = out
        .flags
        .iter()
        .map(|row| {
            (
                row.iter().filter(|f| f.sbp).count(),
                row.iter().filter(|f| f.dbp).count(),
            )
        })
        .collect();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(p: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{p}{i}")).collect()
    }

    #[test]
    fn all_equal_column_flags_everything() {
        let g = GridReport::from_mae(names("r", 5), names("c", 1), &vec![vec![3.0]; 5], &vec![vec![1.0]; 5]);
        let m = mark_top_k(&g, 3);
        assert!(m.flags.iter().all(|r| r[0].sbp && r[0].dbp));
        assert_eq!(m.counts, vec![(1, 1); 5]);
    }

    #[test]
    fn failed_cells_are_skipped() {
        let mut g = GridReport::from_mae(
            names("r", 4),
            names("c", 1),
            &[vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
            &[vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
        );
        g.cells[0][0] = Cell::Failed { cause: "oom".into() };
        let m = mark_top_k(&g, 2);
        assert_eq!(m.counts, vec![(0, 0), (1, 1), (1, 1), (0, 0)]);
    }

    #[test]
    fn column_best_handles_ties() {
        let g = GridReport::from_mae(
            names("r", 3),
            names("c", 1),
            &[vec![2.0], vec![1.0], vec![1.0]],
            &[vec![0.5], vec![1.0], vec![1.0]],
        );
        let b = g.column_best();
        assert_eq!(b[0][0], Flags { sbp: false, dbp: true });
        assert_eq!(b[1][0], Flags { sbp: true, dbp: false });
        assert_eq!(b[2][0], Flags { sbp: true, dbp: false });
    }

    #[test]
    fn k_larger_than_column() {
        let g = GridReport::from_mae(
            names("r", 2),
            names("c", 1),
            &[vec![2.0], vec![1.0]],
            &[vec![0.5], vec![1.0]],
        );
        assert_eq!(mark_top_k(&g, 3).counts, vec![(1, 1), (1, 1)]);
        assert_eq!(mark_top_k(&g, 0).counts, vec![(0, 0), (0, 0)]);
    }
}
