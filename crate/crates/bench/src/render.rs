//! Report files.
//!
//! | file                 | content                                            |
//! |----------------------|----------------------------------------------------|
//! | `grid.csv`           | one line per cell, exact values plus 2-dp display  |
//! | `grid.md`            | bold top-k, underlined column best, failure notes  |
//! | `diff.csv`, `diff.md`| weighted minus unweighted MAE                      |
//! | `mase_plotdata.csv`  | MASE per cell for bar charts                       |
//! | `emd_scatter.csv`    | (EMD, MAE) points per cell and output              |

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::DiffGrid;
use crate::grid::{Cell, CellMetrics, Flags, GridReport};
use crate::BenchError;

/// Marker for cells without a value (U+2014 EM DASH).
pub const MISSING: char = '\u{2014}';

#[derive(Debug, Serialize, Deserialize)]
struct GridRow {
    row: String,
    col: String,
    status: String,
    mae_sbp: Option<f64>,
    mae_dbp: Option<f64>,
    mase_sbp: Option<f64>,
    mase_dbp: Option<f64>,
    display_sbp: String,
    display_dbp: String,
    top_k: usize,
    top_sbp: bool,
    top_dbp: bool,
    cause: String,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BenchError + '_ {
    move |e| BenchError::Io(format!("{}: {e}", path.display()))
}

fn csv_err(e: csv::Error) -> BenchError {
    BenchError::Io(e.to_string())
}

pub fn grid_csv(grid: &GridReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (r, row) in grid.rows.iter().enumerate() {
        for (c, col) in grid.cols.iter().enumerate() {
            let f = grid.flags[r][c];
            let rec = match &grid.cells[r][c] {
                Cell::Ok(m) => GridRow {
                    row: row.clone(),
                    col: col.clone(),
                    status: "ok".into(),
                    mae_sbp: Some(m.mae_sbp),
                    mae_dbp: Some(m.mae_dbp),
                    mase_sbp: m.mase_sbp,
                    mase_dbp: m.mase_dbp,
                    display_sbp: format!("{:.2}", m.mae_sbp),
                    display_dbp: format!("{:.2}", m.mae_dbp),
                    top_k: grid.top_k,
                    top_sbp: f.sbp,
                    top_dbp: f.dbp,
                    cause: String::new(),
                },
                Cell::Failed { cause } => GridRow {
                    row: row.clone(),
                    col: col.clone(),
                    status: "failed".into(),
                    mae_sbp: None,
                    mae_dbp: None,
                    mase_sbp: None,
                    mase_dbp: None,
                    display_sbp: String::new(),
                    display_dbp: String::new(),
                    top_k: grid.top_k,
                    top_sbp: false,
                    top_dbp: false,
                    cause: cause.clone(),
                },
            };
            w.serialize(rec).expect("in-memory csv");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

/// Parses [`grid_csv`] output. Row and column order follow first appearance.
pub fn read_grid_csv<R: io::Read>(reader: R) -> Result<GridReport, BenchError> {
    let mut recs = Vec::new();
    for r in csv::Reader::from_reader(reader).deserialize() {
        let r: GridRow = r.map_err(csv_err)?;
        recs.push(r);
    }
    let mut rows: Vec<String> = Vec::new();
    let mut cols: Vec<String> = Vec::new();
    for r in &recs {
        if !rows.contains(&r.row) {
            rows.push(r.row.clone());
        }
        if !cols.contains(&r.col) {
            cols.push(r.col.clone());
        }
    }
    let mut cells = vec![vec![None; cols.len()]; rows.len()];
    let mut flags = vec![vec![Flags::default(); cols.len()]; rows.len()];
    let mut top_k = 0;
    for r in recs {
        let (i, j) = (
            rows.iter().position(|x| *x == r.row).expect("collected"),
            cols.iter().position(|x| *x == r.col).expect("collected"),
        );
        top_k = r.top_k;
        flags[i][j] = Flags {
            sbp: r.top_sbp,
            dbp: r.top_dbp,
        };
        cells[i][j] = Some(match (r.status.as_str(), r.mae_sbp, r.mae_dbp) {
            ("ok", Some(s), Some(d)) => Cell::Ok(CellMetrics {
                mae_sbp: s,
                mae_dbp: d,
                mase_sbp: r.mase_sbp,
                mase_dbp: r.mase_dbp,
            }),
            ("failed", _, _) => Cell::Failed { cause: r.cause },
            (status, _, _) => {
                return Err(BenchError::Format(format!(
                    "cell {} / {}: bad status {status:?} or missing MAE",
                    r.row, r.col
                )))
            }
        });
    }
    let cells = cells
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            row.into_iter()
                .enumerate()
                .map(|(j, c)| c.ok_or_else(|| BenchError::Format(format!("missing cell {} / {}", rows[i], cols[j]))))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut grid = GridReport::new(rows, cols, cells);
    grid.top_k = top_k;
    grid.counts = flags
        .iter()
        .map(|row| {
            (
                row.iter().filter(|f| f.sbp).count(),
                row.iter().filter(|f| f.dbp).count(),
            )
        })
        .collect();
    grid.flags = flags;
    Ok(grid)
}

fn md_value(v: f64, bold: bool, underline: bool) -> String {
    let mut s = format!("{v:.2}");
    if bold {
        s = format!("**{s}**");
    }
    if underline {
        s = format!("<u>{s}</u>");
    }
    s
}

fn md_escape(s: &str) -> String {
    s.replace('|', "\\|")
}

/// Markdown table: top-k values in bold, each column's best underlined, a
/// failed cell shown as [`MISSING`] with a footnote giving its cause.
pub fn grid_markdown(grid: &GridReport) -> String {
    let best = grid.column_best();
    let mut out = String::new();
    let _ = write!(out, "| Train \\ Test |");
    for c in &grid.cols {
        let _ = write!(out, " {} |", md_escape(c));
    }
    let _ = writeln!(out, " Count (SBP / DBP) |");
    let _ = writeln!(out, "|---|{}---|", "---|".repeat(grid.cols.len()));
    let mut notes = Vec::new();
    for (r, row) in grid.rows.iter().enumerate() {
        let _ = write!(out, "| {} |", md_escape(row));
        for c in 0..grid.cols.len() {
            match &grid.cells[r][c] {
                Cell::Ok(m) => {
                    let f = grid.flags[r][c];
                    let b = best[r][c];
                    let _ = write!(
                        out,
                        " {} / {} |",
                        md_value(m.mae_sbp, f.sbp, b.sbp),
                        md_value(m.mae_dbp, f.dbp, b.dbp)
                    );
                }
                Cell::Failed { cause } => {
                    notes.push(format!("{} on {}: {}", row, grid.cols[c], cause));
                    let _ = write!(out, " {MISSING}[^{}] |", notes.len());
                }
            }
        }
        let _ = writeln!(out, " {} / {} |", grid.counts[r].0, grid.counts[r].1);
    }
    if !notes.is_empty() {
        out.push('\n');
        for (i, n) in notes.iter().enumerate() {
            let _ = writeln!(out, "[^{}]: {}", i + 1, md_escape(n));
        }
    }
    out
}

pub fn diff_csv(diff: &DiffGrid) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row", "col", "delta_sbp", "delta_dbp", "diagonal"])
        .expect("in-memory csv");
    for (r, row) in diff.rows.iter().enumerate() {
        for (c, col) in diff.cols.iter().enumerate() {
            let (s, d) = match diff.cells[r][c] {
                Some(x) => (x.sbp.to_string(), x.dbp.to_string()),
                None => (String::new(), String::new()),
            };
            w.write_record([
                row.as_str(),
                col.as_str(),
                &s,
                &d,
                if row == col { "true" } else { "false" },
            ])
            .expect("in-memory csv");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

pub fn diff_markdown(diff: &DiffGrid) -> String {
    let signed = |v: f64| format!("{v:+.2}");
    let mut out = String::from("| Train \\ Test |");
    for c in &diff.cols {
        let _ = write!(out, " {} |", md_escape(c));
    }
    let _ = writeln!(out, "\n|---|{}", "---|".repeat(diff.cols.len()));
    for (r, row) in diff.rows.iter().enumerate() {
        let _ = write!(out, "| {} |", md_escape(row));
        for c in 0..diff.cols.len() {
            match diff.cells[r][c] {
                Some(d) => {
                    let _ = write!(out, " {} / {} |", signed(d.sbp), signed(d.dbp));
                }
                None => {
                    let _ = write!(out, " {MISSING} |");
                }
            }
        }
        out.push('\n');
    }
    match diff.mean {
        Some(m) => {
            let _ = writeln!(
                out,
                "\nMean weighted minus unweighted MAE over {} cells: {} / {} mmHg (negative is an improvement).",
                diff.n_summarized,
                signed(m.sbp),
                signed(m.dbp)
            );
        }
        None => out.push_str("\nNo comparable cells.\n"),
    }
    out
}

pub fn mase_plotdata_csv(grid: &GridReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row", "col", "mase_sbp", "mase_dbp"])
        .expect("in-memory csv");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (r, row) in grid.rows.iter().enumerate() {
        for (c, col) in grid.cols.iter().enumerate() {
            if let Some(m) = grid.cells[r][c].metrics() {
                w.write_record([row.as_str(), col.as_str(), &opt(m.mase_sbp), &opt(m.mase_dbp)])
                    .expect("in-memory csv");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

/// One scatter point: a grid cell's distance and error for one output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub row: String,
    pub col: String,
    pub output: String,
    pub emd: f64,
    pub mae: f64,
}

pub fn emd_scatter_csv(points: &[ScatterPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p).expect("in-memory csv");
    }
    if points.is_empty() {
        w.write_record(["row", "col", "output", "emd", "mae"])
            .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

pub(crate) fn write(dir: &Path, name: &str, text: &str) -> Result<(), BenchError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(io_err(&path))
}

/// Writes `grid.csv`, `grid.md` and `mase_plotdata.csv` with an optional
/// file-name prefix (e.g. `weighted_`).
pub fn render_grid(grid: &GridReport, dir: &Path, prefix: &str) -> Result<(), BenchError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write(dir, &format!("{prefix}grid.csv"), &grid_csv(grid))?;
    write(dir, &format!("{prefix}grid.md"), &grid_markdown(grid))?;
    write(dir, &format!("{prefix}mase_plotdata.csv"), &mase_plotdata_csv(grid))
}

pub fn render_diff(diff: &DiffGrid, dir: &Path) -> Result<(), BenchError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write(dir, "diff.csv", &diff_csv(diff))?;
    write(dir, "diff.md", &diff_markdown(diff))
}

pub fn render_scatter(points: &[ScatterPoint], dir: &Path) -> Result<(), BenchError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write(dir, "emd_scatter.csv", &emd_scatter_csv(points))
}
