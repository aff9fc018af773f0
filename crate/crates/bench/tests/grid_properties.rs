use ppgbench_bench::render::{grid_csv, grid_markdown, read_grid_csv};
use ppgbench_bench::{diff_grids, mark_top_k, Cell, CellMetrics, GridReport};
use proptest::prelude::*;

fn names(p: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{p}{i}")).collect()
}

/// A cell is in the top k iff fewer than k cells of its column are strictly
/// smaller.
fn brute_force_counts(sbp: &[Vec<f64>], dbp: &[Vec<f64>], k: usize) -> Vec<(usize, usize)> {
    let flagged = |m: &[Vec<f64>], r: usize, c: usize| m.iter().filter(|row| row[c] < m[r][c]).count() < k;
    (0..sbp.len())
        .map(|r| {
            (
                (0..sbp[r].len()).filter(|&c| flagged(sbp, r, c)).count(),
                (0..dbp[r].len()).filter(|&c| flagged(dbp, r, c)).count(),
            )
        })
        .collect()
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    // Few distinct values so ties are common.
    prop::collection::vec(
        prop::collection::vec((0u8..6).prop_map(|v| 5.0 + v as f64 * 0.25), cols),
        rows,
    )
}

fn grids() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>, usize)> {
    (1usize..10, 1usize..6, 0usize..5).prop_flat_map(|(r, c, k)| (matrix(r, c), matrix(r, c), Just(k)))
}

proptest! {
    #[test]
    fn top_k_matches_brute_force((sbp, dbp, k) in grids()) {
        let g = GridReport::from_mae(names("r", sbp.len()), names("c", sbp[0].len()), &sbp, &dbp);
        let m = mark_top_k(&g, k);
        prop_assert_eq!(&m.counts, &brute_force_counts(&sbp, &dbp, k));
        for (r, row) in m.flags.iter().enumerate() {
            prop_assert_eq!(m.counts[r].0, row.iter().filter(|f| f.sbp).count());
        }
    }

    #[test]
    fn diff_is_antisymmetric((a, b, c, d) in (1usize..8, 1usize..5)
        .prop_flat_map(|(r, k)| (matrix(r, k), matrix(r, k), matrix(r, k), matrix(r, k))))
    {
        let (rows, cols) = (names("r", a.len()), names("c", a[0].len()));
        let x = GridReport::from_mae(rows.clone(), cols.clone(), &a, &b);
        let y = GridReport::from_mae(rows, cols, &c, &d);
        let xy = diff_grids(&x, &y).unwrap();
        let yx = diff_grids(&y, &x).unwrap();
        for (p, q) in xy.cells.iter().flatten().zip(yx.cells.iter().flatten()) {
            let (p, q) = (p.unwrap(), q.unwrap());
            prop_assert_eq!(p.sbp, -q.sbp);
            prop_assert_eq!(p.dbp, -q.dbp);
        }
    }

    #[test]
    fn csv_round_trip((sbp, dbp, k) in grids(), fail in any::<bool>()) {
        let mut g = GridReport::from_mae(names("r", sbp.len()), names("c", sbp[0].len()), &sbp, &dbp);
        g.cells[0][0] = if fail {
            Cell::Failed { cause: "diverged, \"nan\"".into() }
        } else {
            Cell::Ok(CellMetrics { mae_sbp: 1.0 / 3.0, mae_dbp: 2.0f64.sqrt(), mase_sbp: Some(0.1 + 0.2), mase_dbp: None })
        };
        let g = mark_top_k(&g, k);
        let back = read_grid_csv(grid_csv(&g).as_bytes()).unwrap();
        prop_assert_eq!(back, g);
    }
}

#[test]
fn failed_cell_renders_dash_with_footnote() {
    let mut g = GridReport::from_mae(
        names("r", 2),
        names("c", 2),
        &[vec![1.0, 2.0], vec![3.0, 4.0]],
        &[vec![1.0, 2.0], vec![3.0, 4.0]],
    );
    g.cells[1][0] = Cell::Failed {
        cause: "non-finite loss".into(),
    };
    let md = grid_markdown(&mark_top_k(&g, 1));
    assert!(md.contains("| r1 | \u{2014}[^1] |"), "{md}");
    assert!(md.contains("[^1]: r1 on c0: non-finite loss"), "{md}");
}

#[test]
fn column_best_is_underlined_and_bold() {
    let g = GridReport::from_mae(
        names("r", 3),
        names("c", 1),
        &[vec![12.345], vec![10.0], vec![11.0]],
        &[vec![7.0], vec![9.0], vec![8.0]],
    );
    let md = grid_markdown(&mark_top_k(&g, 2));
    assert!(md.contains("| r1 | <u>**10.00**</u> / 9.00 | 1 / 0 |"), "{md}");
    assert!(md.contains("| r0 | 12.35 / <u>**7.00**</u> | 0 / 1 |"), "{md}");
    assert!(md.contains("| r2 | **11.00** / **8.00** | 1 / 1 |"), "{md}");
}

#[test]
fn csv_has_display_column() {
    let g = GridReport::from_mae(names("r", 1), names("c", 1), &[vec![12.345678]], &[vec![7.0]]);
    let text = grid_csv(&g);
    assert!(text.lines().next().unwrap().contains("display_sbp"));
    assert!(text.contains("12.345678,7.0,,,12.35,7.00"), "{text}");
}
