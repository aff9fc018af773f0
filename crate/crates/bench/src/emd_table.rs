use ppgbench_core::adaptation::{emd, AdaptationError, LabelHistogram};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmdRow {
    pub test_set: String,
    /// Distance to the training label distribution, mmHg.
    pub emd: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmdMaeTable {
    pub rows: Vec<EmdRow>,
    /// Pearson correlation of (emd, mae); `None` with fewer than two rows or
    /// zero variance in either column.
    pub pearson: Option<f64>,
}

/// One test set's label histogram and the MAE a model reached on it.
#[derive(Debug, Clone)]
pub struct EmdInput<'a> {
    pub name: String,
    pub histogram: &'a LabelHistogram,
    pub mae: f64,
}

pub fn emd_mae_table(train: &LabelHistogram, tests: &[EmdInput<'_>]) -> Result<EmdMaeTable, AdaptationError> {
    let rows = tests
        .iter()
        .map(|t| {
            Ok(EmdRow {
                test_set: t.name.clone(),
                emd: emd(train, t.histogram)?,
                mae: t.mae,
            })
        })
        .collect::<Result<Vec<_>, AdaptationError>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.emd).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mae).collect();
    Ok(EmdMaeTable {
        pearson: pearson(&xs, &ys),
        rows,
    })
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ppgbench_core::adaptation::build_histogram;
    use ppgbench_core::HistogramBinning;

    #[test]
    fn pearson_known_values() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        // x = 1..4, y = [1, 3, 2, 4]: sxy = 4, sxx = syy = 5.
        assert!((pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[2.0, 3.0]), None);
        assert_eq!(pearson(&[1.0], &[2.0]), None);
    }

    #[test]
    fn identical_distribution_has_zero_emd_and_shift_orders() {
        let b = HistogramBinning::sbp_default();
        let base: Vec<f64> = (0..200).map(|i| 100.0 + (i % 40) as f64).collect();
        let h = build_histogram(&base, b).unwrap();
        let shifted = |d: f64| build_histogram(&base.iter().map(|v| v + d).collect::<Vec<_>>(), b).unwrap();
        let (h5, h20) = (shifted(5.0), shifted(20.0));
        let t = emd_mae_table(
            &h,
            &[
                EmdInput {
                    name: "same".into(),
                    histogram: &h,
                    mae: 5.0,
                },
                EmdInput {
                    name: "+5".into(),
                    histogram: &h5,
                    mae: 6.0,
                },
                EmdInput {
                    name: "+20".into(),
                    histogram: &h20,
                    mae: 9.0,
                },
            ],
        )
        .unwrap();
        assert_eq!(t.rows[0].emd, 0.0);
        assert!(t.rows[1].emd < t.rows[2].emd);
        assert!((t.rows[1].emd - 5.0).abs() < 1e-9 && (t.rows[2].emd - 20.0).abs() < 1e-9);
        assert!(t.pearson.unwrap() > 0.99);
    }
}
