//! Error metrics for paired SBP/DBP predictions.
//!
//! MASE divides a model's MAE by the MAE of always predicting the training
//! median, so 1.0 means "no better than the median" and lower is better.

use std::fmt;

use serde::{Deserialize, Serialize};

/// One SBP/DBP pair in mmHg.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BpPair {
    pub sbp: f64,
    pub dbp: f64,
}

impl BpPair {
    pub const fn new(sbp: f64, dbp: f64) -> Self {
        Self { sbp, dbp }
    }

    pub fn mean(&self) -> f64 {
        0.5 * (self.sbp + self.dbp)
    }
}

impl From<(f64, f64)> for BpPair {
    fn from((sbp, dbp): (f64, f64)) -> Self {
        Self { sbp, dbp }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty input")]
    Empty,
    #[error("shape mismatch: {predictions} predictions vs {references} references")]
    ShapeMismatch { predictions: usize, references: usize },
    #[error("MASE undefined: baseline MAE is zero for {output}")]
    UndefinedMase { output: &'static str },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Component-wise median of the training labels.
pub fn median_baseline(train_labels: &[BpPair]) -> Result<BpPair, MetricsError> {
    if train_labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut s: Vec<f64> = train_labels.iter().map(|p| p.sbp).collect();
    let mut d: Vec<f64> = train_labels.iter().map(|p| p.dbp).collect();
    Ok(BpPair::new(median(&mut s), median(&mut d)))
}

fn check(predictions: &[BpPair], references: &[BpPair]) -> Result<(), MetricsError> {
    if predictions.len() != references.len() {
        return Err(MetricsError::ShapeMismatch {
            predictions: predictions.len(),
            references: references.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    if predictions.iter().any(|p| !p.sbp.is_finite() || !p.dbp.is_finite()) {
        return Err(MetricsError::NonFinite("predictions"));
    }
    if references.iter().any(|p| !p.sbp.is_finite() || !p.dbp.is_finite()) {
        return Err(MetricsError::NonFinite("references"));
    }
    Ok(())
}

/// Per-output mean absolute error.
pub fn mae(predictions: &[BpPair], references: &[BpPair]) -> Result<BpPair, MetricsError> {
    check(predictions, references)?;
    let n = predictions.len() as f64;
    let (s, d) = predictions.iter().zip(references).fold((0.0, 0.0), |(s, d), (p, r)| {
        (s + (p.sbp - r.sbp).abs(), d + (p.dbp - r.dbp).abs())
    });
    Ok(BpPair::new(s / n, d / n))
}

/// MAE of predicting `baseline` for every reference.
pub fn baseline_mae(references: &[BpPair], baseline: BpPair) -> Result<BpPair, MetricsError> {
    let constant = vec![baseline; references.len()];
    mae(&constant, references)
}

/// Per-output MAE divided by the MAE of the median predictor.
pub fn mase(predictions: &[BpPair], references: &[BpPair], baseline: BpPair) -> Result<BpPair, MetricsError> {
    let model = mae(predictions, references)?;
    let base = baseline_mae(references, baseline)?;
    mase_from(model, base)
}

/// MASE from precomputed model and baseline MAEs.
pub fn mase_from(model_mae: BpPair, baseline_mae: BpPair) -> Result<BpPair, MetricsError> {
    if baseline_mae.sbp == 0.0 {
        return Err(MetricsError::UndefinedMase { output: "sbp" });
    }
    if baseline_mae.dbp == 0.0 {
        return Err(MetricsError::UndefinedMase { output: "dbp" });
    }
    Ok(BpPair::new(
        model_mae.sbp / baseline_mae.sbp,
        model_mae.dbp / baseline_mae.dbp,
    ))
}

/// Grade bands. Only `d_above` (7 mmHg) is anchored in the literature; the
/// A/B/C cut points are configurable defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradeThresholds {
    pub a_max: f64,
    pub b_max: f64,
    pub d_above: f64,
}

impl Default for GradeThresholds {
    fn default() -> Self {
        Self {
            a_max: 5.0,
            b_max: 6.0,
            d_above: 7.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Grade {
    A,
    B,
    C,
    D,
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::A => "A",
            Self::B => "B",
            Self::C => "C",
            Self::D => "D",
        })
    }
}

/// `D` strictly above the 7 mmHg line, otherwise the A/B/C band.
pub fn ieee_grade(mae_mmhg: f64) -> Grade {
    ieee_grade_with(mae_mmhg, &GradeThresholds::default())
}

pub fn ieee_grade_with(mae_mmhg: f64, t: &GradeThresholds) -> Grade {
    if mae_mmhg > t.d_above {
        Grade::D
    } else if mae_mmhg <= t.a_max {
        Grade::A
    } else if mae_mmhg <= t.b_max {
        Grade::B
    } else {
        Grade::C
    }
}

/// Absolute-error histogram with 1 mmHg bins over [0, 60]. Errors at or
/// beyond 60 land in the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub bin_width: f64,
    pub high: f64,
    pub sbp: Vec<u64>,
    pub dbp: Vec<u64>,
}

impl ErrorHistogram {
    pub const BINS: usize = 60;

    pub fn from_pairs(predictions: &[BpPair], references: &[BpPair]) -> Self {
        let mut h = Self {
            bin_width: 1.0,
            high: Self::BINS as f64,
            sbp: vec![0; Self::BINS],
            dbp: vec![0; Self::BINS],
        };
        let bin = |e: f64| (e.floor() as usize).min(Self::BINS - 1);
        for (p, r) in predictions.iter().zip(references) {
            h.sbp[bin((p.sbp - r.sbp).abs())] += 1;
            h.dbp[bin((p.dbp - r.dbp).abs())] += 1;
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mae_sbp: f64,
    pub mae_dbp: f64,
    pub mase_sbp: f64,
    pub mase_dbp: f64,
    pub n: usize,
    pub baseline_median: BpPair,
    pub error_histogram: ErrorHistogram,
}

impl EvalResult {
    pub fn mae(&self) -> BpPair {
        BpPair::new(self.mae_sbp, self.mae_dbp)
    }

    pub fn mase(&self) -> BpPair {
        BpPair::new(self.mase_sbp, self.mase_dbp)
    }
}

/// Full evaluation against the median of the training labels.
pub fn evaluate(predictions: &[BpPair], references: &[BpPair], baseline: BpPair) -> Result<EvalResult, MetricsError> {
    let m = mae(predictions, references)?;
    let s = mase(predictions, references, baseline)?;
    Ok(EvalResult {
        mae_sbp: m.sbp,
        mae_dbp: m.dbp,
        mase_sbp: s.sbp,
        mase_dbp: s.dbp,
        n: predictions.len(),
        baseline_median: baseline,
        error_histogram: ErrorHistogram::from_pairs(predictions, references),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(v: &[(f64, f64)]) -> Vec<BpPair> {
        v.iter().copied().map(BpPair::from).collect()
    }

    #[test]
    fn medians() {
        let m = |s: &[f64]| {
            median_baseline(&s.iter().map(|x| BpPair::new(*x, 0.0)).collect::<Vec<_>>())
                .unwrap()
                .sbp
        };
        assert_eq!(m(&[100.0, 110.0, 120.0]), 110.0);
        assert_eq!(m(&[130.0, 100.0, 120.0, 110.0]), 115.0);
        assert_eq!(m(&[127.0]), 127.0);
        assert_eq!(median_baseline(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn mae_hand_example() {
        let p = pairs(&[(120.0, 60.0), (140.0, 80.0)]);
        let r = pairs(&[(125.0, 70.0), (130.0, 75.0)]);
        assert_eq!(mae(&p, &r).unwrap(), BpPair::new(7.5, 7.5));
        assert_eq!(mae(&r, &r).unwrap(), BpPair::new(0.0, 0.0));
        let shifted: Vec<BpPair> = r.iter().map(|x| BpPair::new(x.sbp + 5.0, x.dbp + 5.0)).collect();
        assert_eq!(mae(&shifted, &r).unwrap(), BpPair::new(5.0, 5.0));
        assert!(matches!(mae(&p[..1], &r), Err(MetricsError::ShapeMismatch { .. })));
    }

    #[test]
    fn mase_rules() {
        let r = pairs(&[(100.0, 60.0), (120.0, 70.0), (140.0, 90.0)]);
        let base = median_baseline(&r).unwrap();
        assert_eq!(mase(&[base; 3], &r, base).unwrap(), BpPair::new(1.0, 1.0));
        assert_eq!(mase(&r, &r, base).unwrap(), BpPair::new(0.0, 0.0));
        let flat = pairs(&[(120.0, 70.0); 3]);
        assert!(matches!(
            mase(&flat, &flat, BpPair::new(120.0, 70.0)),
            Err(MetricsError::UndefinedMase { output: "sbp" })
        ));
        let s = mase_from(BpPair::new(8.33, 1.0), BpPair::new(16.66, 2.0)).unwrap();
        assert!((s.sbp - 0.5).abs() < 1e-12);
    }

    #[test]
    fn grades() {
        assert_eq!(ieee_grade(8.5), Grade::D);
        assert_ne!(ieee_grade(7.0), Grade::D);
        assert_eq!(ieee_grade(0.0), Grade::A);
        assert_eq!(ieee_grade(5.5), Grade::B);
        assert_eq!(ieee_grade(6.5), Grade::C);
    }

    #[test]
    fn error_histogram_bins() {
        let p = pairs(&[(100.0, 60.0), (100.5, 61.0), (200.0, 60.0)]);
        let r = pairs(&[(100.0, 60.0); 3]);
        let h = ErrorHistogram::from_pairs(&p, &r);
        assert_eq!(h.sbp[0], 2);
        assert_eq!(h.sbp[59], 1);
        assert_eq!(h.dbp[1], 1);
        assert_eq!(h.sbp.iter().sum::<u64>(), 3);
    }
}
