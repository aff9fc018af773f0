//! Label histograms, label-shift importance weights and the Earth Mover's
//! Distance between label distributions.
//!
//! Weights follow `w_i = max(tau, h_test[i] / h_train[i])` when the training
//! histogram has mass in bin `i` and `w_i = tau` otherwise. Only the target
//! label *distribution* is consumed, never individual target labels.

use serde::{Deserialize, Serialize};

use crate::data::SegmentRecord;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdaptationError {
    #[error("invalid binning: {0}")]
    InvalidBinning(String),
    #[error("histogram of an empty value list")]
    Empty,
    #[error("non-finite label value {0}")]
    NonFinite(f64),
    #[error("binning mismatch: {0:?} vs {1:?}")]
    BinningMismatch(HistogramBinning, HistogramBinning),
    #[error("tau must be positive and finite, got {0}")]
    InvalidTau(f64),
    #[error("histogram values: {0}")]
    InvalidValues(String),
}

/// Equal-width bins over `[low, high]`. Bin `i` covers
/// `[low + i*w, low + (i+1)*w)`, the last bin is closed on the right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBinning {
    pub low: f64,
    pub high: f64,
    pub bin_width: f64,
}

impl HistogramBinning {
    pub fn new(low: f64, high: f64, bin_width: f64) -> Result<Self, AdaptationError> {
        let b = Self { low, high, bin_width };
        b.validate()?;
        Ok(b)
    }

    /// SBP default: [40, 220] mmHg in 2 mmHg bins.
    pub fn sbp_default() -> Self {
        Self {
            low: 40.0,
            high: 220.0,
            bin_width: 2.0,
        }
    }

    /// DBP default: [30, 150] mmHg in 2 mmHg bins.
    pub fn dbp_default() -> Self {
        Self {
            low: 30.0,
            high: 150.0,
            bin_width: 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), AdaptationError> {
        let err = |m: &str| Err(AdaptationError::InvalidBinning(m.into()));
        if !(self.low.is_finite() && self.high.is_finite() && self.bin_width.is_finite()) {
            return err("bounds and width must be finite");
        }
        if !(self.low < self.high) {
            return err("low must be below high");
        }
        if !(self.bin_width > 0.0) {
            return err("bin_width must be positive");
        }
        let n = (self.high - self.low) / self.bin_width;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) || n.round() < 1.0 {
            return err("(high - low) / bin_width must be a whole number");
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        ((self.high - self.low) / self.bin_width).round() as usize
    }

    /// Bin index of `x`, clipping out-of-range values to the boundary bins.
    pub fn bin_of(&self, x: f64) -> usize {
        let n = self.n_bins();
        if x.is_nan() || x < self.low {
            return 0;
        }
        let i = ((x - self.low) / self.bin_width).floor();
        if i >= n as f64 {
            n - 1
        } else {
            i as usize
        }
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.low + (i as f64 + 0.5) * self.bin_width
    }

    fn check_same(&self, other: &Self) -> Result<(), AdaptationError> {
        if self == other {
            Ok(())
        } else {
            Err(AdaptationError::BinningMismatch(*self, *other))
        }
    }
}

/// Normalized label histogram: bin masses sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelHistogram {
    #[serde(flatten)]
    pub binning: HistogramBinning,
    #[serde(rename = "values")]
    pub mass: Vec<f64>,
}

impl LabelHistogram {
    /// Wraps an explicit mass vector, normalizing it to sum one.
    pub fn from_mass(binning: HistogramBinning, mass: Vec<f64>) -> Result<Self, AdaptationError> {
        binning.validate()?;
        if mass.len() != binning.n_bins() {
            return Err(AdaptationError::InvalidValues(format!(
                "{} masses for {} bins",
                mass.len(),
                binning.n_bins()
            )));
        }
        if mass.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(AdaptationError::InvalidValues(
                "masses must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = mass.iter().sum();
        if total <= 0.0 {
            return Err(AdaptationError::InvalidValues("total mass must be positive".into()));
        }
        let mass = mass.into_iter().map(|m| m / total).collect();
        Ok(Self { binning, mass })
    }

    pub fn mean(&self) -> f64 {
        self.mass
            .iter()
            .enumerate()
            .map(|(i, m)| m * self.binning.bin_center(i))
            .sum()
    }

    /// Cumulative mass up to and including each bin.
    pub fn cdf(&self) -> Vec<f64> {
        self.mass
            .iter()
            .scan(0.0, |acc, m| {
                *acc += m;
                Some(*acc)
            })
            .collect()
    }
}

/// Bins `values`, clipping out-of-range entries into the boundary bins, and
/// normalizes by the total count.
pub fn build_histogram(values: &[f64], binning: HistogramBinning) -> Result<LabelHistogram, AdaptationError> {
    binning.validate()?;
    if values.is_empty() {
        return Err(AdaptationError::Empty);
    }
    let mut counts = vec![0u64; binning.n_bins()];
    for &v in values {
        if !v.is_finite() {
            return Err(AdaptationError::NonFinite(v));
        }
        counts[binning.bin_of(v)] += 1;
    }
    let n = values.len() as f64;
    Ok(LabelHistogram {
        binning,
        mass: counts.into_iter().map(|c| c as f64 / n).collect(),
    })
}

/// Per-bin importance weights, each at least `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    #[serde(flatten)]
    pub binning: HistogramBinning,
    #[serde(rename = "values")]
    pub weight: Vec<f64>,
    pub tau: f64,
}

impl WeightTable {
    /// Table with every weight equal to `tau`.
    pub fn uniform(binning: HistogramBinning, tau: f64) -> Self {
        Self {
            binning,
            weight: vec![tau; binning.n_bins()],
            tau,
        }
    }

    pub fn weight_of(&self, label: f64) -> f64 {
        self.weight[self.binning.bin_of(label)]
    }
}

/// Importance weights from training and test label histograms.
pub fn compute_weights(
    h_train: &LabelHistogram,
    h_test: &LabelHistogram,
    tau: f64,
) -> Result<WeightTable, AdaptationError> {
    h_train.binning.check_same(&h_test.binning)?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(AdaptationError::InvalidTau(tau));
    }
    let weight = h_train
        .mass
        .iter()
        .zip(&h_test.mass)
        .map(|(&tr, &te)| if tr > 0.0 { tau.max(te / tr) } else { tau })
        .collect();
    Ok(WeightTable {
        binning: h_train.binning,
        weight,
        tau,
    })
}

/// SBP and DBP weight tables for one train/test pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTables {
    pub sbp: WeightTable,
    pub dbp: WeightTable,
}

impl WeightTables {
    /// Builds both tables from training and test label lists.
    pub fn from_labels(
        train: &[(f64, f64)],
        test: &[(f64, f64)],
        sbp_binning: HistogramBinning,
        dbp_binning: HistogramBinning,
        tau: f64,
    ) -> Result<Self, AdaptationError> {
        let col = |v: &[(f64, f64)], sbp: bool| -> Vec<f64> { v.iter().map(|p| if sbp { p.0 } else { p.1 }).collect() };
        let sbp = compute_weights(
            &build_histogram(&col(train, true), sbp_binning)?,
            &build_histogram(&col(test, true), sbp_binning)?,
            tau,
        )?;
        let dbp = compute_weights(
            &build_histogram(&col(train, false), dbp_binning)?,
            &build_histogram(&col(test, false), dbp_binning)?,
            tau,
        )?;
        Ok(Self { sbp, dbp })
    }
}

/// `(w_sbp, w_dbp)` for every record, by bin lookup with boundary clipping.
pub fn assign_weights<'a>(
    records: impl IntoIterator<Item = &'a SegmentRecord>,
    sbp_table: &WeightTable,
    dbp_table: &WeightTable,
) -> Vec<(f64, f64)> {
    records
        .into_iter()
        .map(|r| (sbp_table.weight_of(r.sbp), dbp_table.weight_of(r.dbp)))
        .collect()
}

/// One-dimensional Wasserstein-1 distance in label units.
pub fn emd(h_a: &LabelHistogram, h_b: &LabelHistogram) -> Result<f64, AdaptationError> {
    h_a.binning.check_same(&h_b.binning)?;
    let mut ca = 0.0;
    let mut cb = 0.0;
    let mut total = 0.0;
    for (a, b) in h_a.mass.iter().zip(&h_b.mass) {
        ca += a;
        cb += b;
        total += (ca - cb).abs();
    }
    Ok(h_a.binning.bin_width * total)
}
