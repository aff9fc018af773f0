//! Segment records, bundles and bundle validation.

mod io;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use io::{ingest_csv, load_bundle, write_bundle, BundleManifest, FORMAT_VERSION, RECORDS_HEADER};
pub use synth::{generate_synthetic, SynthConfig, LABEL_JITTER_MMHG};

/// Default sampling rate of every waveform handled by this crate.
pub const DEFAULT_SAMPLE_RATE: f64 = 125.0;
/// Admissible systolic range in mmHg (inclusive).
pub const SBP_BOUNDS: (f64, f64) = (40.0, 300.0);
/// Admissible diastolic range in mmHg (inclusive).
pub const DBP_BOUNDS: (f64, f64) = (20.0, 200.0);

/// One PPG segment with its reference blood pressure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment_id: String,
    pub subject_id: String,
    /// Acquisition source tag, e.g. `vital`, `mimic`, `synthetic`.
    pub source: String,
    pub waveform: Vec<f32>,
    /// Systolic reference in mmHg.
    pub sbp: f64,
    /// Diastolic reference in mmHg.
    pub dbp: f64,
}

/// A collection of segments sharing one sample rate and one segment length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub name: String,
    pub sample_rate: f64,
    pub records: Vec<SegmentRecord>,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl DatasetBundle {
    pub fn new(name: impl Into<String>, sample_rate: f64, records: Vec<SegmentRecord>) -> Self {
        Self {
            name: name.into(),
            sample_rate,
            records,
            provenance: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Length of the first waveform; `None` for an empty bundle.
    pub fn waveform_length(&self) -> Option<usize> {
        self.records.first().map(|r| r.waveform.len())
    }

    pub fn subjects(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.subject_id.as_str()).collect()
    }

    /// Map from segment id to record position. Later duplicates win.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.segment_id.as_str(), i))
            .collect()
    }

    pub fn get(&self, segment_id: &str) -> Option<&SegmentRecord> {
        self.records.iter().find(|r| r.segment_id == segment_id)
    }

    /// Keeps the records for which `keep` returns true, preserving order.
    pub fn filtered(&self, name: impl Into<String>, keep: impl Fn(&SegmentRecord) -> bool) -> Self {
        Self {
            name: name.into(),
            sample_rate: self.sample_rate,
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn sbp_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.sbp).collect()
    }

    pub fn dbp_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.dbp).collect()
    }
}

/// Kinds of invariant violation reported by [`validate_bundle`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NonFiniteWaveform,
    EmptyWaveform,
    NonFiniteLabel,
    LabelOrder,
    SbpOutOfRange,
    DbpOutOfRange,
    DuplicateId,
    LengthHeterogeneity,
    InvalidSampleRate,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::NonFiniteWaveform => "non-finite waveform",
            Self::EmptyWaveform => "empty waveform",
            Self::NonFiniteLabel => "non-finite label",
            Self::LabelOrder => "sbp must exceed dbp",
            Self::SbpOutOfRange => "sbp out of range",
            Self::DbpOutOfRange => "dbp out of range",
            Self::DuplicateId => "duplicate segment id",
            Self::LengthHeterogeneity => "length heterogeneity",
            Self::InvalidSampleRate => "invalid sample rate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Offending record; `None` for bundle-level problems.
    pub record_id: Option<String>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.record_id {
            Some(id) => write!(f, "record {id:?}: {} ({})", self.kind, self.detail),
            None => write!(f, "{} ({})", self.kind, self.detail),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn of_kind(&self, kind: ViolationKind) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(move |v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, record_id: Option<&str>, detail: String) {
        self.violations.push(Violation {
            kind,
            record_id: record_id.map(str::to_owned),
            detail,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks a single record's labels against the sanity bounds.
pub(crate) fn label_violations(sbp: f64, dbp: f64) -> Vec<(ViolationKind, String)> {
    let mut out = Vec::new();
    if !sbp.is_finite() || !dbp.is_finite() {
        out.push((ViolationKind::NonFiniteLabel, format!("sbp={sbp}, dbp={dbp}")));
        return out;
    }
    if sbp <= dbp {
        out.push((ViolationKind::LabelOrder, format!("sbp={sbp}, dbp={dbp}")));
    }
    if !(SBP_BOUNDS.0..=SBP_BOUNDS.1).contains(&sbp) {
        out.push((
            ViolationKind::SbpOutOfRange,
            format!("sbp={sbp} outside [{}, {}]", SBP_BOUNDS.0, SBP_BOUNDS.1),
        ));
    }
    if !(DBP_BOUNDS.0..=DBP_BOUNDS.1).contains(&dbp) {
        out.push((
            ViolationKind::DbpOutOfRange,
            format!("dbp={dbp} outside [{}, {}]", DBP_BOUNDS.0, DBP_BOUNDS.1),
        ));
    }
    out
}

/// Lists every invariant violation in `bundle`. An empty report means the
/// bundle is valid.
pub fn validate_bundle(bundle: &DatasetBundle) -> ValidationReport {
    let mut report = ValidationReport::default();
    if !(bundle.sample_rate.is_finite() && bundle.sample_rate > 0.0) {
        report.push(
            ViolationKind::InvalidSampleRate,
            None,
            format!("sample_rate={}", bundle.sample_rate),
        );
    }

    let mut seen: HashMap<&str, usize> = HashMap::new();
    for r in &bundle.records {
        let n = seen.entry(r.segment_id.as_str()).or_insert(0);
        *n += 1;
        if *n == 2 {
            report.push(
                ViolationKind::DuplicateId,
                Some(&r.segment_id),
                "segment_id appears more than once".into(),
            );
        }
    }

    // Modal length is the reference; ties resolve to the shorter length.
    let mut length_counts: BTreeMap<usize, usize> = BTreeMap::new();
    for r in &bundle.records {
        *length_counts.entry(r.waveform.len()).or_insert(0) += 1;
    }
    let modal = length_counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(len, _)| *len);

    for r in &bundle.records {
        let id = Some(r.segment_id.as_str());
        if r.waveform.is_empty() {
            report.push(ViolationKind::EmptyWaveform, id, "waveform has no samples".into());
        }
        if let Some(pos) = r.waveform.iter().position(|x| !x.is_finite()) {
            report.push(
                ViolationKind::NonFiniteWaveform,
                id,
                format!("sample {pos} is {}", r.waveform[pos]),
            );
        }
        if let Some(modal) = modal {
            if r.waveform.len() != modal {
                report.push(
                    ViolationKind::LengthHeterogeneity,
                    id,
                    format!("length {} differs from bundle length {modal}", r.waveform.len()),
                );
            }
        }
        for (kind, detail) in label_violations(r.sbp, r.dbp) {
            report.push(kind, id, detail);
        }
    }
    report
}

/// Errors raised while reading, writing, ingesting or generating bundles.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("blob size mismatch: expected {expected} bytes, found {actual}")]
    BlobSizeMismatch { expected: u64, actual: u64 },
    #[error("duplicate segment_id {0:?}")]
    DuplicateId(String),
    #[error("record {id:?}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("records.csv line {line}: {reason}")]
    Csv { line: u64, reason: String },
    #[error("waveform ranges of {first:?} and {second:?} overlap")]
    Overlap { first: String, second: String },
    #[error("record {id:?}: samples {start}..{end} lie outside the blob of {blob_len} samples")]
    OutOfRange {
        id: String,
        start: u64,
        end: u64,
        blob_len: u64,
    },
    #[error("waveform ranges do not tile the blob: samples {start}..{end} are not covered")]
    Uncovered { start: u64, end: u64 },
    #[error("invalid bundle: {0}")]
    Invalid(ValidationReport),
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
