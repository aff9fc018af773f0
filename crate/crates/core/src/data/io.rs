//! On-disk bundle format and CSV + raw-blob ingestion.
//!
//! A bundle directory holds three files:
//!
//! * `manifest.json`: `{format_version, name, sample_rate, n_records, waveform_length, provenance}`
//! * `records.csv`: header `segment_id,subject_id,source,sbp,dbp,offset,length`,
//!   UTF-8 with LF line endings. `offset` and `length` count samples.
//! * `waveforms.f32le`: concatenated little-endian `f32` samples in CSV row order.
//!
//! Labels are written with Rust's shortest round-trip float formatting, so a
//! write/load cycle reproduces every `f64` exactly.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_bundle, DataError, DatasetBundle, SegmentRecord};

pub const FORMAT_VERSION: u32 = 1;
pub const RECORDS_HEADER: [&str; 7] = ["segment_id", "subject_id", "source", "sbp", "dbp", "offset", "length"];

const MANIFEST_FILE: &str = "manifest.json";
const RECORDS_FILE: &str = "records.csv";
const BLOB_FILE: &str = "waveforms.f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format_version: u32,
    pub name: String,
    pub sample_rate: f64,
    pub n_records: usize,
    pub waveform_length: usize,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

/// Writes `bundle` into directory `dir`, creating it if needed.
///
/// The bundle must pass [`validate_bundle`]; invalid bundles are refused.
pub fn write_bundle(bundle: &DatasetBundle, dir: impl AsRef<Path>) -> Result<(), DataError> {
    let dir = dir.as_ref();
    let report = validate_bundle(bundle);
    if !report.is_valid() {
        return Err(DataError::Invalid(report));
    }
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;

    let manifest = BundleManifest {
        format_version: FORMAT_VERSION,
        name: bundle.name.clone(),
        sample_rate: bundle.sample_rate,
        n_records: bundle.records.len(),
        waveform_length: bundle.waveform_length().unwrap_or(0),
        provenance: bundle.provenance.clone(),
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, json).map_err(|e| DataError::io(&path, e))?;

    let mut csv_out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    csv_out.write_record(RECORDS_HEADER).expect("in-memory write");
    let mut blob = Vec::with_capacity(bundle.records.iter().map(|r| r.waveform.len() * 4).sum());
    let mut offset = 0usize;
    for r in &bundle.records {
        csv_out
            .write_record([
                r.segment_id.as_str(),
                r.subject_id.as_str(),
                r.source.as_str(),
                &r.sbp.to_string(),
                &r.dbp.to_string(),
                &offset.to_string(),
                &r.waveform.len().to_string(),
            ])
            .expect("in-memory write");
        for x in &r.waveform {
            blob.extend_from_slice(&x.to_le_bytes());
        }
        offset += r.waveform.len();
    }
    let csv_bytes = csv_out.into_inner().expect("in-memory flush");
    let path = dir.join(RECORDS_FILE);
    fs::write(&path, csv_bytes).map_err(|e| DataError::io(&path, e))?;
    let path = dir.join(BLOB_FILE);
    fs::write(&path, blob).map_err(|e| DataError::io(&path, e))?;
    Ok(())
}

/// Reads a bundle directory written by [`write_bundle`].
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<DatasetBundle, DataError> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
    let manifest: BundleManifest =
        serde_json::from_str(&text).map_err(|e| DataError::CorruptManifest(e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(DataError::CorruptManifest(format!(
            "unsupported format_version {}",
            manifest.format_version
        )));
    }

    let path = dir.join(BLOB_FILE);
    let blob = fs::read(&path).map_err(|e| DataError::io(&path, e))?;
    let expected = (manifest.n_records as u64) * (manifest.waveform_length as u64) * 4;
    if blob.len() as u64 != expected {
        return Err(DataError::BlobSizeMismatch {
            expected,
            actual: blob.len() as u64,
        });
    }

    let path = dir.join(RECORDS_FILE);
    let csv_bytes = fs::read(&path).map_err(|e| DataError::io(&path, e))?;
    let rows = parse_rows(&csv_bytes)?;
    if rows.len() != manifest.n_records {
        return Err(DataError::CorruptManifest(format!(
            "manifest declares {} records but records.csv has {}",
            manifest.n_records,
            rows.len()
        )));
    }
    for row in &rows {
        if row.length != manifest.waveform_length as u64 {
            return Err(DataError::InvalidRecord {
                id: row.segment_id.clone(),
                reason: format!(
                    "length mismatch: manifest waveform_length {} but record length {}",
                    manifest.waveform_length, row.length
                ),
            });
        }
    }

    let mut bundle = assemble(rows, &blob, manifest.name, manifest.sample_rate)?;
    bundle.provenance = manifest.provenance;
    Ok(bundle)
}

/// Builds a bundle from an external records CSV and a raw `f32le` blob.
///
/// The CSV uses the same columns as `records.csv`; rows may reference the
/// blob in any order but their ranges must tile it exactly, without overlap.
pub fn ingest_csv(
    manifest_csv: &[u8],
    waveform_blob: &[u8],
    name: &str,
    sample_rate: f64,
) -> Result<DatasetBundle, DataError> {
    if !waveform_blob.len().is_multiple_of(4) {
        return Err(DataError::BlobSizeMismatch {
            expected: (waveform_blob.len() as u64 / 4) * 4,
            actual: waveform_blob.len() as u64,
        });
    }
    let rows = parse_rows(manifest_csv)?;
    assemble(rows, waveform_blob, name.to_owned(), sample_rate)
}

struct Row {
    segment_id: String,
    subject_id: String,
    source: String,
    sbp: f64,
    dbp: f64,
    offset: u64,
    length: u64,
}

fn parse_rows(bytes: &[u8]) -> Result<Vec<Row>, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| DataError::Csv {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    if header.iter().ne(RECORDS_HEADER.iter().copied()) {
        return Err(DataError::Csv {
            line: 1,
            reason: format!(
                "expected header {:?}, found {:?}",
                RECORDS_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for result in reader.records() {
        let rec = result.map_err(|e| DataError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let number = |i: usize| -> Result<f64, DataError> {
            field(i).trim().parse::<f64>().map_err(|_| DataError::Csv {
                line,
                reason: format!("non-numeric {} {:?}", RECORDS_HEADER[i], field(i)),
            })
        };
        let count = |i: usize| -> Result<u64, DataError> {
            field(i).trim().parse::<u64>().map_err(|_| DataError::Csv {
                line,
                reason: format!("invalid {} {:?}", RECORDS_HEADER[i], field(i)),
            })
        };
        let row = Row {
            segment_id: field(0).to_owned(),
            subject_id: field(1).to_owned(),
            source: field(2).to_owned(),
            sbp: number(3)?,
            dbp: number(4)?,
            offset: count(5)?,
            length: count(6)?,
        };
        if !seen.insert(row.segment_id.clone()) {
            return Err(DataError::DuplicateId(row.segment_id));
        }
        rows.push(row);
    }
    Ok(rows)
}

fn assemble(rows: Vec<Row>, blob: &[u8], name: String, sample_rate: f64) -> Result<DatasetBundle, DataError> {
    let blob_len = blob.len() as u64 / 4;

    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&i| (rows[i].offset, rows[i].length));
    let mut cursor = 0u64;
    let mut prev: Option<usize> = None;
    for &i in &order {
        let row = &rows[i];
        let end = row.offset.saturating_add(row.length);
        if end > blob_len {
            return Err(DataError::OutOfRange {
                id: row.segment_id.clone(),
                start: row.offset,
                end,
                blob_len,
            });
        }
        if row.offset < cursor {
            return Err(DataError::Overlap {
                first: rows[prev.expect("cursor > 0 implies a previous row")]
                    .segment_id
                    .clone(),
                second: row.segment_id.clone(),
            });
        }
        if row.offset > cursor {
            return Err(DataError::Uncovered {
                start: cursor,
                end: row.offset,
            });
        }
        cursor = end;
        prev = Some(i);
    }
    if cursor != blob_len {
        return Err(DataError::Uncovered {
            start: cursor,
            end: blob_len,
        });
    }

    let records = rows
        .into_iter()
        .map(|row| {
            let start = row.offset as usize * 4;
            let end = start + row.length as usize * 4;
            let waveform = blob[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            SegmentRecord {
                segment_id: row.segment_id,
                subject_id: row.subject_id,
                source: row.source,
                waveform,
                sbp: row.sbp,
                dbp: row.dbp,
            }
        })
        .collect();

    let bundle = DatasetBundle::new(name, sample_rate, records);
    let report = validate_bundle(&bundle);
    if !report.is_valid() {
        return Err(DataError::Invalid(report));
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(samples: usize) -> Vec<u8> {
        (0..samples).flat_map(|i| (i as f32 * 0.01).to_le_bytes()).collect()
    }

    #[test]
    fn two_row_csv_ingests() {
        let csv = "segment_id,subject_id,source,sbp,dbp,offset,length\n\
                   a,s1,ext,120.5,80,0,625\n\
                   b,s2,ext,130,75.25,625,625\n";
        let b = ingest_csv(csv.as_bytes(), &blob(1250), "ext", 125.0).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.waveform_length(), Some(625));
        assert_eq!(b.records[1].waveform[0], 625.0 * 0.01);
        assert_eq!(b.records[0].sbp, 120.5);
    }

    #[test]
    fn label_order_rejected() {
        let csv = "segment_id,subject_id,source,sbp,dbp,offset,length\na,s1,ext,80,90,0,4\n";
        let err = ingest_csv(csv.as_bytes(), &blob(4), "ext", 125.0).unwrap_err();
        assert!(err.to_string().contains("sbp must exceed dbp"), "{err}");
    }

    #[test]
    fn overlap_rejected() {
        let csv = "segment_id,subject_id,source,sbp,dbp,offset,length\n\
                   a,s1,ext,120,80,0,5\n\
                   b,s1,ext,120,80,4,5\n";
        let err = ingest_csv(csv.as_bytes(), &blob(9), "ext", 125.0).unwrap_err();
        assert!(matches!(err, DataError::Overlap { .. }), "{err}");
    }

    #[test]
    fn out_of_range_and_gaps_rejected() {
        let csv = "segment_id,subject_id,source,sbp,dbp,offset,length\na,s1,ext,120,80,0,5\n";
        let err = ingest_csv(csv.as_bytes(), &blob(4), "ext", 125.0).unwrap_err();
        assert!(matches!(err, DataError::OutOfRange { .. }), "{err}");
        let err = ingest_csv(csv.as_bytes(), &blob(6), "ext", 125.0).unwrap_err();
        assert!(matches!(err, DataError::Uncovered { start: 5, end: 6 }), "{err}");
    }

    #[test]
    fn non_numeric_label_rejected() {
        let csv = "segment_id,subject_id,source,sbp,dbp,offset,length\na,s1,ext,high,80,0,4\n";
        let err = ingest_csv(csv.as_bytes(), &blob(4), "ext", 125.0).unwrap_err();
        assert!(err.to_string().contains("non-numeric sbp"), "{err}");
    }

    #[test]
    fn bad_header_rejected() {
        let csv = "id,subject,source,sbp,dbp,offset,length\na,s1,ext,120,80,0,4\n";
        assert!(matches!(
            ingest_csv(csv.as_bytes(), &blob(4), "ext", 125.0),
            Err(DataError::Csv { line: 1, .. })
        ));
    }

    #[test]
    fn rows_may_reference_blob_out_of_order() {
        let csv = "segment_id,subject_id,source,sbp,dbp,offset,length\n\
                   b,s2,ext,130,75,4,4\n\
                   a,s1,ext,120,80,0,4\n";
        let b = ingest_csv(csv.as_bytes(), &blob(8), "ext", 125.0).unwrap();
        assert_eq!(b.records[0].segment_id, "b");
        assert_eq!(b.records[0].waveform[0], 4.0 * 0.01);
    }
}
