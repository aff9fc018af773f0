//! Calib, CalibFree and AAMI split construction and verification.
//!
//! * **Calib** partitions each subject's segments, so test subjects also
//!   contribute training data. Validation and calibration segments are drawn
//!   per subject in the same way.
//! * **CalibFree** partitions subjects: train, validation, calibration and
//!   test subject sets are pairwise disjoint.
//! * **AAMI** is subject-disjoint like CalibFree, but test subjects are chosen
//!   so that at least `min_tail_fraction` of the test segments lie below
//!   `low_sbp_threshold` and at least as many above `high_sbp_threshold`.
//!
//! Fractions are applied to segment counts per subject (Calib) or to the
//! number of subjects (CalibFree, AAMI), rounded to nearest. All decisions
//! depend on sorted subject and segment ids plus the seed, never on record
//! order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DatasetBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Calib,
    CalibFree,
    Aami,
}

impl Scenario {
    pub fn is_subject_disjoint(self) -> bool {
        matches!(self, Self::CalibFree | Self::Aami)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Calib => "calib",
            Self::CalibFree => "calibfree",
            Self::Aami => "aami",
        })
    }
}

impl FromStr for Scenario {
    type Err = SplitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "calib" => Ok(Self::Calib),
            "calibfree" | "calib-free" | "calib_free" => Ok(Self::CalibFree),
            "aami" => Ok(Self::Aami),
            other => Err(SplitError::InvalidSpec(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
    Calibration,
    Test,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Train, Role::Validation, Role::Calibration, Role::Test];
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Validation => "validation",
            Self::Calibration => "calibration",
            Self::Test => "test",
        })
    }
}

impl FromStr for Role {
    type Err = SplitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "validation" => Ok(Self::Validation),
            "calibration" => Ok(Self::Calibration),
            "test" => Ok(Self::Test),
            other => Err(SplitError::Format(format!("unknown role {other:?}"))),
        }
    }
}

/// SBP tail quota for the AAMI scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailQuota {
    pub low_sbp_threshold: f64,
    pub high_sbp_threshold: f64,
    pub min_tail_fraction: f64,
}

impl Default for TailQuota {
    fn default() -> Self {
        Self {
            low_sbp_threshold: 100.0,
            high_sbp_threshold: 160.0,
            min_tail_fraction: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub scenario: Scenario,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub calib_fraction: f64,
    pub aami_tail_quota: TailQuota,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            scenario: Scenario::CalibFree,
            test_fraction: 0.10,
            val_fraction: 0.10,
            calib_fraction: 0.0125,
            aami_tail_quota: TailQuota::default(),
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        Self {
            scenario,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SplitError> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !open(self.test_fraction) {
            return Err(SplitError::InvalidSpec("test_fraction must lie in (0, 1)".into()));
        }
        if !open(self.val_fraction) {
            return Err(SplitError::InvalidSpec("val_fraction must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.calib_fraction) {
            return Err(SplitError::InvalidSpec("calib_fraction must lie in [0, 1)".into()));
        }
        if self.test_fraction + self.val_fraction + self.calib_fraction >= 1.0 {
            return Err(SplitError::InvalidSpec("fractions must sum to less than 1".into()));
        }
        let q = &self.aami_tail_quota;
        if !(q.low_sbp_threshold < q.high_sbp_threshold) {
            return Err(SplitError::InvalidSpec(
                "low_sbp_threshold must be below high_sbp_threshold".into(),
            ));
        }
        if !(0.0..=0.5).contains(&q.min_tail_fraction) {
            return Err(SplitError::InvalidSpec("min_tail_fraction must lie in [0, 0.5]".into()));
        }
        Ok(())
    }
}

/// Role of every segment in a bundle under one split specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub role_of: BTreeMap<String, Role>,
    pub spec: SplitSpec,
    pub source_bundle: String,
    /// Non-fatal notes, e.g. single-segment subjects kept train-only under Calib.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SplitAssignment {
    pub fn scenario(&self) -> Scenario {
        self.spec.scenario
    }

    pub fn role(&self, segment_id: &str) -> Option<Role> {
        self.role_of.get(segment_id).copied()
    }

    /// Segment ids holding `role`, in sorted id order.
    pub fn ids_with(&self, role: Role) -> Vec<&str> {
        self.role_of
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Record positions in `bundle` holding `role`, in bundle order.
    pub fn indices(&self, bundle: &DatasetBundle, role: Role) -> Vec<usize> {
        bundle
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| self.role(&r.segment_id) == Some(role))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, role: Role) -> usize {
        self.role_of.values().filter(|r| **r == role).count()
    }

    /// `segment_id,role` CSV with LF line endings, sorted by id.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("segment_id,role\n");
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        for (id, role) in &self.role_of {
            w.write_record([id.as_str(), &role.to_string()])
                .expect("in-memory write");
        }
        out.push_str(std::str::from_utf8(&w.into_inner().expect("in-memory flush")).expect("utf-8 ids"));
        out
    }

    /// JSON sidecar holding the spec, source bundle name and warnings.
    pub fn sidecar_json(&self) -> String {
        let sidecar = Sidecar {
            spec: self.spec.clone(),
            source_bundle: self.source_bundle.clone(),
            warnings: self.warnings.clone(),
        };
        let mut s = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        s.push('\n');
        s
    }

    pub fn from_csv_and_sidecar(csv_text: &str, sidecar_json: &str) -> Result<Self, SplitError> {
        let sidecar: Sidecar = serde_json::from_str(sidecar_json).map_err(|e| SplitError::Format(e.to_string()))?;
        let mut reader = csv::ReaderBuilder::new().from_reader(csv_text.as_bytes());
        let header = reader.headers().map_err(|e| SplitError::Format(e.to_string()))?;
        if header.iter().ne(["segment_id", "role"]) {
            return Err(SplitError::Format("expected header segment_id,role".into()));
        }
        let mut role_of = BTreeMap::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| SplitError::Format(e.to_string()))?;
            let id = rec.get(0).unwrap_or_default().to_owned();
            let role: Role = rec.get(1).unwrap_or_default().parse()?;
            if role_of.insert(id.clone(), role).is_some() {
                return Err(SplitError::Format(format!("segment {id:?} listed twice")));
            }
        }
        Ok(Self {
            role_of,
            spec: sidecar.spec,
            source_bundle: sidecar.source_bundle,
            warnings: sidecar.warnings,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    spec: SplitSpec,
    source_bundle: String,
    #[serde(default)]
    warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error("{scenario} split needs at least {needed} subjects, bundle has {found}")]
    TooFewSubjects {
        scenario: Scenario,
        needed: usize,
        found: usize,
    },
    #[error(
        "infeasible AAMI tail quota: achievable test fractions are {low_fraction:.4} below \
         {low_threshold} mmHg and {high_fraction:.4} above {high_threshold} mmHg, required {required}"
    )]
    InfeasibleTailQuota {
        low_fraction: f64,
        high_fraction: f64,
        low_threshold: f64,
        high_threshold: f64,
        required: f64,
    },
    #[error("split file: {0}")]
    Format(String),
}

/// Builds the role assignment for `bundle` under `spec`.
pub fn make_split(bundle: &DatasetBundle, spec: &SplitSpec) -> Result<SplitAssignment, SplitError> {
    spec.validate()?;
    let groups = subject_groups(bundle);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut role_of = BTreeMap::new();
    let mut warnings = Vec::new();

    match spec.scenario {
        Scenario::Calib => {
            for (subject, mut ids) in groups {
                ids.shuffle(&mut rng);
                let n = ids.len();
                if n == 1 {
                    warnings.push(format!(
                        "subject {subject:?} has a single segment; assigned to train only"
                    ));
                    role_of.insert(ids[0].to_owned(), Role::Train);
                    continue;
                }
                let counts = partition_counts(n, spec);
                for (role, id) in counts.expand().zip(ids) {
                    role_of.insert(id.to_owned(), role);
                }
            }
        }
        Scenario::CalibFree | Scenario::Aami => {
            if groups.len() < 4 {
                return Err(SplitError::TooFewSubjects {
                    scenario: spec.scenario,
                    needed: 4,
                    found: groups.len(),
                });
            }
            let mut subjects: Vec<&str> = groups.keys().copied().collect();
            subjects.shuffle(&mut rng);
            let counts = partition_counts(subjects.len(), spec);

            let (test, rest): (Vec<&str>, Vec<&str>) = if spec.scenario == Scenario::Aami {
                select_tail_subjects(bundle, &subjects, counts.test, &spec.aami_tail_quota)?
            } else {
                (subjects[..counts.test].to_vec(), subjects[counts.test..].to_vec())
            };
            let mut subject_role: BTreeMap<&str, Role> = test.iter().map(|s| (*s, Role::Test)).collect();
            let mut rest_roles = std::iter::repeat_n(Role::Validation, counts.validation)
                .chain(std::iter::repeat_n(Role::Calibration, counts.calibration))
                .chain(std::iter::repeat(Role::Train));
            for s in rest {
                subject_role.insert(s, rest_roles.next().expect("infinite tail"));
            }
            for (subject, ids) in &groups {
                let role = subject_role[subject];
                for id in ids {
                    role_of.insert((*id).to_owned(), role);
                }
            }
        }
    }

    Ok(SplitAssignment {
        role_of,
        spec: spec.clone(),
        source_bundle: bundle.name.clone(),
        warnings,
    })
}

/// Subject id to sorted segment ids, both in sorted order.
fn subject_groups(bundle: &DatasetBundle) -> BTreeMap<&str, Vec<&str>> {
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in &bundle.records {
        groups
            .entry(r.subject_id.as_str())
            .or_default()
            .push(r.segment_id.as_str());
    }
    for ids in groups.values_mut() {
        ids.sort_unstable();
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct RoleCounts {
    test: usize,
    validation: usize,
    calibration: usize,
    train: usize,
}

impl RoleCounts {
    /// Roles in the order test, validation, calibration, train.
    fn expand(self) -> impl Iterator<Item = Role> {
        std::iter::repeat_n(Role::Test, self.test)
            .chain(std::iter::repeat_n(Role::Validation, self.validation))
            .chain(std::iter::repeat_n(Role::Calibration, self.calibration))
            .chain(std::iter::repeat_n(Role::Train, self.train))
    }
}

/// Splits `n >= 2` units: at least one test and one train unit. For
/// subject-disjoint scenarios (`n >= 4`) validation also gets at least one.
fn partition_counts(n: usize, spec: &SplitSpec) -> RoleCounts {
    let round = |f: f64| (f * n as f64).round() as usize;
    let test = round(spec.test_fraction).clamp(1, n - 1);
    let mut remaining = n - test;
    let min_val = usize::from(spec.scenario.is_subject_disjoint());
    let validation = round(spec.val_fraction).max(min_val).min(remaining - 1);
    remaining -= validation;
    let calibration = round(spec.calib_fraction).min(remaining - 1);
    remaining -= calibration;
    RoleCounts {
        test,
        validation,
        calibration,
        train: remaining,
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct TailTally {
    low: usize,
    high: usize,
    total: usize,
}

impl TailTally {
    fn add(self, o: TailTally) -> TailTally {
        TailTally {
            low: self.low + o.low,
            high: self.high + o.high,
            total: self.total + o.total,
        }
    }

    fn fractions(&self) -> (f64, f64) {
        if self.total == 0 {
            return (0.0, 0.0);
        }
        (
            self.low as f64 / self.total as f64,
            self.high as f64 / self.total as f64,
        )
    }

    fn satisfies(&self, q: f64) -> bool {
        let (l, h) = self.fractions();
        l >= q && h >= q
    }

    fn min_fraction(&self) -> f64 {
        let (l, h) = self.fractions();
        l.min(h)
    }
}

/// Chooses `k` test subjects meeting the tail quota.
///
/// Seeds the test set alternately with the subjects owning the most low-tail
/// and high-tail segments until both quotas hold, then fills the remaining
/// slots in shuffled order with subjects whose addition keeps both quotas.
/// When no candidate keeps them, the one maximizing the smaller tail fraction
/// is taken. `subjects` is already in seeded-shuffle order, which also breaks
/// ties.
fn select_tail_subjects<'a>(
    bundle: &DatasetBundle,
    subjects: &[&'a str],
    k: usize,
    quota: &TailQuota,
) -> Result<(Vec<&'a str>, Vec<&'a str>), SplitError> {
    let mut tally: BTreeMap<&str, TailTally> = BTreeMap::new();
    for r in &bundle.records {
        let t = tally.entry(r.subject_id.as_str()).or_default();
        t.total += 1;
        if r.sbp < quota.low_sbp_threshold {
            t.low += 1;
        }
        if r.sbp > quota.high_sbp_threshold {
            t.high += 1;
        }
    }
    let q = quota.min_tail_fraction;
    let mut remaining: Vec<&'a str> = subjects.to_vec();
    let mut chosen: Vec<&'a str> = Vec::with_capacity(k);
    let mut acc = TailTally::default();

    let take = |remaining: &mut Vec<&'a str>, pos: usize, chosen: &mut Vec<&'a str>, acc: &mut TailTally| {
        let s = remaining.remove(pos);
        *acc = acc.add(tally[s]);
        chosen.push(s);
    };

    // Seeding phase.
    while chosen.len() < k && !acc.satisfies(q) {
        let (l, h) = acc.fractions();
        let want_high = h < q && (h <= l || l >= q);
        let key = |s: &&str| if want_high { tally[*s].high } else { tally[*s].low };
        let best = remaining
            .iter()
            .enumerate()
            .max_by(|a, b| key(a.1).cmp(&key(b.1)).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i);
        match best {
            Some(i) if key(&remaining[i]) > 0 => take(&mut remaining, i, &mut chosen, &mut acc),
            _ => break,
        }
    }

    // Filling phase.
    while chosen.len() < k {
        let keeps = remaining.iter().position(|s| acc.add(tally[*s]).satisfies(q));
        let pos = keeps.unwrap_or_else(|| {
            remaining
                .iter()
                .enumerate()
                .max_by(|a, b| {
                    let fa = acc.add(tally[*a.1]).min_fraction();
                    let fb = acc.add(tally[*b.1]).min_fraction();
                    fa.total_cmp(&fb).then(b.0.cmp(&a.0))
                })
                .map(|(i, _)| i)
                .expect("k < number of subjects")
        });
        take(&mut remaining, pos, &mut chosen, &mut acc);
    }

    if !acc.satisfies(q) {
        let (low_fraction, high_fraction) = acc.fractions();
        return Err(SplitError::InfeasibleTailQuota {
            low_fraction,
            high_fraction,
            low_threshold: quota.low_sbp_threshold,
            high_threshold: quota.high_sbp_threshold,
            required: q,
        });
    }
    // Keep the leftover subjects in their shuffled order.
    Ok((chosen, remaining))
}

/// One broken invariant found by [`verify_split`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitViolation {
    pub invariant: SplitInvariant,
    pub ids: Vec<String>,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitInvariant {
    /// Every bundle segment appears exactly once.
    Coverage,
    /// Assignment names a segment the bundle does not have.
    UnknownSegment,
    /// CalibFree/AAMI: a subject holds both train and test segments.
    SubjectOverlap,
    /// Calib: a test segment's subject has no train segment.
    SubjectSharing,
    /// AAMI: test tail fractions below the quota.
    TailQuota,
}

impl fmt::Display for SplitInvariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Coverage => "coverage",
            Self::UnknownSegment => "unknown segment",
            Self::SubjectOverlap => "subject overlap",
            Self::SubjectSharing => "subject sharing",
            Self::TailQuota => "tail quota",
        })
    }
}

/// Lists every violated [`SplitAssignment`] invariant. Empty iff the
/// assignment is consistent with `bundle`.
pub fn verify_split(bundle: &DatasetBundle, assignment: &SplitAssignment) -> Vec<SplitViolation> {
    let mut out = Vec::new();
    let bundle_ids: BTreeSet<&str> = bundle.records.iter().map(|r| r.segment_id.as_str()).collect();

    let missing: Vec<String> = bundle_ids
        .iter()
        .filter(|id| !assignment.role_of.contains_key(**id))
        .map(|id| (*id).to_owned())
        .collect();
    if !missing.is_empty() {
        out.push(SplitViolation {
            invariant: SplitInvariant::Coverage,
            detail: format!("{} segment(s) have no role", missing.len()),
            ids: missing,
        });
    }
    let unknown: Vec<String> = assignment
        .role_of
        .keys()
        .filter(|id| !bundle_ids.contains(id.as_str()))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        out.push(SplitViolation {
            invariant: SplitInvariant::UnknownSegment,
            detail: format!("{} assigned id(s) are not in the bundle", unknown.len()),
            ids: unknown,
        });
    }

    let mut roles_by_subject: BTreeMap<&str, BTreeSet<Role>> = BTreeMap::new();
    for r in &bundle.records {
        if let Some(role) = assignment.role(&r.segment_id) {
            roles_by_subject.entry(r.subject_id.as_str()).or_default().insert(role);
        }
    }

    match assignment.scenario() {
        Scenario::Calib => {
            let orphans: Vec<String> = roles_by_subject
                .iter()
                .filter(|(_, roles)| roles.contains(&Role::Test) && !roles.contains(&Role::Train))
                .map(|(s, _)| (*s).to_owned())
                .collect();
            if !orphans.is_empty() {
                out.push(SplitViolation {
                    invariant: SplitInvariant::SubjectSharing,
                    detail: "test subjects without any train segment".into(),
                    ids: orphans,
                });
            }
        }
        Scenario::CalibFree | Scenario::Aami => {
            let shared: Vec<String> = roles_by_subject
                .iter()
                .filter(|(_, roles)| roles.contains(&Role::Test) && roles.contains(&Role::Train))
                .map(|(s, _)| (*s).to_owned())
                .collect();
            if !shared.is_empty() {
                out.push(SplitViolation {
                    invariant: SplitInvariant::SubjectOverlap,
                    detail: "subjects present in both train and test".into(),
                    ids: shared,
                });
            }
        }
    }

    if assignment.scenario() == Scenario::Aami {
        let q = assignment.spec.aami_tail_quota;
        let test: Vec<f64> = bundle
            .records
            .iter()
            .filter(|r| assignment.role(&r.segment_id) == Some(Role::Test))
            .map(|r| r.sbp)
            .collect();
        let n = test.len().max(1) as f64;
        let low = test.iter().filter(|s| **s < q.low_sbp_threshold).count() as f64 / n;
        let high = test.iter().filter(|s| **s > q.high_sbp_threshold).count() as f64 / n;
        if low < q.min_tail_fraction || high < q.min_tail_fraction {
            out.push(SplitViolation {
                invariant: SplitInvariant::TailQuota,
                detail: format!(
                    "test tail fractions {low:.4} (low) and {high:.4} (high) below {}",
                    q.min_tail_fraction
                ),
                ids: Vec::new(),
            });
        }
    }
    out
}
