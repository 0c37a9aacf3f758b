//! Sample manifests, quality policies, enrollment plans and pair enumeration.
//!
//! Manifest CSV (UTF-8, header required):
//!
//! ```text
//! identity_id,sample_id,path,overall_quality_score,iris_radius,dilation,usable_iris_area,iris_sclera_contrast,iris_pupil_contrast,grayscale_utilization,iris_pupil_concentricity,margin_adequacy
//! ```
//!
//! An empty metric cell means the metric was not measured.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityMetric {
    OverallQualityScore,
    IrisRadius,
    Dilation,
    UsableIrisArea,
    IrisScleraContrast,
    IrisPupilContrast,
    GrayscaleUtilization,
    IrisPupilConcentricity,
    MarginAdequacy,
}

impl QualityMetric {
    pub const ALL: [QualityMetric; 9] = [
        QualityMetric::OverallQualityScore,
        QualityMetric::IrisRadius,
        QualityMetric::Dilation,
        QualityMetric::UsableIrisArea,
        QualityMetric::IrisScleraContrast,
        QualityMetric::IrisPupilContrast,
        QualityMetric::GrayscaleUtilization,
        QualityMetric::IrisPupilConcentricity,
        QualityMetric::MarginAdequacy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QualityMetric::OverallQualityScore => "overall_quality_score",
            QualityMetric::IrisRadius => "iris_radius",
            QualityMetric::Dilation => "dilation",
            QualityMetric::UsableIrisArea => "usable_iris_area",
            QualityMetric::IrisScleraContrast => "iris_sclera_contrast",
            QualityMetric::IrisPupilContrast => "iris_pupil_contrast",
            QualityMetric::GrayscaleUtilization => "grayscale_utilization",
            QualityMetric::IrisPupilConcentricity => "iris_pupil_concentricity",
            QualityMetric::MarginAdequacy => "margin_adequacy",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for QualityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The nine quality measurements of one sample; any may be absent.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QualityMetrics([Option<f64>; 9]);

impl QualityMetrics {
    pub fn get(&self, metric: QualityMetric) -> Option<f64> {
        self.0[metric.index()]
    }

    pub fn set(&mut self, metric: QualityMetric, value: Option<f64>) {
        self.0[metric.index()] = value;
    }

    pub fn with(mut self, metric: QualityMetric, value: f64) -> Self {
        self.set(metric, Some(value));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub identity_id: String,
    pub sample_id: String,
    pub path: PathBuf,
    pub quality: QualityMetrics,
}

impl SampleRecord {
    pub fn overall_quality(&self) -> Option<f64> {
        self.quality.get(QualityMetric::OverallQualityScore)
    }
}

fn header() -> Vec<&'static str> {
    let mut h = vec!["identity_id", "sample_id", "path"];
    h.extend(QualityMetric::ALL.iter().map(|m| m.name()));
    h
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let file = std::fs::File::open(path)?;
    parse_manifest(file)
}

/// Parses and validates manifest CSV text.
pub fn parse_manifest<R: Read>(reader: R) -> Result<Vec<SampleRecord>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let found: Vec<String> = csv.headers()?.iter().map(str::to_owned).collect();
    if found != header() {
        return Err(Error::Manifest {
            line: 1,
            message: format!(
                "expected header {:?}, found {:?}",
                header().join(","),
                found.join(",")
            ),
        });
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in csv.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Manifest { line, message };
        if row.len() != 12 {
            return Err(bad(format!("expected 12 fields, found {}", row.len())));
        }
        let identity_id = row[0].trim().to_owned();
        let sample_id = row[1].trim().to_owned();
        if identity_id.is_empty() || sample_id.is_empty() {
            return Err(bad("identity_id and sample_id must be non-empty".into()));
        }
        let mut quality = QualityMetrics::default();
        for (i, metric) in QualityMetric::ALL.iter().enumerate() {
            let cell = row[3 + i].trim();
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| bad(format!("{metric}: {cell:?} is not a number")))?;
            if !v.is_finite() {
                return Err(bad(format!("{metric}: {cell:?} is not finite")));
            }
            quality.set(*metric, Some(v));
        }
        if !seen.insert((identity_id.clone(), sample_id.clone())) {
            return Err(Error::DuplicateSample {
                identity_id,
                sample_id,
            });
        }
        records.push(SampleRecord {
            identity_id,
            sample_id,
            path: PathBuf::from(row[2].trim()),
            quality,
        });
    }
    Ok(records)
}

/// Writes records in the manifest CSV schema.
pub fn write_manifest(path: impl AsRef<Path>, records: &[SampleRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header())?;
    for r in records {
        let mut row = vec![
            r.identity_id.clone(),
            r.sample_id.clone(),
            r.path.to_string_lossy().into_owned(),
        ];
        row.extend(
            QualityMetric::ALL
                .iter()
                .map(|m| r.quality.get(*m).map(|v| v.to_string()).unwrap_or_default()),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QualityMode {
    #[serde(rename = "ALLQ")]
    Allq,
    #[serde(rename = "ISOQ")]
    Isoq,
}

impl QualityMode {
    pub const ALL: [QualityMode; 2] = [QualityMode::Allq, QualityMode::Isoq];
}

impl fmt::Display for QualityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QualityMode::Allq => f.write_str("ALLQ"),
            QualityMode::Isoq => f.write_str("ISOQ"),
        }
    }
}

/// Inclusive bounds on one metric; `None` leaves that side open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

impl Bounds {
    pub fn at_least(min: f64) -> Self {
        Self {
            min: Some(min),
            max: None,
        }
    }

    pub fn between(min: f64, max: f64) -> Self {
        Self {
            min: Some(min),
            max: Some(max),
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.min.is_none_or(|m| v >= m) && self.max.is_none_or(|m| v <= m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityPolicy {
    mode: QualityMode,
    bounds: BTreeMap<QualityMetric, Bounds>,
}

impl QualityPolicy {
    pub fn allq() -> Self {
        Self {
            mode: QualityMode::Allq,
            bounds: BTreeMap::new(),
        }
    }

    pub fn isoq(bounds: BTreeMap<QualityMetric, Bounds>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Parameter(
                "ISOQ policy needs at least one bounded metric".into(),
            ));
        }
        for (metric, b) in &bounds {
            if b.min.is_none() && b.max.is_none() {
                return Err(Error::Parameter(format!(
                    "{metric}: bound has neither min nor max"
                )));
            }
            if let (Some(lo), Some(hi)) = (b.min, b.max) {
                if lo > hi {
                    return Err(Error::Parameter(format!(
                        "{metric}: min {lo} exceeds max {hi}"
                    )));
                }
            }
        }
        Ok(Self {
            mode: QualityMode::Isoq,
            bounds,
        })
    }

    /// Placeholder ISO/IEC 29794-6-style bounds. The cutoffs used by
    /// commercial quality tools are not public; override them in the
    /// experiment config for real data.
    pub fn default_iso_bounds() -> BTreeMap<QualityMetric, Bounds> {
        use QualityMetric::*;
        BTreeMap::from([
            (OverallQualityScore, Bounds::at_least(50.0)),
            (IrisRadius, Bounds::at_least(80.0)),
            (Dilation, Bounds::between(20.0, 70.0)),
            (UsableIrisArea, Bounds::at_least(70.0)),
            (IrisScleraContrast, Bounds::at_least(5.0)),
            (IrisPupilContrast, Bounds::at_least(30.0)),
            (GrayscaleUtilization, Bounds::at_least(6.0)),
            (IrisPupilConcentricity, Bounds::at_least(90.0)),
            (MarginAdequacy, Bounds::at_least(80.0)),
        ])
    }

    pub fn for_mode(
        mode: QualityMode,
        iso_bounds: &BTreeMap<QualityMetric, Bounds>,
    ) -> Result<Self> {
        match mode {
            QualityMode::Allq => Ok(Self::allq()),
            QualityMode::Isoq => Self::isoq(iso_bounds.clone()),
        }
    }

    pub fn mode(&self) -> QualityMode {
        self.mode
    }

    pub fn bounds(&self) -> &BTreeMap<QualityMetric, Bounds> {
        &self.bounds
    }

    pub fn accepts(&self, record: &SampleRecord) -> bool {
        self.bounds
            .iter()
            .all(|(m, b)| record.quality.get(*m).is_some_and(|v| b.contains(v)))
    }
}

/// Keeps the records the policy admits. A missing bounded metric rejects.
pub fn apply_quality_policy(records: &[SampleRecord], policy: &QualityPolicy) -> Vec<SampleRecord> {
    records
        .iter()
        .filter(|r| policy.accepts(r))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrolledIdentity {
    pub identity_id: String,
    pub enrolled: SampleRecord,
    /// Up to two probes, best quality first.
    pub probes: Vec<SampleRecord>,
}

impl EnrolledIdentity {
    /// Sample by slot: 0 is the enrollment, 1 and 2 the probes.
    pub fn sample(&self, slot: usize) -> &SampleRecord {
        if slot == 0 {
            &self.enrolled
        } else {
            &self.probes[slot - 1]
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = &SampleRecord> {
        std::iter::once(&self.enrolled).chain(self.probes.iter())
    }
}

/// Enrollment and probe selection for every identity, ordered by identity id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnrollmentPlan {
    pub identities: Vec<EnrolledIdentity>,
}

impl EnrollmentPlan {
    /// Identity count `M`.
    pub fn m(&self) -> usize {
        self.identities.len()
    }

    pub fn identity_ids(&self) -> Vec<String> {
        self.identities
            .iter()
            .map(|i| i.identity_id.clone())
            .collect()
    }
}

/// Ranks each identity's samples by overall quality (descending, absent
/// last, ties by sample id) and keeps the best as enrollment and the next
/// two as probes.
pub fn build_plan(records: &[SampleRecord]) -> EnrollmentPlan {
    let mut by_identity: BTreeMap<&str, Vec<&SampleRecord>> = BTreeMap::new();
    for r in records {
        by_identity.entry(&r.identity_id).or_default().push(r);
    }
    let identities = by_identity
        .into_iter()
        .map(|(id, mut samples)| {
            samples.sort_by(|a, b| {
                let qa = a.overall_quality().unwrap_or(f64::NEG_INFINITY);
                let qb = b.overall_quality().unwrap_or(f64::NEG_INFINITY);
                qb.total_cmp(&qa)
                    .then_with(|| a.sample_id.cmp(&b.sample_id))
            });
            EnrolledIdentity {
                identity_id: id.to_owned(),
                enrolled: samples[0].clone(),
                probes: samples
                    .iter()
                    .skip(1)
                    .take(2)
                    .map(|s| (*s).clone())
                    .collect(),
            }
        })
        .collect();
    EnrollmentPlan { identities }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    Imposter,
    Genuine,
}

impl fmt::Display for PairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PairKind::Imposter => f.write_str("imposter"),
            PairKind::Genuine => f.write_str("genuine"),
        }
    }
}

/// One comparison: identities by plan index, samples by slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairRef {
    pub kind: PairKind,
    pub identity_a: u32,
    pub slot_a: u8,
    pub identity_b: u32,
    pub slot_b: u8,
}

/// Canonical, randomly addressable enumeration of every comparison: all
/// imposter pairs `(i, j)`, `i < j`, lexicographically, followed by each
/// identity's genuine pairs `(0,1), (0,2), (1,2)` over its available slots.
#[derive(Debug, Clone)]
pub struct PairEnumeration {
    m: u64,
    genuine: Vec<PairRef>,
}

impl PairEnumeration {
    pub fn new(plan: &EnrollmentPlan) -> Self {
        let mut genuine = Vec::new();
        for (i, identity) in plan.identities.iter().enumerate() {
            let slots = 1 + identity.probes.len();
            for a in 0..slots {
                for b in a + 1..slots {
                    genuine.push(PairRef {
                        kind: PairKind::Genuine,
                        identity_a: i as u32,
                        slot_a: a as u8,
                        identity_b: i as u32,
                        slot_b: b as u8,
                    });
                }
            }
        }
        Self {
            m: plan.m() as u64,
            genuine,
        }
    }

    pub fn imposter_count(&self) -> u64 {
        self.m * self.m.saturating_sub(1) / 2
    }

    pub fn genuine_count(&self) -> u64 {
        self.genuine.len() as u64
    }

    pub fn len(&self) -> u64 {
        self.imposter_count() + self.genuine_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pair at canonical position `index`.
    pub fn get(&self, index: u64) -> PairRef {
        let imposters = self.imposter_count();
        if index < imposters {
            let (i, j) = self.imposter_at(index);
            PairRef {
                kind: PairKind::Imposter,
                identity_a: i as u32,
                slot_a: 0,
                identity_b: j as u32,
                slot_b: 0,
            }
        } else {
            self.genuine[(index - imposters) as usize]
        }
    }

    /// Pairs in `[start, end)` of the canonical order.
    pub fn range(&self, start: u64, end: u64) -> impl Iterator<Item = PairRef> + '_ {
        let end = end.min(self.len());
        let imposters = self.imposter_count();
        let imp_end = end.min(imposters);
        let first = (start < imp_end).then(|| self.imposter_at(start));
        let m = self.m;
        let imposter_iter = first
            .into_iter()
            .flat_map(move |(i0, j0)| {
                (i0..m).flat_map(move |i| {
                    let from = if i == i0 { j0 } else { i + 1 };
                    (from..m).map(move |j| (i, j))
                })
            })
            .take(imp_end.saturating_sub(start) as usize)
            .map(|(i, j)| PairRef {
                kind: PairKind::Imposter,
                identity_a: i as u32,
                slot_a: 0,
                identity_b: j as u32,
                slot_b: 0,
            });
        let g_start = start.max(imposters) - imposters;
        let g_end = end.max(imposters) - imposters;
        imposter_iter.chain(
            self.genuine[g_start as usize..g_end.max(g_start) as usize]
                .iter()
                .copied(),
        )
    }

    pub fn imposters(&self) -> impl Iterator<Item = PairRef> + '_ {
        self.range(0, self.imposter_count())
    }

    pub fn genuines(&self) -> impl Iterator<Item = PairRef> + '_ {
        self.genuine.iter().copied()
    }

    /// Position of the first pair with first identity `i`.
    fn row_start(&self, i: u64) -> u64 {
        i * self.m - i * (i + 1) / 2
    }

    fn imposter_at(&self, index: u64) -> (u64, u64) {
        // Largest i with row_start(i) <= index.
        let (mut lo, mut hi) = (0u64, self.m - 1);
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if self.row_start(mid) <= index {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        let j = lo + 1 + (index - self.row_start(lo));
        (lo, j)
    }
}

/// Imposter and genuine pair streams of a plan.
pub fn enumerate_pairs(plan: &EnrollmentPlan) -> (Vec<PairRef>, Vec<PairRef>) {
    let e = PairEnumeration::new(plan);
    (e.imposters().collect(), e.genuines().collect())
}
