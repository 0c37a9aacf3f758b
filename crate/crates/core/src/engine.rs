//! All-pairs scoring for one system configuration.
//!
//! The canonical pair enumeration (see [`PairEnumeration`]) is cut into
//! contiguous chunks. Chunks are scored in parallel and committed in order by
//! a single writer into an append-only store file:
//!
//! ```text
//! header  "IRSS" u32 version | u8 dim, u8 res, u8 quality, u8 level, u64 seed
//!         u64 chunk_size, u64 imposters, u64 genuines | u32 M, M x (u32 len, utf8 id)
//!         [8] checksum
//! chunk   "CHNK" u64 index | u32 n | n x 40-byte record | u64 watermark | [8] checksum
//! ```
//!
//! Integers are little-endian; checksums are the first 8 bytes of SHA-256
//! over the preceding bytes of the header or chunk frame. The watermark
//! closing a frame is the number of chunks committed so far. On reopen, any
//! torn or corrupt trailing frame is discarded and scoring resumes from the
//! last good watermark.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    EnrollmentPlan, PairEnumeration, PairKind, PairRef, QualityMode, SampleRecord,
};
use crate::error::{Error, Result};
use crate::matcher::{match_with_elimination, MatchScore, ShiftSpec};
use crate::seed::pair_seed;
use crate::template::{
    DimensionTag, FeatureLevel, PackedTemplate, ResolutionMode, TemplateGeometry,
};

const STORE_MAGIC: &[u8; 4] = b"IRSS";
const CHUNK_MAGIC: &[u8; 4] = b"CHNK";
const STORE_VERSION: u32 = 1;
const RECORD_BYTES: usize = 40;

/// Target false accept rate of an operating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum OperatingPoint {
    /// 0.1% FAR.
    Far0_1,
    /// 0.01% FAR.
    Far0_01,
    /// 0.001% FAR.
    Far0_001,
}

impl OperatingPoint {
    /// Tightest first.
    pub const ALL: [OperatingPoint; 3] = [
        OperatingPoint::Far0_001,
        OperatingPoint::Far0_01,
        OperatingPoint::Far0_1,
    ];

    pub fn percent(self) -> f64 {
        match self {
            OperatingPoint::Far0_1 => 0.1,
            OperatingPoint::Far0_01 => 0.01,
            OperatingPoint::Far0_001 => 0.001,
        }
    }
}

impl TryFrom<f64> for OperatingPoint {
    type Error = Error;

    fn try_from(percent: f64) -> Result<Self> {
        OperatingPoint::ALL
            .into_iter()
            .find(|op| (op.percent() - percent).abs() < 1e-12)
            .ok_or_else(|| Error::Parameter(format!("unsupported operating point {percent}% FAR")))
    }
}

impl From<OperatingPoint> for f64 {
    fn from(op: OperatingPoint) -> f64 {
        op.percent()
    }
}

impl fmt::Display for OperatingPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.percent())
    }
}

/// One evaluated system: the six parameters plus the experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemConfig {
    pub dimension: DimensionTag,
    pub resolution: ResolutionMode,
    pub quality: QualityMode,
    pub feature_level: FeatureLevel,
    pub operating_point: OperatingPoint,
    pub experiment_seed: u64,
}

impl SystemConfig {
    /// The 24 full-feature configurations: 2 dimensions x 2 resolutions x
    /// 2 quality modes x 3 operating points.
    pub fn grid(experiment_seed: u64) -> Vec<SystemConfig> {
        let mut out = Vec::with_capacity(24);
        for dimension in DimensionTag::ALL {
            for resolution in ResolutionMode::ALL {
                for quality in QualityMode::ALL {
                    for operating_point in OperatingPoint::ALL {
                        out.push(SystemConfig {
                            dimension,
                            resolution,
                            quality,
                            feature_level: FeatureLevel::FULL,
                            operating_point,
                            experiment_seed,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn geometry(&self) -> TemplateGeometry {
        TemplateGeometry::stripped(self.dimension, self.resolution)
    }

    pub fn shift_spec(&self) -> ShiftSpec {
        ShiftSpec::for_dimension(self.dimension)
    }

    /// Scores do not depend on the operating point, so stores are keyed without it.
    pub fn store_key(&self) -> StoreKey {
        StoreKey {
            dimension: self.dimension,
            resolution: self.resolution,
            quality: self.quality,
            feature_level: self.feature_level,
            experiment_seed: self.experiment_seed,
        }
    }
}

/// Identifies the score set a store holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StoreKey {
    pub dimension: DimensionTag,
    pub resolution: ResolutionMode,
    pub quality: QualityMode,
    pub feature_level: FeatureLevel,
    pub experiment_seed: u64,
}

impl StoreKey {
    /// File-name friendly label, e.g. `D2_single_ALLQ_fl50`.
    pub fn label(&self) -> String {
        format!(
            "{}_{}_{}_fl{}",
            self.dimension, self.resolution, self.quality, self.feature_level
        )
    }
}

impl fmt::Display for StoreKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (seed {})", self.label(), self.experiment_seed)
    }
}

/// One scored (or unscorable) pair. `score` is `None` when the two masks
/// never overlap inside the rotation window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRecord {
    pub pair_index: u64,
    pub pair: PairRef,
    pub score: Option<MatchScore>,
}

impl ScoreRecord {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.pair_index.to_le_bytes());
        out.push(match self.pair.kind {
            PairKind::Imposter => 0,
            PairKind::Genuine => 1,
        });
        out.extend_from_slice(&self.pair.identity_a.to_le_bytes());
        out.push(self.pair.slot_a);
        out.extend_from_slice(&self.pair.identity_b.to_le_bytes());
        out.push(self.pair.slot_b);
        let s = self.score.unwrap_or(MatchScore {
            hd: 0.0,
            best_shift: 0,
            compared_bits: 0,
            differing_bits: 0,
        });
        out.push(self.score.is_some() as u8);
        out.extend_from_slice(&s.hd.to_bits().to_le_bytes());
        out.extend_from_slice(&s.best_shift.to_le_bytes());
        out.extend_from_slice(&s.compared_bits.to_le_bytes());
        out.extend_from_slice(&s.differing_bits.to_le_bytes());
    }

    fn decode(b: &[u8]) -> Result<Self> {
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        let kind = match b[8] {
            0 => PairKind::Imposter,
            1 => PairKind::Genuine,
            k => return Err(Error::CorruptStore(format!("unknown pair kind {k}"))),
        };
        let score = match b[19] {
            0 => None,
            1 => Some(MatchScore {
                hd: f64::from_bits(u64::from_le_bytes(b[20..28].try_into().unwrap())),
                best_shift: u32_at(28) as i32,
                compared_bits: u32_at(32),
                differing_bits: u32_at(36),
            }),
            v => return Err(Error::CorruptStore(format!("bad validity flag {v}"))),
        };
        Ok(Self {
            pair_index: u64::from_le_bytes(b[0..8].try_into().unwrap()),
            pair: PairRef {
                kind,
                identity_a: u32_at(9),
                slot_a: b[13],
                identity_b: u32_at(14),
                slot_b: b[18],
            },
            score,
        })
    }
}

/// Persisted scores of one [`StoreKey`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreStore {
    pub key: StoreKey,
    pub identities: Vec<String>,
    pub imposter_total: u64,
    pub genuine_total: u64,
    pub chunk_size: u64,
    /// Chunks committed.
    pub watermark: u64,
    /// Records in canonical pair order.
    pub records: Vec<ScoreRecord>,
}

impl ScoreStore {
    pub fn m(&self) -> usize {
        self.identities.len()
    }

    pub fn total_pairs(&self) -> u64 {
        self.imposter_total + self.genuine_total
    }

    pub fn total_chunks(&self) -> u64 {
        self.total_pairs().div_ceil(self.chunk_size)
    }

    pub fn is_complete(&self) -> bool {
        self.watermark == self.total_chunks()
    }

    /// Reads a store without modifying the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut file = File::open(path.as_ref())?;
        let (store, _) = read_store(&mut file)?;
        Ok(store)
    }

    /// Like [`ScoreStore::load`], but fails unless every chunk is present.
    pub fn load_complete(path: impl AsRef<Path>) -> Result<Self> {
        let store = Self::load(path.as_ref())?;
        if !store.is_complete() {
            return Err(Error::IncompleteStore {
                path: path.as_ref().to_owned(),
                done: store.watermark,
                total: store.total_chunks(),
            });
        }
        Ok(store)
    }

    pub fn imposters(&self) -> impl Iterator<Item = &ScoreRecord> {
        self.records
            .iter()
            .filter(|r| r.pair.kind == PairKind::Imposter)
    }

    pub fn genuines(&self) -> impl Iterator<Item = &ScoreRecord> {
        self.records
            .iter()
            .filter(|r| r.pair.kind == PairKind::Genuine)
    }

    /// Imposter distances, unscorable pairs excluded.
    pub fn imposter_hds(&self) -> Vec<f64> {
        self.imposters()
            .filter_map(|r| r.score.map(|s| s.hd))
            .collect()
    }

    pub fn genuine_hds(&self) -> Vec<f64> {
        self.genuines()
            .filter_map(|r| r.score.map(|s| s.hd))
            .collect()
    }

    /// Number of pairs of `kind` whose masks never overlapped.
    pub fn unscorable(&self, kind: PairKind) -> usize {
        self.records
            .iter()
            .filter(|r| r.pair.kind == kind && r.score.is_none())
            .count()
    }

    /// CSV export: `identity_a,identity_b,kind,hd,best_shift,compared_bits`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "identity_a",
            "identity_b",
            "kind",
            "hd",
            "best_shift",
            "compared_bits",
        ])?;
        for r in &self.records {
            let (hd, shift, bits) = match r.score {
                Some(s) => (
                    s.hd.to_string(),
                    s.best_shift.to_string(),
                    s.compared_bits.to_string(),
                ),
                None => (String::new(), String::new(), "0".to_owned()),
            };
            w.write_record([
                self.identities[r.pair.identity_a as usize].as_str(),
                self.identities[r.pair.identity_b as usize].as_str(),
                &r.pair.kind.to_string(),
                &hd,
                &shift,
                &bits,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Where the engine gets templates from.
pub trait TemplateSource: Sync {
    fn template_for(
        &self,
        sample: &SampleRecord,
        geometry: &TemplateGeometry,
    ) -> Result<PackedTemplate>;
}

/// In-memory templates keyed by sample id.
impl TemplateSource for HashMap<String, PackedTemplate> {
    fn template_for(
        &self,
        sample: &SampleRecord,
        _geometry: &TemplateGeometry,
    ) -> Result<PackedTemplate> {
        self.get(&sample.sample_id)
            .cloned()
            .ok_or_else(|| Error::MissingTemplate {
                sample_id: sample.sample_id.clone(),
                path: PathBuf::new(),
            })
    }
}

/// Which template file of a sample to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateFile {
    /// Single-resolution template of filter 0, 1 or 2.
    Filter(usize),
    Multi,
}

impl TemplateFile {
    /// Single-resolution systems use the first (widest) filter.
    pub fn for_resolution(resolution: ResolutionMode) -> Self {
        match resolution {
            ResolutionMode::Single => TemplateFile::Filter(0),
            ResolutionMode::Multi => TemplateFile::Multi,
        }
    }

    fn suffix(self) -> String {
        match self {
            TemplateFile::Filter(i) => format!("f{i}"),
            TemplateFile::Multi => "multi".to_owned(),
        }
    }
}

/// Template directory laid out as `<root>/<D1|D2>/<sample_id>.<f0|f1|f2|multi>.irc`.
#[derive(Debug, Clone)]
pub struct TemplateDir {
    root: PathBuf,
}

impl TemplateDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, dimension: DimensionTag, file: TemplateFile, sample_id: &str) -> PathBuf {
        self.root
            .join(dimension.to_string())
            .join(format!("{sample_id}.{}.irc", file.suffix()))
    }
}

impl TemplateSource for TemplateDir {
    fn template_for(
        &self,
        sample: &SampleRecord,
        geometry: &TemplateGeometry,
    ) -> Result<PackedTemplate> {
        let path = self.path(
            geometry.dimension(),
            TemplateFile::for_resolution(geometry.resolution()),
            &sample.sample_id,
        );
        if !path.exists() {
            return Err(Error::MissingTemplate {
                sample_id: sample.sample_id.clone(),
                path,
            });
        }
        PackedTemplate::load(&path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineOptions {
    pub workers: usize,
    pub chunk_size: u64,
    /// Stop after committing this many chunks in this session. Used to
    /// simulate an interrupted run.
    pub stop_after_chunks: Option<u64>,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            chunk_size: 4096,
            stop_after_chunks: None,
        }
    }
}

/// Scores every imposter and genuine pair of `plan` into a fresh store at
/// `store_path`, replacing any existing file.
pub fn run_nn(
    plan: &EnrollmentPlan,
    templates: &dyn TemplateSource,
    config: &SystemConfig,
    options: &EngineOptions,
    store_path: impl AsRef<Path>,
) -> Result<ScoreStore> {
    if options.chunk_size == 0 || options.workers == 0 {
        return Err(Error::Parameter(
            "workers and chunk size must be positive".into(),
        ));
    }
    let table = load_templates(plan, templates, config)?;
    let pairs = PairEnumeration::new(plan);
    let store = ScoreStore {
        key: config.store_key(),
        identities: plan.identity_ids(),
        imposter_total: pairs.imposter_count(),
        genuine_total: pairs.genuine_count(),
        chunk_size: options.chunk_size,
        watermark: 0,
        records: Vec::new(),
    };
    let mut file = File::create(store_path.as_ref())?;
    let header = encode_header(&store);
    file.write_all(&header)?;
    file.sync_data()?;
    execute(file, store, &pairs, &table, config, options)
}

/// Continues an interrupted store. Only chunks past the watermark are
/// computed; a complete store is returned as is.
pub fn resume(
    store_path: impl AsRef<Path>,
    plan: &EnrollmentPlan,
    templates: &dyn TemplateSource,
    config: &SystemConfig,
    options: &EngineOptions,
) -> Result<ScoreStore> {
    let mut file = OpenOptions::new()
        .read(true)
        .write(true)
        .open(store_path.as_ref())?;
    let (store, good_len) = read_store(&mut file)?;
    if store.key != config.store_key() {
        return Err(Error::ConfigMismatch {
            stored: store.key.to_string(),
            requested: config.store_key().to_string(),
        });
    }
    let pairs = PairEnumeration::new(plan);
    if store.identities != plan.identity_ids()
        || store.imposter_total != pairs.imposter_count()
        || store.genuine_total != pairs.genuine_count()
    {
        return Err(Error::ConfigMismatch {
            stored: format!("{} with {} identities", store.key, store.m()),
            requested: format!("{} with {} identities", config.store_key(), plan.m()),
        });
    }
    file.set_len(good_len)?;
    file.seek(SeekFrom::Start(good_len))?;
    if store.is_complete() {
        return Ok(store);
    }
    let table = load_templates(plan, templates, config)?;
    let options = EngineOptions {
        chunk_size: store.chunk_size,
        ..*options
    };
    execute(file, store, &pairs, &table, config, &options)
}

fn load_templates(
    plan: &EnrollmentPlan,
    source: &dyn TemplateSource,
    config: &SystemConfig,
) -> Result<Vec<Vec<PackedTemplate>>> {
    let geometry = config.geometry();
    plan.identities
        .iter()
        .map(|identity| {
            identity
                .samples()
                .map(|sample| {
                    let t = source.template_for(sample, &geometry)?;
                    if *t.geometry() != geometry {
                        return Err(Error::Dimension {
                            expected: geometry.to_string(),
                            actual: format!("{} for sample {}", t.geometry(), sample.sample_id),
                        });
                    }
                    Ok(t.with_ids(identity.identity_id.clone(), sample.sample_id.clone()))
                })
                .collect()
        })
        .collect()
}

fn execute(
    file: File,
    mut store: ScoreStore,
    pairs: &PairEnumeration,
    table: &[Vec<PackedTemplate>],
    config: &SystemConfig,
    options: &EngineOptions,
) -> Result<ScoreStore> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start {} workers: {e}", options.workers)))?;
    let total_chunks = store.total_chunks();
    let batch = (options.workers * 4) as u64;
    let mut writer = BufWriter::new(file);
    let mut committed = 0u64;
    let spec = config.shift_spec();

    while store.watermark < total_chunks {
        let mut last = (store.watermark + batch).min(total_chunks);
        if let Some(limit) = options.stop_after_chunks {
            if committed >= limit {
                break;
            }
            last = last.min(store.watermark + (limit - committed));
        }
        let chunks: Vec<u64> = (store.watermark..last).collect();
        let results: Vec<Result<Vec<ScoreRecord>>> = pool.install(|| {
            chunks
                .par_iter()
                .map(|&c| score_chunk(c, store.chunk_size, pairs, table, config, &spec))
                .collect()
        });
        for (chunk, records) in chunks.into_iter().zip(results) {
            let records = records?;
            writer.write_all(&encode_chunk(chunk, &records))?;
            writer.flush()?;
            writer.get_ref().sync_data()?;
            store.records.extend(records);
            store.watermark = chunk + 1;
            committed += 1;
        }
    }
    Ok(store)
}

fn score_chunk(
    chunk: u64,
    chunk_size: u64,
    pairs: &PairEnumeration,
    table: &[Vec<PackedTemplate>],
    config: &SystemConfig,
    spec: &ShiftSpec,
) -> Result<Vec<ScoreRecord>> {
    let start = chunk * chunk_size;
    let end = (start + chunk_size).min(pairs.len());
    pairs
        .range(start, end)
        .zip(start..end)
        .map(|(pair, pair_index)| {
            let a = &table[pair.identity_a as usize][pair.slot_a as usize];
            let b = &table[pair.identity_b as usize][pair.slot_b as usize];
            let seed = pair_seed(config.experiment_seed, a.sample_id(), b.sample_id());
            let score = match match_with_elimination(a, b, spec, config.feature_level, seed) {
                Ok(s) => Some(s),
                Err(Error::EmptyOverlap) => None,
                Err(e) => return Err(e),
            };
            Ok(ScoreRecord {
                pair_index,
                pair,
                score,
            })
        })
        .collect()
}

fn checksum(bytes: &[u8]) -> [u8; 8] {
    Sha256::digest(bytes)[..8]
        .try_into()
        .expect("digest is 32 bytes")
}

fn encode_header(store: &ScoreStore) -> Vec<u8> {
    let mut h = Vec::new();
    h.extend_from_slice(STORE_MAGIC);
    h.extend_from_slice(&STORE_VERSION.to_le_bytes());
    let k = &store.key;
    h.push(match k.dimension {
        DimensionTag::D1 => 1,
        DimensionTag::D2 => 2,
    });
    h.push(match k.resolution {
        ResolutionMode::Single => 1,
        ResolutionMode::Multi => 3,
    });
    h.push(match k.quality {
        QualityMode::Allq => 0,
        QualityMode::Isoq => 1,
    });
    h.push(k.feature_level.percent());
    h.extend_from_slice(&k.experiment_seed.to_le_bytes());
    for v in [store.chunk_size, store.imposter_total, store.genuine_total] {
        h.extend_from_slice(&v.to_le_bytes());
    }
    h.extend_from_slice(&(store.identities.len() as u32).to_le_bytes());
    for id in &store.identities {
        h.extend_from_slice(&(id.len() as u32).to_le_bytes());
        h.extend_from_slice(id.as_bytes());
    }
    let sum = checksum(&h);
    h.extend_from_slice(&sum);
    h
}

fn encode_chunk(index: u64, records: &[ScoreRecord]) -> Vec<u8> {
    let mut f = Vec::with_capacity(32 + records.len() * RECORD_BYTES);
    f.extend_from_slice(CHUNK_MAGIC);
    f.extend_from_slice(&index.to_le_bytes());
    f.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        r.encode(&mut f);
    }
    f.extend_from_slice(&(index + 1).to_le_bytes());
    let sum = checksum(&f);
    f.extend_from_slice(&sum);
    f
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(out)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Parses a store, returning it and the byte length of its valid prefix.
fn read_store(file: &mut File) -> Result<(ScoreStore, u64)> {
    let mut bytes = Vec::new();
    file.seek(SeekFrom::Start(0))?;
    file.read_to_end(&mut bytes)?;
    let corrupt = |m: &str| Error::CorruptStore(m.to_owned());
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };

    if cur.take(4) != Some(STORE_MAGIC) {
        return Err(corrupt("missing IRSS magic"));
    }
    if cur.u32() != Some(STORE_VERSION) {
        return Err(corrupt("unsupported store version"));
    }
    let truncated = || corrupt("truncated header");
    let dimension = match cur.u8().ok_or_else(truncated)? {
        1 => DimensionTag::D1,
        2 => DimensionTag::D2,
        _ => return Err(corrupt("bad dimension tag")),
    };
    let resolution = match cur.u8().ok_or_else(truncated)? {
        1 => ResolutionMode::Single,
        3 => ResolutionMode::Multi,
        _ => return Err(corrupt("bad resolution mode")),
    };
    let quality = match cur.u8().ok_or_else(truncated)? {
        0 => QualityMode::Allq,
        1 => QualityMode::Isoq,
        _ => return Err(corrupt("bad quality mode")),
    };
    let feature_level = FeatureLevel::new(cur.u8().ok_or_else(truncated)?)
        .map_err(|_| corrupt("bad feature level"))?;
    let experiment_seed = cur.u64().ok_or_else(truncated)?;
    let chunk_size = cur.u64().ok_or_else(truncated)?;
    let imposter_total = cur.u64().ok_or_else(truncated)?;
    let genuine_total = cur.u64().ok_or_else(truncated)?;
    let m = cur.u32().ok_or_else(truncated)?;
    let mut identities = Vec::with_capacity(m as usize);
    for _ in 0..m {
        let len = cur.u32().ok_or_else(truncated)? as usize;
        let raw = cur.take(len).ok_or_else(truncated)?;
        identities.push(
            String::from_utf8(raw.to_vec()).map_err(|_| corrupt("identity id is not UTF-8"))?,
        );
    }
    let header_end = cur.pos;
    if cur.take(8) != Some(&checksum(&bytes[..header_end])[..]) {
        return Err(corrupt("header checksum mismatch"));
    }
    if chunk_size == 0 {
        return Err(corrupt("zero chunk size"));
    }

    let mut store = ScoreStore {
        key: StoreKey {
            dimension,
            resolution,
            quality,
            feature_level,
            experiment_seed,
        },
        identities,
        imposter_total,
        genuine_total,
        chunk_size,
        watermark: 0,
        records: Vec::new(),
    };
    let total = store.total_pairs();
    let mut good = cur.pos;
    while store.watermark < store.total_chunks() {
        let frame_start = cur.pos;
        let index = store.watermark;
        let expected = chunk_size.min(total - index * chunk_size) as usize;
        let ok = cur.take(4) == Some(CHUNK_MAGIC)
            && cur.u64() == Some(index)
            && cur.u32() == Some(expected as u32);
        if !ok {
            break;
        }
        let Some(body) = cur.take(expected * RECORD_BYTES) else {
            break;
        };
        if cur.u64() != Some(index + 1) {
            break;
        }
        let frame_end = cur.pos;
        if cur.take(8) != Some(&checksum(&bytes[frame_start..frame_end])[..]) {
            break;
        }
        let records = body
            .chunks_exact(RECORD_BYTES)
            .map(ScoreRecord::decode)
            .collect::<Result<Vec<_>>>()?;
        store.records.extend(records);
        store.watermark += 1;
        good = cur.pos;
    }
    Ok((store, good as u64))
}
