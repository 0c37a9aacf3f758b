//! Packed IrisCode templates.
//!
//! A template is a stack of bit planes, each `rows x cols`. Planes come in
//! (real, imaginary) pairs, one pair per filter resolution: single-resolution
//! templates carry 2 planes, multi-resolution templates 6, ordered
//! `res1-re, res1-im, res2-re, res2-im, res3-re, res3-im`.
//!
//! Each plane is stored row-major; every row occupies `ceil(cols / 64)`
//! little-endian `u64` words with column `c` at bit `c % 64` of word
//! `c / 64`. Padding bits past `cols` are always zero. Rows are word-aligned
//! so that an angular rotation is a per-row funnel shift.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WORD_BITS: usize = 64;
const FILE_MAGIC: &[u8; 4] = b"IRC1";

/// Template dimension, fixed by the unwrapping grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DimensionTag {
    D1,
    D2,
}

impl DimensionTag {
    pub const ALL: [DimensionTag; 2] = [DimensionTag::D1, DimensionTag::D2];

    pub fn extracted_rows(self) -> usize {
        match self {
            DimensionTag::D1 => 64,
            DimensionTag::D2 => 70,
        }
    }

    pub fn cols(self) -> usize {
        match self {
            DimensionTag::D1 => 512,
            DimensionTag::D2 => 256,
        }
    }

    /// Rows left after boundary stripping.
    pub fn reduced_rows(self) -> usize {
        match self {
            DimensionTag::D1 => 47,
            DimensionTag::D2 => 51,
        }
    }

    /// Rows removed at the pupillary (top) edge: `floor(0.09 * rows)`.
    pub fn pupillary_rows_removed(self) -> usize {
        self.extracted_rows() * 9 / 100
    }

    /// Rows removed at the limbus (bottom) edge.
    pub fn limbus_rows_removed(self) -> usize {
        self.extracted_rows() - self.reduced_rows() - self.pupillary_rows_removed()
    }

    fn code(self) -> u8 {
        match self {
            DimensionTag::D1 => 1,
            DimensionTag::D2 => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(DimensionTag::D1),
            2 => Ok(DimensionTag::D2),
            other => Err(Error::Format(format!("unknown dimension tag {other}"))),
        }
    }
}

impl fmt::Display for DimensionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DimensionTag::D1 => f.write_str("D1"),
            DimensionTag::D2 => f.write_str("D2"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResolutionMode {
    Single,
    Multi,
}

impl ResolutionMode {
    pub const ALL: [ResolutionMode; 2] = [ResolutionMode::Single, ResolutionMode::Multi];

    pub fn bit_planes(self) -> usize {
        match self {
            ResolutionMode::Single => 2,
            ResolutionMode::Multi => 6,
        }
    }

    fn code(self) -> u8 {
        match self {
            ResolutionMode::Single => 1,
            ResolutionMode::Multi => 3,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(ResolutionMode::Single),
            3 => Ok(ResolutionMode::Multi),
            other => Err(Error::Format(format!("unknown resolution mode {other}"))),
        }
    }
}

impl fmt::Display for ResolutionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResolutionMode::Single => f.write_str("single"),
            ResolutionMode::Multi => f.write_str("multi"),
        }
    }
}

/// Shape of a template. Only the D1/D2 grids, extracted or stripped, exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TemplateGeometry {
    rows: usize,
    cols: usize,
    bit_planes: usize,
    dimension: DimensionTag,
    resolution: ResolutionMode,
}

impl TemplateGeometry {
    /// Geometry straight out of the encoder, before boundary stripping.
    pub fn extracted(dimension: DimensionTag, resolution: ResolutionMode) -> Self {
        Self {
            rows: dimension.extracted_rows(),
            cols: dimension.cols(),
            bit_planes: resolution.bit_planes(),
            dimension,
            resolution,
        }
    }

    /// Geometry after boundary stripping; the shape every matcher sees.
    pub fn stripped(dimension: DimensionTag, resolution: ResolutionMode) -> Self {
        Self {
            rows: dimension.reduced_rows(),
            ..Self::extracted(dimension, resolution)
        }
    }

    fn from_parts(
        dimension: DimensionTag,
        resolution: ResolutionMode,
        rows: usize,
        cols: usize,
        planes: usize,
    ) -> Result<Self> {
        let geometry = if rows == dimension.extracted_rows() {
            Self::extracted(dimension, resolution)
        } else {
            Self::stripped(dimension, resolution)
        };
        if geometry.rows != rows || geometry.cols != cols || geometry.bit_planes != planes {
            return Err(Error::Format(format!(
                "{dimension}/{resolution} cannot have shape {planes}x{rows}x{cols}"
            )));
        }
        Ok(geometry)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bit_planes(&self) -> usize {
        self.bit_planes
    }

    pub fn dimension(&self) -> DimensionTag {
        self.dimension
    }

    pub fn resolution(&self) -> ResolutionMode {
        self.resolution
    }

    pub fn is_stripped(&self) -> bool {
        self.rows == self.dimension.reduced_rows()
    }

    pub fn words_per_row(&self) -> usize {
        self.cols.div_ceil(WORD_BITS)
    }

    pub fn words_per_plane(&self) -> usize {
        self.rows * self.words_per_row()
    }

    pub fn total_words(&self) -> usize {
        self.bit_planes * self.words_per_plane()
    }

    /// Number of logical bits, i.e. the mask popcount of a fully usable template.
    pub fn bit_count(&self) -> usize {
        self.bit_planes * self.rows * self.cols
    }

    fn shape(&self) -> (usize, usize, usize) {
        (self.bit_planes, self.rows, self.cols)
    }

    fn word_index(&self, plane: usize, row: usize, col: usize) -> (usize, u64) {
        let w = plane * self.words_per_plane() + row * self.words_per_row() + col / WORD_BITS;
        (w, 1u64 << (col % WORD_BITS))
    }
}

impl fmt::Display for TemplateGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{} {}x{}x{}",
            self.dimension, self.resolution, self.bit_planes, self.rows, self.cols
        )
    }
}

/// Unpacked `planes x rows x cols` bit matrix; the logical form of codes and masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitGrid {
    planes: usize,
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl BitGrid {
    pub fn filled(planes: usize, rows: usize, cols: usize, value: bool) -> Self {
        Self {
            planes,
            rows,
            cols,
            bits: vec![value; planes * rows * cols],
        }
    }

    pub fn from_fn(
        planes: usize,
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize, usize) -> bool,
    ) -> Self {
        let mut bits = Vec::with_capacity(planes * rows * cols);
        for p in 0..planes {
            for r in 0..rows {
                for c in 0..cols {
                    bits.push(f(p, r, c));
                }
            }
        }
        Self {
            planes,
            rows,
            cols,
            bits,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.planes, self.rows, self.cols)
    }

    pub fn get(&self, plane: usize, row: usize, col: usize) -> bool {
        self.bits[self.index(plane, row, col)]
    }

    pub fn set(&mut self, plane: usize, row: usize, col: usize, value: bool) {
        let i = self.index(plane, row, col);
        self.bits[i] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    fn index(&self, plane: usize, row: usize, col: usize) -> usize {
        assert!(plane < self.planes && row < self.rows && col < self.cols);
        (plane * self.rows + row) * self.cols + col
    }
}

/// Percentage of angular columns kept by random radial feature elimination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct FeatureLevel(u8);

impl FeatureLevel {
    pub const SUPPORTED: [u8; 7] = [100, 75, 50, 25, 20, 15, 10];
    pub const FULL: FeatureLevel = FeatureLevel(100);

    pub fn new(percent: u8) -> Result<Self> {
        if Self::SUPPORTED.contains(&percent) {
            Ok(Self(percent))
        } else {
            Err(Error::Parameter(format!(
                "unsupported feature level {percent}% (expected one of {:?})",
                Self::SUPPORTED
            )))
        }
    }

    pub fn all() -> impl Iterator<Item = FeatureLevel> {
        Self::SUPPORTED.into_iter().map(FeatureLevel)
    }

    pub fn percent(self) -> u8 {
        self.0
    }

    pub fn is_full(self) -> bool {
        self.0 == 100
    }

    /// Columns retained out of `cols`, rounding half up.
    pub fn retained_columns(self, cols: usize) -> usize {
        (cols * self.0 as usize * 2 + 100) / 200
    }
}

impl TryFrom<u8> for FeatureLevel {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        Self::new(value)
    }
}

impl From<FeatureLevel> for u8 {
    fn from(level: FeatureLevel) -> u8 {
        level.0
    }
}

impl fmt::Display for FeatureLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Angular columns that survive radial feature elimination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSet {
    cols: usize,
    retained: Vec<usize>,
    feature_level: FeatureLevel,
    seed: u64,
}

impl ColumnSet {
    /// Draws `round(cols * level / 100)` distinct columns uniformly at random.
    pub fn sample(geometry: &TemplateGeometry, feature_level: FeatureLevel, seed: u64) -> Self {
        let cols = geometry.cols();
        let retained = if feature_level.is_full() {
            (0..cols).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let amount = feature_level.retained_columns(cols);
            let mut picked = index::sample(&mut rng, cols, amount).into_vec();
            picked.sort_unstable();
            picked
        };
        Self {
            cols,
            retained,
            feature_level,
            seed,
        }
    }

    /// An explicit column set, e.g. from a saved experiment.
    pub fn from_indices(
        cols: usize,
        mut retained: Vec<usize>,
        feature_level: FeatureLevel,
        seed: u64,
    ) -> Result<Self> {
        retained.sort_unstable();
        retained.dedup();
        if let Some(&bad) = retained.iter().find(|&&c| c >= cols) {
            return Err(Error::Parameter(format!(
                "column {bad} is out of range for {cols} columns"
            )));
        }
        Ok(Self {
            cols,
            retained,
            feature_level,
            seed,
        })
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn feature_level(&self) -> FeatureLevel {
        self.feature_level
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// One template row worth of words with the retained columns set.
    pub fn row_mask(&self) -> Vec<u64> {
        let mut words = vec![0u64; self.cols.div_ceil(WORD_BITS)];
        for &c in &self.retained {
            words[c / WORD_BITS] |= 1u64 << (c % WORD_BITS);
        }
        words
    }
}

/// Bit-packed IrisCode and its validity mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedTemplate {
    geometry: TemplateGeometry,
    code: Vec<u64>,
    mask: Vec<u64>,
    identity_id: String,
    sample_id: String,
}

impl PackedTemplate {
    /// Packs logical code and mask grids. Both must match `geometry`, and
    /// within each (resolution, row, col) cell the real and imaginary mask
    /// bits must agree.
    pub fn pack(code: &BitGrid, mask: &BitGrid, geometry: TemplateGeometry) -> Result<Self> {
        for grid in [code, mask] {
            if grid.shape() != geometry.shape() {
                return Err(shape_error(geometry.shape(), grid.shape()));
            }
        }
        let mut packed_code = vec![0u64; geometry.total_words()];
        let mut packed_mask = vec![0u64; geometry.total_words()];
        for p in 0..geometry.bit_planes {
            for r in 0..geometry.rows {
                for c in 0..geometry.cols {
                    let (w, bit) = geometry.word_index(p, r, c);
                    if code.get(p, r, c) {
                        packed_code[w] |= bit;
                    }
                    if mask.get(p, r, c) {
                        packed_mask[w] |= bit;
                    }
                }
            }
        }
        Self::from_words(geometry, packed_code, packed_mask)
    }

    /// Builds a template from already packed words.
    pub fn from_words(geometry: TemplateGeometry, code: Vec<u64>, mask: Vec<u64>) -> Result<Self> {
        let expected = geometry.total_words();
        if code.len() != expected || mask.len() != expected {
            return Err(Error::Dimension {
                expected: format!("{expected} words per bit matrix ({geometry})"),
                actual: format!("{} code words, {} mask words", code.len(), mask.len()),
            });
        }
        let template = Self {
            geometry,
            code,
            mask,
            identity_id: String::new(),
            sample_id: String::new(),
        };
        template.check_padding()?;
        template.check_cell_masks()?;
        Ok(template)
    }

    pub fn with_ids(
        mut self,
        identity_id: impl Into<String>,
        sample_id: impl Into<String>,
    ) -> Self {
        self.identity_id = identity_id.into();
        self.sample_id = sample_id.into();
        self
    }

    pub fn unpack(&self) -> (BitGrid, BitGrid) {
        let g = &self.geometry;
        let code = BitGrid::from_fn(g.bit_planes, g.rows, g.cols, |p, r, c| {
            self.code_bit(p, r, c)
        });
        let mask = BitGrid::from_fn(g.bit_planes, g.rows, g.cols, |p, r, c| {
            self.mask_bit(p, r, c)
        });
        (code, mask)
    }

    pub fn geometry(&self) -> &TemplateGeometry {
        &self.geometry
    }

    pub fn identity_id(&self) -> &str {
        &self.identity_id
    }

    pub fn sample_id(&self) -> &str {
        &self.sample_id
    }

    pub fn code_words(&self) -> &[u64] {
        &self.code
    }

    pub fn mask_words(&self) -> &[u64] {
        &self.mask
    }

    pub fn code_bit(&self, plane: usize, row: usize, col: usize) -> bool {
        let (w, bit) = self.geometry.word_index(plane, row, col);
        self.code[w] & bit != 0
    }

    pub fn mask_bit(&self, plane: usize, row: usize, col: usize) -> bool {
        let (w, bit) = self.geometry.word_index(plane, row, col);
        self.mask[w] & bit != 0
    }

    pub fn mask_popcount(&self) -> usize {
        self.mask.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Removes the noisy pupillary and limbus bands, leaving the reduced rows.
    pub fn strip_boundaries(&self) -> Result<Self> {
        let g = self.geometry;
        if g.is_stripped() {
            return Err(Error::AlreadyStripped {
                rows: g.rows,
                cols: g.cols,
            });
        }
        let out = TemplateGeometry::stripped(g.dimension, g.resolution);
        let top = g.dimension.pupillary_rows_removed();
        let wpr = g.words_per_row();
        let mut code = Vec::with_capacity(out.total_words());
        let mut mask = Vec::with_capacity(out.total_words());
        for p in 0..g.bit_planes {
            let start = p * g.words_per_plane() + top * wpr;
            let end = start + out.rows * wpr;
            code.extend_from_slice(&self.code[start..end]);
            mask.extend_from_slice(&self.mask[start..end]);
        }
        Ok(Self {
            geometry: out,
            code,
            mask,
            identity_id: self.identity_id.clone(),
            sample_id: self.sample_id.clone(),
        })
    }

    /// Rotates every row by `shift` columns: output column `c` holds input
    /// column `(c - shift) mod cols`. Code and mask move together.
    pub fn rotate_columns(&self, shift: i64) -> Self {
        let g = &self.geometry;
        let wpr = g.words_per_row();
        let mut code = vec![0u64; self.code.len()];
        let mut mask = vec![0u64; self.mask.len()];
        for (src, dst) in [(&self.code, &mut code), (&self.mask, &mut mask)] {
            for (row_in, row_out) in src.chunks_exact(wpr).zip(dst.chunks_exact_mut(wpr)) {
                rotate_row_into(row_in, row_out, g.cols, shift);
            }
        }
        Self {
            geometry: *g,
            code,
            mask,
            identity_id: self.identity_id.clone(),
            sample_id: self.sample_id.clone(),
        }
    }

    /// Stacks three single-resolution templates into one 6-plane template.
    pub fn stack_resolutions(t1: &Self, t2: &Self, t3: &Self) -> Result<Self> {
        let g = t1.geometry;
        for t in [t1, t2, t3] {
            if t.geometry.resolution != ResolutionMode::Single {
                return Err(Error::Stacking(format!(
                    "{} is not single-resolution",
                    t.geometry
                )));
            }
            if t.geometry != g {
                return Err(Error::Stacking(format!(
                    "geometry {} differs from {}",
                    t.geometry, g
                )));
            }
            if t.identity_id != t1.identity_id || t.sample_id != t1.sample_id {
                return Err(Error::Stacking(format!(
                    "sample ({}, {}) differs from ({}, {})",
                    t.identity_id, t.sample_id, t1.identity_id, t1.sample_id
                )));
            }
        }
        let geometry = TemplateGeometry {
            bit_planes: ResolutionMode::Multi.bit_planes(),
            resolution: ResolutionMode::Multi,
            ..g
        };
        let code = [t1, t2, t3]
            .iter()
            .flat_map(|t| t.code.iter().copied())
            .collect();
        let mask = [t1, t2, t3]
            .iter()
            .flat_map(|t| t.mask.iter().copied())
            .collect();
        Ok(Self {
            geometry,
            code,
            mask,
            identity_id: t1.identity_id.clone(),
            sample_id: t1.sample_id.clone(),
        })
    }

    /// Extracts resolution `index` (0-based) as a single-resolution template.
    pub fn resolution_slice(&self, index: usize) -> Result<Self> {
        let g = self.geometry;
        let count = g.bit_planes / 2;
        if index >= count {
            return Err(Error::Parameter(format!(
                "resolution {index} out of range for {count} resolution(s)"
            )));
        }
        let wpp = g.words_per_plane();
        let range = 2 * index * wpp..2 * (index + 1) * wpp;
        Ok(Self {
            geometry: TemplateGeometry {
                bit_planes: 2,
                resolution: ResolutionMode::Single,
                ..g
            },
            code: self.code[range.clone()].to_vec(),
            mask: self.mask[range].to_vec(),
            identity_id: self.identity_id.clone(),
            sample_id: self.sample_id.clone(),
        })
    }

    /// Zeroes the mask at every column not in `columns`, across all planes.
    /// Code bits are left alone.
    pub fn eliminate_columns(&self, columns: &ColumnSet) -> Result<Self> {
        if columns.cols != self.geometry.cols {
            return Err(Error::Parameter(format!(
                "column set covers {} columns, template has {}",
                columns.cols, self.geometry.cols
            )));
        }
        let row_mask = columns.row_mask();
        let mut mask = self.mask.clone();
        apply_row_mask(&mut mask, &row_mask);
        Ok(Self {
            geometry: self.geometry,
            code: self.code.clone(),
            mask,
            identity_id: self.identity_id.clone(),
            sample_id: self.sample_id.clone(),
        })
    }

    /// Replaces the mask; used by generators that post-process occlusion.
    pub(crate) fn with_mask(mut self, mask: Vec<u64>) -> Result<Self> {
        if mask.len() != self.mask.len() {
            return Err(Error::Dimension {
                expected: format!("{} mask words", self.mask.len()),
                actual: format!("{} mask words", mask.len()),
            });
        }
        self.mask = mask;
        self.check_padding()?;
        Ok(self)
    }

    pub(crate) fn with_code(mut self, code: Vec<u64>) -> Self {
        debug_assert_eq!(code.len(), self.code.len());
        self.code = code;
        self
    }

    /// Writes the `IRC1` binary form.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let g = &self.geometry;
        w.write_all(FILE_MAGIC)?;
        w.write_all(&[g.dimension.code(), g.resolution.code()])?;
        for v in [g.rows, g.cols, g.bit_planes] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for id in [&self.identity_id, &self.sample_id] {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        for word in self.code.iter().chain(self.mask.iter()) {
            w.write_all(&word.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FILE_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let mut tags = [0u8; 2];
        r.read_exact(&mut tags)?;
        let dimension = DimensionTag::from_code(tags[0])?;
        let resolution = ResolutionMode::from_code(tags[1])?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let planes = read_u32(&mut r)? as usize;
        let geometry = TemplateGeometry::from_parts(dimension, resolution, rows, cols, planes)?;
        let identity_id = read_string(&mut r)?;
        let sample_id = read_string(&mut r)?;
        let n = geometry.total_words();
        let mut words = vec![0u64; 2 * n];
        let mut buf = [0u8; 8];
        for word in words.iter_mut() {
            r.read_exact(&mut buf)?;
            *word = u64::from_le_bytes(buf);
        }
        let mask = words.split_off(n);
        let template = Self::from_words(geometry, words, mask)?;
        Ok(template.with_ids(identity_id, sample_id))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::with_capacity(64 + 16 * self.code.len());
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }

    fn check_padding(&self) -> Result<()> {
        let g = &self.geometry;
        let tail = g.cols % WORD_BITS;
        if tail == 0 {
            return Ok(());
        }
        let pad = !0u64 << tail;
        let wpr = g.words_per_row();
        for words in [&self.code, &self.mask] {
            if words.chunks_exact(wpr).any(|row| row[wpr - 1] & pad != 0) {
                return Err(Error::Format("nonzero padding bits".into()));
            }
        }
        Ok(())
    }

    fn check_cell_masks(&self) -> Result<()> {
        let wpp = self.geometry.words_per_plane();
        for (res, pair) in self.mask.chunks_exact(2 * wpp).enumerate() {
            let (re, im) = pair.split_at(wpp);
            if re != im {
                return Err(Error::Parameter(format!(
                    "real and imaginary mask planes of resolution {res} disagree"
                )));
            }
        }
        Ok(())
    }
}

/// ANDs `row_mask` into every row of a packed bit matrix.
pub(crate) fn apply_row_mask(words: &mut [u64], row_mask: &[u64]) {
    for row in words.chunks_exact_mut(row_mask.len()) {
        for (w, m) in row.iter_mut().zip(row_mask) {
            *w &= m;
        }
    }
}

/// Word `j` of a row rotated so that output column `c` reads input column
/// `c - shift` (mod `cols`). Requires `cols` to be a multiple of 64, which
/// holds for both template dimensions.
#[inline]
pub(crate) fn rotated_word(row: &[u64], j: usize, word_shift: usize, bit_shift: u32) -> u64 {
    let n = row.len();
    let hi = row[(j + n - word_shift) % n];
    if bit_shift == 0 {
        hi
    } else {
        let lo = row[(j + 2 * n - word_shift - 1) % n];
        (hi << bit_shift) | (lo >> (64 - bit_shift))
    }
}

/// Splits a signed column shift into (word, bit) rotation amounts.
#[inline]
pub(crate) fn split_shift(cols: usize, shift: i64) -> (usize, u32) {
    let s = shift.rem_euclid(cols as i64) as usize;
    (s / WORD_BITS, (s % WORD_BITS) as u32)
}

fn rotate_row_into(src: &[u64], dst: &mut [u64], cols: usize, shift: i64) {
    if cols.is_multiple_of(WORD_BITS) {
        let (ws, bs) = split_shift(cols, shift);
        for (j, out) in dst.iter_mut().enumerate() {
            *out = rotated_word(src, j, ws, bs);
        }
    } else {
        dst.fill(0);
        for c in 0..cols {
            let from = (c as i64 - shift).rem_euclid(cols as i64) as usize;
            if src[from / WORD_BITS] >> (from % WORD_BITS) & 1 == 1 {
                dst[c / WORD_BITS] |= 1u64 << (c % WORD_BITS);
            }
        }
    }
}

fn shape_error(expected: (usize, usize, usize), actual: (usize, usize, usize)) -> Error {
    Error::Dimension {
        expected: format!("{}x{}x{}", expected.0, expected.1, expected.2),
        actual: format!("{}x{}x{}", actual.0, actual.1, actual.2),
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 16 {
        return Err(Error::Format(format!(
            "identifier length {len} is implausible"
        )));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_template(geometry: TemplateGeometry, seed: u64, mask_density: f64) -> PackedTemplate {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, r, c) = geometry.shape();
        let code = BitGrid::from_fn(p, r, c, |_, _, _| rng.gen());
        let cells: Vec<bool> = (0..(p / 2) * r * c)
            .map(|_| rng.gen_bool(mask_density))
            .collect();
        let mask = BitGrid::from_fn(p, r, c, |pl, row, col| {
            cells[((pl / 2) * r + row) * c + col]
        });
        PackedTemplate::pack(&code, &mask, geometry).unwrap()
    }

    fn full(geometry: TemplateGeometry) -> PackedTemplate {
        let (p, r, c) = geometry.shape();
        PackedTemplate::pack(
            &BitGrid::filled(p, r, c, false),
            &BitGrid::filled(p, r, c, true),
            geometry,
        )
        .unwrap()
    }

    #[test]
    fn zero_template_has_empty_mask() {
        let g = TemplateGeometry::stripped(DimensionTag::D1, ResolutionMode::Single);
        let zeros = BitGrid::filled(2, 47, 512, false);
        let t = PackedTemplate::pack(&zeros, &zeros, g).unwrap();
        assert_eq!(t.mask_popcount(), 0);
    }

    #[test]
    fn full_mask_counts() {
        let d1 = full(TemplateGeometry::stripped(
            DimensionTag::D1,
            ResolutionMode::Single,
        ));
        assert_eq!(d1.mask_popcount(), 48128);
        // Table II prints 26116 for D2; 51 x 256 x 2 is 26112.
        let d2 = full(TemplateGeometry::stripped(
            DimensionTag::D2,
            ResolutionMode::Single,
        ));
        assert_eq!(d2.mask_popcount(), 51 * 256 * 2);
        assert_eq!(d2.mask_popcount(), 26112);
    }

    #[test]
    fn pack_rejects_shape_mismatch() {
        let g = TemplateGeometry::stripped(DimensionTag::D2, ResolutionMode::Single);
        let bad = BitGrid::filled(2, 50, 256, false);
        let good = BitGrid::filled(2, 51, 256, false);
        let err = PackedTemplate::pack(&bad, &good, g).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("2x51x256") && msg.contains("2x50x256"),
            "{msg}"
        );
    }

    #[test]
    fn pack_rejects_split_cell_mask() {
        let g = TemplateGeometry::stripped(DimensionTag::D2, ResolutionMode::Single);
        let code = BitGrid::filled(2, 51, 256, false);
        let mut mask = BitGrid::filled(2, 51, 256, true);
        mask.set(1, 3, 4, false);
        assert!(matches!(
            PackedTemplate::pack(&code, &mask, g),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn pack_round_trip_random() {
        for (i, dim) in (0..100).zip(DimensionTag::ALL.iter().cycle()) {
            let g = TemplateGeometry::stripped(*dim, ResolutionMode::Single);
            let t = random_template(g, i, 0.7);
            let (code, mask) = t.unpack();
            let again = PackedTemplate::pack(&code, &mask, g).unwrap();
            assert_eq!(t, again);
        }
    }

    #[test]
    fn strip_reproduces_reduced_dimensions() {
        for (dim, rows) in [(DimensionTag::D1, 47), (DimensionTag::D2, 51)] {
            let t = full(TemplateGeometry::extracted(dim, ResolutionMode::Single));
            let s = t.strip_boundaries().unwrap();
            assert_eq!(s.geometry().rows(), rows);
            assert_eq!(s.geometry().cols(), dim.cols());
        }
        assert_eq!(DimensionTag::D1.pupillary_rows_removed(), 5);
        assert_eq!(DimensionTag::D1.limbus_rows_removed(), 12);
        assert_eq!(DimensionTag::D2.pupillary_rows_removed(), 6);
        assert_eq!(DimensionTag::D2.limbus_rows_removed(), 13);
    }

    #[test]
    fn strip_keeps_sentinel_position() {
        let g = TemplateGeometry::extracted(DimensionTag::D1, ResolutionMode::Single);
        let mut code = BitGrid::filled(2, 64, 512, false);
        code.set(1, 30, 77, true);
        let mask = BitGrid::filled(2, 64, 512, true);
        let s = PackedTemplate::pack(&code, &mask, g)
            .unwrap()
            .strip_boundaries()
            .unwrap();
        let (out, _) = s.unpack();
        assert_eq!(out.count_ones(), 1);
        assert!(out.get(1, 30 - 5, 77));
    }

    #[test]
    fn strip_twice_is_refused() {
        let t = full(TemplateGeometry::extracted(
            DimensionTag::D2,
            ResolutionMode::Multi,
        ));
        let s = t.strip_boundaries().unwrap();
        assert!(matches!(
            s.strip_boundaries(),
            Err(Error::AlreadyStripped {
                rows: 51,
                cols: 256
            })
        ));
    }

    #[test]
    fn stack_counts_and_slices_back() {
        let g = TemplateGeometry::stripped(DimensionTag::D2, ResolutionMode::Single);
        let parts: Vec<_> = (0..3)
            .map(|i| random_template(g, 40 + i, 0.8).with_ids("id", "s"))
            .collect();
        let stacked = PackedTemplate::stack_resolutions(&parts[0], &parts[1], &parts[2]).unwrap();
        assert_eq!(stacked.geometry().bit_planes(), 6);
        let sum: usize = parts.iter().map(|p| p.mask_popcount()).sum();
        assert_eq!(stacked.mask_popcount(), sum);
        for (i, part) in parts.iter().enumerate() {
            assert_eq!(&stacked.resolution_slice(i).unwrap(), part);
        }

        let fulls: Vec<_> = (0..3).map(|_| full(g)).collect();
        let stacked = PackedTemplate::stack_resolutions(&fulls[0], &fulls[1], &fulls[2]).unwrap();
        assert_eq!(stacked.mask_popcount(), 3 * 51 * 256 * 2);
    }

    #[test]
    fn stack_zero_masks() {
        let g = TemplateGeometry::stripped(DimensionTag::D2, ResolutionMode::Single);
        let z = random_template(g, 1, 0.0);
        let stacked = PackedTemplate::stack_resolutions(&z, &z, &z).unwrap();
        assert_eq!(stacked.mask_popcount(), 0);
    }

    #[test]
    fn stack_rejects_mismatches() {
        let g = TemplateGeometry::stripped(DimensionTag::D2, ResolutionMode::Single);
        let a = full(g).with_ids("a", "1");
        let b = full(g).with_ids("b", "1");
        assert!(matches!(
            PackedTemplate::stack_resolutions(&a, &a, &b),
            Err(Error::Stacking(_))
        ));
        let c = full(TemplateGeometry::stripped(
            DimensionTag::D1,
            ResolutionMode::Single,
        ))
        .with_ids("a", "1");
        assert!(matches!(
            PackedTemplate::stack_resolutions(&a, &c, &a),
            Err(Error::Stacking(_))
        ));
    }

    #[test]
    fn column_counts() {
        let d1 = TemplateGeometry::stripped(DimensionTag::D1, ResolutionMode::Single);
        let d2 = TemplateGeometry::stripped(DimensionTag::D2, ResolutionMode::Single);
        assert_eq!(
            ColumnSet::sample(&d1, FeatureLevel::FULL, 9).retained(),
            (0..512).collect::<Vec<_>>()
        );
        let fl = |p| FeatureLevel::new(p).unwrap();
        assert_eq!(ColumnSet::sample(&d1, fl(10), 3).retained().len(), 51);
        let half = ColumnSet::sample(&d2, fl(50), 3);
        assert_eq!(half.retained().len(), 128);
        assert_eq!(half, ColumnSet::sample(&d2, fl(50), 3));
        assert_ne!(half, ColumnSet::sample(&d2, fl(50), 4));
        assert!(half.retained().windows(2).all(|w| w[0] < w[1]));
        // Every supported level against a straightforward round-half-up.
        for &p in &FeatureLevel::SUPPORTED {
            for cols in [256usize, 512] {
                let exact = cols as f64 * p as f64 / 100.0;
                assert_eq!(fl(p).retained_columns(cols), (exact + 0.5).floor() as usize);
            }
        }
    }

    #[test]
    fn unsupported_feature_level() {
        assert!(matches!(FeatureLevel::new(30), Err(Error::Parameter(_))));
    }

    #[test]
    fn elimination_counts() {
        let g = TemplateGeometry::stripped(DimensionTag::D2, ResolutionMode::Single);
        let t = full(g);
        let all = ColumnSet::sample(&g, FeatureLevel::FULL, 0);
        assert_eq!(t.eliminate_columns(&all).unwrap(), t);
        let half = ColumnSet::sample(&g, FeatureLevel::new(50).unwrap(), 11);
        let e = t.eliminate_columns(&half).unwrap();
        assert_eq!(e.mask_popcount(), 13056);
        assert_eq!(e.code_words(), t.code_words());
        let none = ColumnSet::from_indices(256, vec![], FeatureLevel::new(10).unwrap(), 0).unwrap();
        assert_eq!(t.eliminate_columns(&none).unwrap().mask_popcount(), 0);
        assert_eq!(t.mask_popcount(), 26112);
    }

    #[test]
    fn out_of_range_columns_rejected() {
        assert!(matches!(
            ColumnSet::from_indices(256, vec![3, 256], FeatureLevel::new(10).unwrap(), 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn file_round_trip_is_byte_exact() {
        let g = TemplateGeometry::stripped(DimensionTag::D1, ResolutionMode::Multi);
        let t = random_template(g, 5, 0.6).with_ids("identity-7", "sample-α");
        let mut bytes = Vec::new();
        t.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"IRC1");
        let back = PackedTemplate::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, t);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn file_rejects_garbage() {
        assert!(PackedTemplate::read_from(&b"IRC2xxxx"[..]).is_err());
        let mut bytes = Vec::new();
        full(TemplateGeometry::stripped(
            DimensionTag::D2,
            ResolutionMode::Single,
        ))
        .write_to(&mut bytes)
        .unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(PackedTemplate::read_from(bytes.as_slice()).is_err());
    }

    #[test]
    fn rotation_matches_definition() {
        let g = TemplateGeometry::stripped(DimensionTag::D2, ResolutionMode::Single);
        let t = random_template(g, 77, 0.5);
        for shift in [-130i64, -64, -14, -1, 0, 1, 5, 63, 64, 65, 255, 300] {
            let r = t.rotate_columns(shift);
            for p in 0..2 {
                for row in [0, 25, 50] {
                    for c in 0..256 {
                        let from = (c as i64 - shift).rem_euclid(256) as usize;
                        assert_eq!(r.code_bit(p, row, c), t.code_bit(p, row, from));
                        assert_eq!(r.mask_bit(p, row, c), t.mask_bit(p, row, from));
                    }
                }
            }
            assert_eq!(r.rotate_columns(-shift), t);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn elimination_idempotent_and_shrinks_mask(seed in any::<u64>(), level in 0usize..7) {
            let g = TemplateGeometry::stripped(DimensionTag::D2, ResolutionMode::Single);
            let t = random_template(g, seed, 0.75);
            let cols = ColumnSet::sample(&g, FeatureLevel::new(FeatureLevel::SUPPORTED[level]).unwrap(), seed);
            let once = t.eliminate_columns(&cols).unwrap();
            prop_assert_eq!(&once.eliminate_columns(&cols).unwrap(), &once);
            for (m_out, m_in) in once.mask_words().iter().zip(t.mask_words()) {
                prop_assert_eq!(m_out & !m_in, 0);
            }
        }

        #[test]
        fn elimination_commutes_with_stacking(seed in any::<u64>(), level in 1usize..7) {
            let g = TemplateGeometry::stripped(DimensionTag::D2, ResolutionMode::Single);
            let parts: Vec<_> = (0..3).map(|i| random_template(g, seed ^ i, 0.8)).collect();
            let cols = ColumnSet::sample(&g, FeatureLevel::new(FeatureLevel::SUPPORTED[level]).unwrap(), seed);
            let stacked = PackedTemplate::stack_resolutions(&parts[0], &parts[1], &parts[2]).unwrap();
            let a = stacked.eliminate_columns(&cols).unwrap();
            let e: Vec<_> = parts.iter().map(|p| p.eliminate_columns(&cols).unwrap()).collect();
            let b = PackedTemplate::stack_resolutions(&e[0], &e[1], &e[2]).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn strip_preserves_surviving_bits(seed in any::<u64>()) {
            let g = TemplateGeometry::extracted(DimensionTag::D2, ResolutionMode::Single);
            let t = random_template(g, seed, 0.5);
            let s = t.strip_boundaries().unwrap();
            for p in 0..2 {
                for r in 0..51 {
                    for c in (0..256).step_by(17) {
                        prop_assert_eq!(s.code_bit(p, r, c), t.code_bit(p, r + 6, c));
                        prop_assert_eq!(s.mask_bit(p, r, c), t.mask_bit(p, r + 6, c));
                    }
                }
            }
        }
    }
}
