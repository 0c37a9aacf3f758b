//! Masked fractional Hamming distance with rotation search.
//!
//! `hd = |(codeA ^ codeB) & maskA & maskB| / |maskA & maskB|`, evaluated over
//! every bit plane. The rotation search shifts the second template's code
//! *and* mask by each column offset in the window and keeps the minimum.
//!
//! Sign convention: at offset `s` the second template is rotated so that its
//! column `c - s` lines up with column `c` of the first. If `b` is `a`
//! rotated by `+k` (see [`PackedTemplate::rotate_columns`]), the best offset
//! is `-k`.

use crate::error::{Error, Result};
use crate::template::{
    apply_row_mask, split_shift, ColumnSet, DimensionTag, FeatureLevel, PackedTemplate,
    TemplateGeometry,
};

pub use crate::seed::pair_seed;

/// Rotation window of the shift search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftSpec {
    max_shift_per_side: u32,
    degrees_per_shift: f64,
}

impl ShiftSpec {
    pub fn new(max_shift_per_side: u32, degrees_per_shift: f64) -> Self {
        Self {
            max_shift_per_side,
            degrees_per_shift,
        }
    }

    /// 28 shifts of 0.7 degrees for D1, 14 of 1.4 degrees for D2; 19.6 degrees either way.
    pub fn for_dimension(dimension: DimensionTag) -> Self {
        match dimension {
            DimensionTag::D1 => Self::new(28, 0.7),
            DimensionTag::D2 => Self::new(14, 1.4),
        }
    }

    pub fn max_shift_per_side(&self) -> u32 {
        self.max_shift_per_side
    }

    pub fn degrees_per_shift(&self) -> f64 {
        self.degrees_per_shift
    }

    pub fn span_degrees(&self) -> f64 {
        self.max_shift_per_side as f64 * self.degrees_per_shift
    }

    /// Alignments evaluated per comparison, the unshifted one included.
    pub fn alignments(&self) -> usize {
        2 * self.max_shift_per_side as usize + 1
    }

    /// Offsets in tie-break order: 0, -1, +1, -2, +2, ...
    pub fn offsets(&self) -> impl Iterator<Item = i64> {
        let k = self.max_shift_per_side as i64;
        std::iter::once(0).chain((1..=k).flat_map(|m| [-m, m]))
    }

    fn check(&self, geometry: &TemplateGeometry) -> Result<()> {
        if self.alignments() > geometry.cols() {
            return Err(Error::Parameter(format!(
                "{} alignments exceed {} columns",
                self.alignments(),
                geometry.cols()
            )));
        }
        Ok(())
    }
}

/// Disagreeing and compared bit counts for one alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitComparison {
    pub differing_bits: u64,
    pub compared_bits: u64,
}

impl BitComparison {
    pub fn hd(&self) -> f64 {
        self.differing_bits as f64 / self.compared_bits as f64
    }

    /// Exact `self.hd() < other.hd()` on the underlying fractions.
    fn lower_than(&self, other: &BitComparison) -> bool {
        (self.differing_bits as u128) * (other.compared_bits as u128)
            < (other.differing_bits as u128) * (self.compared_bits as u128)
    }
}

/// Final score of one comparison: the best alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchScore {
    pub hd: f64,
    pub best_shift: i32,
    pub compared_bits: u32,
    pub differing_bits: u32,
}

/// One entry of a shift profile; `None` when the masks do not overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alignment {
    pub shift: i64,
    pub counts: Option<BitComparison>,
}

/// Unshifted masked Hamming distance.
pub fn hamming_distance(a: &PackedTemplate, b: &PackedTemplate) -> Result<BitComparison> {
    check_pair(a, b)?;
    let c = count_at_shift(
        a.geometry(),
        a.code_words(),
        a.mask_words(),
        b.code_words(),
        b.mask_words(),
        0,
    );
    if c.compared_bits == 0 {
        return Err(Error::EmptyOverlap);
    }
    Ok(c)
}

/// Bit counts at every offset of the window, in tie-break order.
pub fn shift_profile(
    a: &PackedTemplate,
    b: &PackedTemplate,
    spec: &ShiftSpec,
) -> Result<Vec<Alignment>> {
    check_pair(a, b)?;
    spec.check(a.geometry())?;
    Ok(spec
        .offsets()
        .map(|shift| {
            let c = count_at_shift(
                a.geometry(),
                a.code_words(),
                a.mask_words(),
                b.code_words(),
                b.mask_words(),
                shift,
            );
            Alignment {
                shift,
                counts: (c.compared_bits > 0).then_some(c),
            }
        })
        .collect())
}

/// Minimum Hamming distance over the rotation window.
pub fn match_score(a: &PackedTemplate, b: &PackedTemplate, spec: &ShiftSpec) -> Result<MatchScore> {
    check_pair(a, b)?;
    spec.check(a.geometry())?;
    search(
        a.geometry(),
        a.code_words(),
        a.mask_words(),
        b.code_words(),
        b.mask_words(),
        spec,
    )
}

/// [`match_score`] after removing the same random angular columns from both
/// templates. Columns are removed at fixed positions of each template, before
/// any rotation.
pub fn match_with_elimination(
    a: &PackedTemplate,
    b: &PackedTemplate,
    spec: &ShiftSpec,
    feature_level: FeatureLevel,
    pair_seed: u64,
) -> Result<MatchScore> {
    if feature_level.is_full() {
        return match_score(a, b, spec);
    }
    check_pair(a, b)?;
    spec.check(a.geometry())?;
    let columns = ColumnSet::sample(a.geometry(), feature_level, pair_seed);
    let row_mask = columns.row_mask();
    let mut mask_a = a.mask_words().to_vec();
    let mut mask_b = b.mask_words().to_vec();
    apply_row_mask(&mut mask_a, &row_mask);
    apply_row_mask(&mut mask_b, &row_mask);
    search(
        a.geometry(),
        a.code_words(),
        &mask_a,
        b.code_words(),
        &mask_b,
        spec,
    )
}

fn check_pair(a: &PackedTemplate, b: &PackedTemplate) -> Result<()> {
    if a.geometry() != b.geometry() {
        return Err(Error::Dimension {
            expected: a.geometry().to_string(),
            actual: b.geometry().to_string(),
        });
    }
    Ok(())
}

fn search(
    geometry: &TemplateGeometry,
    code_a: &[u64],
    mask_a: &[u64],
    code_b: &[u64],
    mask_b: &[u64],
    spec: &ShiftSpec,
) -> Result<MatchScore> {
    let mut best: Option<(i64, BitComparison)> = None;
    for shift in spec.offsets() {
        let c = count_at_shift(geometry, code_a, mask_a, code_b, mask_b, shift);
        if c.compared_bits == 0 {
            continue;
        }
        match &best {
            Some((_, b)) if !c.lower_than(b) => {}
            _ => best = Some((shift, c)),
        }
    }
    let (shift, c) = best.ok_or(Error::EmptyOverlap)?;
    Ok(MatchScore {
        hd: c.hd(),
        best_shift: shift as i32,
        compared_bits: c.compared_bits as u32,
        differing_bits: c.differing_bits as u32,
    })
}

/// Inner loop: counts with `b` rotated by `shift`, one row at a time.
fn count_at_shift(
    geometry: &TemplateGeometry,
    code_a: &[u64],
    mask_a: &[u64],
    code_b: &[u64],
    mask_b: &[u64],
    shift: i64,
) -> BitComparison {
    let n = geometry.words_per_row();
    debug_assert_eq!(geometry.cols() % 64, 0);
    let (ws, bs) = split_shift(geometry.cols(), shift);
    let mut differing = 0u64;
    let mut compared = 0u64;
    let rows = code_a
        .chunks_exact(n)
        .zip(mask_a.chunks_exact(n))
        .zip(code_b.chunks_exact(n).zip(mask_b.chunks_exact(n)));
    for ((ca, ma), (cb, mb)) in rows {
        for j in 0..n {
            let hi = if j >= ws { j - ws } else { j + n - ws };
            let (rc, rm) = if bs == 0 {
                (cb[hi], mb[hi])
            } else {
                let lo = if hi == 0 { n - 1 } else { hi - 1 };
                (
                    (cb[hi] << bs) | (cb[lo] >> (64 - bs)),
                    (mb[hi] << bs) | (mb[lo] >> (64 - bs)),
                )
            };
            let overlap = ma[j] & rm;
            differing += ((ca[j] ^ rc) & overlap).count_ones() as u64;
            compared += overlap.count_ones() as u64;
        }
    }
    BitComparison {
        differing_bits: differing,
        compared_bits: compared,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::{BitGrid, ResolutionMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn template(geometry: TemplateGeometry, rng: &mut ChaCha8Rng, density: f64) -> PackedTemplate {
        let (p, r, c) = (geometry.bit_planes(), geometry.rows(), geometry.cols());
        let code = BitGrid::from_fn(p, r, c, |_, _, _| rng.gen());
        let cells: Vec<bool> = (0..(p / 2) * r * c)
            .map(|_| rng.gen_bool(density))
            .collect();
        let mask = BitGrid::from_fn(p, r, c, |pl, row, col| {
            cells[((pl / 2) * r + row) * c + col]
        });
        PackedTemplate::pack(&code, &mask, geometry).unwrap()
    }

    fn d2() -> TemplateGeometry {
        TemplateGeometry::stripped(DimensionTag::D2, ResolutionMode::Single)
    }

    #[test]
    fn window_sizes() {
        let d1 = ShiftSpec::for_dimension(DimensionTag::D1);
        let d2 = ShiftSpec::for_dimension(DimensionTag::D2);
        assert_eq!(d1.alignments(), 57);
        assert_eq!(d2.alignments(), 29);
        assert!((d1.span_degrees() - 19.6).abs() < 1e-9);
        assert!((d2.span_degrees() - 19.6).abs() < 1e-9);
        let order: Vec<i64> = ShiftSpec::new(2, 1.0).offsets().collect();
        assert_eq!(order, vec![0, -1, 1, -2, 2]);
    }

    #[test]
    fn identical_and_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = template(d2(), &mut rng, 1.0);
        assert_eq!(hamming_distance(&a, &a).unwrap().hd(), 0.0);
        let flipped: Vec<u64> = a.code_words().iter().map(|w| !w).collect();
        let b =
            PackedTemplate::from_words(*a.geometry(), flipped, a.mask_words().to_vec()).unwrap();
        let c = hamming_distance(&a, &b).unwrap();
        assert_eq!(c.hd(), 1.0);
        assert_eq!(c.compared_bits, 26112);
        let s = match_score(&a, &a, &ShiftSpec::for_dimension(DimensionTag::D2)).unwrap();
        assert_eq!((s.hd, s.best_shift), (0.0, 0));
    }

    #[test]
    fn empty_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = template(d2(), &mut rng, 1.0);
        let b = template(d2(), &mut rng, 0.0);
        assert!(matches!(hamming_distance(&a, &b), Err(Error::EmptyOverlap)));
        assert!(matches!(
            match_score(&a, &b, &ShiftSpec::for_dimension(DimensionTag::D2)),
            Err(Error::EmptyOverlap)
        ));
    }

    #[test]
    fn geometry_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = template(d2(), &mut rng, 1.0);
        let b = template(
            TemplateGeometry::stripped(DimensionTag::D1, ResolutionMode::Single),
            &mut rng,
            1.0,
        );
        assert!(matches!(
            hamming_distance(&a, &b),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn rotated_copy_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = template(d2(), &mut rng, 0.9);
        let spec = ShiftSpec::for_dimension(DimensionTag::D2);
        let b = a.rotate_columns(5);
        let s = match_score(&a, &b, &spec).unwrap();
        assert_eq!(s.hd, 0.0);
        assert_eq!(s.best_shift, -5);
        let s = match_score(&b, &a, &spec).unwrap();
        assert_eq!(s.best_shift, 5);
    }

    #[test]
    fn elimination_full_level_is_plain_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = ShiftSpec::for_dimension(DimensionTag::D2);
        let a = template(d2(), &mut rng, 0.8);
        let b = template(d2(), &mut rng, 0.8);
        assert_eq!(
            match_with_elimination(&a, &b, &spec, FeatureLevel::FULL, 99).unwrap(),
            match_score(&a, &b, &spec).unwrap()
        );
        for &p in &FeatureLevel::SUPPORTED {
            let s =
                match_with_elimination(&a, &a, &spec, FeatureLevel::new(p).unwrap(), 3).unwrap();
            assert_eq!(s.hd, 0.0);
        }
        let lvl = FeatureLevel::new(25).unwrap();
        assert_eq!(
            match_with_elimination(&a, &b, &spec, lvl, 17).unwrap(),
            match_with_elimination(&a, &b, &spec, lvl, 17).unwrap()
        );
    }

    #[test]
    fn wider_window_never_hurts() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let a = template(d2(), &mut rng, 0.7);
            let b = template(d2(), &mut rng, 0.7);
            let mut prev = f64::INFINITY;
            for k in [0, 1, 4, 9, 14] {
                let s = match_score(&a, &b, &ShiftSpec::new(k, 1.4)).unwrap();
                assert!(s.hd <= prev);
                prev = s.hd;
            }
        }
    }
}
