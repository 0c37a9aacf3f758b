//! Synthetic identity populations.
//!
//! Each identity gets a base IrisCode drawn from a 2-D persistence process:
//! every bit copies its upper neighbour with probability `row_persistence`,
//! else its left neighbour with probability `col_persistence`, else is a
//! fresh fair coin. Three samples per identity are derived from the base by
//! independent bit flips, rectangular occlusions and a random rotation
//! of at most half the shift window.
//!
//! A per-identity quality scalar drives the sample noise: lower quality
//! means more flips and more occlusion, and lands in the manifest as the
//! overall quality score and usable iris area.
//!
//! All randomness is keyed by `(seed, identity index, sample slot)`, so
//! parallel and serial generation agree bit for bit.

use rand::distributions::{Bernoulli, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{QualityMetric, QualityMetrics, SampleRecord};
use crate::error::{Error, Result};
use crate::matcher::{hamming_distance, ShiftSpec};
use crate::seed::{derive, SeedPart};
use crate::template::{DimensionTag, PackedTemplate, ResolutionMode, TemplateGeometry};

/// Persistences giving about 0.469 bits of effective entropy per bit on
/// either template dimension (see `examples/entropy_sweep.rs`).
pub const CALIBRATED_ROW_PERSISTENCE: f64 = 0.345;
pub const CALIBRATED_COL_PERSISTENCE: f64 = 0.345;
pub const TARGET_ENTROPY_PER_BIT: f64 = 0.469;

/// Quality drop from one sample slot to the next within an identity.
const SLOT_QUALITY_STEP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationParams {
    pub n_identities: usize,
    pub dimension: DimensionTag,
    pub resolution: ResolutionMode,
    pub row_persistence: f64,
    pub col_persistence: f64,
    pub target_entropy_per_bit: f64,
    /// Flip probability of a perfect-quality sample.
    pub genuine_flip_prob: f64,
    /// Occluded fraction of a perfect-quality sample.
    pub occlusion_rate: f64,
    /// Extra flip probability at quality 0.
    pub quality_flip_gain: f64,
    /// Extra occluded fraction at quality 0.
    pub quality_occlusion_gain: f64,
    /// Rotate samples by up to half the dimension's shift window, so any
    /// two samples of an identity stay within one window of each other.
    pub rotate_samples: bool,
    pub seed: u64,
}

impl Default for PopulationParams {
    fn default() -> Self {
        Self {
            n_identities: 100,
            dimension: DimensionTag::D2,
            resolution: ResolutionMode::Single,
            row_persistence: CALIBRATED_ROW_PERSISTENCE,
            col_persistence: CALIBRATED_COL_PERSISTENCE,
            target_entropy_per_bit: TARGET_ENTROPY_PER_BIT,
            genuine_flip_prob: 0.05,
            occlusion_rate: 0.05,
            quality_flip_gain: 0.15,
            quality_occlusion_gain: 0.3,
            rotate_samples: true,
            seed: 0,
        }
    }
}

impl PopulationParams {
    pub fn geometry(&self) -> TemplateGeometry {
        TemplateGeometry::stripped(self.dimension, self.resolution)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_identities == 0 {
            return Err(Error::Parameter("n_identities must be at least 1".into()));
        }
        for (name, p) in [
            ("row_persistence", self.row_persistence),
            ("col_persistence", self.col_persistence),
            ("genuine_flip_prob", self.genuine_flip_prob),
            ("occlusion_rate", self.occlusion_rate),
            ("quality_flip_gain", self.quality_flip_gain),
            ("quality_occlusion_gain", self.quality_occlusion_gain),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Parameter(format!(
                    "{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        if self.row_persistence + self.col_persistence > 1.0 {
            return Err(Error::Parameter(
                "row + column persistence exceeds 1".into(),
            ));
        }
        if self.genuine_flip_prob + self.quality_flip_gain > 1.0
            || self.occlusion_rate + self.quality_occlusion_gain > 1.0
        {
            return Err(Error::Parameter(
                "noise at quality 0 exceeds probability 1".into(),
            ));
        }
        if !(self.target_entropy_per_bit > 0.0 && self.target_entropy_per_bit <= 1.0) {
            return Err(Error::Parameter("target entropy must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Noise applied to a base template to obtain one capture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenuineNoise {
    pub flip_prob: f64,
    pub occlusion_rate: f64,
    /// Rotation drawn uniformly from `[-max_rotation, max_rotation]`.
    pub max_rotation: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub record: SampleRecord,
    pub template: PackedTemplate,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub params: PopulationParams,
    /// Base template of each identity, full mask.
    pub bases: Vec<PackedTemplate>,
    /// Three samples per identity, identity-major.
    pub samples: Vec<SyntheticSample>,
}

impl Population {
    pub fn records(&self) -> Vec<SampleRecord> {
        self.samples.iter().map(|s| s.record.clone()).collect()
    }

    pub fn templates(&self) -> std::collections::HashMap<String, PackedTemplate> {
        self.samples
            .iter()
            .map(|s| (s.record.sample_id.clone(), s.template.clone()))
            .collect()
    }
}

pub fn identity_id(index: usize) -> String {
    format!("id{index:05}")
}

pub fn sample_id(index: usize, slot: usize) -> String {
    format!("id{index:05}_s{slot}")
}

/// Draws one base template with a full mask.
pub fn generate_base(
    geometry: &TemplateGeometry,
    row_persistence: f64,
    col_persistence: f64,
    seed: u64,
) -> PackedTemplate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = (geometry.rows(), geometry.cols());
    let wpr = geometry.words_per_row();
    let mut code = vec![0u64; geometry.total_words()];
    let mut mask = vec![0u64; geometry.total_words()];
    let mut plane = vec![false; rows * cols];
    for p in 0..geometry.bit_planes() {
        for r in 0..rows {
            for c in 0..cols {
                let u: f64 = rng.gen();
                let fresh: bool = rng.gen();
                plane[r * cols + c] = if u < row_persistence {
                    if r > 0 {
                        plane[(r - 1) * cols + c]
                    } else {
                        fresh
                    }
                } else if u < row_persistence + col_persistence {
                    if c > 0 {
                        plane[r * cols + c - 1]
                    } else {
                        fresh
                    }
                } else {
                    fresh
                };
            }
        }
        for r in 0..rows {
            for c in 0..cols {
                let w = p * rows * wpr + r * wpr + c / 64;
                if plane[r * cols + c] {
                    code[w] |= 1 << (c % 64);
                }
                mask[w] |= 1 << (c % 64);
            }
        }
    }
    PackedTemplate::from_words(*geometry, code, mask).expect("generated words match geometry")
}

/// Derives one capture of `base`: flips masked code bits, occludes
/// rectangular blocks (whole cells, all planes), then rotates.
pub fn derive_genuine_sample(
    base: &PackedTemplate,
    noise: &GenuineNoise,
    seed: u64,
) -> Result<PackedTemplate> {
    for (name, p) in [
        ("flip_prob", noise.flip_prob),
        ("occlusion_rate", noise.occlusion_rate),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "{name} must lie in [0, 1], got {p}"
            )));
        }
    }
    let g = *base.geometry();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut code = base.code_words().to_vec();
    if noise.flip_prob > 0.0 {
        let flip = Bernoulli::new(noise.flip_prob).expect("probability checked");
        for (w, m) in code.iter_mut().zip(base.mask_words()) {
            let mut bits = *m;
            while bits != 0 {
                let b = bits.trailing_zeros();
                if flip.sample(&mut rng) {
                    *w ^= 1 << b;
                }
                bits &= bits - 1;
            }
        }
    }

    let (rows, cols) = (g.rows(), g.cols());
    let mut occluded = vec![false; rows * cols];
    let target = (noise.occlusion_rate * (rows * cols) as f64).round() as usize;
    let mut covered = 0;
    while covered < target {
        let h = rng.gen_range(2..=(rows / 4).max(2));
        let w = rng.gen_range(8..=(cols / 8).max(8));
        let top = rng.gen_range(0..rows);
        let left = rng.gen_range(0..cols);
        'block: for y in top..(top + h).min(rows) {
            for x in left..left + w {
                let cell = &mut occluded[y * cols + x % cols];
                if !*cell {
                    *cell = true;
                    covered += 1;
                    if covered >= target {
                        break 'block;
                    }
                }
            }
        }
    }
    let mut mask = base.mask_words().to_vec();
    let wpr = g.words_per_row();
    for p in 0..g.bit_planes() {
        for y in 0..rows {
            for x in 0..cols {
                if occluded[y * cols + x] {
                    mask[p * rows * wpr + y * wpr + x / 64] &= !(1u64 << (x % 64));
                }
            }
        }
    }

    let rotation = if noise.max_rotation > 0 {
        let k = noise.max_rotation as i64;
        rng.gen_range(-k..=k)
    } else {
        0
    };
    let sample = base.clone().with_code(code).with_mask(mask)?;
    Ok(if rotation == 0 {
        sample
    } else {
        sample.rotate_columns(rotation)
    })
}

/// Quality-dependent noise of one sample.
fn sample_noise(params: &PopulationParams, quality: f64) -> GenuineNoise {
    GenuineNoise {
        flip_prob: params.genuine_flip_prob + params.quality_flip_gain * (1.0 - quality),
        occlusion_rate: params.occlusion_rate + params.quality_occlusion_gain * (1.0 - quality),
        max_rotation: if params.rotate_samples {
            ShiftSpec::for_dimension(params.dimension).max_shift_per_side() / 2
        } else {
            0
        },
    }
}

fn synthetic_metrics(quality: f64, occlusion_rate: f64) -> QualityMetrics {
    use QualityMetric::*;
    QualityMetrics::default()
        .with(OverallQualityScore, (100.0 * quality).round())
        .with(IrisRadius, 110.0)
        .with(Dilation, 45.0)
        .with(UsableIrisArea, (100.0 * (1.0 - occlusion_rate)).round())
        .with(IrisScleraContrast, 20.0)
        .with(IrisPupilContrast, 50.0)
        .with(GrayscaleUtilization, 7.0)
        .with(IrisPupilConcentricity, 95.0)
        .with(MarginAdequacy, 95.0)
}

fn generate_identity(
    params: &PopulationParams,
    index: usize,
) -> Result<(PackedTemplate, Vec<SyntheticSample>)> {
    let geometry = params.geometry();
    let id_seed = derive(&[
        SeedPart::Str("identity"),
        SeedPart::Int(params.seed),
        SeedPart::Int(index as u64),
    ]);
    let base = generate_base(
        &geometry,
        params.row_persistence,
        params.col_persistence,
        id_seed,
    )
    .with_ids(identity_id(index), format!("{}_base", identity_id(index)));
    let mut rng = ChaCha8Rng::seed_from_u64(id_seed ^ 0x5157_5157);
    let identity_quality: f64 = rng.gen();
    let samples = (0..3)
        .map(|slot| {
            let quality = (identity_quality - SLOT_QUALITY_STEP * slot as f64).max(0.0);
            let noise = sample_noise(params, quality);
            let seed = derive(&[
                SeedPart::Str("sample"),
                SeedPart::Int(params.seed),
                SeedPart::Int(index as u64),
                SeedPart::Int(slot as u64),
            ]);
            let sid = sample_id(index, slot);
            let template = derive_genuine_sample(&base, &noise, seed)?
                .with_ids(identity_id(index), sid.clone());
            Ok(SyntheticSample {
                record: SampleRecord {
                    identity_id: identity_id(index),
                    sample_id: sid.clone(),
                    path: format!("templates/{sid}").into(),
                    quality: synthetic_metrics(quality, noise.occlusion_rate),
                },
                template,
                quality,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((base, samples))
}

/// Generates `n_identities` identities with three samples each.
pub fn generate_population(params: &PopulationParams) -> Result<Population> {
    params.validate()?;
    let generated = (0..params.n_identities)
        .into_par_iter()
        .map(|i| generate_identity(params, i))
        .collect::<Result<Vec<_>>>()?;
    let mut bases = Vec::with_capacity(generated.len());
    let mut samples = Vec::with_capacity(3 * generated.len());
    for (base, s) in generated {
        bases.push(base);
        samples.extend(s);
    }
    Ok(Population {
        params: *params,
        bases,
        samples,
    })
}

/// Binomial fit of an imposter distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyEstimate {
    pub pairs: usize,
    pub mean_hd: f64,
    pub variance: f64,
    /// `N = mu (1 - mu) / sigma^2`.
    pub degrees_of_freedom: f64,
    /// Mean compared bits per pair.
    pub usable_bits: f64,
    /// `N / usable_bits`.
    pub independence_ratio: f64,
    /// `N h(mu) / usable_bits`, with `h` the binary entropy.
    pub entropy_per_bit: f64,
}

fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }
}

/// Effective entropy per bit from the unshifted imposter distribution over
/// all pairs of `templates`, which must belong to distinct identities.
pub fn measure_entropy(templates: &[PackedTemplate]) -> Result<EntropyEstimate> {
    let total_bits: usize = templates.iter().map(|t| t.geometry().bit_count()).sum();
    if templates.len() < 3 || total_bits < 100_000 {
        return Err(Error::Parameter(format!(
            "entropy estimate needs at least 3 templates and 1e5 bits, got {} and {total_bits}",
            templates.len()
        )));
    }
    let per_row: Vec<(f64, f64, f64, usize)> = (0..templates.len())
        .into_par_iter()
        .map(|i| {
            let (mut s, mut s2, mut bits, mut n) = (0.0, 0.0, 0.0, 0);
            for j in i + 1..templates.len() {
                if let Ok(c) = hamming_distance(&templates[i], &templates[j]) {
                    let hd = c.hd();
                    s += hd;
                    s2 += hd * hd;
                    bits += c.compared_bits as f64;
                    n += 1;
                }
            }
            (s, s2, bits, n)
        })
        .collect();
    let (s, s2, bits, n) = per_row.into_iter().fold((0.0, 0.0, 0.0, 0), |acc, x| {
        (acc.0 + x.0, acc.1 + x.1, acc.2 + x.2, acc.3 + x.3)
    });
    if n < 2 {
        return Err(Error::Parameter("fewer than two scorable pairs".into()));
    }
    let nf = n as f64;
    let mean = s / nf;
    let variance = (s2 / nf - mean * mean) * nf / (nf - 1.0);
    if variance <= 0.0 {
        return Err(Error::Parameter(
            "imposter distribution has zero variance".into(),
        ));
    }
    let dof = mean * (1.0 - mean) / variance;
    let usable = bits / nf;
    Ok(EntropyEstimate {
        pairs: n,
        mean_hd: mean,
        variance,
        degrees_of_freedom: dof,
        usable_bits: usable,
        independence_ratio: dof / usable,
        entropy_per_bit: dof * binary_entropy(mean) / usable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::match_score;

    fn d2() -> TemplateGeometry {
        TemplateGeometry::stripped(DimensionTag::D2, ResolutionMode::Single)
    }

    #[test]
    fn noiseless_sample_is_identical() {
        let base = generate_base(&d2(), 0.2, 0.2, 1);
        let noise = GenuineNoise {
            flip_prob: 0.0,
            occlusion_rate: 0.0,
            max_rotation: 0,
        };
        let s = derive_genuine_sample(&base, &noise, 9).unwrap();
        assert_eq!(s, base);
        assert_eq!(hamming_distance(&base, &s).unwrap().hd(), 0.0);
    }

    #[test]
    fn flip_rate_is_binomial() {
        let base = generate_base(
            &TemplateGeometry::stripped(DimensionTag::D1, ResolutionMode::Multi),
            0.0,
            0.0,
            2,
        );
        let noise = GenuineNoise {
            flip_prob: 0.05,
            occlusion_rate: 0.0,
            max_rotation: 0,
        };
        let s = derive_genuine_sample(&base, &noise, 3).unwrap();
        let hd = hamming_distance(&base, &s).unwrap().hd();
        assert!((hd - 0.05).abs() < 0.01, "{hd}");
    }

    #[test]
    fn occlusion_rate_is_respected() {
        let base = generate_base(&d2(), 0.0, 0.0, 4);
        let noise = GenuineNoise {
            flip_prob: 0.0,
            occlusion_rate: 0.2,
            max_rotation: 0,
        };
        let s = derive_genuine_sample(&base, &noise, 5).unwrap();
        let frac = 1.0 - s.mask_popcount() as f64 / base.mask_popcount() as f64;
        assert!((frac - 0.2).abs() < 0.005, "{frac}");
    }

    #[test]
    fn rotation_is_recovered() {
        let base = generate_base(&d2(), 0.18, 0.18, 6);
        let spec = ShiftSpec::for_dimension(DimensionTag::D2);
        for seed in 0..20 {
            let plain = GenuineNoise {
                flip_prob: 0.08,
                occlusion_rate: 0.1,
                max_rotation: 0,
            };
            let rotated = GenuineNoise {
                max_rotation: 14,
                ..plain
            };
            let unrot = derive_genuine_sample(&base, &plain, seed).unwrap();
            let rot = derive_genuine_sample(&base, &rotated, seed).unwrap();
            let s = match_score(&base, &rot, &spec).unwrap();
            assert_eq!(s.hd, hamming_distance(&base, &unrot).unwrap().hd());
            assert_eq!(rot.rotate_columns(s.best_shift as i64), unrot);
        }
    }

    #[test]
    fn population_is_deterministic() {
        let params = PopulationParams {
            n_identities: 6,
            seed: 11,
            ..Default::default()
        };
        let a = generate_population(&params).unwrap();
        let b = generate_population(&params).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 18);
        let c = generate_population(&PopulationParams { seed: 12, ..params }).unwrap();
        assert_ne!(a.samples[0].template, c.samples[0].template);
    }

    #[test]
    fn enrollment_sample_has_best_quality() {
        let params = PopulationParams {
            n_identities: 20,
            seed: 3,
            ..Default::default()
        };
        let pop = generate_population(&params).unwrap();
        for chunk in pop.samples.chunks(3) {
            let q: Vec<f64> = chunk
                .iter()
                .map(|s| s.record.overall_quality().unwrap())
                .collect();
            assert!(q[0] >= q[1] && q[1] >= q[2], "{q:?}");
        }
    }

    #[test]
    fn params_validation() {
        let bad = PopulationParams {
            row_persistence: 0.7,
            col_persistence: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PopulationParams {
            n_identities: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(PopulationParams::default().validate().is_ok());
    }

    #[test]
    fn duplicated_columns_have_little_entropy() {
        let bases: Vec<_> = (0..40).map(|i| generate_base(&d2(), 0.0, 1.0, i)).collect();
        let e = measure_entropy(&bases).unwrap();
        assert!(e.independence_ratio < 0.1, "{e:?}");
    }

    #[test]
    fn too_little_data() {
        let bases: Vec<_> = (0..2).map(|i| generate_base(&d2(), 0.0, 0.0, i)).collect();
        assert!(measure_entropy(&bases).is_err());
    }
}
