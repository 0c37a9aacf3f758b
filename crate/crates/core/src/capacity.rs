//! Operating-point calibration and constrained capacity.
//!
//! Accept rule everywhere: a comparison matches iff `hd <= threshold`.
//!
//! Constrained capacity (CC) is the number of identities a system resolves
//! before its first identity clash. Identities are ranked in ascending order
//! of false accepts (FAAO); CC is the count of identities with no false
//! accept at all, and the remaining identities are the NICF (identities
//! contributing to false accepts).

use serde::Serialize;

use crate::engine::ScoreStore;
use crate::error::{Error, Result};
use crate::template::FeatureLevel;

/// Probability scale for exact FAR comparisons (parts per 10^9 percent-units).
const TARGET_SCALE: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibratedThreshold {
    pub hd_threshold: f64,
    pub target_far_percent: f64,
    /// Fraction of calibration scores accepted at `hd_threshold`.
    pub achieved_far: f64,
    pub calibrated_at_feature_level: u8,
}

/// Largest observed score (or the sentinel 0) whose accept fraction stays
/// at or below `target_far_percent / 100`.
pub fn calibrate_threshold(
    imposter_scores: &[f64],
    target_far_percent: f64,
) -> Result<CalibratedThreshold> {
    if imposter_scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    if !(target_far_percent > 0.0 && target_far_percent <= 100.0) {
        return Err(Error::Parameter(format!(
            "target FAR {target_far_percent}% is outside (0, 100]"
        )));
    }
    let mut sorted = imposter_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as u128;
    // count / n <= target / 100  <=>  count * SCALE <= (target / 100 * SCALE) * n
    let allowed = (target_far_percent / 100.0 * TARGET_SCALE).round() as u128;
    let admissible = |count: usize| (count as u128) * (TARGET_SCALE as u128) <= allowed * n;

    // Walk the distinct values, tracking how many scores are <= each.
    let mut best = None;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == v {
            j += 1;
        }
        if !admissible(j) {
            break;
        }
        best = Some((v, j));
        i = j;
    }
    let (t, accepted) = match best {
        Some(found) => found,
        None => {
            let at_zero = sorted.iter().take_while(|&&s| s <= 0.0).count();
            if !admissible(at_zero) {
                return Err(Error::Parameter(format!(
                    "{at_zero} imposter scores are 0; no threshold reaches {target_far_percent}% FAR"
                )));
            }
            (0.0, at_zero)
        }
    };
    Ok(CalibratedThreshold {
        hd_threshold: t,
        target_far_percent,
        achieved_far: accepted as f64 / sorted.len() as f64,
        calibrated_at_feature_level: FeatureLevel::FULL.percent(),
    })
}

/// Fraction of genuine scores rejected (`hd > threshold`).
pub fn compute_frr(genuine_scores: &[f64], threshold: f64) -> Result<f64> {
    if genuine_scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let rejected = genuine_scores.iter().filter(|&&s| s > threshold).count();
    Ok(rejected as f64 / genuine_scores.len() as f64)
}

/// One imposter comparison by identity index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImposterScore {
    pub identity_a: u32,
    pub identity_b: u32,
    pub hd: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IdentityErrorRecord {
    pub identity_id: String,
    pub fa_count: u64,
}

/// Per-identity false-accept counts plus the accepting pairs themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FalseAccepts {
    pub records: Vec<IdentityErrorRecord>,
    pub total_fa: u64,
    /// Accepting pairs by identity index, in input order.
    pub pairs: Vec<(u32, u32)>,
}

/// Counts imposter pairs at or below `threshold`; each increments both of
/// its identities.
pub fn count_false_accepts(
    identities: &[String],
    scores: impl IntoIterator<Item = ImposterScore>,
    threshold: f64,
) -> FalseAccepts {
    let mut counts = vec![0u64; identities.len()];
    let mut pairs = Vec::new();
    for s in scores {
        if s.hd <= threshold {
            counts[s.identity_a as usize] += 1;
            counts[s.identity_b as usize] += 1;
            pairs.push((s.identity_a, s.identity_b));
        }
    }
    FalseAccepts {
        records: identities
            .iter()
            .zip(counts)
            .map(|(id, fa_count)| IdentityErrorRecord {
                identity_id: id.clone(),
                fa_count,
            })
            .collect(),
        total_fa: pairs.len() as u64,
        pairs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Capacity {
    pub cc: usize,
    /// `100 * cc / M`.
    pub pc: f64,
    pub nicf: usize,
}

pub fn constrained_capacity(records: &[IdentityErrorRecord]) -> Capacity {
    let m = records.len();
    let cc = records.iter().filter(|r| r.fa_count == 0).count();
    Capacity {
        cc,
        pc: if m == 0 {
            100.0
        } else {
            100.0 * cc as f64 / m as f64
        },
        nicf: m - cc,
    }
}

/// Identity indices in FAAO order: ascending false accepts, ties by id.
pub fn faao_order(records: &[IdentityErrorRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[a]
            .fa_count
            .cmp(&records[b].fa_count)
            .then_with(|| records[a].identity_id.cmp(&records[b].identity_id))
    });
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CurvePoint {
    /// Identities in the system.
    pub k: usize,
    /// False-accept pairs with both members among the first `k` identities.
    pub cumulative_fa: u64,
}

/// Cumulative false accepts as identities are added in FAAO order, one
/// point per `k = 1..=M`.
pub fn capacity_curve(fa: &FalseAccepts) -> Vec<CurvePoint> {
    let m = fa.records.len();
    let order = faao_order(&fa.records);
    let mut position = vec![0usize; m];
    for (pos, &id) in order.iter().enumerate() {
        position[id] = pos;
    }
    // A pair becomes complete once its later-ranked member joins.
    let mut completes_at = vec![0u64; m + 1];
    for &(a, b) in &fa.pairs {
        completes_at[position[a as usize].max(position[b as usize]) + 1] += 1;
    }
    let mut total = 0;
    (1..=m)
        .map(|k| {
            total += completes_at[k];
            CurvePoint {
                k,
                cumulative_fa: total,
            }
        })
        .collect()
}

/// Headline statistics of one configuration at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityResult {
    pub total_fa: u64,
    /// `total_fa / (M (M - 1) / 2)`.
    pub far: f64,
    pub cc: usize,
    pub pc: f64,
    pub nicf: usize,
    pub frr: f64,
    pub threshold: CalibratedThreshold,
    /// Imposter pairs with no mask overlap, excluded from the counts.
    pub unscorable_imposters: usize,
}

/// Applies `threshold` to a completed store.
pub fn evaluate(
    store: &ScoreStore,
    threshold: &CalibratedThreshold,
) -> Result<(CapacityResult, Vec<CurvePoint>)> {
    let scores = store.imposters().filter_map(|r| {
        r.score.map(|s| ImposterScore {
            identity_a: r.pair.identity_a,
            identity_b: r.pair.identity_b,
            hd: s.hd,
        })
    });
    let fa = count_false_accepts(&store.identities, scores, threshold.hd_threshold);
    let capacity = constrained_capacity(&fa.records);
    let curve = capacity_curve(&fa);
    let pairs = store.imposter_total;
    let frr = compute_frr(&store.genuine_hds(), threshold.hd_threshold)?;
    Ok((
        CapacityResult {
            total_fa: fa.total_fa,
            far: if pairs == 0 {
                0.0
            } else {
                fa.total_fa as f64 / pairs as f64
            },
            cc: capacity.cc,
            pc: capacity.pc,
            nicf: capacity.nicf,
            frr,
            threshold: *threshold,
            unscorable_imposters: store.unscorable(crate::dataset::PairKind::Imposter),
        },
        curve,
    ))
}
