//! Slow, obviously-correct reference implementations used as oracles.
#![allow(dead_code)]

use std::cmp::Ordering;

use iriscap_core::template::BitGrid;
use iriscap_core::{FeatureLevel, PackedTemplate, TemplateGeometry};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random code; one mask per cell shared by the re/im planes of each
/// resolution, each cell usable with probability `density`.
pub fn random_template(
    geometry: TemplateGeometry,
    rng: &mut impl Rng,
    density: f64,
) -> PackedTemplate {
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

/// `(differing, compared)` between `a` and `b` rotated by `shift` columns,
/// counting only columns kept by `keep` (indexed by each template's own
/// unrotated column).
pub fn naive_counts(
    a: &PackedTemplate,
    b: &PackedTemplate,
    shift: i64,
    keep: Option<&[bool]>,
) -> (u64, u64) {
    let g = a.geometry();
    let cols = g.cols() as i64;
    let (mut diff, mut cmp) = (0, 0);
    for p in 0..g.bit_planes() {
        for r in 0..g.rows() {
            for c in 0..g.cols() {
                let cb = (c as i64 - shift).rem_euclid(cols) as usize;
                if let Some(k) = keep {
                    if !k[c] || !k[cb] {
                        continue;
                    }
                }
                if a.mask_bit(p, r, c) && b.mask_bit(p, r, cb) {
                    cmp += 1;
                    if a.code_bit(p, r, c) != b.code_bit(p, r, cb) {
                        diff += 1;
                    }
                }
            }
        }
    }
    (diff, cmp)
}

/// Offsets in search order: 0, -1, +1, -2, +2, ...
pub fn search_order(max_shift: i64) -> Vec<i64> {
    let mut v = vec![0];
    for k in 1..=max_shift {
        v.push(-k);
        v.push(k);
    }
    v
}

/// Minimum fractional HD over the window; the first offset in search order
/// wins ties. `None` if no alignment has any overlap.
pub fn naive_match(
    a: &PackedTemplate,
    b: &PackedTemplate,
    max_shift: i64,
    keep: Option<&[bool]>,
) -> Option<(u64, u64, i64)> {
    let mut best: Option<(u64, u64, i64)> = None;
    for s in search_order(max_shift) {
        let (d, c) = naive_counts(a, b, s, keep);
        if c == 0 {
            continue;
        }
        let better = match best {
            None => true,
            Some((bd, bc, _)) => {
                (d as u128 * bc as u128).cmp(&(bd as u128 * c as u128)) == Ordering::Less
            }
        };
        if better {
            best = Some((d, c, s));
        }
    }
    best
}

/// Retained-column indicator for a pair seed, drawn independently of the
/// library's column sampler.
pub fn naive_keep(cols: usize, level: FeatureLevel, seed: u64) -> Vec<bool> {
    let n = (cols as f64 * level.percent() as f64 / 100.0 + 0.5).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; cols];
    for i in index::sample(&mut rng, cols, n).iter() {
        keep[i] = true;
    }
    keep
}

/// A capacity test instance: identity names and all pairwise scores.
pub struct CapacityInstance {
    pub ids: Vec<String>,
    /// `(i, j, hd)` for every `i < j`.
    pub scores: Vec<(u32, u32, f64)>,
    pub threshold: f64,
}

pub fn random_capacity_instance(rng: &mut impl Rng) -> CapacityInstance {
    let m = rng.gen_range(1..=50usize);
    let mut ids: Vec<String> = Vec::new();
    while ids.len() < m {
        let name = format!("s{:03}", rng.gen_range(0..1000));
        if !ids.contains(&name) {
            ids.push(name);
        }
    }
    // Coarse grid so ties with the threshold occur.
    let mut scores = Vec::new();
    for i in 0..m as u32 {
        for j in i + 1..m as u32 {
            scores.push((i, j, rng.gen_range(0..=40) as f64 / 100.0 + 0.1));
        }
    }
    let threshold = rng.gen_range(0..=12) as f64 / 100.0 + 0.1;
    CapacityInstance {
        ids,
        scores,
        threshold,
    }
}

fn accepted(inst: &CapacityInstance, i: usize, j: usize) -> bool {
    let (a, b) = (i.min(j) as u32, i.max(j) as u32);
    inst.scores
        .iter()
        .any(|&(x, y, hd)| x == a && y == b && hd <= inst.threshold)
}

/// Identities ordered by ascending false-accept count against the whole
/// gallery, ties by name.
pub fn brute_faao(inst: &CapacityInstance) -> Vec<usize> {
    let m = inst.ids.len();
    let count = |i: usize| (0..m).filter(|&j| j != i && accepted(inst, i, j)).count();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| count(a).cmp(&count(b)).then(inst.ids[a].cmp(&inst.ids[b])));
    order
}

/// Adds identities in FAAO order and stops at the first one that falsely
/// accepts against anyone in the gallery. Returns how many were added
/// cleanly.
pub fn brute_cc(inst: &CapacityInstance) -> usize {
    let m = inst.ids.len();
    let mut added = 0;
    for &i in &brute_faao(inst) {
        if (0..m).any(|j| j != i && accepted(inst, i, j)) {
            break;
        }
        added += 1;
    }
    added
}

/// False-accept pairs among the first `k` identities in FAAO order, for
/// every `k = 1..=M`, by recounting from scratch.
pub fn brute_curve(inst: &CapacityInstance) -> Vec<u64> {
    let order = brute_faao(inst);
    (1..=order.len())
        .map(|k| {
            let members = &order[..k];
            let mut n = 0;
            for x in 0..k {
                for y in x + 1..k {
                    if accepted(inst, members[x], members[y]) {
                        n += 1;
                    }
                }
            }
            n
        })
        .collect()
}

/// Adds identities in FAAO order and stops when the newcomer falsely
/// accepts against someone already enrolled. Returns how many were enrolled
/// before that addition.
pub fn brute_pair_complete_stop(inst: &CapacityInstance) -> usize {
    let order = brute_faao(inst);
    for k in 0..order.len() {
        if order[..k].iter().any(|&j| accepted(inst, order[k], j)) {
            return k;
        }
    }
    order.len()
}
