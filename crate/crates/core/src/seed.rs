//! Stable seed derivation.
//!
//! Every random choice in the toolkit is keyed by a seed derived here, so
//! results do not depend on iteration order, thread scheduling, or the
//! platform's `Hasher` implementation.

use sha2::{Digest, Sha256};

/// Hashes a sequence of integers and labels into a 64-bit seed.
pub fn derive(parts: &[SeedPart<'_>]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        match part {
            SeedPart::Int(v) => {
                hasher.update([0u8]);
                hasher.update(v.to_le_bytes());
            }
            SeedPart::Str(s) => {
                hasher.update([1u8]);
                hasher.update((s.len() as u64).to_le_bytes());
                hasher.update(s.as_bytes());
            }
        }
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

#[derive(Debug, Clone, Copy)]
pub enum SeedPart<'a> {
    Int(u64),
    Str(&'a str),
}

/// Seed for the per-pair column elimination. The two sample ids are put in
/// canonical order first so `(a, b)` and `(b, a)` get the same column set.
pub fn pair_seed(experiment_seed: u64, sample_a: &str, sample_b: &str) -> u64 {
    let (lo, hi) = if sample_a <= sample_b {
        (sample_a, sample_b)
    } else {
        (sample_b, sample_a)
    };
    derive(&[
        SeedPart::Str("pair"),
        SeedPart::Int(experiment_seed),
        SeedPart::Str(lo),
        SeedPart::Str(hi),
    ])
}
