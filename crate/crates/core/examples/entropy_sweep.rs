//! Sweeps equal row/column persistence and prints the effective entropy per
//! bit of the resulting base templates on both dimensions.
//!
//! cargo run --release -p iriscap-core --example entropy_sweep [identities]

use iriscap_core::synth::{generate_base, measure_entropy, TARGET_ENTROPY_PER_BIT};
use iriscap_core::{DimensionTag, ResolutionMode, TemplateGeometry};
use rayon::prelude::*;

fn main() {
    let n: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(400);
    println!("target {TARGET_ENTROPY_PER_BIT}, {n} identities per point");
    println!("dimension,persistence,mean_hd,dof,independence_ratio,entropy_per_bit");
    for dim in DimensionTag::ALL {
        let g = TemplateGeometry::stripped(dim, ResolutionMode::Single);
        for step in 0..=20 {
            let p = 0.30 + 0.005 * step as f64;
            let bases: Vec<_> = (0..n)
                .into_par_iter()
                .map(|i| generate_base(&g, p, p, i))
                .collect();
            let e = measure_entropy(&bases).expect("enough bits");
            println!(
                "{dim},{p:.3},{:.4},{:.0},{:.4},{:.4}",
                e.mean_hd, e.degrees_of_freedom, e.independence_ratio, e.entropy_per_bit
            );
        }
    }
}
