//! Fixtures shared by the benchmarks.

use std::collections::HashMap;

use iriscap_core::dataset::build_plan;
use iriscap_core::synth::{
    generate_base, generate_population, PopulationParams, CALIBRATED_ROW_PERSISTENCE as P,
};
use iriscap_core::{
    DimensionTag, EnrollmentPlan, PackedTemplate, ResolutionMode, TemplateGeometry,
};

/// Two unrelated base templates of the given shape.
pub fn template_pair(
    dimension: DimensionTag,
    resolution: ResolutionMode,
) -> (PackedTemplate, PackedTemplate) {
    let g = TemplateGeometry::stripped(dimension, resolution);
    (generate_base(&g, P, P, 1), generate_base(&g, P, P, 2))
}

/// A D2 single-resolution synthetic population ready for the engine.
pub fn population(identities: usize) -> (EnrollmentPlan, HashMap<String, PackedTemplate>) {
    let pop = generate_population(&PopulationParams {
        n_identities: identities,
        seed: 17,
        ..Default::default()
    })
    .expect("valid params");
    (build_plan(&pop.records()), pop.templates())
}
