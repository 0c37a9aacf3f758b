//! Template-level iris recognition capacity toolkit.
//!
//! The pipeline runs from normalized iris textures (or pre-made templates)
//! through 2-bit phase IrisCodes, masked rotation-searched Hamming matching
//! over every enrolled pair, operating-point calibration, and finally the
//! constrained capacity of the configured system: how many identities it
//! resolves before the first identity clash.
//!
//! Modules, bottom-up:
//!
//! * [`template`]: packed code/mask bit planes, boundary stripping,
//!   resolution stacking, radial column elimination, the `IRC1` file format.
//! * [`encoder`]: Gabor filter bank and quadrant phase quantization.
//! * [`matcher`]: fractional Hamming distance with shift search.
//! * [`dataset`]: manifests, quality policies, enrollment plans, pair
//!   enumeration.
//! * [`engine`]: parallel, chunked, resumable all-pairs scoring.
//! * [`capacity`]: thresholds, FRR, false-accept accounting, capacity.
//! * [`synth`]: synthetic correlated-bit populations and entropy estimation.

pub mod capacity;
pub mod dataset;
pub mod encoder;
pub mod engine;
mod error;
pub mod matcher;
pub mod seed;
pub mod synth;
pub mod template;

pub use capacity::{CalibratedThreshold, CapacityResult, IdentityErrorRecord};
pub use dataset::{EnrollmentPlan, QualityMode, QualityPolicy, SampleRecord};
pub use engine::{OperatingPoint, ScoreStore, StoreKey, SystemConfig};
pub use error::{Error, Result};
pub use matcher::{MatchScore, ShiftSpec};
pub use template::{
    ColumnSet, DimensionTag, FeatureLevel, PackedTemplate, ResolutionMode, TemplateGeometry,
};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
