//! Graded metamaterial families: gradation curves, near-curve selection,
//! latent-space graph search and densification.

mod curve;
mod families;
pub mod graph;

pub use curve::{GradationCurve, CURVE_SAMPLES};
pub use families::{
    densify_family, extract_families, families_csv, family_filmstrip_svg, select_near_curve, select_with_scaler,
    DensifiedFamily, DensifiedMember, DensifyParams, FamilyMember, FamilyParams, MetamaterialFamily, NearCurve, Origin,
};
pub use graph::{build_family_graph, extract_paths, shortest_path, FamilyGraph};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FamilyError {
    #[error("invalid gradation curve: {0}")]
    InvalidCurve(String),
    #[error("controlled value {c} outside [0, {c_max}]")]
    OutOfRange { c: f64, c_max: f64 },
    #[error("no database record lies within delta of the curve")]
    EmptySelection,
    #[error("need at least two near-curve records, found {0}")]
    TooFewRecords(usize),
    #[error("record {0} has no latent vector")]
    MissingLatent(u64),
    #[error("model: {0}")]
    Model(String),
}
