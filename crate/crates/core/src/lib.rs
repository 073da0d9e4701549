//! Data-driven design of mechanical metamaterials and multiscale systems.
//!
//! The crate covers the whole pipeline: growing a database of binary unit
//! cells labelled by homogenized stiffness, training a variational autoencoder
//! with a property regressor, latent-space design operations, graded family
//! synthesis by graph search, and two-stage system design (adjoint property
//! optimization followed by compatible assembly through an MRF).

pub mod assembly;
pub mod family;
pub mod fem;
pub mod homogenization;
pub mod latentmodel;
pub mod latentops;
pub mod macroopt;
pub mod microstructure;
pub mod pipeline;
pub mod sparse;

pub use homogenization::{
    BoundaryStressTraces, HomogenizationError, Homogenizer, MaterialSpec, PropertyScaler, StiffnessComponents,
    StrainCase,
};
pub use microstructure::{DensityField, Microstructure, Side};
