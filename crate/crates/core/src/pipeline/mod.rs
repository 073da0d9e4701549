//! Database lifecycle, run configuration and command-line orchestration.

mod annotate;
mod config;
mod database;
mod growth;
mod par;
pub mod cli;
pub mod run;

pub use annotate::annotate_latents;
pub use config::{
    AnalyzeSection, AssemblySection, DesignCase, DesignModeName, DesignSection, FamilySection, RunConfig, SeedsSection,
    TrainingSection,
};
pub use database::{database_from_str, database_to_string, load_database, save_database, Database, Record, FORMAT_VERSION};
pub use growth::{grow_database, growth_scores, neighbour_counts, GrowthConfig, GrowthStep};
pub use par::par_map;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unsupported database version `{0}`")]
    Version(String),
    #[error("checksum mismatch")]
    Checksum,
    #[error("{0}")]
    Invalid(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Homogenization(#[from] crate::homogenization::HomogenizationError),
    #[error(transparent)]
    Latent(#[from] crate::latentmodel::LatentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
