//! Run configuration: one TOML document with a section per stage.
//!
//! ```toml
//! rng_seed = 1
//! [seeds]
//! iterations = 200
//! [training]
//! epochs = 30
//! ```
//!
//! Every section and field other than `rng_seed` has a default; unknown keys are rejected.

use super::PipelineError;
use crate::latentmodel::{Architecture, Optimizer, TrainingConfig};
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub rng_seed: u64,
    #[serde(default = "one")]
    pub threads: usize,
    #[serde(default)]
    pub seeds: SeedsSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub analyze: AnalyzeSection,
    #[serde(default)]
    pub family: FamilySection,
    #[serde(default)]
    pub design: DesignSection,
    #[serde(default)]
    pub assembly: AssemblySection,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsSection {
    pub height: usize,
    pub width: usize,
    pub iterations: usize,
    pub batch: usize,
    pub latent_dim: usize,
    pub sparsity_radius: f64,
    pub sdf_resolution: usize,
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
}

impl Default for SeedsSection {
    fn default() -> Self {
        Self {
            height: 50,
            width: 50,
            iterations: 200,
            batch: 10,
            latent_dim: 16,
            sparsity_radius: 0.1,
            sdf_resolution: 12,
            youngs_modulus: 1.0,
            poisson_ratio: 0.49,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub mc_samples: usize,
    pub validation_fraction: f64,
    pub regression_weight: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            optimizer: t.optimizer,
            mc_samples: t.mc_samples,
            validation_fraction: t.validation_fraction,
            regression_weight: t.regression_weight,
        }
    }
}

impl TrainingSection {
    pub fn to_config(&self, seed: u64, height: usize, width: usize, latent_dim: usize) -> TrainingConfig {
        let mut arch = Architecture::desk(height, width);
        arch.latent_dim = latent_dim;
        TrainingConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            mc_samples: self.mc_samples,
            rng_seed: seed,
            validation_fraction: self.validation_fraction,
            regression_weight: self.regression_weight,
            architecture: Some(arch),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeSection {
    /// Fraction of records on each side of the C11 and Poisson arrows.
    pub arrow_quantile: f64,
    /// The anisotropy arrow contrasts C22/C11 above this value with C22/C11 below its inverse.
    pub anisotropy_ratio: f64,
    pub starts: usize,
    pub steps: usize,
    pub step_size: f64,
    /// Optional candidate-set target `[C11, C12, C22, C33]`.
    pub target: Option<[f64; 4]>,
    pub n_clusters: usize,
    pub admission_mse: f64,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        Self { arrow_quantile: 0.3, anisotropy_ratio: 2.0, starts: 10, steps: 8, step_size: 0.5, target: None, n_clusters: 10, admission_mse: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilySection {
    pub delta: f64,
    pub k: usize,
    pub n_terminal: usize,
    pub count: usize,
    pub samples_per_edge: usize,
    pub extrapolate: bool,
}

impl Default for FamilySection {
    fn default() -> Self {
        Self { delta: 0.05, k: 5, n_terminal: 50, count: 5, samples_per_edge: 3, extrapolate: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignCase {
    Arch,
    TipShear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignModeName {
    Database,
    Family,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignSection {
    pub case: DesignCase,
    /// Problem file used instead of the built-in case.
    pub problem: Option<String>,
    pub nx: usize,
    pub ny: usize,
    /// Prescribed end displacement of the built-in cases.
    pub displacement: f64,
    /// Target amplitude of the arch case.
    pub rise: f64,
    pub mode: DesignModeName,
    /// Family used for the controlled-value range in family mode.
    pub family_index: usize,
    pub beta: f64,
    /// β reached by geometric continuation over the first half of the run.
    pub beta_final: Option<f64>,
    pub max_iters: usize,
    pub move_tol: f64,
    /// Grid nodes per axis of the database distance field.
    pub sdf_resolution: usize,
}

impl Default for DesignSection {
    fn default() -> Self {
        Self {
            case: DesignCase::Arch,
            problem: None,
            nx: 10,
            ny: 4,
            displacement: 0.05,
            rise: 0.03,
            mode: DesignModeName::Database,
            family_index: 0,
            beta: 10.0,
            beta_final: None,
            max_iters: 500,
            move_tol: 1e-3,
            sdf_resolution: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssemblySection {
    pub n_clusters: usize,
    pub admission_mse: f64,
    pub pool_cap: usize,
    pub admission_relaxations: usize,
    pub max_iters: usize,
    pub geometric_weight: f64,
    pub mechanical_weight: f64,
}

impl Default for AssemblySection {
    fn default() -> Self {
        Self {
            n_clusters: 10,
            admission_mse: 0.01,
            pool_cap: 200,
            admission_relaxations: 0,
            max_iters: 5000,
            geometric_weight: 1.0,
            mechanical_weight: 1.0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        if self.seeds.height < 2 || self.seeds.width < 2 || self.seeds.batch == 0 || self.seeds.latent_dim == 0 {
            return bad("seeds: grid, batch and latent size must be positive");
        }
        if self.family.delta <= 0.0 || self.family.k == 0 || self.family.count == 0 {
            return bad("family: delta, k and count must be positive");
        }
        if self.design.nx == 0 || self.design.ny == 0 || self.design.beta <= 0.0 || self.design.max_iters == 0 {
            return bad("design: mesh, beta and iteration limit must be positive");
        }
        if self.design.sdf_resolution < 3 || self.seeds.sdf_resolution < 3 {
            return bad("sdf_resolution must be at least 3");
        }
        if self.assembly.admission_mse <= 0.0 || self.analyze.admission_mse <= 0.0 || self.assembly.n_clusters == 0 {
            return bad("candidate admission and cluster count must be positive");
        }
        if self.analyze.arrow_quantile <= 0.0 || self.analyze.arrow_quantile >= 0.5 {
            return bad("analyze: arrow_quantile must lie in (0, 0.5)");
        }
        if self.analyze.anisotropy_ratio <= 1.0 {
            return bad("analyze: anisotropy_ratio must exceed 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::from_toml("rng_seed = 4").unwrap();
        assert_eq!(c.rng_seed, 4);
        assert_eq!(c.seeds, SeedsSection::default());
        assert_eq!(c.family.k, 5);
        assert_eq!(c.assembly.max_iters, 5000);
    }

    #[test]
    fn missing_seed_is_rejected() {
        let e = RunConfig::from_toml("[seeds]\niterations = 3").unwrap_err();
        assert!(e.to_string().contains("rng_seed"), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("rng_seed = 1\nbogus = 2").is_err());
        assert!(RunConfig::from_toml("rng_seed = 1\n[training]\nepochz = 2").is_err());
        assert!(RunConfig::from_toml("rng_seed = 1\n[nonsense]").is_err());
    }

    #[test]
    fn sections_parse() {
        let c = RunConfig::from_toml(
            "rng_seed = 9\nthreads = 2\n[training]\noptimizer = \"adam\"\nepochs = 3\n[design]\ncase = \"tip_shear\"\nmode = \"family\"\n",
        )
        .unwrap();
        assert_eq!(c.training.optimizer, Optimizer::Adam);
        assert_eq!(c.design.case, DesignCase::TipShear);
        assert_eq!(c.design.mode, DesignModeName::Family);
        assert!(RunConfig::from_toml("rng_seed = 1\n[family]\ndelta = 0").is_err());
    }
}
