//! Variational autoencoder over unit cells with a property regressor on the
//! posterior mean.
//!
//! Minimized per sample: pixelwise Bernoulli cross-entropy of the decoded
//! logits, the KL divergence of `N(μ, σ²)` from the standard normal, and the
//! weighted Euclidean error of the regressor on standardized labels. Noise
//! enters the decoder only; the regressor always sees `μ`.

mod io;
mod network;
pub mod nn;
mod train;

pub use io::{read_weights, write_loss_csv, write_weights};
pub use network::{Architecture, LayerSpec, LossTerms};
pub use train::{train, EpochRecord, Optimizer, TrainedModel, TrainingConfig, TrainingSample};

use crate::homogenization::{PropertyScaler, StiffnessComponents};
use crate::microstructure::{self, DensityField, Microstructure};
use network::{kl_divergence, Network, Plan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Pixel threshold applied to decoder output before repair.
pub const RECONSTRUCTION_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("input is {got_h}x{got_w}, model expects {want_h}x{want_w}")]
    ShapeMismatch { want_h: usize, want_w: usize, got_h: usize, got_w: usize },
    #[error("vector length {got}, expected {want}")]
    LengthMismatch { want: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("training set is empty")]
    EmptyDatabase,
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("weights file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A point in latent space.
pub type LatentVector = Vec<f64>;

/// Gaussian posterior `q(z|x) = N(mean, diag(std²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl PosteriorParams {
    pub fn log_variance(&self) -> Vec<f64> {
        self.std.iter().map(|s| 2.0 * s.ln()).collect()
    }
}

/// Trained network weights in one flat array plus the label standardization.
#[derive(Debug, Clone)]
pub struct ModelParameters {
    arch: Architecture,
    plan: Plan,
    pub values: Vec<f64>,
    pub labels: PropertyScaler,
}

impl ModelParameters {
    /// Fresh weights: uniform He scaling ahead of rectifiers, Glorot elsewhere, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self, LatentError> {
        arch.validate()?;
        let plan = arch.plan();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; plan.n_params];
        for (slot, rect) in plan.slots() {
            let limit = if rect {
                (6.0 / slot.fan_in as f64).sqrt()
            } else {
                (6.0 / (slot.fan_in + slot.fan_out) as f64).sqrt()
            };
            for v in &mut values[slot.w.clone()] {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(Self { arch, plan, values, labels: PropertyScaler::identity() })
    }

    /// Wraps existing values; the length must match the architecture.
    pub fn from_values(arch: Architecture, values: Vec<f64>, labels: PropertyScaler) -> Result<Self, LatentError> {
        arch.validate()?;
        let plan = arch.plan();
        if values.len() != plan.n_params {
            return Err(LatentError::LengthMismatch { want: plan.n_params, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LatentError::NonFinite("parameters"));
        }
        Ok(Self { arch, plan, values, labels })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Named arrays in storage order.
    pub fn layout(&self) -> &[LayerSpec] {
        &self.plan.layout
    }

    /// Index range of the encoder (`enc`), decoder (`dec`) or regressor (`reg`) parameters.
    pub fn group(&self, prefix: &str) -> std::ops::Range<usize> {
        let hits: Vec<&LayerSpec> = self.plan.layout.iter().filter(|l| l.name.starts_with(prefix)).collect();
        match (hits.first(), hits.last()) {
            (Some(a), Some(b)) => a.offset..b.offset + b.len(),
            _ => 0..0,
        }
    }

    pub(crate) fn network(&self) -> Network<'_> {
        Network { plan: &self.plan, params: &self.values, j: self.arch.latent_dim }
    }

    fn check_shape(&self, h: usize, w: usize) -> Result<(), LatentError> {
        if (h, w) != (self.arch.height, self.arch.width) {
            return Err(LatentError::ShapeMismatch { want_h: self.arch.height, want_w: self.arch.width, got_h: h, got_w: w });
        }
        Ok(())
    }

    fn check_latent(&self, z: &[f64]) -> Result<(), LatentError> {
        if z.len() != self.arch.latent_dim {
            return Err(LatentError::LengthMismatch { want: self.arch.latent_dim, got: z.len() });
        }
        Ok(())
    }
}

pub(crate) fn pixels(m: &Microstructure) -> impl Iterator<Item = f64> + '_ {
    m.cells().iter().map(|&c| c as f64)
}

/// Posterior parameters for a batch of cells, in input order.
pub fn encode_batch(cells: &[&Microstructure], p: &ModelParameters) -> Result<Vec<PosteriorParams>, LatentError> {
    let mut x = Vec::with_capacity(cells.len() * p.arch.height * p.arch.width);
    for m in cells {
        p.check_shape(m.height(), m.width())?;
        x.extend(pixels(m));
    }
    let j = p.latent_dim();
    let (mu, logvar) = p.network().encode(&x, cells.len());
    Ok((0..cells.len())
        .map(|b| PosteriorParams {
            mean: mu[b * j..(b + 1) * j].to_vec(),
            std: logvar[b * j..(b + 1) * j].iter().map(|lv| (0.5 * lv).exp()).collect(),
        })
        .collect())
}

pub fn encode(m: &Microstructure, p: &ModelParameters) -> Result<PosteriorParams, LatentError> {
    Ok(encode_batch(&[m], p)?.remove(0))
}

/// `z = μ + σ ⊙ ε`.
pub fn reparameterize(pp: &PosteriorParams, eps: &[f64]) -> Result<LatentVector, LatentError> {
    if pp.mean.len() != eps.len() || pp.std.len() != eps.len() {
        return Err(LatentError::LengthMismatch { want: pp.mean.len(), got: eps.len() });
    }
    Ok(pp.mean.iter().zip(&pp.std).zip(eps).map(|((m, s), e)| m + s * e).collect())
}

/// Decoder probabilities for a latent vector.
pub fn decode(z: &[f64], p: &ModelParameters) -> Result<DensityField, LatentError> {
    p.check_latent(z)?;
    let logits = p.network().decode_logits(z, 1);
    let values = logits.into_iter().map(nn::sigmoid).collect();
    DensityField::new(p.arch.height, p.arch.width, values).map_err(|e| LatentError::Format(e.to_string()))
}

/// Regressor output on the posterior mean, in physical units.
pub fn predict_properties(mu: &[f64], p: &ModelParameters) -> Result<StiffnessComponents, LatentError> {
    p.check_latent(mu)?;
    let y = p.network().regress(mu, 1);
    Ok(p.labels.destandardize(&[y[0], y[1], y[2], y[3]]))
}

/// Batch-mean training loss and its gradient with respect to
/// [`ModelParameters::values`]. `x` holds `batch` pixel vectors in [0, 1],
/// `labels` four standardized properties per sample and `eps` `J` noise
/// values per sample.
pub fn loss_and_gradient(
    p: &ModelParameters,
    x: &[f64],
    labels: &[f64],
    eps: &[f64],
    batch: usize,
    regression_weight: f64,
) -> Result<(LossTerms, Vec<f64>), LatentError> {
    let a = &p.arch;
    if batch == 0 {
        return Err(LatentError::EmptyDatabase);
    }
    for (want, got) in [(batch * a.height * a.width, x.len()), (4 * batch, labels.len()), (batch * a.latent_dim, eps.len())] {
        if want != got {
            return Err(LatentError::LengthMismatch { want, got });
        }
    }
    Ok(p.network().loss_and_grad(x, labels, eps, batch, regression_weight, true))
}

/// Loss terms for one sample. `recon` holds decoder probabilities; labels are
/// compared after standardization with the model's label statistics.
pub fn loss(
    m: &Microstructure,
    recon: &DensityField,
    pp: &PosteriorParams,
    pred: &StiffnessComponents,
    label: &StiffnessComponents,
    labels: &PropertyScaler,
    reg_weight: f64,
) -> Result<LossTerms, LatentError> {
    if (m.height(), m.width()) != (recon.height(), recon.width()) {
        return Err(LatentError::ShapeMismatch {
            want_h: m.height(),
            want_w: m.width(),
            got_h: recon.height(),
            got_w: recon.width(),
        });
    }
    if pp.mean.len() != pp.std.len() {
        return Err(LatentError::LengthMismatch { want: pp.mean.len(), got: pp.std.len() });
    }
    let finite = recon.values().iter().chain(&pp.mean).chain(&pp.std).all(|v| v.is_finite())
        && pred.is_finite()
        && label.is_finite()
        && pp.std.iter().all(|&s| s > 0.0);
    if !finite {
        return Err(LatentError::NonFinite("loss inputs"));
    }
    let eps = 1e-12;
    let recon_term: f64 = pixels(m)
        .zip(recon.values())
        .map(|(t, &q)| {
            let q = q.clamp(eps, 1.0 - eps);
            -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
        })
        .sum();
    let kl = kl_divergence(&pp.mean, &pp.log_variance());
    let a = labels.standardize(pred);
    let b = labels.standardize(label);
    let reg = reg_weight * a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    Ok(LossTerms { total: recon_term + kl + reg, recon: recon_term, kl, reg })
}

/// Encode to the mean, decode, threshold at 0.9, mirror the top-left quadrant
/// and repair defects. Odd-sized grids skip the mirroring step.
pub fn reconstruct(m: &Microstructure, p: &ModelParameters) -> Result<Microstructure, LatentError> {
    let pp = encode(m, p)?;
    decode_to_structure(&pp.mean, p)
}

/// Decode a latent vector into a valid binary cell.
pub fn decode_to_structure(z: &[f64], p: &ModelParameters) -> Result<Microstructure, LatentError> {
    let d = decode(z, p)?;
    let raw = microstructure::threshold(&d, RECONSTRUCTION_THRESHOLD).map_err(|e| LatentError::Format(e.to_string()))?;
    let sym = microstructure::enforce_orthotropic_symmetry(&raw).unwrap_or(raw);
    Ok(microstructure::repair_defects(&sym))
}

/// Fraction of pixels on which two equally sized cells agree.
pub fn pixel_agreement(a: &Microstructure, b: &Microstructure) -> f64 {
    let same = a.cells().iter().zip(b.cells()).filter(|(x, y)| x == y).count();
    same as f64 / a.cells().len().max(1) as f64
}

/// Held-out quality of a trained model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    pub samples: usize,
    /// Median over samples of the pixel agreement between input and reconstruction.
    pub median_pixel_agreement: f64,
    /// Median over samples of `‖pred − label‖ / ‖label‖`.
    pub median_relative_error: f64,
    /// Mean KL term of the posteriors.
    pub mean_kl: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Reconstruction and regression quality on labelled cells.
pub fn validation_report(samples: &[TrainingSample], p: &ModelParameters) -> Result<ValidationReport, LatentError> {
    let mut agreement = Vec::with_capacity(samples.len());
    let mut rel = Vec::with_capacity(samples.len());
    let mut kl = 0.0;
    for chunk in samples.chunks(64) {
        let cells: Vec<&Microstructure> = chunk.iter().map(|s| s.structure).collect();
        let posts = encode_batch(&cells, p)?;
        for (s, pp) in chunk.iter().zip(&posts) {
            kl += kl_divergence(&pp.mean, &pp.log_variance());
            let r = decode_to_structure(&pp.mean, p)?;
            agreement.push(pixel_agreement(s.structure, &r));
            let pred = predict_properties(&pp.mean, p)?.to_array();
            let label = s.label.to_array();
            let num: f64 = pred.iter().zip(&label).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let den: f64 = label.iter().map(|b| b * b).sum::<f64>().sqrt();
            rel.push(if den > 0.0 { num / den } else { num });
        }
    }
    Ok(ValidationReport {
        samples: samples.len(),
        median_pixel_agreement: median(agreement),
        median_relative_error: median(rel),
        mean_kl: kl / samples.len().max(1) as f64,
    })
}
