//! Mini-batch training with seeded shuffling and noise.

use super::network::{Architecture, LossTerms};
use super::{pixels, LatentError, ModelParameters};
use crate::homogenization::{PropertyScaler, StiffnessComponents};
use crate::microstructure::Microstructure;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Rmsprop,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Noise draws per sample and step.
    pub mc_samples: usize,
    pub rng_seed: u64,
    /// Share of samples held out, taken from a seeded shuffle.
    pub validation_fraction: f64,
    pub regression_weight: f64,
    /// `None` selects [`Architecture::desk`] for the sample grid.
    pub architecture: Option<Architecture>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 100,
            learning_rate: 1e-3,
            optimizer: Optimizer::Rmsprop,
            mc_samples: 1,
            rng_seed: 0,
            validation_fraction: 0.1,
            regression_weight: 1.0,
            architecture: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), LatentError> {
        let bad = |m: &str| Err(LatentError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if !(self.regression_weight >= 0.0 && self.regression_weight.is_finite()) {
            return bad("regression_weight must be non-negative");
        }
        Ok(())
    }
}

/// A labelled cell.
#[derive(Debug, Clone, Copy)]
pub struct TrainingSample<'a> {
    pub structure: &'a Microstructure,
    pub label: StiffnessComponents,
}

/// Mean training loss over one epoch, plus the held-out loss at `ε = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossTerms,
    pub validation: Option<LossTerms>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ModelParameters,
    pub history: Vec<EpochRecord>,
    /// Indices into the sample slice used for training and validation.
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        Self { kind, lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], g: &[f64]) {
        self.t += 1;
        match self.kind {
            Optimizer::Rmsprop => {
                let (rho, eps) = (0.9, 1e-7);
                for i in 0..params.len() {
                    self.v[i] = rho * self.v[i] + (1.0 - rho) * g[i] * g[i];
                    params[i] -= self.lr * g[i] / (self.v[i].sqrt() + eps);
                }
            }
            Optimizer::Adam => {
                let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
                let c1 = 1.0 - b1.powi(self.t);
                let c2 = 1.0 - b2.powi(self.t);
                for i in 0..params.len() {
                    self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
                    self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
                    params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

fn gather(samples: &[TrainingSample], idx: &[usize], labels: &PropertyScaler, repeat: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for &i in idx {
        let s = &samples[i];
        let ys = labels.standardize(&s.label);
        for _ in 0..repeat {
            x.extend(pixels(s.structure));
            y.extend_from_slice(&ys);
        }
    }
    (x, y)
}

/// Held-out loss at zero noise, evaluated in chunks.
pub(crate) fn evaluate(p: &ModelParameters, samples: &[TrainingSample], idx: &[usize], reg_weight: f64) -> LossTerms {
    let mut acc = LossTerms::default();
    let j = p.latent_dim();
    for chunk in idx.chunks(64) {
        let (x, y) = gather(samples, chunk, &p.labels, 1);
        let eps = vec![0.0; chunk.len() * j];
        let (t, _) = p.network().loss_and_grad(&x, &y, &eps, chunk.len(), reg_weight, false);
        let w = chunk.len() as f64;
        acc.recon += t.recon * w;
        acc.kl += t.kl * w;
        acc.reg += t.reg * w;
        acc.total += t.total * w;
    }
    let n = idx.len().max(1) as f64;
    LossTerms { total: acc.total / n, recon: acc.recon / n, kl: acc.kl / n, reg: acc.reg / n }
}

/// Trains encoder, decoder and regressor jointly. Labels are standardized with
/// statistics of the training split; the same seed reproduces the run exactly.
pub fn train(samples: &[TrainingSample], cfg: &TrainingConfig) -> Result<TrainedModel, LatentError> {
    cfg.validate()?;
    let first = samples.first().ok_or(LatentError::EmptyDatabase)?;
    let (h, w) = (first.structure.height(), first.structure.width());
    let arch = cfg.architecture.clone().unwrap_or_else(|| Architecture::desk(h, w));
    if samples.iter().any(|s| !s.label.is_finite()) {
        return Err(LatentError::NonFinite("labels"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut params = ModelParameters::init(arch, rng.random())?;
    for s in samples {
        params.check_shape(s.structure.height(), s.structure.width())?;
    }

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((samples.len() as f64) * cfg.validation_fraction).floor() as usize;
    let n_val = n_val.min(samples.len() - 1);
    let validation_indices: Vec<usize> = order[samples.len() - n_val..].to_vec();
    let mut train_indices: Vec<usize> = order[..samples.len() - n_val].to_vec();

    let train_labels: Vec<StiffnessComponents> = train_indices.iter().map(|&i| samples[i].label).collect();
    params.labels = PropertyScaler::fit(&train_labels);

    let j = params.latent_dim();
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, params.len());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        train_indices.shuffle(&mut rng);
        let mut acc = LossTerms::default();
        for (b, chunk) in train_indices.chunks(cfg.batch_size).enumerate() {
            let (x, y) = gather(samples, chunk, &params.labels, cfg.mc_samples);
            let rows = chunk.len() * cfg.mc_samples;
            let eps: Vec<f64> = (0..rows * j).map(|_| rng.sample(StandardNormal)).collect();
            let (t, g) = params.network().loss_and_grad(&x, &y, &eps, rows, cfg.regression_weight, true);
            if !t.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(LatentError::Diverged { epoch, batch: b, loss: t.total });
            }
            opt.step(&mut params.values, &g);
            let wgt = chunk.len() as f64;
            acc.recon += t.recon * wgt;
            acc.kl += t.kl * wgt;
            acc.reg += t.reg * wgt;
            acc.total += t.total * wgt;
        }
        let n = train_indices.len() as f64;
        let train = LossTerms { total: acc.total / n, recon: acc.recon / n, kl: acc.kl / n, reg: acc.reg / n };
        let validation = (!validation_indices.is_empty())
            .then(|| evaluate(&params, samples, &validation_indices, cfg.regression_weight));
        log::info!(
            "epoch {epoch}: loss {:.4} (recon {:.4}, kl {:.4}, reg {:.4})",
            train.total,
            train.recon,
            train.kl,
            train.reg
        );
        history.push(EpochRecord { epoch, train, validation });
    }
    train_indices.sort_unstable();
    let mut validation_indices = validation_indices;
    validation_indices.sort_unstable();
    Ok(TrainedModel { params, history, train_indices, validation_indices })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_set() -> Vec<(Microstructure, StiffnessComponents)> {
        (0..24)
            .map(|k| {
                let t = 1 + k % 4;
                let m = Microstructure::from_fn(8, 8, |r, c| r.abs_diff(4) < t || c.abs_diff(4) < (k / 4) % 3 + 1);
                let vf = m.volume_fraction();
                (m, StiffnessComponents::new(vf, 0.3 * vf, vf * vf, 0.1 * vf))
            })
            .collect()
    }

    fn tiny_cfg(seed: u64) -> TrainingConfig {
        TrainingConfig {
            batch_size: 4,
            epochs: 30,
            learning_rate: 1e-2,
            rng_seed: seed,
            validation_fraction: 0.25,
            architecture: Some(Architecture::tiny()),
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn training_is_reproducible_and_reduces_loss() {
        let data = toy_set();
        let samples: Vec<TrainingSample> =
            data.iter().map(|(m, c)| TrainingSample { structure: m, label: *c }).collect();
        let a = train(&samples, &tiny_cfg(7)).unwrap();
        let b = train(&samples, &tiny_cfg(7)).unwrap();
        assert_eq!(a.params.values, b.params.values);
        assert_eq!(a.history, b.history);
        assert!(a.history.last().unwrap().train.total < a.history[0].train.total);
        assert_eq!(a.validation_indices.len(), 6);
        let c = train(&samples, &TrainingConfig { optimizer: Optimizer::Adam, ..tiny_cfg(7) }).unwrap();
        assert!(c.history.last().unwrap().train.total < c.history[0].train.total);
    }

    #[test]
    fn invalid_requests_are_rejected() {
        assert!(matches!(train(&[], &TrainingConfig::default()), Err(LatentError::EmptyDatabase)));
        assert!(TrainingConfig { batch_size: 0, ..TrainingConfig::default() }.validate().is_err());
        assert!(TrainingConfig { mc_samples: 0, ..TrainingConfig::default() }.validate().is_err());
        let m = Microstructure::filled(8, 8, true);
        let s = [TrainingSample { structure: &m, label: StiffnessComponents::new(f64::NAN, 0.0, 0.0, 0.0) }];
        assert!(train(&s, &tiny_cfg(1)).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let data = toy_set();
        let samples: Vec<TrainingSample> =
            data.iter().map(|(m, c)| TrainingSample { structure: m, label: *c }).collect();
        let cfg = TrainingConfig { learning_rate: 1e12, epochs: 50, ..tiny_cfg(3) };
        match train(&samples, &cfg) {
            Err(LatentError::Diverged { .. }) => {}
            Ok(t) => assert!(t.history.iter().all(|h| h.train.is_finite())),
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
