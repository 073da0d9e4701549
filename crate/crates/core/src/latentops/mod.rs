//! Latent-space analytics: principal components, semantic arrows, traversals,
//! interpolation and diverse candidate sets.

mod candidates;
mod kmeans;
pub mod svg;

pub use candidates::{diverse_candidates, greedy_candidates, mean_pairwise_distance, Candidate, CandidateParams, CandidateSet};
pub use kmeans::{kmeans, KMeans};

use crate::latentmodel::{decode_to_structure, LatentError, LatentVector, ModelParameters};
use crate::microstructure::Microstructure;
use crate::pipeline::{Database, Record};
use faer::Mat;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LatentOpsError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("latent vectors have inconsistent lengths")]
    LengthMismatch,
    #[error("record {0} has no latent vector")]
    MissingLatent(u64),
    #[error("empty selection: {0}")]
    EmptySelection(String),
    #[error("no record within the admission threshold {0}")]
    NoFeasibleCandidate(f64),
    #[error("eigendecomposition failed")]
    Eigen,
    #[error(transparent)]
    Model(#[from] LatentError),
}

/// Principal axes of a latent cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Orthonormal rows, by decreasing variance.
    pub components: Vec<Vec<f64>>,
    /// Variance along each component.
    pub variances: Vec<f64>,
    /// Share of the total variance along each component.
    pub explained: Vec<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(z).zip(&self.mean).map(|((a, x), m)| a * (x - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, scores: &[f64]) -> Vec<f64> {
        let mut z = self.mean.clone();
        for (c, s) in self.components.iter().zip(scores) {
            for (zi, ci) in z.iter_mut().zip(c) {
                *zi += s * ci;
            }
        }
        z
    }
}

fn check_lengths(latents: &[LatentVector]) -> Result<usize, LatentOpsError> {
    let j = latents.first().map(|z| z.len()).unwrap_or(0);
    if latents.iter().any(|z| z.len() != j) {
        return Err(LatentOpsError::LengthMismatch);
    }
    Ok(j)
}

/// PCA of the centred latents via the symmetric eigendecomposition of the
/// population covariance. Directions with negligible variance are dropped with
/// a warning. Each component is signed so its largest entry is positive.
pub fn fit_pca(latents: &[LatentVector], n_components: usize) -> Result<PcaModel, LatentOpsError> {
    let j = check_lengths(latents)?;
    let n = latents.len();
    if n < n_components.max(1) || n_components > j {
        return Err(LatentOpsError::TooFewSamples { need: n_components.max(1), got: n.min(j) });
    }
    let mut mean = vec![0.0; j];
    for z in latents {
        for (m, v) in mean.iter_mut().zip(z) {
            *m += v / n as f64;
        }
    }
    let mut cov = Mat::<f64>::zeros(j, j);
    for z in latents {
        for a in 0..j {
            let da = z[a] - mean[a];
            for b in 0..=a {
                cov[(a, b)] += da * (z[b] - mean[b]) / n as f64;
            }
        }
    }
    for a in 0..j {
        for b in 0..a {
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let total: f64 = (0..j).map(|a| cov[(a, a)]).sum();
    let evd = cov.self_adjoint_eigen(faer::Side::Lower).map_err(|_| LatentOpsError::Eigen)?;
    let (u, s) = (evd.U(), evd.S().column_vector());
    let top = s[j - 1].max(0.0);
    let mut components = Vec::new();
    let mut variances = Vec::new();
    for k in (0..j).rev().take(n_components) {
        let lambda = s[k].max(0.0);
        if lambda <= 1e-12 * top.max(1e-300) {
            log::warn!("covariance is rank deficient; keeping {} of {n_components} components", components.len());
            break;
        }
        let mut c: Vec<f64> = (0..j).map(|a| u[(a, k)]).collect();
        let lead = c.iter().cloned().fold(0.0, |acc: f64, v| if v.abs() > acc.abs() { v } else { acc });
        if lead < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(c);
        variances.push(lambda);
    }
    let explained = variances.iter().map(|v| if total > 0.0 { v / total } else { 0.0 }).collect();
    Ok(PcaModel { mean, components, variances, explained })
}

/// How the high and low groups of an arrow are chosen from a score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrowCriterion {
    /// Top and bottom `q` fractions of the score distribution.
    Quantile(f64),
    /// Score above `t` versus score below `1/t`, for ratio scores.
    Ratio(f64),
}

/// Unit latent direction from the low group's mean to the high group's mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticArrow {
    pub direction: Vec<f64>,
    pub criterion: ArrowCriterion,
    pub high_count: usize,
    pub low_count: usize,
}

pub fn c11_score(r: &Record) -> f64 {
    r.properties.c11
}

/// `C22 / C11`; high for cells stiffer vertically than horizontally.
pub fn anisotropy_score(r: &Record) -> f64 {
    r.properties.c22 / r.properties.c11
}

/// `C12 / C22`, the in-plane Poisson ratio of the effective material.
pub fn poisson_score(r: &Record) -> f64 {
    r.properties.c12 / r.properties.c22
}

fn latent_of(r: &Record) -> Result<&LatentVector, LatentOpsError> {
    r.latent.as_ref().ok_or(LatentOpsError::MissingLatent(r.id))
}

fn mean_of(vs: &[&LatentVector]) -> Vec<f64> {
    let mut m = vec![0.0; vs[0].len()];
    for v in vs {
        for (a, b) in m.iter_mut().zip(v.iter()) {
            *a += b / vs.len() as f64;
        }
    }
    m
}

/// Builds an arrow from annotated records. Quantile groups are taken after a
/// stable sort by score, ties broken by id.
pub fn semantic_arrow(
    db: &Database,
    score: impl Fn(&Record) -> f64,
    criterion: ArrowCriterion,
) -> Result<SemanticArrow, LatentOpsError> {
    let recs = db.records();
    let mut scored: Vec<(f64, &Record)> = recs.iter().map(|r| (score(r), r)).filter(|(s, _)| s.is_finite()).collect();
    let (high, low): (Vec<&Record>, Vec<&Record>) = match criterion {
        ArrowCriterion::Quantile(q) => {
            if !(q > 0.0 && q <= 0.5) {
                return Err(LatentOpsError::EmptySelection(format!("quantile {q} outside (0, 0.5]")));
            }
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
            let k = ((scored.len() as f64) * q).floor() as usize;
            let low = scored[..k].iter().map(|x| x.1).collect();
            let high = scored[scored.len() - k..].iter().map(|x| x.1).collect();
            (high, low)
        }
        ArrowCriterion::Ratio(t) => {
            if !(t > 1.0) {
                return Err(LatentOpsError::EmptySelection(format!("ratio threshold {t} must exceed 1")));
            }
            let high = scored.iter().filter(|x| x.0 > t).map(|x| x.1).collect();
            let low = scored.iter().filter(|x| x.0 < 1.0 / t).map(|x| x.1).collect();
            (high, low)
        }
    };
    if high.is_empty() || low.is_empty() {
        return Err(LatentOpsError::EmptySelection(format!("{} high and {} low records", high.len(), low.len())));
    }
    let hz: Vec<&LatentVector> = high.iter().map(|r| latent_of(r)).collect::<Result<_, _>>()?;
    let lz: Vec<&LatentVector> = low.iter().map(|r| latent_of(r)).collect::<Result<_, _>>()?;
    let (mh, ml) = (mean_of(&hz), mean_of(&lz));
    let diff: Vec<f64> = mh.iter().zip(&ml).map(|(a, b)| a - b).collect();
    let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(LatentOpsError::EmptySelection("group means coincide".into()));
    }
    Ok(SemanticArrow {
        direction: diff.iter().map(|v| v / norm).collect(),
        criterion,
        high_count: high.len(),
        low_count: low.len(),
    })
}

/// Latent points `z0 + i·step·d` for `i = −steps..=steps`.
pub fn traversal_points(z0: &[f64], arrow: &SemanticArrow, steps: usize, step_size: f64) -> Vec<LatentVector> {
    let s = steps as i64;
    (-s..=s)
        .map(|i| z0.iter().zip(&arrow.direction).map(|(z, d)| z + i as f64 * step_size * d).collect())
        .collect()
}

/// Decoded, thresholded and repaired cells along an arrow.
pub fn traverse(
    z0: &[f64],
    arrow: &SemanticArrow,
    steps: usize,
    step_size: f64,
    p: &ModelParameters,
) -> Result<Vec<Microstructure>, LatentOpsError> {
    if z0.len() != arrow.direction.len() {
        return Err(LatentOpsError::LengthMismatch);
    }
    traversal_points(z0, arrow, steps, step_size).iter().map(|z| Ok(decode_to_structure(z, p)?)).collect()
}

/// `(1 − t)·a + t·b`; `t` outside [0, 1] extrapolates.
pub fn interpolate(a: &[f64], b: &[f64], t: f64) -> LatentVector {
    a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect()
}

/// Spearman rank correlation with average ranks for ties; NaN for constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
