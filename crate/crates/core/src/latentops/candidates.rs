//! Property-matched candidate sets spread over the latent space.

use super::{fit_pca, kmeans, LatentOpsError};
use crate::homogenization::StiffnessComponents;
use crate::latentmodel::LatentVector;
use crate::pipeline::Database;

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateParams {
    pub n_clusters: usize,
    /// Largest admitted mean squared error over the standardized components.
    pub admission_mse: f64,
    /// Nearest admitted records kept before clustering.
    pub pool_cap: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iters: usize,
}

impl Default for CandidateParams {
    fn default() -> Self {
        Self { n_clusters: 10, admission_mse: 0.01, pool_cap: 200, seed: 0, restarts: 10, max_iters: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: u64,
    pub properties: StiffnessComponents,
    pub latent: LatentVector,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub target: StiffnessComponents,
    /// Sorted by error, then id.
    pub entries: Vec<Candidate>,
}

impl CandidateSet {
    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|c| c.id).collect()
    }

    pub fn latents(&self) -> Vec<LatentVector> {
        self.entries.iter().map(|c| c.latent.clone()).collect()
    }
}

fn by_error(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    a.mse.total_cmp(&b.mse).then(a.id.cmp(&b.id))
}

/// Every annotated record with its standardized error to `target`, best first.
fn ranked(db: &Database, target: &StiffnessComponents) -> Result<Vec<Candidate>, LatentOpsError> {
    let scaler = db.scaler();
    let mut all = Vec::with_capacity(db.len());
    for r in db.records() {
        let latent = r.latent.clone().ok_or(LatentOpsError::MissingLatent(r.id))?;
        all.push(Candidate { id: r.id, properties: r.properties, latent, mse: scaler.mse(&r.properties, target) });
    }
    all.sort_by(by_error);
    Ok(all)
}

/// Admits records within `admission_mse` of the target, keeps the nearest
/// `pool_cap`, clusters them with k-means on the first two principal components
/// of the database latents and returns the best match of every cluster.
pub fn diverse_candidates(
    db: &Database,
    target: &StiffnessComponents,
    params: &CandidateParams,
) -> Result<CandidateSet, LatentOpsError> {
    let all = ranked(db, target)?;
    let pool: Vec<Candidate> =
        all.into_iter().filter(|c| c.mse <= params.admission_mse).take(params.pool_cap).collect();
    if pool.is_empty() {
        return Err(LatentOpsError::NoFeasibleCandidate(params.admission_mse));
    }
    if pool.len() <= params.n_clusters {
        return Ok(CandidateSet { target: *target, entries: pool });
    }
    let latents: Vec<LatentVector> = db.records().iter().filter_map(|r| r.latent.clone()).collect();
    let pca = fit_pca(&latents, 2.min(db.latent_dim))?;
    let pts: Vec<Vec<f64>> = pool.iter().map(|c| pca.project(&c.latent)).collect();
    let km = kmeans(&pts, params.n_clusters, params.restarts, params.max_iters, params.seed);
    let mut best: Vec<Option<&Candidate>> = vec![None; km.centroids.len()];
    for (c, &a) in pool.iter().zip(&km.assignments) {
        // the pool is already in (error, id) order, so the first hit wins
        if best[a].is_none() {
            best[a] = Some(c);
        }
    }
    let mut entries: Vec<Candidate> = best.into_iter().flatten().cloned().collect();
    entries.sort_by(by_error);
    Ok(CandidateSet { target: *target, entries })
}

/// The `n` nearest records by property error, for comparison.
pub fn greedy_candidates(db: &Database, target: &StiffnessComponents, n: usize) -> Result<CandidateSet, LatentOpsError> {
    let entries = ranked(db, target)?.into_iter().take(n).collect();
    Ok(CandidateSet { target: *target, entries })
}

/// Mean Euclidean distance over all unordered pairs.
pub fn mean_pairwise_distance(latents: &[LatentVector]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..latents.len() {
        for j in i + 1..latents.len() {
            sum += latents[i].iter().zip(&latents[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homogenization::MaterialSpec;
    use crate::microstructure::Microstructure;
    use crate::pipeline::Record;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_db(n: usize, seed: u64) -> Database {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut db = Database::new(4, 4, 4, MaterialSpec::default());
        for id in 0..n as u64 {
            let c = StiffnessComponents::new(rng.random_range(0.1..1.0), rng.random_range(0.0..0.4), rng.random_range(0.1..1.0), rng.random_range(0.0..0.3));
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            db.insert(Record { id, structure: Microstructure::filled(4, 4, true), properties: c, latent: Some(z) }).unwrap();
        }
        db
    }

    #[test]
    fn exact_match_is_selected_and_admission_holds() {
        let db = random_db(400, 1);
        let target = db.records()[17].properties;
        let p = CandidateParams { admission_mse: 0.2, ..CandidateParams::default() };
        let set = diverse_candidates(&db, &target, &p).unwrap();
        assert!(set.ids().contains(&17));
        assert_eq!(set.entries[0].id, 17);
        assert!(set.entries.len() <= 10);
        let scaler = db.scaler();
        for c in &set.entries {
            assert!(scaler.mse(&c.properties, &target) <= 0.2);
        }
        assert_eq!(diverse_candidates(&db, &target, &p).unwrap(), set);
    }

    #[test]
    fn small_pools_are_returned_whole() {
        let db = random_db(300, 2);
        let target = db.records()[3].properties;
        let p = CandidateParams { admission_mse: 0.004, ..CandidateParams::default() };
        let pool = greedy_candidates(&db, &target, 300).unwrap().entries.iter().filter(|c| c.mse <= 0.004).count();
        assert!(pool < 10, "pool {pool}");
        assert_eq!(diverse_candidates(&db, &target, &p).unwrap().entries.len(), pool);
    }

    #[test]
    fn empty_admission_is_an_error() {
        let db = random_db(50, 3);
        let target = StiffnessComponents::new(50.0, 50.0, 50.0, 50.0);
        assert!(matches!(
            diverse_candidates(&db, &target, &CandidateParams::default()),
            Err(LatentOpsError::NoFeasibleCandidate(_))
        ));
    }

    #[test]
    fn clustered_sets_spread_wider_than_greedy_ones() {
        let db = random_db(2000, 4);
        let mut wins = 0;
        for t in 0..10 {
            let target = db.records()[t * 37].properties;
            let p = CandidateParams { admission_mse: 0.05, ..CandidateParams::default() };
            let d = diverse_candidates(&db, &target, &p).unwrap();
            let g = greedy_candidates(&db, &target, d.entries.len()).unwrap();
            if mean_pairwise_distance(&d.latents()) >= mean_pairwise_distance(&g.latents()) {
                wins += 1;
            }
        }
        assert!(wins >= 8, "{wins}");
    }

    #[test]
    fn pairwise_distance_basics() {
        assert_eq!(mean_pairwise_distance(&[vec![0.0, 0.0]]), 0.0);
        assert_eq!(mean_pairwise_distance(&[vec![0.0, 0.0], vec![3.0, 4.0]]), 5.0);
    }
}
