//! Database growth by repeated perturbation of extreme and sparse records.

use super::database::{Database, Record};
use super::par::par_map;
use super::PipelineError;
use crate::homogenization::{Homogenizer, MaterialSpec, PropertyScaler, StiffnessComponents};
use crate::macroopt::build_sdf;
use crate::microstructure::{perturb, Microstructure, PerturbParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{HashMap, HashSet};

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthConfig {
    pub iterations: usize,
    /// Parents perturbed per iteration.
    pub batch: usize,
    pub rng_seed: u64,
    pub threads: usize,
    /// Neighbour radius in standardized property units.
    pub sparsity_radius: f64,
    /// Grid resolution of the distance field used for extremeness.
    pub sdf_resolution: usize,
    /// Extra perturbation rounds for parents whose child was rejected or a duplicate.
    pub retries: usize,
    pub perturb: PerturbParams,
    pub latent_dim: usize,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            batch: 10,
            rng_seed: 0,
            threads: 1,
            sparsity_radius: 0.1,
            sdf_resolution: 12,
            retries: 4,
            perturb: PerturbParams::default(),
            latent_dim: 16,
        }
    }
}

/// Database size and property bounds after one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthStep {
    pub iteration: usize,
    pub records: usize,
    pub added: usize,
    pub lower: [f64; 4],
    pub upper: [f64; 4],
}

/// Number of other points within `radius` of each point, via a uniform bucket grid.
pub fn neighbour_counts(points: &[[f64; 4]], radius: f64) -> Vec<usize> {
    let key = |p: &[f64; 4]| p.map(|v| (v / radius).floor() as i64);
    let mut buckets: HashMap<[i64; 4], Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        buckets.entry(key(p)).or_default().push(i);
    }
    let r2 = radius * radius;
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let k = key(p);
            let mut count = 0;
            for off in 0..81 {
                let d = [off % 3, off / 3 % 3, off / 9 % 3, off / 27].map(|x| x as i64 - 1);
                let nk = [k[0] + d[0], k[1] + d[1], k[2] + d[2], k[3] + d[3]];
                if let Some(b) = buckets.get(&nk) {
                    count += b
                        .iter()
                        .filter(|&&j| j != i && (0..4).map(|a| (points[j][a] - p[a]).powi(2)).sum::<f64>() <= r2)
                        .count();
                }
            }
            count
        })
        .collect()
}

fn normalize(v: &mut [f64]) {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for x in v.iter_mut() {
        *x = if hi > lo { (*x - lo) / (hi - lo) } else { 0.0 };
    }
}

/// Growth priority per record: closeness to the boundary of the property cloud
/// plus sparsity of its neighbourhood, each scaled to [0, 1].
pub fn growth_scores(props: &[StiffnessComponents], radius: f64, sdf_resolution: usize) -> Vec<f64> {
    let scaler = PropertyScaler::fit(props);
    let z: Vec<[f64; 4]> = props.iter().map(|c| scaler.standardize(c)).collect();
    let mut extreme: Vec<f64> = match build_sdf(props, sdf_resolution) {
        Ok(sdf) => props.iter().map(|c| -sdf.feasibility_phi(c).0).collect(),
        // too few points for a distance grid: distance from the mean instead
        Err(_) => z.iter().map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt()).collect(),
    };
    normalize(&mut extreme);
    let mut sparse: Vec<f64> = neighbour_counts(&z, radius).into_iter().map(|c| -(c as f64)).collect();
    normalize(&mut sparse);
    extreme.iter().zip(&sparse).map(|(a, b)| a + b).collect()
}

fn homogenize_all(h: &Homogenizer, cells: &[Microstructure], threads: usize) -> Vec<Option<StiffnessComponents>> {
    par_map(cells, threads, |m| match h.homogenize(m) {
        Ok(c) if c.is_finite() => Some(c),
        Ok(_) => None,
        Err(e) => {
            log::warn!("homogenization failed: {e}");
            None
        }
    })
}

/// Homogenizes the seeds, then for every iteration perturbs the best-scoring
/// records and inserts the novel results. Candidates enter in order of bitmap
/// hash, so the result does not depend on the thread count.
pub fn grow_database(
    seeds: &[Microstructure],
    material: MaterialSpec,
    cfg: &GrowthConfig,
    mut on_step: impl FnMut(&GrowthStep),
) -> Result<Database, PipelineError> {
    let first = seeds.first().ok_or_else(|| PipelineError::Invalid("at least one seed is required".into()))?;
    let (h, w) = (first.height(), first.width());
    let hom = Homogenizer::new(h, w, material.clone())?;
    let mut db = Database::new(h, w, cfg.latent_dim, material);
    let mut seen: HashSet<[u8; 32]> = HashSet::new();

    let insert_batch = |db: &mut Database, seen: &mut HashSet<[u8; 32]>, cands: Vec<Microstructure>| -> usize {
        let mut fresh: Vec<([u8; 32], Microstructure)> = Vec::new();
        for m in cands {
            let key = m.bitmap_hash();
            if (m.height(), m.width()) == (h, w) && !seen.contains(&key) && !fresh.iter().any(|(k, _)| *k == key) {
                fresh.push((key, m));
            }
        }
        fresh.sort_by(|a, b| a.0.cmp(&b.0));
        let cells: Vec<Microstructure> = fresh.iter().map(|(_, m)| m.clone()).collect();
        let props = homogenize_all(&hom, &cells, cfg.threads);
        let mut added = 0;
        for ((key, m), p) in fresh.into_iter().zip(props) {
            seen.insert(key);
            if let Some(c) = p {
                let id = db.next_id();
                let rec = Record { id, structure: m.with_id(id), properties: c, latent: None };
                if db.insert(rec).is_ok() {
                    added += 1;
                }
            }
        }
        added
    };

    insert_batch(&mut db, &mut seen, seeds.to_vec());
    if db.is_empty() {
        return Err(PipelineError::Invalid("no seed could be homogenized".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    for iteration in 1..=cfg.iterations {
        let scores = growth_scores(&db.properties(), cfg.sparsity_radius, cfg.sdf_resolution);
        let mut order: Vec<usize> = (0..db.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(db.records()[a].id.cmp(&db.records()[b].id)));
        let parents: Vec<Microstructure> =
            order.iter().take(cfg.batch).map(|&i| db.records()[i].structure.clone()).collect();

        let mut added = 0;
        let mut pending: Vec<Microstructure> = parents;
        for _round in 0..=cfg.retries {
            if pending.is_empty() {
                break;
            }
            let jobs: Vec<(Microstructure, u64)> = pending.iter().map(|m| (m.clone(), rng.random())).collect();
            let children = par_map(&jobs, cfg.threads, |(m, s)| perturb(m, *s, &cfg.perturb).ok());
            let mut retry = Vec::new();
            let mut cands = Vec::new();
            for ((parent, _), child) in jobs.into_iter().zip(children) {
                match child {
                    Some(o) if o.accepted && !seen.contains(&o.structure.bitmap_hash()) => {
                        if cands.iter().any(|c: &Microstructure| c.cells() == o.structure.cells()) {
                            retry.push(parent);
                        } else {
                            cands.push(o.structure);
                        }
                    }
                    _ => retry.push(parent),
                }
            }
            added += insert_batch(&mut db, &mut seen, cands);
            pending = retry;
        }
        let (lower, upper) = db.property_bounds().expect("non-empty database");
        let step = GrowthStep { iteration, records: db.len(), added, lower, upper };
        log::info!("growth iteration {iteration}: {} records (+{added})", db.len());
        on_step(&step);
    }
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microstructure::seeds::SeedFamily;

    fn small_seeds() -> Vec<Microstructure> {
        [
            SeedFamily::Cross { horizontal: 4, vertical: 4 },
            SeedFamily::Cross { horizontal: 2, vertical: 6 },
            SeedFamily::HolePlate { rx: 4.0, ry: 3.0 },
            SeedFamily::Frame { horizontal: 2, vertical: 3, fillet: 0.0 },
        ]
        .iter()
        .map(|s| s.render(16, 16).unwrap())
        .collect()
    }

    #[test]
    fn neighbour_counts_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<[f64; 4]> = (0..300).map(|_| std::array::from_fn(|_| rng.random_range(-0.5..0.5))).collect();
        let counts = neighbour_counts(&pts, 0.3);
        for (i, p) in pts.iter().enumerate() {
            let brute = pts
                .iter()
                .enumerate()
                .filter(|&(j, q)| j != i && (0..4).map(|a| (q[a] - p[a]).powi(2)).sum::<f64>() <= 0.09)
                .count();
            assert_eq!(counts[i], brute);
        }
    }

    #[test]
    fn growth_is_monotone_unique_and_reproducible() {
        let cfg = GrowthConfig { iterations: 6, batch: 4, rng_seed: 5, ..GrowthConfig::default() };
        let mut steps = Vec::new();
        let db = grow_database(&small_seeds(), MaterialSpec::default(), &cfg, |s| steps.push(s.clone())).unwrap();
        assert!(db.len() > 4);
        for pair in steps.windows(2) {
            for k in 0..4 {
                assert!(pair[1].lower[k] <= pair[0].lower[k]);
                assert!(pair[1].upper[k] >= pair[0].upper[k]);
            }
            assert!(pair[1].records >= pair[0].records);
        }
        let hashes: HashSet<_> = db.records().iter().map(|r| r.structure.bitmap_hash()).collect();
        assert_eq!(hashes.len(), db.len());
        for r in db.records() {
            assert!(r.structure.is_doubly_symmetric());
            assert!(!r.structure.has_defects());
        }
        let again = grow_database(&small_seeds(), MaterialSpec::default(), &cfg, |_| {}).unwrap();
        assert_eq!(again.content_hash(), db.content_hash());
        let threaded = GrowthConfig { threads: 3, ..cfg };
        let par = grow_database(&small_seeds(), MaterialSpec::default(), &threaded, |_| {}).unwrap();
        assert_eq!(par.content_hash(), db.content_hash());
    }

    #[test]
    fn scores_favour_isolated_extremes() {
        let mut props: Vec<StiffnessComponents> =
            (0..50).map(|i| StiffnessComponents::new(0.5 + 0.001 * i as f64, 0.2, 0.5, 0.1)).collect();
        props.push(StiffnessComponents::new(1.2, 0.2, 0.5, 0.1));
        let s = growth_scores(&props, 0.1, 12);
        let best = (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
        assert_eq!(best, 50);
    }

    #[test]
    fn growth_needs_a_seed() {
        assert!(grow_database(&[], MaterialSpec::default(), &GrowthConfig::default(), |_| {}).is_err());
    }
}
