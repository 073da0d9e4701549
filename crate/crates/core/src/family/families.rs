//! Near-curve selection, family extraction and latent densification.

use super::graph::{build_family_graph, extract_paths};
use super::{FamilyError, GradationCurve, CURVE_SAMPLES};
use crate::homogenization::{Homogenizer, PropertyScaler, StiffnessComponents};
use crate::latentmodel::{decode_to_structure, LatentVector, ModelParameters};
use crate::latentops::svg::strip_svg;
use crate::microstructure::Microstructure;
use crate::pipeline::{par_map, Database};
use std::fmt::Write as _;

/// A database record admitted by the curve filter.
#[derive(Debug, Clone, PartialEq)]
pub struct NearCurve {
    pub index: usize,
    pub id: u64,
    pub controlled: f64,
    pub distance: f64,
}

/// Records within δ of the curve in standardized property space (database
/// scaler), ascending by controlled value and then id.
pub fn select_near_curve(db: &Database, curve: &GradationCurve) -> Result<Vec<NearCurve>, FamilyError> {
    select_with_scaler(db, curve, &db.scaler())
}

pub fn select_with_scaler(
    db: &Database,
    curve: &GradationCurve,
    scaler: &PropertyScaler,
) -> Result<Vec<NearCurve>, FamilyError> {
    let samples = curve.samples(CURVE_SAMPLES);
    let mut out: Vec<NearCurve> = db
        .records()
        .iter()
        .enumerate()
        .filter_map(|(index, r)| {
            let distance = curve.distance(&r.properties, scaler, &samples);
            (distance <= curve.delta).then(|| NearCurve {
                index,
                id: r.id,
                controlled: curve.controlled_value(&r.properties),
                distance,
            })
        })
        .collect();
    if out.is_empty() {
        return Err(FamilyError::EmptySelection);
    }
    out.sort_by(|a, b| a.controlled.total_cmp(&b.controlled).then(a.id.cmp(&b.id)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyMember {
    pub id: u64,
    pub structure: Microstructure,
    pub properties: StiffnessComponents,
    pub latent: LatentVector,
}

/// Database records along one extracted path, strictly ascending in the controlled value.
#[derive(Debug, Clone, PartialEq)]
pub struct MetamaterialFamily {
    pub members: Vec<FamilyMember>,
    /// Sum of latent distances between consecutive members.
    pub path_length: f64,
}

impl MetamaterialFamily {
    pub fn structures(&self) -> Vec<Microstructure> {
        self.members.iter().map(|m| m.structure.clone()).collect()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.members.iter().map(|m| m.id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyParams {
    pub k: usize,
    pub n_terminal: usize,
    pub count: usize,
}

impl Default for FamilyParams {
    fn default() -> Self {
        Self { k: 5, n_terminal: 50, count: 5 }
    }
}

/// Selects near-curve records, builds the rank graph over their latents and
/// extracts up to `params.count` node-disjoint shortest paths.
pub fn extract_families(
    db: &Database,
    curve: &GradationCurve,
    params: &FamilyParams,
) -> Result<Vec<MetamaterialFamily>, FamilyError> {
    let h = select_near_curve(db, curve)?;
    if h.len() < 2 {
        return Err(FamilyError::TooFewRecords(h.len()));
    }
    let latents = h
        .iter()
        .map(|s| db.records()[s.index].latent.clone().ok_or(FamilyError::MissingLatent(s.id)))
        .collect::<Result<Vec<_>, _>>()?;
    let values: Vec<f64> = h.iter().map(|s| s.controlled).collect();
    let graph = build_family_graph(&values, &latents, params.k, params.n_terminal);
    Ok(extract_paths(&graph, params.count)
        .into_iter()
        .map(|(path_length, nodes)| MetamaterialFamily {
            members: nodes
                .iter()
                .map(|&v| {
                    let r = &db.records()[h[v].index];
                    FamilyMember {
                        id: r.id,
                        structure: r.structure.clone(),
                        properties: r.properties,
                        latent: latents[v].clone(),
                    }
                })
                .collect(),
            path_length,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Origin {
    Record(u64),
    /// Decoded at `z_a + t (z_b − z_a)` on the edge leaving member `edge`.
    Interpolated { edge: usize, t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensifiedMember {
    pub origin: Origin,
    pub structure: Microstructure,
    /// `None` when the decoded cell could not be homogenized.
    pub properties: Option<StiffnessComponents>,
    pub latent: LatentVector,
}

/// A family with decoded cells inserted between (and optionally beyond) its members.
#[derive(Debug, Clone, PartialEq)]
pub struct DensifiedFamily {
    pub members: Vec<DensifiedMember>,
}

impl DensifiedFamily {
    pub fn inserted(&self) -> impl Iterator<Item = &DensifiedMember> {
        self.members.iter().filter(|m| matches!(m.origin, Origin::Interpolated { .. }))
    }

    /// Fraction of inserted members whose properties lie within `limit` of the
    /// curve; unhomogenizable insertions count as misses. `None` if nothing was inserted.
    pub fn fraction_within(&self, curve: &GradationCurve, scaler: &PropertyScaler, limit: f64) -> Option<f64> {
        let samples = curve.samples(CURVE_SAMPLES);
        let (mut hit, mut total) = (0usize, 0usize);
        for m in self.inserted() {
            total += 1;
            if m.properties.is_some_and(|p| curve.distance(&p, scaler, &samples) <= limit) {
                hit += 1;
            }
        }
        (total > 0).then(|| hit as f64 / total as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyParams {
    pub samples_per_edge: usize,
    /// Adds points at t = −0.25 on the first edge and t = 1.25 on the last.
    pub extrapolate: bool,
    pub threads: usize,
}

impl Default for DensifyParams {
    fn default() -> Self {
        Self { samples_per_edge: 3, extrapolate: false, threads: 1 }
    }
}

/// Latent parameters of the inserted points, in output order.
fn insertion_plan(n: usize, p: &DensifyParams) -> Vec<(usize, Vec<(usize, f64)>)> {
    // (member index, points emitted right after it); the leading extrapolant hangs off usize::MAX
    let mut plan = Vec::new();
    for a in 0..n {
        let mut pts = Vec::new();
        if a + 1 < n {
            for i in 1..=p.samples_per_edge {
                pts.push((a, i as f64 / (p.samples_per_edge + 1) as f64));
            }
        }
        if p.extrapolate && a + 1 == n && n >= 2 {
            pts.push((n - 2, 1.25));
        }
        plan.push((a, pts));
    }
    plan
}

pub fn densify_family(
    fam: &MetamaterialFamily,
    model: &ModelParameters,
    homogenizer: &Homogenizer,
    params: &DensifyParams,
) -> Result<DensifiedFamily, FamilyError> {
    let n = fam.members.len();
    let mut jobs: Vec<(Origin, LatentVector)> = Vec::new();
    let lerp = |e: usize, t: f64| -> LatentVector {
        let (a, b) = (&fam.members[e].latent, &fam.members[e + 1].latent);
        a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
    };
    let mut order: Vec<Result<usize, usize>> = Vec::new(); // Ok(job) or Err(member)
    if params.extrapolate && n >= 2 {
        jobs.push((Origin::Interpolated { edge: 0, t: -0.25 }, lerp(0, -0.25)));
        order.push(Ok(0));
    }
    for (a, pts) in insertion_plan(n, params) {
        order.push(Err(a));
        for (e, t) in pts {
            order.push(Ok(jobs.len()));
            jobs.push((Origin::Interpolated { edge: e, t }, lerp(e, t)));
        }
    }
    let decoded = jobs
        .iter()
        .map(|(_, z)| decode_to_structure(z, model))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| FamilyError::Model(e.to_string()))?;
    let props = par_map(&decoded, params.threads, |m| homogenizer.homogenize(m).ok());
    let mut built: Vec<Option<DensifiedMember>> = jobs
        .into_iter()
        .zip(decoded)
        .zip(props)
        .map(|(((origin, latent), structure), properties)| Some(DensifiedMember { origin, structure, properties, latent }))
        .collect();
    let members = order
        .into_iter()
        .map(|o| match o {
            Ok(j) => built[j].take().expect("each insertion used once"),
            Err(a) => {
                let m = &fam.members[a];
                DensifiedMember {
                    origin: Origin::Record(m.id),
                    structure: m.structure.clone(),
                    properties: Some(m.properties),
                    latent: m.latent.clone(),
                }
            }
        })
        .collect();
    Ok(DensifiedFamily { members })
}

fn fmt_c(c: &StiffnessComponents) -> String {
    c.to_array().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// One row per member: family index, position, origin, properties, nearest
/// curve sample and standardized curve distance.
pub fn families_csv(families: &[DensifiedFamily], curve: &GradationCurve, scaler: &PropertyScaler) -> String {
    let samples = curve.samples(CURVE_SAMPLES);
    let mut s = String::from("family,position,origin,id,t,C11,C12,C22,C33,curve_C11,curve_C12,curve_C22,curve_C33,distance\n");
    for (f, fam) in families.iter().enumerate() {
        for (i, m) in fam.members.iter().enumerate() {
            let (origin, id, t) = match m.origin {
                Origin::Record(id) => ("record", id.to_string(), String::new()),
                Origin::Interpolated { t, .. } => ("interpolated", String::new(), t.to_string()),
            };
            let (props, near, dist) = match m.properties {
                Some(p) => {
                    let nearest = samples
                        .iter()
                        .min_by(|a, b| scaler.distance(&p, a).total_cmp(&scaler.distance(&p, b)))
                        .expect("curve samples");
                    (fmt_c(&p), fmt_c(nearest), scaler.distance(&p, nearest).to_string())
                }
                None => (",,,".into(), ",,,".into(), String::new()),
            };
            let _ = writeln!(s, "{f},{i},{origin},{id},{t},{props},{near},{dist}");
        }
    }
    s
}

pub fn family_filmstrip_svg(family: &DensifiedFamily, pixel: f64) -> String {
    let cells: Vec<Microstructure> = family.members.iter().map(|m| m.structure.clone()).collect();
    strip_svg(&cells, pixel)
}

impl From<&MetamaterialFamily> for DensifiedFamily {
    fn from(f: &MetamaterialFamily) -> Self {
        Self {
            members: f
                .members
                .iter()
                .map(|m| DensifiedMember {
                    origin: Origin::Record(m.id),
                    structure: m.structure.clone(),
                    properties: Some(m.properties),
                    latent: m.latent.clone(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homogenization::MaterialSpec;
    use crate::latentmodel::{encode, reconstruct, Architecture};
    use crate::pipeline::Record;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn curve() -> GradationCurve {
        GradationCurve::graded(&MaterialSpec::default(), 0.05).unwrap()
    }

    /// Records on the curve at random c plus off-curve noise, latents tracking c.
    fn synthetic_db(seed: u64) -> Database {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cv = curve();
        let mut db = Database::new(8, 8, 2, MaterialSpec::default());
        for id in 0..300u64 {
            let c = rng.random_range(0.05..1.2);
            let on = cv.eval(c).unwrap();
            let props = if id % 3 == 0 {
                on
            } else {
                StiffnessComponents::from_array(on.to_array().map(|v| v * rng.random_range(0.3..0.9)))
            };
            let z = vec![c + rng.random_range(-0.05..0.05), rng.random_range(-1.0..1.0)];
            let structure = Microstructure::from_fn(8, 8, |r, col| (r + col + id as usize) % 3 != 0);
            db.insert(Record { id, structure, properties: props, latent: Some(z) }).unwrap();
        }
        db
    }

    #[test]
    fn selection_is_sorted_and_within_delta() {
        let db = synthetic_db(1);
        let cv = curve();
        let h = select_near_curve(&db, &cv).unwrap();
        assert!(h.len() >= 100);
        assert!(h.windows(2).all(|w| (w[0].controlled, w[0].id) < (w[1].controlled, w[1].id)));
        assert!(h.iter().all(|s| s.distance <= cv.delta));
        for id in (0..300).step_by(3) {
            assert!(h.iter().any(|s| s.id == id), "on-curve record {id} missing");
        }
    }

    #[test]
    fn empty_selection_is_reported() {
        let mut db = Database::new(4, 4, 2, MaterialSpec::default());
        for id in 0..3 {
            let p = StiffnessComponents::new(0.1 + id as f64, 0.9, 0.05, 0.4);
            db.insert(Record { id, structure: Microstructure::filled(4, 4, true), properties: p, latent: None }).unwrap();
        }
        let tight = GradationCurve::graded(&MaterialSpec::default(), 1e-6).unwrap();
        assert!(matches!(select_near_curve(&db, &tight), Err(FamilyError::EmptySelection)));
    }

    #[test]
    fn extracted_families_satisfy_their_invariants() {
        let db = synthetic_db(2);
        let cv = curve();
        let fams = extract_families(&db, &cv, &FamilyParams::default()).unwrap();
        assert_eq!(fams.len(), 5);
        let scaler = db.scaler();
        let samples = cv.samples(CURVE_SAMPLES);
        let mut seen = std::collections::HashSet::new();
        for f in &fams {
            assert!(f.members.len() >= 2);
            for w in f.members.windows(2) {
                assert!(cv.controlled_value(&w[1].properties) > cv.controlled_value(&w[0].properties));
            }
            for m in &f.members {
                assert!(cv.distance(&m.properties, &scaler, &samples) <= cv.delta);
                assert!(seen.insert(m.id));
            }
        }
        assert!(fams.windows(2).all(|w| w[1].path_length >= w[0].path_length));
    }

    fn tiny_family() -> (MetamaterialFamily, ModelParameters) {
        let model = ModelParameters::init(Architecture::tiny(), 3).unwrap();
        let mut members = Vec::new();
        for (id, k) in [(0u64, 2usize), (1, 3), (2, 4)] {
            let s = Microstructure::from_fn(8, 8, |r, c| r % k == 0 || c % k == 0);
            let latent = encode(&s, &model).unwrap().mean;
            members.push(FamilyMember { id, structure: s, properties: StiffnessComponents::new(0.1 * (id + 1) as f64, 0.0, 0.1, 0.0), latent });
        }
        (MetamaterialFamily { members, path_length: 1.0 }, model)
    }

    #[test]
    fn zero_samples_leave_the_family_unchanged() {
        let (fam, model) = tiny_family();
        let hom = Homogenizer::new(8, 8, MaterialSpec::default()).unwrap();
        let p = DensifyParams { samples_per_edge: 0, ..DensifyParams::default() };
        let d = densify_family(&fam, &model, &hom, &p).unwrap();
        assert_eq!(d, DensifiedFamily::from(&fam));
    }

    #[test]
    fn interpolants_are_ordered_and_endpoint_matches_reconstruction() {
        let (fam, model) = tiny_family();
        let hom = Homogenizer::new(8, 8, MaterialSpec::default()).unwrap();
        let p = DensifyParams { samples_per_edge: 2, extrapolate: true, threads: 2 };
        let d = densify_family(&fam, &model, &hom, &p).unwrap();
        assert_eq!(d.members.len(), 3 + 2 * 2 + 2);
        let kinds: Vec<String> = d
            .members
            .iter()
            .map(|m| match m.origin {
                Origin::Record(id) => format!("r{id}"),
                Origin::Interpolated { edge, t } => format!("e{edge}@{t:.3}"),
            })
            .collect();
        assert_eq!(kinds, ["e0@-0.250", "r0", "e0@0.333", "e0@0.667", "r1", "e1@0.333", "e1@0.667", "r2", "e1@1.250"]);
        assert_eq!(d.inserted().count(), 6);
        for m in d.inserted() {
            if let Some(p) = m.properties {
                assert_eq!(Some(p), hom.homogenize(&m.structure).ok());
            }
        }
        // t = 0 on the first edge is the first member's own latent
        assert_eq!(decode_to_structure(&fam.members[0].latent, &model).unwrap(), reconstruct(&fam.members[0].structure, &model).unwrap());
        let serial = densify_family(&fam, &model, &hom, &DensifyParams { threads: 1, ..p }).unwrap();
        assert_eq!(serial, d);
    }

    #[test]
    fn csv_and_filmstrip_cover_every_member() {
        let (fam, _) = tiny_family();
        let d = DensifiedFamily::from(&fam);
        let cv = curve();
        let scaler = PropertyScaler::identity();
        let csv = families_csv(&[d.clone(), d.clone()], &cv, &scaler);
        assert_eq!(csv.lines().count(), 1 + 6);
        assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 14));
        assert_eq!(family_filmstrip_svg(&d, 2.0).matches("stroke=\"gray\"").count(), 3);
    }
}
