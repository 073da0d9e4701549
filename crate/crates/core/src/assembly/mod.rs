//! Second design stage: picking one cell per macro element so that the
//! targets are met and neighbouring cells connect.

mod ddmrf;
mod io;

pub use ddmrf::{brute_force, dd_mrf_solve, solve_chain, DdIteration, DdParams, GridMrf, Labeling};
pub use io::{labeling_csv, read_labeling_csv, stitched_pgm, stitched_svg, write_pgm};

use crate::family::{GradationCurve, MetamaterialFamily};
use crate::homogenization::{
    BoundaryStressTraces, HomogenizationError, Homogenizer, PropertyScaler, StiffnessComponents, StrainCase,
};
use crate::latentmodel::{decode_to_structure, ModelParameters};
use crate::latentops::{diverse_candidates, CandidateParams, CandidateSet, LatentOpsError};
use crate::macroopt::{assemble_and_solve, objective_and_rrmse, MacroError, MacroProblem, PropertyField};
use crate::microstructure::{Microstructure, Side};
use crate::pipeline::{par_map, Database};
use std::collections::BTreeMap;
use thiserror::Error;

/// Guard for the mechanical incompatibility denominator.
pub const EPS_DEN: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("element {element}: {source}")]
    NoCandidate { element: usize, source: LatentOpsError },
    #[error("field has {got} elements, problem has {want}")]
    FieldMismatch { got: usize, want: usize },
    #[error("record {0} not found in the database")]
    MissingRecord(u64),
    #[error("family needs at least one member")]
    EmptyFamily,
    #[error(transparent)]
    Homogenization(#[from] HomogenizationError),
    #[error(transparent)]
    Macro(#[from] MacroError),
    #[error("model: {0}")]
    Model(String),
}

/// How two cells meet: `Horizontal` puts the first on the left, `Vertical`
/// puts the first on top.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Horizontal,
    Vertical,
}

impl Orientation {
    fn sides(self) -> (Side, Side) {
        match self {
            Orientation::Horizontal => (Side::Right, Side::Left),
            Orientation::Vertical => (Side::Bottom, Side::Top),
        }
    }
}

fn strip(m: &Microstructure, side: Side) -> Vec<bool> {
    let (h, w) = (m.height(), m.width());
    match side {
        Side::Left => (0..h).map(|r| m.get(r, 0)).collect(),
        Side::Right => (0..h).map(|r| m.get(r, w - 1)).collect(),
        Side::Top => (0..w).map(|c| m.get(0, c)).collect(),
        Side::Bottom => (0..w).map(|c| m.get(h - 1, c)).collect(),
    }
}

/// ∞-norm of the standardized componentwise difference.
pub fn nodal_weight(c: &StiffnessComponents, target: &StiffnessComponents, scaler: &PropertyScaler) -> f64 {
    let (a, b) = (scaler.standardize(c), scaler.standardize(target));
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Share of solid boundary positions that face void on the other cell.
/// Two void strips count as fully disconnected.
pub fn geometric_incompat(a: &Microstructure, b: &Microstructure, orientation: Orientation) -> f64 {
    let (sa, sb) = orientation.sides();
    let (x, y) = (strip(a, sa), strip(b, sb));
    let union = x.iter().zip(&y).filter(|(p, q)| **p || **q).count();
    if union == 0 {
        return 1.0;
    }
    let mismatch = x.iter().zip(&y).filter(|(p, q)| p != q).count();
    mismatch as f64 / union as f64
}

/// Relative traction mismatch over the three unit strains. Traction-free
/// boundaries count as fully disconnected.
pub fn mechanical_incompat(a: &BoundaryStressTraces, b: &BoundaryStressTraces, orientation: Orientation) -> f64 {
    let (sa, sb) = orientation.sides();
    let (mut diff, mut sum) = (0.0, 0.0);
    for case in StrainCase::ALL {
        for (p, q) in a.get(sa, case).iter().zip(b.get(sb, case)) {
            diff += (p - q).abs();
            sum += p.abs() + q.abs();
        }
    }
    if sum <= EPS_DEN {
        1.0
    } else {
        diff / sum
    }
}

/// Weights of θ^G and θ^M in the pairwise term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncompatWeights {
    pub geometric: f64,
    pub mechanical: f64,
}

impl Default for IncompatWeights {
    fn default() -> Self {
        Self { geometric: 1.0, mechanical: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyParams {
    pub candidates: CandidateParams,
    pub weights: IncompatWeights,
    /// Times the admission threshold may be doubled for an element with no
    /// admissible record. Zero reports the element as infeasible.
    pub admission_relaxations: usize,
    pub threads: usize,
}

impl Default for AssemblyParams {
    fn default() -> Self {
        Self { candidates: CandidateParams::default(), weights: IncompatWeights::default(), admission_relaxations: 0, threads: 1 }
    }
}

/// Candidate cells per macro element and the MRF they define.
#[derive(Debug, Clone)]
pub struct AssemblyGraph {
    pub nx: usize,
    pub ny: usize,
    pub candidates: Vec<CandidateSet>,
    pub mrf: GridMrf,
    /// θ^G and θ^M tables, same layout as the MRF pairwise tables.
    pub geometric: EdgeTables,
    pub mechanical: EdgeTables,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeTables {
    pub horizontal: Vec<Vec<f64>>,
    pub vertical: Vec<Vec<f64>>,
}

struct Cell<'a> {
    structure: &'a Microstructure,
    traces: &'a BoundaryStressTraces,
}

fn pair_tables(a: &[Cell], b: &[Cell], o: Orientation) -> (Vec<f64>, Vec<f64>) {
    let mut g = Vec::with_capacity(a.len() * b.len());
    let mut m = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            g.push(geometric_incompat(x.structure, y.structure, o));
            m.push(mechanical_incompat(x.traces, y.traces, o));
        }
    }
    (g, m)
}

/// Candidate sets for every element of `field`, then all pairwise
/// incompatibility tables. Macro element `(i, j)` has row `j` counted from
/// the bottom, so its upper neighbour sits on top of it in the stitched image.
pub fn build_assembly_graph(
    field: &PropertyField,
    problem: &MacroProblem,
    db: &Database,
    params: &AssemblyParams,
) -> Result<AssemblyGraph, AssemblyError> {
    let (nx, ny) = (problem.nx, problem.ny);
    if field.values.len() != nx * ny {
        return Err(AssemblyError::FieldMismatch { got: field.values.len(), want: nx * ny });
    }
    let scaler = db.scaler();
    let sets: Vec<Result<CandidateSet, AssemblyError>> = par_map(&field.values, params.threads, |target| {
        let mut cp = params.candidates.clone();
        let mut attempt = 0;
        loop {
            match diverse_candidates(db, target, &cp) {
                Err(LatentOpsError::NoFeasibleCandidate(_)) if attempt < params.admission_relaxations => {
                    cp.admission_mse *= 2.0;
                    attempt += 1;
                }
                other => return other.map_err(|e| AssemblyError::NoCandidate { element: usize::MAX, source: e }),
            }
        }
    });
    let mut candidates = Vec::with_capacity(sets.len());
    for (e, s) in sets.into_iter().enumerate() {
        match s {
            Err(AssemblyError::NoCandidate { source, .. }) => return Err(AssemblyError::NoCandidate { element: e, source }),
            other => candidates.push(other?),
        }
    }

    let mut ids: Vec<u64> = candidates.iter().flat_map(|s| s.ids()).collect();
    ids.sort_unstable();
    ids.dedup();
    let hom = Homogenizer::new(db.height, db.width, db.material)?;
    let structures = ids
        .iter()
        .map(|id| db.get(*id).map(|r| &r.structure).ok_or(AssemblyError::MissingRecord(*id)))
        .collect::<Result<Vec<_>, _>>()?;
    let traces = par_map(&structures, params.threads, |m| hom.boundary_stress_traces(m))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let lookup: BTreeMap<u64, usize> = ids.iter().enumerate().map(|(k, id)| (*id, k)).collect();
    let cells: Vec<Vec<Cell>> = candidates
        .iter()
        .map(|s| {
            s.entries
                .iter()
                .map(|c| {
                    let k = lookup[&c.id];
                    Cell { structure: structures[k], traces: &traces[k] }
                })
                .collect()
        })
        .collect();

    // (upper-left or left cell, other cell, orientation) per edge
    let mut jobs: Vec<(usize, usize, Orientation)> = Vec::new();
    for j in 0..ny {
        for i in 0..nx - 1 {
            jobs.push((j * nx + i, j * nx + i + 1, Orientation::Horizontal));
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            // the upper element touches the lower one with its bottom strip
            jobs.push((j * nx + i + nx, j * nx + i, Orientation::Vertical));
        }
    }
    let tables = par_map(&jobs, params.threads, |&(a, b, o)| pair_tables(&cells[a], &cells[b], o));
    let mut geometric = EdgeTables::default();
    let mut mechanical = EdgeTables::default();
    let w = params.weights;
    let mut horizontal = Vec::new();
    let mut vertical = Vec::new();
    for (&(a, b, o), (g, m)) in jobs.iter().zip(tables) {
        let combined: Vec<f64> = g.iter().zip(&m).map(|(x, y)| w.geometric * x + w.mechanical * y).collect();
        match o {
            Orientation::Horizontal => {
                horizontal.push(combined);
                geometric.horizontal.push(g);
                mechanical.horizontal.push(m);
            }
            Orientation::Vertical => {
                // stored [lower][upper]; computed [upper][lower]
                let (nu, nl) = (cells[a].len(), cells[b].len());
                let t = |v: &[f64]| -> Vec<f64> { (0..nl * nu).map(|k| v[(k % nu) * nl + k / nu]).collect() };
                vertical.push(t(&combined));
                geometric.vertical.push(t(&g));
                mechanical.vertical.push(t(&m));
            }
        }
    }
    let unary = field
        .values
        .iter()
        .zip(&candidates)
        .map(|(target, s)| s.entries.iter().map(|c| nodal_weight(&c.properties, target, &scaler)).collect())
        .collect();
    Ok(AssemblyGraph { nx, ny, candidates, mrf: GridMrf { nx, ny, unary, horizontal, vertical }, geometric, mechanical })
}

impl AssemblyGraph {
    pub fn selected_ids(&self, labeling: &Labeling) -> Vec<u64> {
        self.candidates.iter().zip(&labeling.labels).map(|(s, &l)| s.entries[l].id).collect()
    }

    pub fn selected_properties(&self, labeling: &Labeling) -> Vec<StiffnessComponents> {
        self.candidates.iter().zip(&labeling.labels).map(|(s, &l)| s.entries[l].properties).collect()
    }

    /// `(θ^G, θ^M)` of every edge under `labels`, horizontal edges first.
    pub fn edge_scores(&self, labels: &[usize]) -> Vec<(f64, f64)> {
        let m = &self.mrf;
        let mut out = Vec::new();
        for j in 0..self.ny {
            for i in 0..self.nx.saturating_sub(1) {
                let (a, b) = (j * self.nx + i, j * self.nx + i + 1);
                let k = labels[a] * m.n_labels(b) + labels[b];
                out.push((self.geometric.horizontal[m.h_index(i, j)][k], self.mechanical.horizontal[m.h_index(i, j)][k]));
            }
        }
        for j in 0..self.ny.saturating_sub(1) {
            for i in 0..self.nx {
                let (a, b) = (j * self.nx + i, j * self.nx + i + self.nx);
                let k = labels[a] * m.n_labels(b) + labels[b];
                out.push((self.geometric.vertical[m.v_index(i, j)][k], self.mechanical.vertical[m.v_index(i, j)][k]));
            }
        }
        out
    }
}

/// Places cells into one bitmap: element `(i, j)` occupies block column `i`
/// and block row `ny − 1 − j`.
pub fn stitch(cells: &[Microstructure], nx: usize, ny: usize) -> Microstructure {
    let (h, w) = (cells[0].height(), cells[0].width());
    Microstructure::from_fn(ny * h, nx * w, |r, c| {
        let (bi, bj) = (c / w, ny - 1 - r / h);
        cells[bj * nx + bi].get(r % h, c % w)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyReport {
    pub structure: Microstructure,
    /// Macro objective and RRMSE with the chosen cells' own stiffness.
    pub objective: f64,
    pub rrmse: f64,
    pub mean_geometric: f64,
    pub mean_mechanical: f64,
    /// `(θ^G, θ^M)` per shared boundary, horizontal edges first.
    pub edges: Vec<(f64, f64)>,
    /// Boundaries on which both touching strips carry solid pixels.
    pub load_path_edges: usize,
    /// Load-path boundaries with θ^G = 1.
    pub disconnected_load_paths: usize,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Stitches the chosen cells, reruns the macro analysis with their stiffness
/// and summarises boundary quality.
pub fn evaluate_assembly(
    cells: &[Microstructure],
    properties: &[StiffnessComponents],
    problem: &MacroProblem,
    edges: Vec<(f64, f64)>,
) -> Result<AssemblyReport, AssemblyError> {
    let (nx, ny) = (problem.nx, problem.ny);
    if cells.len() != nx * ny || properties.len() != nx * ny {
        return Err(AssemblyError::FieldMismatch { got: cells.len(), want: nx * ny });
    }
    let u = assemble_and_solve(problem, &PropertyField::unbounded(properties.to_vec()))?;
    let (objective, rrmse) = objective_and_rrmse(&u, problem)?;
    let mut load_path_edges = 0;
    let mut disconnected_load_paths = 0;
    let mut k = 0;
    let mut visit = |a: &Microstructure, b: &Microstructure, o: Orientation| {
        let (sa, sb) = o.sides();
        if strip(a, sa).iter().any(|&x| x) && strip(b, sb).iter().any(|&x| x) {
            load_path_edges += 1;
            if edges[k].0 >= 1.0 {
                disconnected_load_paths += 1;
            }
        }
        k += 1;
    };
    for j in 0..ny {
        for i in 0..nx.saturating_sub(1) {
            visit(&cells[j * nx + i], &cells[j * nx + i + 1], Orientation::Horizontal);
        }
    }
    for j in 0..ny.saturating_sub(1) {
        for i in 0..nx {
            visit(&cells[j * nx + i + nx], &cells[j * nx + i], Orientation::Vertical);
        }
    }
    Ok(AssemblyReport {
        structure: stitch(cells, nx, ny),
        objective,
        rrmse,
        mean_geometric: mean(edges.iter().map(|e| e.0)),
        mean_mechanical: mean(edges.iter().map(|e| e.1)),
        edges,
        load_path_edges,
        disconnected_load_paths,
    })
}

/// Stitch and evaluate a solved assembly graph.
pub fn stitch_and_evaluate(
    labeling: &Labeling,
    graph: &AssemblyGraph,
    db: &Database,
    problem: &MacroProblem,
) -> Result<AssemblyReport, AssemblyError> {
    let cells = graph
        .selected_ids(labeling)
        .into_iter()
        .map(|id| db.get(id).map(|r| r.structure.clone()).ok_or(AssemblyError::MissingRecord(id)))
        .collect::<Result<Vec<_>, _>>()?;
    evaluate_assembly(&cells, &graph.selected_properties(labeling), problem, graph.edge_scores(&labeling.labels))
}

/// Cells realised from a family for per-element controlled values: the
/// latent vector is interpolated linearly in the controlled value between the
/// two bracketing members (clamped at the ends), decoded and homogenized.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyRealisation {
    pub cells: Vec<Microstructure>,
    pub properties: Vec<StiffnessComponents>,
}

pub fn realise_from_family(
    controlled: &[f64],
    family: &MetamaterialFamily,
    curve: &GradationCurve,
    model: &ModelParameters,
    homogenizer: &Homogenizer,
    threads: usize,
) -> Result<FamilyRealisation, AssemblyError> {
    if family.members.is_empty() {
        return Err(AssemblyError::EmptyFamily);
    }
    let values: Vec<f64> = family.members.iter().map(|m| curve.controlled_value(&m.properties)).collect();
    let latents: Vec<Vec<f64>> = controlled
        .iter()
        .map(|&c| {
            let k = values.partition_point(|&v| v <= c);
            if k == 0 {
                family.members[0].latent.clone()
            } else if k == values.len() {
                family.members[k - 1].latent.clone()
            } else {
                let t = (c - values[k - 1]) / (values[k] - values[k - 1]);
                let (a, b) = (&family.members[k - 1].latent, &family.members[k].latent);
                a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
            }
        })
        .collect();
    let cells = latents
        .iter()
        .map(|z| decode_to_structure(z, model))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| AssemblyError::Model(e.to_string()))?;
    let properties = par_map(&cells, threads, |m| homogenizer.homogenize(m)).into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(FamilyRealisation { cells, properties })
}

/// `(θ^G, θ^M)` for every shared boundary of a set of placed cells.
pub fn boundary_scores(cells: &[Microstructure], nx: usize, ny: usize, homogenizer: &Homogenizer, threads: usize) -> Result<Vec<(f64, f64)>, AssemblyError> {
    let traces = par_map(cells, threads, |m| homogenizer.boundary_stress_traces(m)).into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    for j in 0..ny {
        for i in 0..nx.saturating_sub(1) {
            let (a, b) = (j * nx + i, j * nx + i + 1);
            out.push((geometric_incompat(&cells[a], &cells[b], Orientation::Horizontal), mechanical_incompat(&traces[a], &traces[b], Orientation::Horizontal)));
        }
    }
    for j in 0..ny.saturating_sub(1) {
        for i in 0..nx {
            let (a, b) = (j * nx + i + nx, j * nx + i);
            out.push((geometric_incompat(&cells[a], &cells[b], Orientation::Vertical), mechanical_incompat(&traces[a], &traces[b], Orientation::Vertical)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homogenization::MaterialSpec;
    use crate::microstructure::seeds::SeedFamily;
    use crate::pipeline::Record;

    fn cells_from(rows: &[&str]) -> Microstructure {
        Microstructure::from_fn(rows.len(), rows[0].len(), |r, c| rows[r].as_bytes()[c] == b'1')
    }

    #[test]
    fn nodal_weight_is_the_max_norm() {
        let s = PropertyScaler::identity();
        let a = StiffnessComponents::new(1.0, 0.5, 1.0, 0.3);
        let b = StiffnessComponents::new(1.1, 0.5, 1.0, 0.3);
        assert!((nodal_weight(&a, &b, &s) - 0.1).abs() < 1e-12);
        assert_eq!(nodal_weight(&a, &b, &s), nodal_weight(&b, &a, &s));
        assert_eq!(nodal_weight(&a, &a, &s), 0.0);
    }

    #[test]
    fn geometric_incompatibility_counts_the_union() {
        // right column of a is 1100, left column of b is 0110
        let a = cells_from(&["01", "01", "00", "00"]);
        let b = cells_from(&["00", "10", "10", "00"]);
        assert!((geometric_incompat(&a, &b, Orientation::Horizontal) - 2.0 / 3.0).abs() < 1e-15);
        let solid = Microstructure::filled(4, 4, true);
        let void = Microstructure::filled(4, 4, false);
        assert_eq!(geometric_incompat(&solid, &void, Orientation::Vertical), 1.0);
        assert_eq!(geometric_incompat(&void, &void, Orientation::Horizontal), 1.0);
        assert_eq!(geometric_incompat(&solid, &solid, Orientation::Horizontal), 0.0);
    }

    #[test]
    fn geometric_incompatibility_is_reflection_consistent() {
        let a = cells_from(&["1001", "0110", "1100", "0011"]);
        let b = cells_from(&["0101", "0001", "1110", "0100"]);
        for o in [Orientation::Horizontal, Orientation::Vertical] {
            let v = geometric_incompat(&a, &b, o);
            assert!((0.0..=1.0).contains(&v));
        }
        let h = geometric_incompat(&a, &b, Orientation::Horizontal);
        assert_eq!(h, geometric_incompat(&b.mirror_horizontal(), &a.mirror_horizontal(), Orientation::Horizontal));
        let v = geometric_incompat(&a, &b, Orientation::Vertical);
        assert_eq!(v, geometric_incompat(&b.mirror_vertical(), &a.mirror_vertical(), Orientation::Vertical));
    }

    #[test]
    fn mechanical_incompatibility_rules() {
        let mat = MaterialSpec::default();
        let hom = Homogenizer::new(16, 16, mat).unwrap();
        let cross = SeedFamily::Cross { horizontal: 4, vertical: 4 }.render(16, 16).unwrap();
        let t = hom.boundary_stress_traces(&cross).unwrap();
        assert!(mechanical_incompat(&t, &t, Orientation::Horizontal) < 1e-10);
        assert!(mechanical_incompat(&t, &t, Orientation::Vertical) < 1e-10);
        let zero = BoundaryStressTraces::from_parts(std::array::from_fn(|_| std::array::from_fn(|_| vec![0.0; 16])));
        assert_eq!(mechanical_incompat(&t, &zero, Orientation::Horizontal), 1.0);
        assert_eq!(mechanical_incompat(&zero, &zero, Orientation::Vertical), 1.0);
    }

    #[test]
    fn equal_strips_with_different_interiors_differ_mechanically() {
        let mat = MaterialSpec::default();
        let hom = Homogenizer::new(16, 16, mat).unwrap();
        let frame = SeedFamily::Frame { horizontal: 3, vertical: 3, fillet: 0.0 }.render(16, 16).unwrap();
        let braced = Microstructure::from_fn(16, 16, |r, c| {
            frame.get(r, c) || (r as i64 - c as i64).abs() <= 1 || (r as i64 + c as i64 - 15).abs() <= 1
        });
        assert_eq!(geometric_incompat(&frame, &braced, Orientation::Horizontal), 0.0);
        let (ta, tb) = (hom.boundary_stress_traces(&frame).unwrap(), hom.boundary_stress_traces(&braced).unwrap());
        assert!(mechanical_incompat(&ta, &tb, Orientation::Horizontal) > 0.01);
    }

    fn small_db() -> Database {
        let mat = MaterialSpec::default();
        let hom = Homogenizer::new(16, 16, mat).unwrap();
        let mut db = Database::new(16, 16, 2, mat);
        let mut id = 0;
        for a in [2, 4, 6] {
            for b in [2, 4, 6] {
                let s = SeedFamily::Cross { horizontal: a, vertical: b }.render(16, 16).unwrap();
                let p = hom.homogenize(&s).unwrap();
                db.insert(Record { id, structure: s, properties: p, latent: Some(vec![a as f64, b as f64]) }).unwrap();
                id += 1;
            }
        }
        db
    }

    #[test]
    fn uniform_exact_target_uses_the_matching_record_everywhere() {
        let db = small_db();
        let problem = crate::macroopt::tip_shear_case(3, 2, 0.1);
        let target = db.records()[4].properties;
        let field = PropertyField::unbounded(vec![target; 6]);
        let params = AssemblyParams { candidates: CandidateParams { admission_mse: 0.5, n_clusters: 3, ..CandidateParams::default() }, threads: 2, ..AssemblyParams::default() };
        let g = build_assembly_graph(&field, &problem, &db, &params).unwrap();
        for s in &g.candidates {
            assert!(s.ids().contains(&4));
        }
        for t in g.mrf.horizontal.iter().chain(&g.mrf.vertical) {
            assert!(t.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
        // the same record on both sides of any edge costs nothing
        let pos: Vec<usize> = g.candidates.iter().map(|s| s.ids().iter().position(|&i| i == 4).unwrap()).collect();
        for (gs, ms) in g.edge_scores(&pos) {
            assert!(gs == 0.0 && ms < 1e-10);
        }
        let l = dd_mrf_solve(&g.mrf, &DdParams::default());
        assert!(l.converged);
        assert_eq!(g.selected_ids(&l), vec![4; 6]);
        let rep = stitch_and_evaluate(&l, &g, &db, &problem).unwrap();
        assert_eq!(rep.mean_geometric, 0.0);
        assert!(rep.mean_mechanical < 1e-10);
        let u = assemble_and_solve(&problem, &field).unwrap();
        let (_, want) = objective_and_rrmse(&u, &problem).unwrap();
        assert!((rep.rrmse - want).abs() < 1e-10);
        assert_eq!(rep.structure.height(), 32);
        assert_eq!(rep.structure.width(), 48);
        assert_eq!(rep.disconnected_load_paths, 0);
        assert_eq!(rep.load_path_edges, 7);
    }

    #[test]
    fn vertical_tables_are_lower_by_upper() {
        let db = small_db();
        let problem = crate::macroopt::tip_shear_case(1, 2, 0.1);
        let field = PropertyField::unbounded(vec![db.records()[0].properties, db.records()[8].properties]);
        let params = AssemblyParams { candidates: CandidateParams { admission_mse: 5.0, n_clusters: 3, ..CandidateParams::default() }, ..AssemblyParams::default() };
        let g = build_assembly_graph(&field, &problem, &db, &params).unwrap();
        let (lo, up) = (&g.candidates[0], &g.candidates[1]);
        for a in 0..lo.entries.len() {
            for b in 0..up.entries.len() {
                let want = geometric_incompat(&db.get(up.entries[b].id).unwrap().structure, &db.get(lo.entries[a].id).unwrap().structure, Orientation::Vertical);
                assert_eq!(g.geometric.vertical[0][a * up.entries.len() + b], want);
            }
        }
    }

    #[test]
    fn missing_candidates_name_the_element() {
        let db = small_db();
        let problem = crate::macroopt::tip_shear_case(2, 1, 0.1);
        let far = StiffnessComponents::new(9.0, 9.0, 9.0, 9.0);
        let field = PropertyField::unbounded(vec![db.records()[0].properties, far]);
        let err = build_assembly_graph(&field, &problem, &db, &AssemblyParams::default()).unwrap_err();
        assert!(matches!(err, AssemblyError::NoCandidate { element: 1, .. }));
    }

    #[test]
    fn stitching_places_the_bottom_row_last() {
        let a = Microstructure::filled(2, 2, true);
        let b = Microstructure::filled(2, 2, false);
        let s = stitch(&[a.clone(), b.clone()], 1, 2);
        assert!(s.get(3, 0) && !s.get(0, 0));
    }
}
