//! Macro-scale property optimization on a grid of unit quadrilateral elements.
//!
//! Every element carries its own orthotropic stiffness `C_e`. The objective is
//! the squared misfit between selected displacements and a target profile.
//! Feasibility of the properties is measured either against the database
//! region (signed distance field plus a smoothed Heaviside aggregate) or by
//! restricting every element to a gradation curve.

mod io;
mod mma;
mod optimize;
mod sdf;

pub use io::{read_field_csv, read_problem, write_field_csv, write_field_svg, write_history_csv, write_problem, ProblemFile};
pub use mma::{Mma, MmaError, MmaParams};
pub use optimize::{optimize_properties, DesignMode, IterRecord, OptimConfig, OptimResult};
pub use sdf::{aggregate_constraint, build_sdf, heaviside, SignedDistanceField};

use crate::fem::{self, ElementMatrix};
use crate::homogenization::StiffnessComponents;
use crate::sparse::{Factor, SolverError, SymmetricPattern, ELEMENT_DOFS};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MacroError {
    #[error("invalid macro problem: {0}")]
    InvalidProblem(String),
    #[error("macro solve failed: {0}")]
    SolverFailure(#[from] SolverError),
    #[error("RRMSE is undefined for a zero target")]
    UndefinedRrmse,
    #[error("degenerate property set: {0}")]
    Degenerate(String),
    #[error("property field does not match the problem: {0}")]
    FieldMismatch(String),
    #[error("optimizer failed: {0}")]
    Optimizer(String),
}

/// Displacement axis of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn offset(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
        }
    }
}

/// Boundary-value problem on an `nx × ny` grid of unit elements. Node `(i, j)`
/// sits at `x = i`, `y = j` and has id `j·(nx+1) + i`; element `(i, j)` has id
/// `j·nx + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroProblem {
    pub nx: usize,
    pub ny: usize,
    /// Prescribed DOFs with their values, in insertion order.
    pub dirichlet: Vec<(usize, f64)>,
    pub load: Vec<f64>,
    /// Target displacements; zero off the interest set.
    pub target: Vec<f64>,
    /// One at DOFs of interest, zero elsewhere.
    pub gamma: Vec<f64>,
}

impl MacroProblem {
    pub fn new(nx: usize, ny: usize) -> Self {
        let n = 2 * (nx + 1) * (ny + 1);
        Self { nx, ny, dirichlet: Vec::new(), load: vec![0.0; n], target: vec![0.0; n], gamma: vec![0.0; n] }
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.n_nodes()
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn dof(&self, node: usize, axis: Axis) -> usize {
        2 * node + axis.offset()
    }

    /// Node ids counter-clockwise from the lower-left corner.
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (i, j) = (e % self.nx, e / self.nx);
        [self.node(i, j), self.node(i + 1, j), self.node(i + 1, j + 1), self.node(i, j + 1)]
    }

    pub fn element_dofs(&self, e: usize) -> [usize; ELEMENT_DOFS] {
        let n = self.element_nodes(e);
        std::array::from_fn(|a| 2 * n[a / 2] + a % 2)
    }

    /// Prescribes (or re-prescribes) a displacement.
    pub fn prescribe(&mut self, node: usize, axis: Axis, value: f64) {
        let d = self.dof(node, axis);
        match self.dirichlet.iter_mut().find(|(k, _)| *k == d) {
            Some(entry) => entry.1 = value,
            None => self.dirichlet.push((d, value)),
        }
    }

    pub fn set_target(&mut self, node: usize, axis: Axis, value: f64) {
        let d = self.dof(node, axis);
        self.gamma[d] = 1.0;
        self.target[d] = value;
    }

    pub fn add_load(&mut self, node: usize, axis: Axis, value: f64) {
        let d = self.dof(node, axis);
        self.load[d] += value;
    }

    pub fn validate(&self) -> Result<(), MacroError> {
        let bad = |m: String| Err(MacroError::InvalidProblem(m));
        if self.nx == 0 || self.ny == 0 {
            return bad(format!("mesh {}x{} is empty", self.nx, self.ny));
        }
        let n = self.n_dofs();
        if self.load.len() != n || self.target.len() != n || self.gamma.len() != n {
            return bad("vector lengths do not match the mesh".into());
        }
        let mut seen = vec![false; n];
        for &(d, v) in &self.dirichlet {
            if d >= n {
                return bad(format!("prescribed DOF {d} outside the mesh"));
            }
            if seen[d] {
                return bad(format!("DOF {d} prescribed twice"));
            }
            if !v.is_finite() {
                return bad(format!("prescribed value at DOF {d} is not finite"));
            }
            seen[d] = true;
        }
        for d in 0..n {
            if self.gamma[d] != 0.0 && self.gamma[d] != 1.0 {
                return bad(format!("selector at DOF {d} is not binary"));
            }
            if self.gamma[d] * self.target[d] != self.target[d] {
                return bad(format!("target at DOF {d} lies outside the interest set"));
            }
            if !self.load[d].is_finite() || !self.target[d].is_finite() {
                return bad(format!("non-finite load or target at DOF {d}"));
            }
        }
        let prescribed: Vec<f64> = {
            let mut p = vec![f64::NAN; n];
            for &(d, v) in &self.dirichlet {
                p[d] = v;
            }
            p
        };
        for d in 0..n {
            if self.gamma[d] == 1.0 && seen[d] && (prescribed[d] - self.target[d]).abs() > 1e-12 {
                return bad(format!("DOF {d} is prescribed and targeted with different values"));
            }
        }
        Ok(())
    }
}

/// Per-element stiffness design with per-component box bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyField {
    pub values: Vec<StiffnessComponents>,
    pub lower: [f64; 4],
    pub upper: [f64; 4],
}

impl PropertyField {
    pub fn uniform(n: usize, c: StiffnessComponents, lower: [f64; 4], upper: [f64; 4]) -> Self {
        Self { values: vec![c; n], lower, upper }
    }

    pub fn unbounded(values: Vec<StiffnessComponents>) -> Self {
        Self { values, lower: [f64::NEG_INFINITY; 4], upper: [f64::INFINITY; 4] }
    }

    pub fn within_bounds(&self, tol: f64) -> bool {
        self.values.iter().all(|c| {
            c.to_array().iter().enumerate().all(|(k, v)| *v >= self.lower[k] - tol && *v <= self.upper[k] + tol)
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            values: self.values.iter().map(|c| c.scaled(s)).collect(),
            lower: self.lower.map(|v| v * s),
            upper: self.upper.map(|v| v * s),
        }
    }
}

/// Element stiffness contributions of each unit component. The `C12` basis
/// perturbs both symmetric off-diagonal entries.
fn component_bases() -> [ElementMatrix; 4] {
    [
        fem::element_stiffness(&fem::orthotropic(1.0, 0.0, 0.0, 0.0)),
        fem::element_stiffness(&fem::orthotropic(0.0, 1.0, 0.0, 0.0)),
        fem::element_stiffness(&fem::orthotropic(0.0, 0.0, 1.0, 0.0)),
        fem::element_stiffness(&fem::orthotropic(0.0, 0.0, 0.0, 1.0)),
    ]
}

fn combine(bases: &[ElementMatrix; 4], c: &StiffnessComponents) -> ElementMatrix {
    let w = c.to_array();
    let mut k = [[0.0; ELEMENT_DOFS]; ELEMENT_DOFS];
    for (b, wk) in bases.iter().zip(w) {
        for r in 0..ELEMENT_DOFS {
            for s in 0..ELEMENT_DOFS {
                k[r][s] += wk * b[r][s];
            }
        }
    }
    k
}

/// Mesh topology, DOF partition and cached symbolic factorization for one problem.
pub struct MacroModel {
    problem: MacroProblem,
    free_index: Vec<Option<usize>>,
    prescribed: Vec<f64>,
    pattern: SymmetricPattern,
    elem_global: Vec<[usize; ELEMENT_DOFS]>,
    bases: [ElementMatrix; 4],
}

/// Displacements plus the factor needed for the adjoint solve.
pub struct Analysis {
    pub u: Vec<f64>,
    factor: Factor,
}

impl MacroModel {
    pub fn new(problem: &MacroProblem) -> Result<Self, MacroError> {
        problem.validate()?;
        let n = problem.n_dofs();
        let mut prescribed = vec![0.0; n];
        let mut is_fixed = vec![false; n];
        for &(d, v) in &problem.dirichlet {
            prescribed[d] = v;
            is_fixed[d] = true;
        }
        let mut free_index = vec![None; n];
        let mut next = 0;
        for d in 0..n {
            if !is_fixed[d] {
                free_index[d] = Some(next);
                next += 1;
            }
        }
        if next == 0 {
            return Err(MacroError::InvalidProblem("every DOF is prescribed".into()));
        }
        let elem_global: Vec<[usize; ELEMENT_DOFS]> = (0..problem.n_elements()).map(|e| problem.element_dofs(e)).collect();
        let elem_free: Vec<[Option<usize>; ELEMENT_DOFS]> =
            elem_global.iter().map(|g| g.map(|d| free_index[d])).collect();
        let pattern = SymmetricPattern::from_elements(next, &elem_free)?;
        Ok(Self { problem: problem.clone(), free_index, prescribed, pattern, elem_global, bases: component_bases() })
    }

    pub fn problem(&self) -> &MacroProblem {
        &self.problem
    }

    pub fn element_stiffness(&self, c: &StiffnessComponents) -> ElementMatrix {
        combine(&self.bases, c)
    }

    fn check_field(&self, field: &PropertyField) -> Result<(), MacroError> {
        if field.values.len() != self.problem.n_elements() {
            return Err(MacroError::FieldMismatch(format!(
                "{} element properties for {} elements",
                field.values.len(),
                self.problem.n_elements()
            )));
        }
        if field.values.iter().any(|c| !c.is_finite()) {
            return Err(MacroError::FieldMismatch("non-finite element property".into()));
        }
        Ok(())
    }

    /// Assembles `K(C)` and solves the partitioned system for all DOFs.
    pub fn analyze(&self, field: &PropertyField) -> Result<Analysis, MacroError> {
        self.check_field(field)?;
        let mut values = self.pattern.zero_values();
        let mut rhs = vec![0.0; self.pattern.dim()];
        for (d, f) in self.problem.load.iter().enumerate() {
            if let Some(i) = self.free_index[d] {
                rhs[i] += f;
            }
        }
        for (e, dofs) in self.elem_global.iter().enumerate() {
            let ke = self.element_stiffness(&field.values[e]);
            self.pattern.scatter(&mut values, e, &ke, 1.0);
            for (a, &ga) in dofs.iter().enumerate() {
                let Some(ia) = self.free_index[ga] else { continue };
                for (b, &gb) in dofs.iter().enumerate() {
                    if self.free_index[gb].is_none() {
                        rhs[ia] -= ke[a][b] * self.prescribed[gb];
                    }
                }
            }
        }
        let factor = self.pattern.factor(values)?;
        let uf = factor.solve(&rhs)?;
        let u = (0..self.problem.n_dofs())
            .map(|d| match self.free_index[d] {
                Some(i) => uf[i],
                None => self.prescribed[d],
            })
            .collect();
        Ok(Analysis { u, factor })
    }

    /// `∂F/∂C_e` for every element, from a single adjoint solve on the free block.
    pub fn sensitivities(&self, field: &PropertyField, analysis: &Analysis) -> Result<Vec<[f64; 4]>, MacroError> {
        self.check_field(field)?;
        let p = &self.problem;
        let u = &analysis.u;
        let mut r = vec![0.0; self.pattern.dim()];
        for d in 0..p.n_dofs() {
            if let Some(i) = self.free_index[d] {
                r[i] = p.gamma[d] * (u[d] - p.target[d]);
            }
        }
        // η = K⁻¹ γ∘(u − u_t); the multiplier is 2η
        let eta_free = analysis.factor.solve(&r)?;
        let eta: Vec<f64> =
            (0..p.n_dofs()).map(|d| self.free_index[d].map_or(0.0, |i| eta_free[i])).collect();
        let half12 = self.bases[1].map(|row| row.map(|v| 0.5 * v));
        let grads = self
            .elem_global
            .iter()
            .map(|dofs| {
                let ue: [f64; ELEMENT_DOFS] = dofs.map(|d| u[d]);
                let he: [f64; ELEMENT_DOFS] = dofs.map(|d| eta[d]);
                [
                    -2.0 * fem::quadratic_form(&self.bases[0], &he, &ue),
                    -4.0 * fem::quadratic_form(&half12, &he, &ue),
                    -2.0 * fem::quadratic_form(&self.bases[2], &he, &ue),
                    -2.0 * fem::quadratic_form(&self.bases[3], &he, &ue),
                ]
            })
            .collect();
        Ok(grads)
    }

    /// Dense global stiffness over all DOFs, before any constraint is applied.
    pub fn global_stiffness_dense(&self, field: &PropertyField) -> Result<Vec<Vec<f64>>, MacroError> {
        self.check_field(field)?;
        let n = self.problem.n_dofs();
        let mut k = vec![vec![0.0; n]; n];
        for (e, dofs) in self.elem_global.iter().enumerate() {
            let ke = self.element_stiffness(&field.values[e]);
            for a in 0..ELEMENT_DOFS {
                for b in 0..ELEMENT_DOFS {
                    k[dofs[a]][dofs[b]] += ke[a][b];
                }
            }
        }
        Ok(k)
    }
}

/// Displacements of `problem` under `field`.
pub fn assemble_and_solve(problem: &MacroProblem, field: &PropertyField) -> Result<Vec<f64>, MacroError> {
    Ok(MacroModel::new(problem)?.analyze(field)?.u)
}

/// `F = ‖γ∘u − u_t‖²` and `RRMSE = ‖γ∘u − u_t‖ / ‖u_t‖`.
pub fn objective_and_rrmse(u: &[f64], problem: &MacroProblem) -> Result<(f64, f64), MacroError> {
    if u.len() != problem.n_dofs() {
        return Err(MacroError::FieldMismatch(format!("{} displacements for {} DOFs", u.len(), problem.n_dofs())));
    }
    let f: f64 = (0..u.len()).map(|d| (problem.gamma[d] * u[d] - problem.target[d]).powi(2)).sum();
    let norm_t = problem.target.iter().map(|t| t * t).sum::<f64>().sqrt();
    if norm_t == 0.0 {
        return Err(MacroError::UndefinedRrmse);
    }
    Ok((f, f.sqrt() / norm_t))
}

/// `∂F/∂C_e` for every element via the adjoint method.
pub fn adjoint_sensitivities(
    u: &[f64],
    problem: &MacroProblem,
    field: &PropertyField,
) -> Result<Vec<[f64; 4]>, MacroError> {
    let model = MacroModel::new(problem)?;
    let mut analysis = model.analyze(field)?;
    analysis.u = u.to_vec();
    model.sensitivities(field, &analysis)
}

/// Desk design case: an `nx × ny` beam clamped on the left edge and squeezed
/// horizontally on the right edge, whose top edge should rise into an arch.
pub fn arch_case(nx: usize, ny: usize, squeeze: f64, rise: f64) -> MacroProblem {
    let mut p = MacroProblem::new(nx, ny);
    for j in 0..=ny {
        let left = p.node(0, j);
        p.prescribe(left, Axis::X, 0.0);
        p.prescribe(left, Axis::Y, 0.0);
        let right = p.node(nx, j);
        p.prescribe(right, Axis::X, -squeeze);
        p.prescribe(right, Axis::Y, 0.0);
    }
    for i in 1..nx {
        let x = i as f64 / nx as f64;
        let top = p.node(i, ny);
        p.set_target(top, Axis::Y, rise * (std::f64::consts::PI * x).sin());
    }
    p
}

/// A cantilever whose free end is pulled down, targeting a straight-line
/// deflection of the top edge.
pub fn tip_shear_case(nx: usize, ny: usize, drop: f64) -> MacroProblem {
    let mut p = MacroProblem::new(nx, ny);
    for j in 0..=ny {
        let left = p.node(0, j);
        p.prescribe(left, Axis::X, 0.0);
        p.prescribe(left, Axis::Y, 0.0);
        let right = p.node(nx, j);
        p.prescribe(right, Axis::Y, -drop);
    }
    for i in 1..nx {
        let top = p.node(i, ny);
        p.set_target(top, Axis::Y, -drop * i as f64 / nx as f64);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn iso() -> StiffnessComponents {
        crate::homogenization::MaterialSpec::default().constituent()
    }

    fn random_field(n: usize, rng: &mut ChaCha8Rng) -> PropertyField {
        PropertyField::unbounded(
            (0..n)
                .map(|_| {
                    let c11: f64 = rng.random_range(0.3..1.2);
                    let c22 = rng.random_range(0.3..1.2);
                    let c12 = rng.random_range(0.0..0.25) * (c11 * c22).sqrt();
                    StiffnessComponents::new(c11, c12, c22, rng.random_range(0.05..0.3))
                })
                .collect(),
        )
    }

    fn fd_case(nx: usize, ny: usize) -> MacroProblem {
        let mut p = MacroProblem::new(nx, ny);
        for j in 0..=ny {
            let n = p.node(0, j);
            p.prescribe(n, Axis::X, 0.0);
            p.prescribe(n, Axis::Y, 0.0);
            let r = p.node(nx, j);
            p.prescribe(r, Axis::X, -0.1);
        }
        for i in 1..=nx {
            let n = p.node(i, ny);
            p.set_target(n, Axis::Y, 0.02 * i as f64);
            p.set_target(p.node(i, 0), Axis::Y, -0.01 * i as f64);
        }
        let tip = p.node(nx, ny);
        p.add_load(tip, Axis::Y, 0.05);
        p
    }

    #[test]
    fn patch_test_reproduces_linear_field() {
        let mut p = MacroProblem::new(2, 2);
        let lin = |x: f64, y: f64| (0.01 * x + 0.02 * y + 0.003, -0.015 * x + 0.005 * y - 0.002);
        for j in 0..=2 {
            for i in 0..=2 {
                if i == 1 && j == 1 {
                    continue;
                }
                let (ux, uy) = lin(i as f64, j as f64);
                let n = p.node(i, j);
                p.prescribe(n, Axis::X, ux);
                p.prescribe(n, Axis::Y, uy);
            }
        }
        let field = PropertyField::unbounded(vec![iso(); 4]);
        let u = assemble_and_solve(&p, &field).unwrap();
        let (ux, uy) = lin(1.0, 1.0);
        let c = p.node(1, 1);
        assert!((u[2 * c] - ux).abs() < 1e-10 && (u[2 * c + 1] - uy).abs() < 1e-10);
    }

    #[test]
    fn rigid_translation_is_in_the_null_space() {
        let p = MacroProblem::new(3, 2);
        let model = MacroModel::new(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let field = random_field(6, &mut rng);
        let k = model.global_stiffness_dense(&field).unwrap();
        for axis in 0..2 {
            let t: Vec<f64> = (0..p.n_dofs()).map(|d| if d % 2 == axis { 1.0 } else { 0.0 }).collect();
            for row in &k {
                let v: f64 = row.iter().zip(&t).map(|(a, b)| a * b).sum();
                assert!(v.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn global_stiffness_is_symmetric() {
        let p = MacroProblem::new(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let field = random_field(12, &mut rng);
        let k = MacroModel::new(&p).unwrap().global_stiffness_dense(&field).unwrap();
        for i in 0..k.len() {
            for j in 0..k.len() {
                assert!((k[i][j] - k[j][i]).abs() < 1e-12);
            }
        }
    }

    fn clamped_compression(nx: usize, ny: usize, squeeze: f64) -> MacroProblem {
        let mut p = MacroProblem::new(nx, ny);
        for j in 0..=ny {
            let l = p.node(0, j);
            p.prescribe(l, Axis::X, 0.0);
            p.prescribe(l, Axis::Y, 0.0);
            let r = p.node(nx, j);
            p.prescribe(r, Axis::X, -squeeze);
        }
        p
    }

    #[test]
    fn coarse_mesh_agrees_with_refined_mesh() {
        let (nx, ny, s) = (10, 4, 0.1);
        let refine = 4;
        let coarse = clamped_compression(nx, ny, s);
        let fine = clamped_compression(nx * refine, ny * refine, s * refine as f64);
        let uc = assemble_and_solve(&coarse, &PropertyField::unbounded(vec![iso(); nx * ny])).unwrap();
        let uf = assemble_and_solve(&fine, &PropertyField::unbounded(vec![iso(); nx * ny * refine * refine])).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..=ny {
            for i in 0..=nx {
                let (a, b) = (coarse.node(i, j), fine.node(i * refine, j * refine));
                for k in 0..2 {
                    let ufk = uf[2 * b + k] / refine as f64;
                    num += (uc[2 * a + k] - ufk).powi(2);
                    den += ufk.powi(2);
                }
            }
        }
        let err = (num / den).sqrt();
        assert!(err < 0.01, "relative error {err}");
    }

    #[test]
    fn objective_and_rrmse_edge_cases() {
        let mut p = MacroProblem::new(1, 1);
        let n = p.node(1, 1);
        p.set_target(n, Axis::Y, 0.3);
        let mut u = vec![0.0; p.n_dofs()];
        assert_eq!(objective_and_rrmse(&u, &p).unwrap(), (0.09, 1.0));
        u[2 * n + 1] = 0.3;
        u[0] = 5.0;
        assert_eq!(objective_and_rrmse(&u, &p).unwrap(), (0.0, 0.0));
        let empty = MacroProblem::new(1, 1);
        assert_eq!(objective_and_rrmse(&u, &empty), Err(MacroError::UndefinedRrmse));
    }

    #[test]
    fn attained_target_has_zero_sensitivity() {
        let base = fd_case(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let field = random_field(6, &mut rng);
        let u = assemble_and_solve(&base, &field).unwrap();
        let mut p = base.clone();
        for d in 0..p.n_dofs() {
            if p.gamma[d] == 1.0 {
                p.target[d] = u[d];
            }
        }
        let g = adjoint_sensitivities(&u, &p, &field).unwrap();
        assert!(g.iter().flatten().all(|v| v.abs() < 1e-14));
    }

    fn objective(p: &MacroProblem, field: &PropertyField) -> f64 {
        objective_and_rrmse(&assemble_and_solve(p, field).unwrap(), p).unwrap().0
    }

    #[test]
    fn adjoint_matches_central_differences() {
        for (nx, ny, seed) in [(3, 3, 4), (4, 4, 5), (2, 3, 6)] {
            let p = fd_case(nx, ny);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let field = random_field(nx * ny, &mut rng);
            let u = assemble_and_solve(&p, &field).unwrap();
            let g = adjoint_sensitivities(&u, &p, &field).unwrap();
            let h = 1e-6;
            let scale = g.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            for e in 0..nx * ny {
                for k in 0..4 {
                    let mut fp = field.clone();
                    let mut fm = field.clone();
                    let mut a = fp.values[e].to_array();
                    a[k] += h;
                    fp.values[e] = StiffnessComponents::from_array(a);
                    let mut b = fm.values[e].to_array();
                    b[k] -= h;
                    fm.values[e] = StiffnessComponents::from_array(b);
                    let fd = (objective(&p, &fp) - objective(&p, &fm)) / (2.0 * h);
                    let err = (g[e][k] - fd).abs() / fd.abs().max(1e-3 * scale);
                    assert!(err < 1e-4, "e={e} k={k} adjoint={} fd={fd}", g[e][k]);
                }
            }
        }
    }

    #[test]
    fn off_diagonal_factor_matches_symmetric_perturbation() {
        let p = fd_case(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let field = random_field(9, &mut rng);
        let model = MacroModel::new(&p).unwrap();
        let a = model.analyze(&field).unwrap();
        let g = model.sensitivities(&field, &a).unwrap();
        // the tensor built from C12 carries it in both symmetric entries
        let h = 1e-6;
        let solve_with = |e: usize, dh: f64| {
            let mut f = field.clone();
            f.values[e].c12 += dh;
            objective(&p, &f)
        };
        for e in 0..9 {
            let fd = (solve_with(e, h) - solve_with(e, -h)) / (2.0 * h);
            assert!((g[e][1] - fd).abs() <= 1e-4 * fd.abs().max(1e-8), "e={e}: {} vs {fd}", g[e][1]);
        }
    }

    #[test]
    fn uniform_scaling_leaves_displacements_unchanged() {
        let p = arch_case(6, 3, 0.1, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let field = random_field(18, &mut rng);
        let u1 = assemble_and_solve(&p, &field).unwrap();
        let u2 = assemble_and_solve(&p, &field.scaled(7.5)).unwrap();
        for (a, b) in u1.iter().zip(&u2) {
            assert!((a - b).abs() < 1e-12);
        }
        let (f1, r1) = objective_and_rrmse(&u1, &p).unwrap();
        let (f2, r2) = objective_and_rrmse(&u2, &p).unwrap();
        assert!((f1 - f2).abs() < 1e-12 && (r1 - r2).abs() < 1e-12);
    }

    #[test]
    fn invalid_problems_are_rejected() {
        let mut p = MacroProblem::new(2, 2);
        p.dirichlet.push((0, 0.0));
        p.dirichlet.push((0, 1.0));
        assert!(matches!(p.validate(), Err(MacroError::InvalidProblem(_))));
        let mut q = MacroProblem::new(2, 2);
        q.target[3] = 1.0;
        assert!(q.validate().is_err());
        let r = MacroProblem::new(2, 2);
        let field = PropertyField::unbounded(vec![iso(); 3]);
        assert!(matches!(assemble_and_solve(&r, &field), Err(MacroError::FieldMismatch(_))));
    }

    #[test]
    fn unconstrained_mesh_is_singular() {
        let p = MacroProblem::new(2, 2);
        let field = PropertyField::unbounded(vec![iso(); 4]);
        assert!(matches!(assemble_and_solve(&p, &field), Err(MacroError::SolverFailure(_))));
    }
}
