//! Energy-based periodic homogenization of pixel unit cells under plane stress.
//!
//! Each pixel is one bilinear element of unit size. Opposite cell edges share
//! nodes (periodic master–slave elimination) and node 0 is pinned. The three
//! unit macroscopic strains are solved with a single factorization and the
//! effective tensor is read off the element strain energies.

use crate::fem::{self, ElementMatrix};
use crate::microstructure::{Microstructure, Side};
use crate::sparse::{SolverError, SymmetricPattern, ELEMENT_DOFS};
use faer::Mat;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomogenizationError {
    #[error("unit cell has no solid material")]
    EmptyMicrostructure,
    #[error("cell problem could not be solved: {0}")]
    SolverFailure(#[from] SolverError),
    #[error("homogenizer built for {expected:?}, got a {actual:?} cell")]
    ShapeMismatch { expected: (usize, usize), actual: (usize, usize) },
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
}

/// Constituent material of the solid phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialSpec {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// Ersatz stiffness of void pixels relative to the solid.
    pub void_stiffness_ratio: f64,
}

impl Default for MaterialSpec {
    fn default() -> Self {
        Self { youngs_modulus: 1.0, poisson_ratio: 0.49, void_stiffness_ratio: 1e-6 }
    }
}

impl MaterialSpec {
    pub fn validate(&self) -> Result<(), HomogenizationError> {
        if !(self.youngs_modulus > 0.0) {
            return Err(HomogenizationError::InvalidMaterial(format!("E = {}", self.youngs_modulus)));
        }
        if !(self.poisson_ratio > -1.0 && self.poisson_ratio < 0.5) {
            return Err(HomogenizationError::InvalidMaterial(format!("nu = {}", self.poisson_ratio)));
        }
        if !(self.void_stiffness_ratio > 0.0 && self.void_stiffness_ratio < 1e-3) {
            return Err(HomogenizationError::InvalidMaterial(format!("void ratio = {}", self.void_stiffness_ratio)));
        }
        Ok(())
    }

    /// Plane-stress stiffness of the solid constituent.
    pub fn constituent(&self) -> StiffnessComponents {
        let d = fem::plane_stress(self.youngs_modulus, self.poisson_ratio);
        StiffnessComponents::new(d[0][0], d[0][1], d[1][1], d[2][2])
    }
}

/// Independent entries of an orthotropic plane stiffness matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StiffnessComponents {
    pub c11: f64,
    pub c12: f64,
    pub c22: f64,
    pub c33: f64,
}

impl StiffnessComponents {
    pub const NAMES: [&'static str; 4] = ["C11", "C12", "C22", "C33"];

    pub const fn new(c11: f64, c12: f64, c22: f64, c33: f64) -> Self {
        Self { c11, c12, c22, c33 }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.c11, self.c12, self.c22, self.c33]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn is_positive_semidefinite(&self) -> bool {
        self.c11 >= 0.0 && self.c22 >= 0.0 && self.c33 >= 0.0 && self.c11 * self.c22 - self.c12 * self.c12 >= -1e-9
    }

    pub fn constitutive(&self) -> fem::Constitutive {
        fem::orthotropic(self.c11, self.c12, self.c22, self.c33)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_array(self.to_array().map(|v| v * s))
    }
}

/// Per-component affine standardization of stiffness tuples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropertyScaler {
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

impl PropertyScaler {
    pub fn identity() -> Self {
        Self { mean: [0.0; 4], std: [1.0; 4] }
    }

    /// Population mean and standard deviation per component; a constant
    /// component keeps unit scale.
    pub fn fit(samples: &[StiffnessComponents]) -> Self {
        let n = samples.len().max(1) as f64;
        let mut mean = [0.0; 4];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s.to_array()) {
                *m += v / n;
            }
        }
        let mut var = [0.0; 4];
        for s in samples {
            for k in 0..4 {
                var[k] += (s.to_array()[k] - mean[k]).powi(2) / n;
            }
        }
        let std = var.map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 });
        Self { mean, std }
    }

    pub fn standardize(&self, c: &StiffnessComponents) -> [f64; 4] {
        let a = c.to_array();
        std::array::from_fn(|k| (a[k] - self.mean[k]) / self.std[k])
    }

    pub fn destandardize(&self, z: &[f64; 4]) -> StiffnessComponents {
        StiffnessComponents::from_array(std::array::from_fn(|k| z[k] * self.std[k] + self.mean[k]))
    }

    /// Mean squared error over the four standardized components.
    pub fn mse(&self, a: &StiffnessComponents, b: &StiffnessComponents) -> f64 {
        let (za, zb) = (self.standardize(a), self.standardize(b));
        za.iter().zip(zb.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 4.0
    }

    pub fn distance(&self, a: &StiffnessComponents, b: &StiffnessComponents) -> f64 {
        (4.0 * self.mse(a, b)).sqrt()
    }
}

/// Unit macroscopic strain cases, engineering shear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrainCase {
    E11,
    E22,
    E12,
}

impl StrainCase {
    pub const ALL: [StrainCase; 3] = [StrainCase::E11, StrainCase::E22, StrainCase::E12];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Traction magnitudes across each boundary pixel face, per side and strain case.
/// Left/right vectors run top to bottom, top/bottom vectors run left to right.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryStressTraces {
    traces: [[Vec<f64>; 3]; 4],
}

impl BoundaryStressTraces {
    fn side_index(side: Side) -> usize {
        match side {
            Side::Left => 0,
            Side::Right => 1,
            Side::Top => 2,
            Side::Bottom => 3,
        }
    }

    /// Builds traces from per-side, per-case vectors in `Side::ALL` and `StrainCase::ALL` order.
    pub fn from_parts(traces: [[Vec<f64>; 3]; 4]) -> Self {
        Self { traces }
    }

    pub fn get(&self, side: Side, case: StrainCase) -> &[f64] {
        &self.traces[Self::side_index(side)][case.index()]
    }
}

/// Nodal displacements of each unit strain on a unit element.
const UNIT_STRAIN_DISPLACEMENTS: [[f64; ELEMENT_DOFS]; 3] = [
    [0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0],
    [0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5, 0.0],
];

/// Reusable cell solver for one grid size and material.
#[derive(Debug, Clone)]
pub struct Homogenizer {
    height: usize,
    width: usize,
    material: MaterialSpec,
    pattern: SymmetricPattern,
    elem_dofs: Vec<[Option<usize>; ELEMENT_DOFS]>,
    unit_ke: ElementMatrix,
    unit_loads: [[f64; ELEMENT_DOFS]; 3],
}

struct CellSolution {
    /// Periodic fluctuation per strain case, reduced DOF numbering.
    chi: Mat<f64>,
    moduli: Vec<f64>,
}

impl Homogenizer {
    pub fn new(height: usize, width: usize, material: MaterialSpec) -> Result<Self, HomogenizationError> {
        material.validate()?;
        let node = |i: usize, j: usize| (i % height) * width + (j % width);
        let dof = |n: usize, d: usize| if n == 0 { None } else { Some(2 * n + d - 2) };
        let mut elem_dofs = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                // counter-clockwise from lower-left, y pointing up
                let nodes = [node(r + 1, c), node(r + 1, c + 1), node(r, c + 1), node(r, c)];
                let mut dofs = [None; ELEMENT_DOFS];
                for (a, &n) in nodes.iter().enumerate() {
                    dofs[2 * a] = dof(n, 0);
                    dofs[2 * a + 1] = dof(n, 1);
                }
                elem_dofs.push(dofs);
            }
        }
        let n = 2 * height * width - 2;
        let pattern = SymmetricPattern::from_elements(n, &elem_dofs)?;
        let unit_ke = fem::element_stiffness(&fem::plane_stress(1.0, material.poisson_ratio));
        let unit_loads = UNIT_STRAIN_DISPLACEMENTS.map(|u0| fem::mat_vec(&unit_ke, &u0));
        Ok(Self { height, width, material, pattern, elem_dofs, unit_ke, unit_loads })
    }

    pub fn material(&self) -> &MaterialSpec {
        &self.material
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn solve(&self, m: &Microstructure) -> Result<CellSolution, HomogenizationError> {
        if (m.height(), m.width()) != (self.height, self.width) {
            return Err(HomogenizationError::ShapeMismatch {
                expected: (self.height, self.width),
                actual: (m.height(), m.width()),
            });
        }
        if m.solid_count() == 0 {
            return Err(HomogenizationError::EmptyMicrostructure);
        }
        let e = self.material.youngs_modulus;
        let moduli: Vec<f64> =
            m.cells().iter().map(|&c| if c == 1 { e } else { e * self.material.void_stiffness_ratio }).collect();
        let mut values = self.pattern.zero_values();
        let mut rhs = Mat::<f64>::zeros(self.pattern.dim(), 3);
        for (el, dofs) in self.elem_dofs.iter().enumerate() {
            self.pattern.scatter(&mut values, el, &self.unit_ke, moduli[el]);
            for (a, g) in dofs.iter().enumerate() {
                if let Some(g) = g {
                    for k in 0..3 {
                        rhs[(*g, k)] += moduli[el] * self.unit_loads[k][a];
                    }
                }
            }
        }
        let factor = self.pattern.factor(values)?;
        factor.solve_columns(&mut rhs);
        if (0..rhs.nrows()).any(|i| (0..3).any(|k| !rhs[(i, k)].is_finite())) {
            return Err(SolverError::NotPositiveDefinite.into());
        }
        Ok(CellSolution { chi: rhs, moduli })
    }

    /// Total element displacement `u0 - χ` for strain case `k`.
    fn element_field(&self, sol: &CellSolution, el: usize, k: usize) -> [f64; ELEMENT_DOFS] {
        let mut u = UNIT_STRAIN_DISPLACEMENTS[k];
        for (a, g) in self.elem_dofs[el].iter().enumerate() {
            if let Some(g) = g {
                u[a] -= sol.chi[(*g, k)];
            }
        }
        u
    }

    /// Full effective 3×3 tensor `[[C11, C12, C13], [C12, C22, C23], [C13, C23, C33]]`.
    pub fn homogenize_full(&self, m: &Microstructure) -> Result<[[f64; 3]; 3], HomogenizationError> {
        let sol = self.solve(m)?;
        let mut ch = [[0.0; 3]; 3];
        for el in 0..self.elem_dofs.len() {
            let fields: [[f64; ELEMENT_DOFS]; 3] = std::array::from_fn(|k| self.element_field(&sol, el, k));
            let kf: [[f64; ELEMENT_DOFS]; 3] = std::array::from_fn(|k| fem::mat_vec(&self.unit_ke, &fields[k]));
            for k in 0..3 {
                for l in k..3 {
                    let v: f64 = (0..ELEMENT_DOFS).map(|a| fields[k][a] * kf[l][a]).sum();
                    ch[k][l] += sol.moduli[el] * v;
                }
            }
        }
        let area = (self.height * self.width) as f64;
        for k in 0..3 {
            for l in k..3 {
                ch[k][l] /= area;
                ch[l][k] = ch[k][l];
            }
        }
        Ok(ch)
    }

    pub fn homogenize(&self, m: &Microstructure) -> Result<StiffnessComponents, HomogenizationError> {
        let ch = self.homogenize_full(m)?;
        Ok(StiffnessComponents::new(ch[0][0], ch[0][1], ch[1][1], ch[2][2]))
    }

    /// Traction magnitude on the outer face of every boundary pixel, evaluated
    /// at the face midpoint from the element's own stress. Void boundary pixels
    /// carry no traction.
    pub fn boundary_stress_traces(&self, m: &Microstructure) -> Result<BoundaryStressTraces, HomogenizationError> {
        let sol = self.solve(m)?;
        let (h, w) = (self.height, self.width);
        let d_unit = fem::plane_stress(1.0, self.material.poisson_ratio);
        let traction = |r: usize, c: usize, k: usize, side: Side| -> f64 {
            if !m.get(r, c) {
                return 0.0;
            }
            let el = r * w + c;
            let (xi, eta) = match side {
                Side::Left => (-1.0, 0.0),
                Side::Right => (1.0, 0.0),
                Side::Top => (0.0, 1.0),
                Side::Bottom => (0.0, -1.0),
            };
            let u = self.element_field(&sol, el, k);
            let strain = fem::strain_at(&fem::strain_displacement(xi, eta), &u);
            let s = fem::mat3_vec(&d_unit, &strain).map(|v| v * sol.moduli[el]);
            match side {
                Side::Left | Side::Right => s[0].hypot(s[2]),
                Side::Top | Side::Bottom => s[2].hypot(s[1]),
            }
        };
        let traces = Side::ALL.map(|side| {
            StrainCase::ALL.map(|case| {
                let k = case.index();
                match side {
                    Side::Left => (0..h).map(|r| traction(r, 0, k, side)).collect(),
                    Side::Right => (0..h).map(|r| traction(r, w - 1, k, side)).collect(),
                    Side::Top => (0..w).map(|c| traction(0, c, k, side)).collect(),
                    Side::Bottom => (0..w).map(|c| traction(h - 1, c, k, side)).collect(),
                }
            })
        });
        Ok(BoundaryStressTraces { traces })
    }
}

/// One-off homogenization; batch callers should reuse a [`Homogenizer`].
pub fn homogenize(m: &Microstructure, mat: &MaterialSpec) -> Result<StiffnessComponents, HomogenizationError> {
    Homogenizer::new(m.height(), m.width(), *mat)?.homogenize(m)
}

pub fn boundary_stress_traces(m: &Microstructure, mat: &MaterialSpec) -> Result<BoundaryStressTraces, HomogenizationError> {
    Homogenizer::new(m.height(), m.width(), *mat)?.boundary_stress_traces(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microstructure::{enforce_orthotropic_symmetry, seeds::SeedFamily};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn solid_cell_returns_constituent() {
        let c = homogenize(&Microstructure::filled(50, 50, true), &MaterialSpec::default()).unwrap();
        let nu: f64 = 0.49;
        let exact = [1.0 / (1.0 - nu * nu), nu / (1.0 - nu * nu), 1.0 / (1.0 - nu * nu), 0.5 / (1.0 + nu)];
        for (got, want) in c.to_array().iter().zip(exact) {
            assert!(rel(*got, want) < 1e-6, "{c:?}");
        }
        let printed = [1.315963, 0.644822, 1.315963, 0.335570];
        for (got, want) in c.to_array().iter().zip(printed) {
            assert!((got - want).abs() < 5e-7, "{c:?}");
        }
    }

    #[test]
    fn void_cell_is_rejected() {
        let err = homogenize(&Microstructure::filled(10, 10, false), &MaterialSpec::default()).unwrap_err();
        assert_eq!(err, HomogenizationError::EmptyMicrostructure);
    }

    #[test]
    fn transpose_swaps_axes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Microstructure::from_fn(20, 20, |_, _| rng.random_bool(0.7));
        let mat = MaterialSpec::default();
        let a = homogenize(&m, &mat).unwrap();
        let b = homogenize(&m.transpose(), &mat).unwrap();
        assert!((a.c11 - b.c22).abs() < 1e-8);
        assert!((a.c22 - b.c11).abs() < 1e-8);
        assert!((a.c12 - b.c12).abs() < 1e-8);
        assert!((a.c33 - b.c33).abs() < 1e-8);
    }

    #[test]
    fn symmetric_cells_have_no_coupling_terms() {
        let hz = Homogenizer::new(50, 50, MaterialSpec::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let raw = Microstructure::from_fn(50, 50, |_, _| rng.random_bool(0.6));
            let m = enforce_orthotropic_symmetry(&raw).unwrap();
            let ch = hz.homogenize_full(&m).unwrap();
            assert!(ch[0][2].abs() < 1e-8 * ch[0][0], "C13 = {}", ch[0][2]);
            assert!(ch[1][2].abs() < 1e-8 * ch[0][0], "C23 = {}", ch[1][2]);
        }
    }

    #[test]
    fn homogenized_values_are_bounded_by_constituent() {
        let mat = MaterialSpec::default();
        let hz = Homogenizer::new(50, 50, mat).unwrap();
        let solid = mat.constituent();
        for fam in [
            SeedFamily::Cross { horizontal: 6, vertical: 10 },
            SeedFamily::XBrace { thickness: 5.0, hub: 4.0 },
            SeedFamily::HolePlate { rx: 15.0, ry: 9.0 },
        ] {
            let c = hz.homogenize(&fam.render(50, 50).unwrap()).unwrap();
            assert!(c.is_positive_semidefinite());
            assert!(c.c11 <= solid.c11 * (1.0 + 1e-6));
            assert!(c.c22 <= solid.c22 * (1.0 + 1e-6));
            assert!(c.c33 <= solid.c33 * (1.0 + 1e-6));
        }
    }

    #[test]
    fn adding_material_does_not_soften() {
        let mat = MaterialSpec::default();
        let hz = Homogenizer::new(16, 16, mat).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut violations = 0;
        for _ in 0..100 {
            let m = Microstructure::from_fn(16, 16, |_, _| rng.random_bool(0.6));
            let voids: Vec<usize> = (0..256).filter(|&i| m.cells()[i] == 0).collect();
            if voids.is_empty() || m.solid_count() == 0 {
                continue;
            }
            let i = voids[rng.random_range(0..voids.len())];
            let mut stiffer = m.clone();
            stiffer.set(i / 16, i % 16, true);
            let (a, b) = (hz.homogenize(&m).unwrap(), hz.homogenize(&stiffer).unwrap());
            if b.c11 < a.c11 - 1e-9 {
                violations += 1;
            }
        }
        assert_eq!(violations, 0);
    }

    #[test]
    fn solid_cell_traces_equal_constituent() {
        let mat = MaterialSpec::default();
        let t = boundary_stress_traces(&Microstructure::filled(10, 10, true), &mat).unwrap();
        let c = mat.constituent();
        for v in t.get(Side::Right, StrainCase::E11) {
            assert!((v - c.c11).abs() < 1e-10);
        }
        for v in t.get(Side::Top, StrainCase::E12) {
            assert!((v - c.c33).abs() < 1e-10);
        }
    }

    #[test]
    fn void_boundary_column_has_zero_traces() {
        let m = Microstructure::from_fn(12, 12, |_, c| c != 0 && c != 11);
        let t = boundary_stress_traces(&m, &MaterialSpec::default()).unwrap();
        for case in StrainCase::ALL {
            assert!(t.get(Side::Left, case).iter().all(|&v| v.abs() < 1e-4));
            assert!(t.get(Side::Right, case).iter().all(|&v| v.abs() < 1e-4));
        }
    }

    #[test]
    fn traces_are_periodic_for_symmetric_cells() {
        let hz = Homogenizer::new(50, 50, MaterialSpec::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let raw = Microstructure::from_fn(50, 50, |_, _| rng.random_bool(0.65));
        let m = enforce_orthotropic_symmetry(&raw).unwrap();
        let t = hz.boundary_stress_traces(&m).unwrap();
        for case in StrainCase::ALL {
            for (a, b) in t.get(Side::Left, case).iter().zip(t.get(Side::Right, case)) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
            for (a, b) in t.get(Side::Top, case).iter().zip(t.get(Side::Bottom, case)) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn homogenization_is_deterministic() {
        let m = SeedFamily::HolePlate { rx: 12.0, ry: 17.0 }.render(50, 50).unwrap();
        let mat = MaterialSpec::default();
        let a = homogenize(&m, &mat).unwrap();
        let b = homogenize(&m, &mat).unwrap();
        assert_eq!(a.to_array().map(f64::to_bits), b.to_array().map(f64::to_bits));
    }

    #[test]
    fn scaler_round_trips() {
        let samples = vec![
            StiffnessComponents::new(1.0, 0.2, 0.5, 0.1),
            StiffnessComponents::new(0.4, 0.1, 0.9, 0.3),
            StiffnessComponents::new(0.7, 0.0, 0.2, 0.2),
        ];
        let s = PropertyScaler::fit(&samples);
        let z = s.standardize(&samples[1]);
        let back = s.destandardize(&z);
        for (a, b) in back.to_array().iter().zip(samples[1].to_array()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(s.mse(&samples[0], &samples[0]), 0.0);
    }
}
