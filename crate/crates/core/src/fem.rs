//! Bilinear four-node quadrilateral on a unit square, 2×2 Gauss quadrature.
//!
//! Local node order is counter-clockwise from the lower-left corner:
//! (0,0), (1,0), (1,1), (0,1); DOFs are interleaved `[ux0, uy0, ux1, ...]`.
//! Strains use engineering shear, `[εxx, εyy, γxy]`.

use crate::sparse::ELEMENT_DOFS;

pub type ElementMatrix = [[f64; ELEMENT_DOFS]; ELEMENT_DOFS];
pub type Constitutive = [[f64; 3]; 3];
pub type StrainDisplacement = [[f64; ELEMENT_DOFS]; 3];

const NODE_XI: [f64; 4] = [-1.0, 1.0, 1.0, -1.0];
const NODE_ETA: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];

/// Gauss points (ξ, η); all weights are one.
pub fn gauss_points() -> [(f64, f64); 4] {
    let g = 1.0 / 3f64.sqrt();
    [(-g, -g), (g, -g), (g, g), (-g, g)]
}

/// Strain-displacement matrix at natural coordinates (ξ, η) of a unit square.
pub fn strain_displacement(xi: f64, eta: f64) -> StrainDisplacement {
    let mut b = [[0.0; ELEMENT_DOFS]; 3];
    for a in 0..4 {
        // dx/dξ = 1/2 on a unit element
        let dndx = 0.5 * NODE_XI[a] * (1.0 + eta * NODE_ETA[a]);
        let dndy = 0.5 * NODE_ETA[a] * (1.0 + xi * NODE_XI[a]);
        b[0][2 * a] = dndx;
        b[1][2 * a + 1] = dndy;
        b[2][2 * a] = dndy;
        b[2][2 * a + 1] = dndx;
    }
    b
}

/// `Σ_g w_g B_gᵀ D B_g |J|` for a unit square element.
pub fn element_stiffness(d: &Constitutive) -> ElementMatrix {
    let mut k = [[0.0; ELEMENT_DOFS]; ELEMENT_DOFS];
    let det_j = 0.25;
    for (xi, eta) in gauss_points() {
        let b = strain_displacement(xi, eta);
        let mut db = [[0.0; ELEMENT_DOFS]; 3];
        for i in 0..3 {
            for c in 0..ELEMENT_DOFS {
                db[i][c] = (0..3).map(|m| d[i][m] * b[m][c]).sum();
            }
        }
        for r in 0..ELEMENT_DOFS {
            for c in 0..ELEMENT_DOFS {
                let v: f64 = (0..3).map(|i| b[i][r] * db[i][c]).sum();
                k[r][c] += v * det_j;
            }
        }
    }
    k
}

/// `∫ Bᵀ D ε dΩ` for a constant strain over a unit element.
pub fn element_strain_load(d: &Constitutive, strain: &[f64; 3]) -> [f64; ELEMENT_DOFS] {
    let sigma = mat3_vec(d, strain);
    let mut f = [0.0; ELEMENT_DOFS];
    for (xi, eta) in gauss_points() {
        let b = strain_displacement(xi, eta);
        for c in 0..ELEMENT_DOFS {
            f[c] += 0.25 * (0..3).map(|i| b[i][c] * sigma[i]).sum::<f64>();
        }
    }
    f
}

/// Plane-stress isotropic constitutive matrix.
pub fn plane_stress(youngs: f64, poisson: f64) -> Constitutive {
    let c = youngs / (1.0 - poisson * poisson);
    [[c, poisson * c, 0.0], [poisson * c, c, 0.0], [0.0, 0.0, youngs / (2.0 * (1.0 + poisson))]]
}

/// Orthotropic constitutive matrix from the four independent entries.
pub fn orthotropic(c11: f64, c12: f64, c22: f64, c33: f64) -> Constitutive {
    [[c11, c12, 0.0], [c12, c22, 0.0], [0.0, 0.0, c33]]
}

pub fn mat3_vec(d: &Constitutive, v: &[f64; 3]) -> [f64; 3] {
    [
        d[0][0] * v[0] + d[0][1] * v[1] + d[0][2] * v[2],
        d[1][0] * v[0] + d[1][1] * v[1] + d[1][2] * v[2],
        d[2][0] * v[0] + d[2][1] * v[1] + d[2][2] * v[2],
    ]
}

pub fn strain_at(b: &StrainDisplacement, ue: &[f64; ELEMENT_DOFS]) -> [f64; 3] {
    let mut e = [0.0; 3];
    for i in 0..3 {
        e[i] = (0..ELEMENT_DOFS).map(|c| b[i][c] * ue[c]).sum();
    }
    e
}

pub fn mat_vec(k: &ElementMatrix, u: &[f64; ELEMENT_DOFS]) -> [f64; ELEMENT_DOFS] {
    let mut out = [0.0; ELEMENT_DOFS];
    for r in 0..ELEMENT_DOFS {
        out[r] = (0..ELEMENT_DOFS).map(|c| k[r][c] * u[c]).sum();
    }
    out
}

pub fn quadratic_form(k: &ElementMatrix, a: &[f64; ELEMENT_DOFS], b: &[f64; ELEMENT_DOFS]) -> f64 {
    let kb = mat_vec(k, b);
    (0..ELEMENT_DOFS).map(|i| a[i] * kb[i]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rigid_modes_produce_no_force() {
        let k = element_stiffness(&plane_stress(1.0, 0.3));
        let tx = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let ty = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        // rotation about the origin: u = (-y, x)
        let rot = [0.0, 0.0, 0.0, 1.0, -1.0, 1.0, -1.0, 0.0];
        for mode in [tx, ty, rot] {
            assert!(mat_vec(&k, &mode).iter().all(|f| f.abs() < 1e-14));
        }
    }

    #[test]
    fn element_matrix_is_symmetric() {
        let k = element_stiffness(&orthotropic(1.3, 0.4, 0.9, 0.2));
        for r in 0..8 {
            for c in 0..8 {
                assert!((k[r][c] - k[c][r]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn uniform_strain_energy_matches_constitutive() {
        let d = plane_stress(1.0, 0.49);
        let k = element_stiffness(&d);
        // u = (x, 0) at the nodes gives εxx = 1 over the unit area
        let u = [0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        assert!((quadratic_form(&k, &u, &u) - d[0][0]).abs() < 1e-14);
    }
}
