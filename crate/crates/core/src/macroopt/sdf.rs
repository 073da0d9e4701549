//! Signed distance to the database's property region on a 4D grid, with
//! multilinear interpolation of values and gradients.

use super::MacroError;
use crate::homogenization::{PropertyScaler, StiffnessComponents};

const DIM: usize = 4;
const MARGIN: f64 = 0.1;
/// Occupancy radius in grid spacings.
const OCCUPANCY_RADIUS: f64 = 1.5;

/// Signed distance on a regular grid over standardized `(C11, C12, C22, C33)`,
/// positive inside the region covered by the database.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedDistanceField {
    resolution: usize,
    scaler: PropertyScaler,
    origin: [f64; DIM],
    spacing: [f64; DIM],
    values: Vec<f64>,
    /// Forward difference of the node values along each axis (backward at the
    /// last node), in standardized units.
    gradients: Vec<[f64; DIM]>,
    occupied: Vec<bool>,
    data_lower: [f64; DIM],
    data_upper: [f64; DIM],
    data_mean: StiffnessComponents,
    /// Largest `C12² / (C11·C22)` among the data.
    max_coupling: f64,
}

/// `S(x) = ½(tanh(βx) + 1)`.
pub fn heaviside(x: f64, beta: f64) -> f64 {
    0.5 * ((beta * x).tanh() + 1.0)
}

fn heaviside_derivative(x: f64, beta: f64) -> f64 {
    let t = (beta * x).tanh();
    0.5 * beta * (1.0 - t * t)
}

/// `g = (1/N) Σ S(−φ_e)` and `∂g/∂φ_e`.
pub fn aggregate_constraint(phi: &[f64], beta: f64) -> (f64, Vec<f64>) {
    assert!(beta > 0.0, "beta must be positive");
    let n = phi.len().max(1) as f64;
    let g = phi.iter().map(|&p| heaviside(-p, beta)).sum::<f64>() / n;
    let dg = phi.iter().map(|&p| -heaviside_derivative(-p, beta) / n).collect();
    (g, dg)
}

/// Squared 1D distance transform of `f` sampled at spacing `h` (lower envelope
/// of parabolas).
fn edt_1d(f: &[f64], h: f64, out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    let first = match f.iter().position(|x| x.is_finite()) {
        Some(p) => p,
        None => {
            out.fill(f64::INFINITY);
            return;
        }
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let pos = |i: usize| i as f64 * h;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let pos_q = pos(q);
        let cross = |p: usize| ((f[q] + pos_q * pos_q) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos_q - pos(p)));
        let mut s = cross(v[k]);
        // z[0] is -inf, so this never runs past the first parabola
        while s <= z[k] {
            k -= 1;
            s = cross(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < pos(q) {
            k += 1;
        }
        let p = v[k];
        *o = (pos(q) - pos(p)).powi(2) + f[p];
    }
}

impl SignedDistanceField {
    fn index(&self, i: [usize; DIM]) -> usize {
        let r = self.resolution;
        ((i[0] * r + i[1]) * r + i[2]) * r + i[3]
    }

    fn unindex(&self, mut idx: usize) -> [usize; DIM] {
        let r = self.resolution;
        let mut out = [0; DIM];
        for k in (0..DIM).rev() {
            out[k] = idx % r;
            idx /= r;
        }
        out
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn scaler(&self) -> &PropertyScaler {
        &self.scaler
    }

    /// Per-component minimum and maximum of the database properties.
    pub fn data_bounds(&self) -> ([f64; DIM], [f64; DIM]) {
        (self.data_lower, self.data_upper)
    }

    pub fn data_mean(&self) -> StiffnessComponents {
        self.data_mean
    }

    pub fn max_coupling(&self) -> f64 {
        self.max_coupling
    }

    /// Positive diagonal and a normal coupling no stronger than any data
    /// point's. The grid region alone can contain indefinite tuples between
    /// distant data points.
    pub fn admissible(&self, c: &StiffnessComponents) -> bool {
        c.c11 > 0.0 && c.c22 > 0.0 && c.c33 > 0.0 && c.c12 * c.c12 <= self.max_coupling * c.c11 * c.c22
    }

    /// Raw property coordinates of a grid node.
    pub fn node_point(&self, i: [usize; DIM]) -> StiffnessComponents {
        let z: [f64; DIM] = std::array::from_fn(|k| self.origin[k] + i[k] as f64 * self.spacing[k]);
        self.scaler.destandardize(&z)
    }

    pub fn node_value(&self, i: [usize; DIM]) -> f64 {
        self.values[self.index(i)]
    }

    pub fn node_gradient(&self, i: [usize; DIM]) -> [f64; DIM] {
        self.gradients[self.index(i)]
    }

    pub fn node_occupied(&self, i: [usize; DIM]) -> bool {
        self.occupied[self.index(i)]
    }

    /// Node nearest to the standardized centroid of the data.
    pub fn centroid_node(&self) -> [usize; DIM] {
        let z = self.scaler.standardize(&self.data_mean);
        std::array::from_fn(|k| {
            (((z[k] - self.origin[k]) / self.spacing[k]).round().max(0.0) as usize).min(self.resolution - 1)
        })
    }

    /// Interpolated `φ` and its gradient with respect to the raw components.
    /// Queries outside the grid are clamped to its boundary.
    pub fn feasibility_phi(&self, c: &StiffnessComponents) -> (f64, [f64; DIM]) {
        let z = self.scaler.standardize(c);
        let top = (self.resolution - 1) as f64;
        let mut cell = [0usize; DIM];
        let mut t = [0.0; DIM];
        let mut clamped = false;
        for k in 0..DIM {
            let u = (z[k] - self.origin[k]) / self.spacing[k];
            let uc = u.clamp(0.0, top);
            clamped |= uc != u || !u.is_finite();
            let uc = if uc.is_finite() { uc } else { 0.0 };
            cell[k] = (uc.floor() as usize).min(self.resolution - 2);
            t[k] = uc - cell[k] as f64;
        }
        if clamped {
            log::warn!("property query {:?} outside the distance grid, clamped", c.to_array());
        }
        let mut phi = 0.0;
        let mut grad = [0.0; DIM];
        for corner in 0..(1 << DIM) {
            let bits: [usize; DIM] = std::array::from_fn(|k| (corner >> k) & 1);
            let node: [usize; DIM] = std::array::from_fn(|k| cell[k] + bits[k]);
            let w: [f64; DIM] = std::array::from_fn(|k| if bits[k] == 1 { t[k] } else { 1.0 - t[k] });
            let idx = self.index(node);
            phi += w.iter().product::<f64>() * self.values[idx];
            for k in 0..DIM {
                // along k the interpolant is linear within the cell, so its slope is the
                // lower-node forward difference blended over the remaining axes
                if bits[k] == 0 {
                    let others: f64 = (0..DIM).filter(|&m| m != k).map(|m| w[m]).product();
                    grad[k] += others * self.gradients[idx][k];
                }
            }
        }
        let std = self.scaler.std;
        (phi, std::array::from_fn(|k| grad[k] / std[k]))
    }
}

/// Builds the signed distance field of the standardized property cloud.
pub fn build_sdf(properties: &[StiffnessComponents], resolution: usize) -> Result<SignedDistanceField, MacroError> {
    if properties.len() < 100 {
        return Err(MacroError::Degenerate(format!("{} property tuples, at least 100 required", properties.len())));
    }
    if resolution < 3 {
        return Err(MacroError::Degenerate(format!("grid resolution {resolution} below 3")));
    }
    if properties.iter().any(|c| !c.is_finite()) {
        return Err(MacroError::Degenerate("non-finite property tuple".into()));
    }
    let scaler = PropertyScaler::fit(properties);
    let zs: Vec<[f64; DIM]> = properties.iter().map(|c| scaler.standardize(c)).collect();
    let mut zlo = [f64::INFINITY; DIM];
    let mut zhi = [f64::NEG_INFINITY; DIM];
    let mut data_lower = [f64::INFINITY; DIM];
    let mut data_upper = [f64::NEG_INFINITY; DIM];
    for (z, c) in zs.iter().zip(properties) {
        let a = c.to_array();
        for k in 0..DIM {
            zlo[k] = zlo[k].min(z[k]);
            zhi[k] = zhi[k].max(z[k]);
            data_lower[k] = data_lower[k].min(a[k]);
            data_upper[k] = data_upper[k].max(a[k]);
        }
    }
    if (0..DIM).all(|k| zhi[k] - zlo[k] < 1e-12) {
        return Err(MacroError::Degenerate("all property tuples are identical".into()));
    }
    let mut origin = [0.0; DIM];
    let mut spacing = [0.0; DIM];
    for k in 0..DIM {
        // a constant component still gets a small box around its value
        let range = (zhi[k] - zlo[k]).max(1e-3);
        origin[k] = zlo[k] - MARGIN * range;
        spacing[k] = range * (1.0 + 2.0 * MARGIN) / (resolution - 1) as f64;
    }
    let mean = StiffnessComponents::from_array(scaler.mean);
    let total = resolution.pow(DIM as u32);
    let mut sdf = SignedDistanceField {
        resolution,
        scaler,
        origin,
        spacing,
        values: vec![0.0; total],
        gradients: vec![[0.0; DIM]; total],
        occupied: vec![false; total],
        data_lower,
        data_upper,
        data_mean: mean,
        max_coupling: properties
            .iter()
            .filter(|c| c.c11 > 0.0 && c.c22 > 0.0)
            .map(|c| c.c12 * c.c12 / (c.c11 * c.c22))
            .fold(0.0, f64::max),
    };

    // occupancy: any data point within the radius, measured in grid spacings
    let reach = OCCUPANCY_RADIUS.ceil() as isize;
    for z in &zs {
        let u: [f64; DIM] = std::array::from_fn(|k| (z[k] - origin[k]) / spacing[k]);
        let base: [isize; DIM] = std::array::from_fn(|k| u[k].round() as isize);
        let span = (2 * reach + 1) as usize;
        for off in 0..span.pow(DIM as u32) {
            let mut node = [0usize; DIM];
            let mut d2 = 0.0;
            let mut inside = true;
            let mut o = off;
            for k in (0..DIM).rev() {
                let n = base[k] + (o % span) as isize - reach;
                o /= span;
                if n < 0 || n >= resolution as isize {
                    inside = false;
                    break;
                }
                node[k] = n as usize;
                d2 += (n as f64 - u[k]).powi(2);
            }
            if inside && d2 <= OCCUPANCY_RADIUS * OCCUPANCY_RADIUS {
                let idx = sdf.index(node);
                sdf.occupied[idx] = true;
            }
        }
    }
    let n_in = sdf.occupied.iter().filter(|&&o| o).count();
    if n_in == 0 || n_in == total {
        return Err(MacroError::Degenerate("occupancy grid is uniform".into()));
    }

    let to_inside = sdf.distance_transform(|occ| occ);
    let to_outside = sdf.distance_transform(|occ| !occ);
    let half = 0.5 * spacing.iter().cloned().fold(f64::INFINITY, f64::min);
    for idx in 0..total {
        sdf.values[idx] = if sdf.occupied[idx] {
            to_outside[idx].sqrt() - half
        } else {
            -(to_inside[idx].sqrt() - half)
        };
    }
    for idx in 0..total {
        let node = sdf.unindex(idx);
        let mut g = [0.0; DIM];
        for k in 0..DIM {
            let mut next = node;
            if node[k] + 1 < resolution {
                next[k] += 1;
                g[k] = (sdf.values[sdf.index(next)] - sdf.values[idx]) / spacing[k];
            } else {
                next[k] -= 1;
                g[k] = (sdf.values[idx] - sdf.values[sdf.index(next)]) / spacing[k];
            }
        }
        sdf.gradients[idx] = g;
    }
    Ok(sdf)
}

impl SignedDistanceField {
    /// Squared Euclidean distance from each node to the nearest node whose
    /// occupancy satisfies `source`, separable over the four axes.
    fn distance_transform(&self, source: impl Fn(bool) -> bool) -> Vec<f64> {
        let r = self.resolution;
        let mut d: Vec<f64> = self.occupied.iter().map(|&o| if source(o) { 0.0 } else { f64::INFINITY }).collect();
        let strides = [r * r * r, r * r, r, 1];
        let mut line = vec![0.0; r];
        let mut out = vec![0.0; r];
        for k in 0..DIM {
            let stride = strides[k];
            for start in 0..d.len() {
                if (start / stride) % r != 0 {
                    continue;
                }
                for (i, l) in line.iter_mut().enumerate() {
                    *l = d[start + i * stride];
                }
                edt_1d(&line, self.spacing[k], &mut out);
                for (i, o) in out.iter().enumerate() {
                    d[start + i * stride] = *o;
                }
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(n: usize, seed: u64) -> Vec<StiffnessComponents> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                // points in a ball-like region with correlated components
                let c11: f64 = rng.random_range(0.1..1.0);
                let c22 = (c11 + rng.random_range(-0.2..0.2)).clamp(0.05, 1.1);
                let c12 = 0.3 * (c11 * c22).sqrt() * rng.random_range(0.2..1.0);
                let c33 = 0.25 * c11.min(c22) * rng.random_range(0.5..1.0);
                StiffnessComponents::new(c11, c12, c22, c33)
            })
            .collect()
    }

    #[test]
    fn one_dimensional_transform_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = rng.random_range(1..15);
            let h = rng.random_range(0.1..2.0);
            let f: Vec<f64> =
                (0..n).map(|_| if rng.random_bool(0.3) { 0.0 } else { f64::INFINITY }).collect();
            let mut out = vec![0.0; n];
            edt_1d(&f, h, &mut out);
            for q in 0..n {
                let want = (0..n)
                    .filter(|&p| f[p] == 0.0)
                    .map(|p| ((q as f64 - p as f64) * h).powi(2))
                    .fold(f64::INFINITY, f64::min);
                assert!(out[q] == want || (out[q] - want).abs() < 1e-9, "{f:?} {out:?}");
            }
        }
    }

    #[test]
    fn four_dimensional_transform_matches_brute_force() {
        let props = blob(300, 2);
        let sdf = build_sdf(&props, 6).unwrap();
        let d = sdf.distance_transform(|o| o);
        let total = sdf.values.len();
        for idx in (0..total).step_by(7) {
            let a = sdf.unindex(idx);
            let want = (0..total)
                .filter(|&j| sdf.occupied[j])
                .map(|j| {
                    let b = sdf.unindex(j);
                    (0..DIM).map(|k| ((a[k] as f64 - b[k] as f64) * sdf.spacing[k]).powi(2)).sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((d[idx] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn centroid_is_inside_and_far_corner_outside() {
        let sdf = build_sdf(&blob(500, 3), 12).unwrap();
        assert!(sdf.node_value(sdf.centroid_node()) > 0.0);
        assert!(sdf.node_value([11, 11, 0, 11]) < 0.0);
        assert!(sdf.node_value([0, 11, 11, 11]) < 0.0);
    }

    #[test]
    fn grid_nodes_are_interpolated_exactly() {
        let sdf = build_sdf(&blob(400, 4), 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let node: [usize; DIM] = std::array::from_fn(|_| rng.random_range(0..12));
            let (phi, _) = sdf.feasibility_phi(&sdf.node_point(node));
            assert!((phi - sdf.node_value(node)).abs() < 1e-9);
        }
    }

    #[test]
    fn interpolated_gradient_is_consistent_with_values() {
        let sdf = build_sdf(&blob(400, 6), 12).unwrap();
        let (lo, hi) = sdf.data_bounds();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let c = StiffnessComponents::from_array(std::array::from_fn(|k| rng.random_range(lo[k]..hi[k])));
            let (_, g) = sdf.feasibility_phi(&c);
            for k in 0..DIM {
                let h = 1e-7 * sdf.scaler.std[k];
                let mut p = c.to_array();
                let mut m = c.to_array();
                p[k] += h;
                m[k] -= h;
                let fd = (sdf.feasibility_phi(&StiffnessComponents::from_array(p)).0
                    - sdf.feasibility_phi(&StiffnessComponents::from_array(m)).0)
                    / (2.0 * h);
                assert!((g[k] - fd).abs() <= 1e-6 * g[k].abs().max(1.0), "k={k} analytic {} fd {fd}", g[k]);
            }
        }
    }

    #[test]
    fn sign_matches_membership() {
        let props = blob(600, 8);
        let sdf = build_sdf(&props, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let c = props[rng.random_range(0..props.len())];
            assert!(sdf.feasibility_phi(&c).0 > 0.0);
        }
        let (lo, hi) = sdf.data_bounds();
        for _ in 0..50 {
            // far corner region: stiff in C11, soft in C22, strongly coupled
            let c = StiffnessComponents::new(
                hi[0] + rng.random_range(0.0..0.05) * (hi[0] - lo[0]),
                hi[1] + rng.random_range(0.0..0.05) * (hi[1] - lo[1]),
                lo[2] - rng.random_range(0.0..0.05) * (hi[2] - lo[2]),
                hi[3],
            );
            assert!(sdf.feasibility_phi(&c).0 < 0.0);
        }
    }

    #[test]
    fn taylor_remainder_is_second_order() {
        let sdf = build_sdf(&blob(400, 10), 12).unwrap();
        let c = StiffnessComponents::from_array(sdf.scaler.mean);
        let (p0, g) = sdf.feasibility_phi(&c);
        let dir = [0.3, -0.2, 0.5, 0.1];
        let mut last = f64::INFINITY;
        for s in [1e-3, 1e-4, 1e-5] {
            let h: [f64; DIM] = std::array::from_fn(|k| s * dir[k] * sdf.scaler.std[k]);
            let q = StiffnessComponents::from_array(std::array::from_fn(|k| c.to_array()[k] + h[k]));
            let lin: f64 = (0..DIM).map(|k| g[k] * h[k]).sum();
            let rem = (sdf.feasibility_phi(&q).0 - p0 - lin).abs();
            let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(rem / norm < last.max(1e-12) || rem / norm < 1e-9);
            last = rem / norm;
        }
        assert!(last < 1e-4);
    }

    #[test]
    fn aggregation_basics() {
        assert_eq!(heaviside(0.0, 10.0), 0.5);
        let (g, _) = aggregate_constraint(&[5.0; 8], 10.0);
        assert!(g < 1e-12);
        let mut phi = vec![5.0; 8];
        phi[3] = -5.0;
        let (g, dg) = aggregate_constraint(&phi, 10.0);
        assert!((g - 1.0 / 8.0).abs() < 1e-12);
        let h = 1e-6;
        phi[2] = 0.01 + h;
        let gp = aggregate_constraint(&phi, 10.0).0;
        phi[2] = 0.01 - h;
        let gm = aggregate_constraint(&phi, 10.0).0;
        phi[2] = 0.01;
        let d = aggregate_constraint(&phi, 10.0).1;
        assert!((d[2] - (gp - gm) / (2.0 * h)).abs() < 1e-7);
        assert!(dg[0].abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let same = vec![StiffnessComponents::new(1.0, 0.2, 1.0, 0.3); 150];
        assert!(build_sdf(&same, 12).is_err());
        assert!(build_sdf(&blob(50, 1), 12).is_err());
    }
}
