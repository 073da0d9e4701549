//! Binary unit cells: thresholding of decoder output, orthotropic symmetry,
//! defect repair, stochastic perturbation and parametric seed families.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MicrostructureError {
    #[error("symmetry enforcement needs even dimensions, got {height}x{width}")]
    OddDimensions { height: usize, width: usize },
    #[error("cell values must be 0 or 1, found {0}")]
    NonBinaryCell(u8),
    #[error("expected {expected} cells, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("packed bitmap has {actual} bytes, expected {expected}")]
    BadBitmap { expected: usize, actual: usize },
}

/// Outer edge of a unit cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Top, Side::Bottom];
}

/// Row-major binary occupancy grid; 1 is solid, 0 is void. Row 0 is the top edge.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Microstructure {
    height: usize,
    width: usize,
    cells: Vec<u8>,
    pub id: Option<u64>,
}

impl Microstructure {
    pub fn new(height: usize, width: usize, cells: Vec<u8>) -> Result<Self, MicrostructureError> {
        if cells.len() != height * width {
            return Err(MicrostructureError::ShapeMismatch { expected: height * width, actual: cells.len() });
        }
        if let Some(&bad) = cells.iter().find(|&&c| c > 1) {
            return Err(MicrostructureError::NonBinaryCell(bad));
        }
        Ok(Self { height, width, cells, id: None })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self { height, width, cells: vec![value as u8; height * width], id: None }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut cells = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                cells.push(f(r, c) as u8);
            }
        }
        Self { height, width, cells, id: None }
    }

    pub fn with_id(mut self, id: u64) -> Self {
        self.id = Some(id);
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col] == 1
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, solid: bool) {
        self.cells[row * self.width + col] = solid as u8;
    }

    pub fn solid_count(&self) -> usize {
        self.cells.iter().map(|&c| c as usize).sum()
    }

    pub fn volume_fraction(&self) -> f64 {
        self.solid_count() as f64 / self.cells.len() as f64
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.width, self.height, |r, c| self.get(c, r))
    }

    /// Left-right reflection.
    pub fn mirror_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |r, c| self.get(r, self.width - 1 - c))
    }

    /// Top-bottom reflection.
    pub fn mirror_vertical(&self) -> Self {
        Self::from_fn(self.height, self.width, |r, c| self.get(self.height - 1 - r, c))
    }

    pub fn is_doubly_symmetric(&self) -> bool {
        self.cells == self.mirror_horizontal().cells && self.cells == self.mirror_vertical().cells
    }

    /// Row-major bit packing, most significant bit first, each row padded to a byte.
    pub fn to_packed_bits(&self) -> Vec<u8> {
        let row_bytes = self.width.div_ceil(8);
        let mut out = vec![0u8; row_bytes * self.height];
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    out[r * row_bytes + c / 8] |= 0x80 >> (c % 8);
                }
            }
        }
        out
    }

    pub fn from_packed_bits(height: usize, width: usize, bytes: &[u8]) -> Result<Self, MicrostructureError> {
        let row_bytes = width.div_ceil(8);
        if bytes.len() != row_bytes * height {
            return Err(MicrostructureError::BadBitmap { expected: row_bytes * height, actual: bytes.len() });
        }
        Ok(Self::from_fn(height, width, |r, c| bytes[r * row_bytes + c / 8] & (0x80 >> (c % 8)) != 0))
    }

    /// SHA-256 of the shape and packed bitmap; the identifier ignores `id`.
    pub fn bitmap_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.height as u64).to_le_bytes());
        h.update((self.width as u64).to_le_bytes());
        h.update(self.to_packed_bits());
        h.finalize().into()
    }

    /// True when the solid phase is one 4-connected component that reaches
    /// all four outer edges.
    pub fn is_connected_spanning(&self) -> bool {
        let total = self.solid_count();
        let Some(start) = self.cells.iter().position(|&c| c == 1) else {
            return false;
        };
        let (h, w) = (self.height, self.width);
        let mut seen = vec![false; h * w];
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 0;
        let mut edges = [false; 4];
        while let Some(i) = stack.pop() {
            count += 1;
            let (r, c) = (i / w, i % w);
            edges[0] |= c == 0;
            edges[1] |= c == w - 1;
            edges[2] |= r == 0;
            edges[3] |= r == h - 1;
            for (nr, nc) in neighbors4(r, c, h, w) {
                let j = nr * w + nc;
                if !seen[j] && self.cells[j] == 1 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        count == total && edges.iter().all(|&e| e)
    }

    pub fn has_defects(&self) -> bool {
        !isolated_pixels(self).is_empty() || !checkerboard_voids(self).is_empty()
    }
}

fn neighbors4(r: usize, c: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    let mut out = [(usize::MAX, usize::MAX); 4];
    if r > 0 {
        out[0] = (r - 1, c);
    }
    if r + 1 < h {
        out[1] = (r + 1, c);
    }
    if c > 0 {
        out[2] = (r, c - 1);
    }
    if c + 1 < w {
        out[3] = (r, c + 1);
    }
    out.into_iter().filter(|p| p.0 != usize::MAX)
}

/// Real-valued occupancy in [0, 1], as produced by the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, MicrostructureError> {
        if values.len() != height * width {
            return Err(MicrostructureError::ShapeMismatch { expected: height * width, actual: values.len() });
        }
        Ok(Self { height, width, values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect() })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl From<&Microstructure> for DensityField {
    fn from(m: &Microstructure) -> Self {
        Self { height: m.height, width: m.width, values: m.cells.iter().map(|&c| c as f64).collect() }
    }
}

/// Solid where the density strictly exceeds `t`.
pub fn threshold(d: &DensityField, t: f64) -> Result<Microstructure, MicrostructureError> {
    if !(t > 0.0 && t < 1.0) {
        return Err(MicrostructureError::InvalidThreshold(t));
    }
    Microstructure::new(d.height, d.width, d.values.iter().map(|&v| (v > t) as u8).collect())
}

/// Mirrors the top-left quadrant across both mid-axes.
pub fn enforce_orthotropic_symmetry(m: &Microstructure) -> Result<Microstructure, MicrostructureError> {
    let (h, w) = (m.height, m.width);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(MicrostructureError::OddDimensions { height: h, width: w });
    }
    let mut out = Microstructure::from_fn(h, w, |r, c| m.get(r.min(h - 1 - r), c.min(w - 1 - c)));
    out.id = m.id;
    Ok(out)
}

fn isolated_pixels(m: &Microstructure) -> Vec<usize> {
    let (h, w) = (m.height, m.width);
    (0..h * w)
        .filter(|&i| m.cells[i] == 1 && neighbors4(i / w, i % w, h, w).all(|(r, c)| !m.get(r, c)))
        .collect()
}

/// Void cells of every 2×2 block whose solids sit on one diagonal only.
fn checkerboard_voids(m: &Microstructure) -> Vec<usize> {
    let (h, w) = (m.height, m.width);
    let mut out = Vec::new();
    for r in 0..h.saturating_sub(1) {
        for c in 0..w.saturating_sub(1) {
            let a = m.get(r, c);
            let b = m.get(r, c + 1);
            let cc = m.get(r + 1, c);
            let d = m.get(r + 1, c + 1);
            if a == d && b == cc && a != b {
                if a {
                    out.push(r * w + c + 1);
                    out.push((r + 1) * w + c);
                } else {
                    out.push(r * w + c);
                    out.push((r + 1) * w + c + 1);
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Fills both voids of every 2×2 checkerboard and deletes solid pixels with no
/// solid 4-neighbour, sweeping until neither rule fires. Each sweep updates all
/// offending cells at once, so mirror-symmetric input stays symmetric.
pub fn repair_defects(m: &Microstructure) -> Microstructure {
    let mut out = m.clone();
    let limit = 4 * out.cells.len() + 4;
    for _ in 0..limit {
        let fills = checkerboard_voids(&out);
        for &i in &fills {
            out.cells[i] = 1;
        }
        let removals = isolated_pixels(&out);
        for &i in &removals {
            out.cells[i] = 0;
        }
        if fills.is_empty() && removals.is_empty() {
            break;
        }
    }
    out
}

/// Outermost row or column on `side`; top/bottom strips run left to right,
/// left/right strips run top to bottom.
pub fn boundary_strip(m: &Microstructure, side: Side) -> Vec<u8> {
    let (h, w) = (m.height, m.width);
    match side {
        Side::Left => (0..h).map(|r| m.get(r, 0) as u8).collect(),
        Side::Right => (0..h).map(|r| m.get(r, w - 1) as u8).collect(),
        Side::Top => (0..w).map(|c| m.get(0, c) as u8).collect(),
        Side::Bottom => (0..w).map(|c| m.get(h - 1, c) as u8).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbParams {
    /// Largest accepted absolute change of volume fraction.
    pub max_vf_change: f64,
    pub max_attempts: usize,
    /// Candidate blob edge lengths.
    pub blob_sizes: Vec<usize>,
}

impl Default for PerturbParams {
    fn default() -> Self {
        Self { max_vf_change: 0.05, max_attempts: 50, blob_sizes: vec![1, 2, 3] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbOutcome {
    pub structure: Microstructure,
    /// False when no valid perturbation was found and the input is returned.
    pub accepted: bool,
    pub attempts: usize,
}

/// One stochastic shape perturbation: add or remove an r×r blob centred on an
/// interface cell of the generator quadrant, then re-symmetrize and repair.
/// The result must stay a single spanning solid component and differ from the
/// input by at most `max_vf_change` in volume fraction.
pub fn perturb(m: &Microstructure, rng_seed: u64, params: &PerturbParams) -> Result<PerturbOutcome, MicrostructureError> {
    let (h, w) = (m.height, m.width);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(MicrostructureError::OddDimensions { height: h, width: w });
    }
    let (qh, qw) = (h / 2, w / 2);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let base = enforce_orthotropic_symmetry(m)?;
    let vf0 = base.volume_fraction();

    // interface cells: quadrant cells with a 4-neighbour of the other phase in the full grid
    let interface: Vec<(usize, usize)> = (0..qh)
        .flat_map(|r| (0..qw).map(move |c| (r, c)))
        .filter(|&(r, c)| neighbors4(r, c, h, w).any(|(nr, nc)| base.get(nr, nc) != base.get(r, c)))
        .collect();
    let sizes = if params.blob_sizes.is_empty() { vec![1] } else { params.blob_sizes.clone() };

    for attempt in 1..=params.max_attempts {
        let Some(&(r0, c0)) = interface.choose(&mut rng) else { break };
        let size = *sizes.choose(&mut rng).expect("non-empty sizes");
        let add = rng.random_bool(0.5);
        let lo = (size - 1) / 2;
        let mut cand = base.clone();
        for dr in 0..size {
            for dc in 0..size {
                let r = (r0 + dr).checked_sub(lo);
                let c = (c0 + dc).checked_sub(lo);
                if let (Some(r), Some(c)) = (r, c) {
                    if r < qh && c < qw {
                        cand.set(r, c, add);
                    }
                }
            }
        }
        let cand = repair_defects(&enforce_orthotropic_symmetry(&cand)?);
        if cand.cells == base.cells {
            continue;
        }
        let dvf = (cand.volume_fraction() - vf0).abs();
        if dvf <= params.max_vf_change && cand.is_connected_spanning() {
            let mut structure = cand;
            structure.id = None;
            return Ok(PerturbOutcome { structure, accepted: true, attempts: attempt });
        }
    }
    Ok(PerturbOutcome { structure: m.clone(), accepted: false, attempts: params.max_attempts })
}

/// Parametric seed families used to start database growth.
pub mod seeds {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub enum SeedFamily {
        /// Centred horizontal and vertical bars of thickness (horizontal, vertical).
        Cross { horizontal: usize, vertical: usize },
        /// Both diagonals with a given thickness and a central hub radius.
        XBrace { thickness: f64, hub: f64 },
        /// Solid plate with a centred elliptical hole of semi-axes (rx, ry).
        HolePlate { rx: f64, ry: f64 },
        /// Border frame with band thicknesses (horizontal bands, vertical bands)
        /// and rounded inner corners of the given radius.
        Frame { horizontal: usize, vertical: usize, fillet: f64 },
    }

    impl SeedFamily {
        pub fn name(&self) -> &'static str {
            match self {
                SeedFamily::Cross { .. } => "cross",
                SeedFamily::XBrace { .. } => "xbrace",
                SeedFamily::HolePlate { .. } => "holeplate",
                SeedFamily::Frame { .. } => "frame",
            }
        }

        /// Rasterizes the seed at pixel centres and cleans it up. Shapes are
        /// defined on the generator quadrant so the result is doubly symmetric.
        pub fn render(&self, height: usize, width: usize) -> Result<Microstructure, MicrostructureError> {
            let (h, w) = (height as f64, width as f64);
            let m = Microstructure::from_fn(height, width, |r, c| {
                // distance of the pixel centre from the cell centre
                let y = ((r as f64 + 0.5) - h / 2.0).abs();
                let x = ((c as f64 + 0.5) - w / 2.0).abs();
                match *self {
                    SeedFamily::Cross { horizontal, vertical } => {
                        y < horizontal as f64 / 2.0 || x < vertical as f64 / 2.0
                    }
                    SeedFamily::XBrace { thickness, hub } => {
                        // diagonal through the corners of the cell
                        let (sx, sy) = (x / (w / 2.0), y / (h / 2.0));
                        let d = (sx - sy).abs() * (w / 2.0) / std::f64::consts::SQRT_2;
                        d < thickness / 2.0 || (x * x + y * y).sqrt() < hub
                    }
                    SeedFamily::HolePlate { rx, ry } => (x / rx).powi(2) + (y / ry).powi(2) > 1.0,
                    SeedFamily::Frame { horizontal, vertical, fillet } => {
                        let ix = w / 2.0 - vertical as f64; // inner half-width of the void
                        let iy = h / 2.0 - horizontal as f64;
                        if x >= ix || y >= iy {
                            return true;
                        }
                        let (cx, cy) = (ix - fillet, iy - fillet);
                        fillet > 0.0 && x > cx && y > cy && ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() > fillet
                    }
                }
            });
            Ok(repair_defects(&enforce_orthotropic_symmetry(&m)?))
        }
    }

    /// The default seed catalogue for a `height × width` cell: a parameter grid
    /// over each family, keeping only valid, distinct, spanning structures.
    pub fn default_catalogue(height: usize, width: usize) -> Vec<SeedFamily> {
        let short = height.min(width);
        let mut out = Vec::new();
        let step = (short / 25).max(1);
        let mut t = 2;
        let mut bars = Vec::new();
        while t <= short * 2 / 5 {
            bars.push(t);
            t += 2 * step;
        }
        for &a in &bars {
            for &b in &bars {
                out.push(SeedFamily::Cross { horizontal: a, vertical: b });
            }
        }
        let s = short as f64;
        // diagonals up to about 0.6 of the cell, where the braces merge into a solid
        for i in 0..16 {
            let thickness = 2.0 + i as f64 * s / 50.0 * 1.75;
            for hub in [0.0, s * 0.1, s * 0.2, s * 0.3] {
                out.push(SeedFamily::XBrace { thickness, hub });
            }
        }
        for i in 0..8 {
            for j in 0..8 {
                let rx = s * (0.12 + 0.045 * i as f64);
                let ry = s * (0.12 + 0.045 * j as f64);
                out.push(SeedFamily::HolePlate { rx, ry });
            }
        }
        for &a in bars.iter().take(6) {
            for &b in bars.iter().take(6) {
                for fillet in [0.0, s * 0.12] {
                    out.push(SeedFamily::Frame { horizontal: a, vertical: b, fillet });
                }
            }
        }
        out
    }

    /// Renders the catalogue, dropping duplicates and structures that do not
    /// span the cell.
    pub fn default_seeds(height: usize, width: usize) -> Result<Vec<Microstructure>, MicrostructureError> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for family in default_catalogue(height, width) {
            let m = family.render(height, width)?;
            if m.solid_count() == 0 || !m.is_connected_spanning() {
                continue;
            }
            if seen.insert(m.bitmap_hash()) {
                out.push(m);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(rows: &[&str]) -> Microstructure {
        let h = rows.len();
        let w = rows[0].len();
        Microstructure::from_fn(h, w, |r, c| rows[r].as_bytes()[c] == b'1')
    }

    #[test]
    fn threshold_is_strict() {
        let d = DensityField::new(1, 3, vec![0.95, 0.90, 0.5]).unwrap();
        let m = threshold(&d, 0.9).unwrap();
        assert_eq!(m.cells(), &[1, 0, 0]);
    }

    #[test]
    fn threshold_of_half_field_is_void() {
        let d = DensityField::new(4, 4, vec![0.5; 16]).unwrap();
        assert_eq!(threshold(&d, 0.9).unwrap().solid_count(), 0);
    }

    #[test]
    fn threshold_is_identity_on_binary_fields() {
        let m = grid(&["1010", "0110", "1111", "0001"]);
        assert_eq!(threshold(&DensityField::from(&m), 0.9).unwrap(), m);
    }

    #[test]
    fn threshold_rejects_out_of_range() {
        let d = DensityField::new(1, 1, vec![0.3]).unwrap();
        assert!(threshold(&d, 1.0).is_err());
        assert!(threshold(&d, 0.0).is_err());
    }

    #[test]
    fn symmetric_grid_is_fixed_point() {
        let m = grid(&["1001", "0110", "0110", "1001"]);
        assert_eq!(enforce_orthotropic_symmetry(&m).unwrap(), m);
    }

    #[test]
    fn single_quadrant_pixel_mirrors_to_four() {
        let mut m = Microstructure::filled(6, 6, false);
        m.set(1, 2, true);
        let s = enforce_orthotropic_symmetry(&m).unwrap();
        assert_eq!(s.solid_count(), 4);
        for (r, c) in [(1, 2), (1, 3), (4, 2), (4, 3)] {
            assert!(s.get(r, c));
        }
    }

    #[test]
    fn odd_dimensions_are_rejected() {
        let m = Microstructure::filled(5, 4, true);
        assert!(matches!(enforce_orthotropic_symmetry(&m), Err(MicrostructureError::OddDimensions { .. })));
    }

    #[test]
    fn isolated_pixel_is_removed() {
        let m = grid(&["00000", "00000", "00100", "00000", "00000"]);
        assert_eq!(repair_defects(&m).solid_count(), 0);
    }

    #[test]
    fn checkerboard_block_is_filled() {
        let m = grid(&["10", "01"]);
        let r = repair_defects(&m);
        assert_eq!(r, grid(&["11", "11"]));
        assert!(checkerboard_voids(&r).is_empty());
        let m = grid(&["01", "10"]);
        assert_eq!(repair_defects(&m), grid(&["11", "11"]));
    }

    #[test]
    fn fill_cascade_reaches_fixpoint() {
        // filling the first checkerboard creates a second one
        let m = grid(&["1000", "0110", "0001", "0000"]);
        let r = repair_defects(&m);
        assert!(!r.has_defects());
    }

    #[test]
    fn strips_follow_reflection() {
        let m = grid(&["1100", "1000", "0110", "1111"]);
        assert_eq!(boundary_strip(&m, Side::Right), boundary_strip(&m.mirror_horizontal(), Side::Left));
        assert_eq!(boundary_strip(&m, Side::Top), vec![1, 1, 0, 0]);
        assert_eq!(boundary_strip(&m, Side::Bottom), vec![1, 1, 1, 1]);
        let full = Microstructure::filled(50, 50, true);
        let left = boundary_strip(&full, Side::Left);
        assert_eq!(left.len(), 50);
        assert!(left.iter().all(|&v| v == 1));
    }

    #[test]
    fn packed_bits_are_msb_first_and_row_padded() {
        let m = grid(&["1000000001", "0100000000"]);
        let bits = m.to_packed_bits();
        assert_eq!(bits, vec![0x80, 0x40, 0x40, 0x00]);
        assert_eq!(Microstructure::from_packed_bits(2, 10, &bits).unwrap(), m);
        assert!(Microstructure::from_packed_bits(2, 10, &bits[..3]).is_err());
    }

    #[test]
    fn connectivity_requires_all_edges() {
        assert!(grid(&["0110", "1111", "1111", "0110"]).is_connected_spanning());
        assert!(!grid(&["0000", "0110", "0110", "0000"]).is_connected_spanning());
        assert!(!grid(&["1001", "1001", "1001", "1001"]).is_connected_spanning());
    }

    #[test]
    fn seeds_are_valid() {
        let seeds = seeds::default_seeds(50, 50).unwrap();
        assert!(seeds.len() > 100, "only {} seeds", seeds.len());
        for s in &seeds {
            assert!(s.is_doubly_symmetric());
            assert!(!s.has_defects());
            assert!(s.is_connected_spanning());
            assert!(s.volume_fraction() > 0.0 && s.volume_fraction() <= 1.0);
        }
    }

    #[test]
    fn perturbation_is_seeded_and_valid() {
        let seed = seeds::SeedFamily::Cross { horizontal: 8, vertical: 6 }.render(50, 50).unwrap();
        let p = PerturbParams::default();
        let a = perturb(&seed, 17, &p).unwrap();
        let b = perturb(&seed, 17, &p).unwrap();
        assert_eq!(a, b);
        assert!(a.accepted);
        let s = &a.structure;
        assert_eq!(&enforce_orthotropic_symmetry(s).unwrap(), s);
        assert_eq!(&repair_defects(s), s);
        assert!(s.is_connected_spanning());
        assert!((s.volume_fraction() - seed.volume_fraction()).abs() <= p.max_vf_change);
    }

    #[test]
    fn failed_perturbation_returns_input_with_flag() {
        let seed = seeds::SeedFamily::Cross { horizontal: 8, vertical: 6 }.render(50, 50).unwrap();
        let p = PerturbParams { max_vf_change: 0.0, max_attempts: 5, ..Default::default() };
        let out = perturb(&seed, 3, &p).unwrap();
        assert!(!out.accepted);
        assert_eq!(out.structure, seed);
    }

    fn arb_grid() -> impl Strategy<Value = Microstructure> {
        (1usize..5, 1usize..5).prop_flat_map(|(h, w)| {
            proptest::collection::vec(0u8..2, (2 * h) * (2 * w))
                .prop_map(move |cells| Microstructure::new(2 * h, 2 * w, cells).unwrap())
        })
    }

    proptest! {
        #[test]
        fn symmetry_is_idempotent(m in arb_grid()) {
            let once = enforce_orthotropic_symmetry(&m).unwrap();
            prop_assert_eq!(enforce_orthotropic_symmetry(&once).unwrap(), once.clone());
            prop_assert!(once.is_doubly_symmetric());
        }

        #[test]
        fn repair_is_idempotent_and_clean(m in arb_grid()) {
            let once = repair_defects(&m);
            prop_assert!(!once.has_defects());
            prop_assert_eq!(repair_defects(&once), once);
        }

        #[test]
        fn repair_keeps_symmetry(m in arb_grid()) {
            let s = enforce_orthotropic_symmetry(&m).unwrap();
            prop_assert!(repair_defects(&s).is_doubly_symmetric());
        }

        #[test]
        fn threshold_is_monotone(vals in proptest::collection::vec(0.0f64..1.0, 16), t1 in 0.05f64..0.95, dt in 0.0f64..0.04) {
            let d = DensityField::new(4, 4, vals).unwrap();
            let lo = threshold(&d, t1).unwrap();
            let hi = threshold(&d, t1 + dt).unwrap();
            for (a, b) in lo.cells().iter().zip(hi.cells()) {
                prop_assert!(b <= a);
            }
        }

        #[test]
        fn bit_packing_round_trips(m in arb_grid()) {
            let bits = m.to_packed_bits();
            prop_assert_eq!(Microstructure::from_packed_bits(m.height(), m.width(), &bits).unwrap(), m);
        }
    }
}
