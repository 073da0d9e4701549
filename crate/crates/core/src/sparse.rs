//! Sparse symmetric positive-definite assembly and factorization shared by the
//! unit-cell and macro finite element codes.
//!
//! A [`SymmetricPattern`] is built once per mesh topology. It stores the lower
//! triangle in compressed-column form, the element-to-slot scatter map and the
//! symbolic Cholesky factorization, so repeated solves on the same mesh only
//! pay for the numeric factorization.

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::{Conj, Mat, Side};
use thiserror::Error;

/// Degrees of freedom of a four-node plane element.
pub const ELEMENT_DOFS: usize = 8;

const NO_SLOT: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("stiffness matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
}

/// Lower-triangular sparsity pattern plus cached symbolic factorization.
#[derive(Clone)]
pub struct SymmetricPattern {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    slots: Vec<u32>,
    llt_symbolic: SymbolicLlt<usize>,
}

impl std::fmt::Debug for SymmetricPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SymmetricPattern")
            .field("n", &self.n)
            .field("nnz", &self.row_idx.len())
            .finish()
    }
}

impl SymmetricPattern {
    /// Builds the pattern from per-element global DOF maps. `None` marks a DOF
    /// that is eliminated (prescribed or pinned) and never enters the matrix.
    pub fn from_elements(n: usize, elements: &[[Option<usize>; ELEMENT_DOFS]]) -> Result<Self, SolverError> {
        let mut columns: Vec<Vec<usize>> = vec![Vec::new(); n];
        for dofs in elements {
            for a in dofs.iter().flatten() {
                for b in dofs.iter().flatten() {
                    if a >= b {
                        columns[*b].push(*a);
                    }
                }
            }
        }
        // every free DOF keeps its diagonal even if no element touches it
        for (j, col) in columns.iter_mut().enumerate() {
            col.push(j);
            col.sort_unstable();
            col.dedup();
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for col in &columns {
            row_idx.extend_from_slice(col);
            col_ptr.push(row_idx.len());
        }

        let mut slots = vec![NO_SLOT; elements.len() * ELEMENT_DOFS * ELEMENT_DOFS];
        for (e, dofs) in elements.iter().enumerate() {
            for (a, ga) in dofs.iter().enumerate() {
                for (b, gb) in dofs.iter().enumerate() {
                    if let (Some(r), Some(c)) = (ga, gb) {
                        if r >= c {
                            let col = &row_idx[col_ptr[*c]..col_ptr[*c + 1]];
                            let pos = col.binary_search(r).expect("pattern built from the same element maps");
                            slots[(e * ELEMENT_DOFS + a) * ELEMENT_DOFS + b] = (col_ptr[*c] + pos) as u32;
                        }
                    }
                }
            }
        }

        let symbolic = SymbolicSparseColMat::new_checked(n, n, col_ptr.clone(), None, row_idx.clone());
        let llt_symbolic = SymbolicLlt::try_new(symbolic.as_ref(), Side::Lower)
            .map_err(|e| SolverError::Factorization(format!("{e:?}")))?;
        Ok(Self { n, col_ptr, row_idx, slots, llt_symbolic })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn zero_values(&self) -> Vec<f64> {
        vec![0.0; self.row_idx.len()]
    }

    /// Adds `scale * ke` of element `e` into the lower-triangle value array.
    #[inline]
    pub fn scatter(&self, values: &mut [f64], e: usize, ke: &[[f64; ELEMENT_DOFS]; ELEMENT_DOFS], scale: f64) {
        let base = e * ELEMENT_DOFS * ELEMENT_DOFS;
        for (a, row) in ke.iter().enumerate() {
            for (b, k) in row.iter().enumerate() {
                let s = self.slots[base + a * ELEMENT_DOFS + b];
                if s != NO_SLOT {
                    values[s as usize] += scale * k;
                }
            }
        }
    }

    /// Numeric Cholesky factorization reusing the cached symbolic analysis.
    pub fn factor(&self, values: Vec<f64>) -> Result<Factor, SolverError> {
        assert_eq!(values.len(), self.row_idx.len());
        let symbolic = SymbolicSparseColMat::new_checked(self.n, self.n, self.col_ptr.clone(), None, self.row_idx.clone());
        let mat = SparseColMat::new(symbolic, values);
        let llt = Llt::try_new_with_symbolic(self.llt_symbolic.clone(), mat.as_ref(), Side::Lower)
            .map_err(|_| SolverError::NotPositiveDefinite)?;
        Ok(Factor { llt, n: self.n })
    }

    /// Sparse symmetric product `y = K x` using the lower-triangle values.
    pub fn mul_vec(&self, values: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                y[i] += values[p] * x[j];
                if i != j {
                    y[j] += values[p] * x[i];
                }
            }
        }
        y
    }
}

/// Numeric Cholesky factor of an assembled matrix.
pub struct Factor {
    llt: Llt<usize, f64>,
    n: usize,
}

impl Factor {
    /// Solves in place for every column of `rhs` (n × k, column-major).
    pub fn solve_columns(&self, rhs: &mut Mat<f64>) {
        assert_eq!(rhs.nrows(), self.n);
        self.llt.solve_in_place_with_conj(Conj::No, rhs.as_mut());
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, SolverError> {
        let mut m = Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        self.solve_columns(&mut m);
        let out: Vec<f64> = (0..self.n).map(|i| m[(i, 0)]).collect();
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(SolverError::NotPositiveDefinite)
        }
    }
}
