//! Accumulated query subspace across tasks.

use alloc::vec::Vec;

use crate::linalg::{self, LinalgError, Matrix};
use crate::math;

/// Orthonormal basis (`dim x m`, `m <= dim`) of the span of past queries.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    basis: Matrix,
    task_count: usize,
}

impl SubspaceBasis {
    pub fn empty(dim: usize) -> Self {
        Self {
            basis: Matrix::zeros(dim, 0),
            task_count: 0,
        }
    }

    /// Wraps an existing basis; columns must be orthonormal.
    pub fn from_parts(basis: Matrix, task_count: usize) -> Result<Self, LinalgError> {
        if basis.cols() > basis.rows() {
            return Err(LinalgError::DimensionMismatch {
                op: "subspace basis",
                left: basis.shape(),
                right: (basis.rows(), basis.rows()),
            });
        }
        Ok(Self { basis, task_count })
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn columns(&self) -> usize {
        self.basis.cols()
    }

    pub fn task_count(&self) -> usize {
        self.task_count
    }

    pub fn is_empty(&self) -> bool {
        self.basis.cols() == 0
    }

    /// Absorbs a `dim x n` matrix of query columns.
    ///
    /// The stored directions are always kept. The residual of the queries
    /// outside the current span is decomposed and its leading directions are
    /// appended until the new span holds at least `epsilon` of the energy of
    /// `[old basis | queries]`. With an empty basis this is exactly the
    /// energy-threshold truncation of the query matrix.
    pub fn update(&self, queries: &Matrix, epsilon: f64) -> Result<SubspaceBasis, LinalgError> {
        if queries.rows() != self.dim() {
            return Err(LinalgError::DimensionMismatch {
                op: "subspace update",
                left: self.basis.shape(),
                right: queries.shape(),
            });
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(LinalgError::InvalidThreshold(epsilon));
        }
        if queries.cols() == 0 {
            return Err(LinalgError::Empty {
                rows: queries.rows(),
                cols: 0,
            });
        }
        if self.is_empty() {
            let basis = linalg::k_rank_basis(queries, epsilon)?;
            return Ok(Self {
                basis,
                task_count: self.task_count + 1,
            });
        }
        if self.columns() == self.dim() {
            return Ok(Self {
                basis: self.basis.clone(),
                task_count: self.task_count + 1,
            });
        }

        let old = &self.basis;
        let total = sq(old.frobenius_norm()) + sq(queries.frobenius_norm());
        // Residual of the queries after removing the stored span (applied as
        // rows of queries^T). Projected twice to keep it clean.
        let qt = queries.transpose();
        let once = linalg::project_onto_complement(&qt, old)?;
        let residual = linalg::project_onto_complement(&once, old)?.transpose();
        let residual_energy = sq(residual.frobenius_norm());
        let captured = total - residual_energy;
        let target = epsilon * total;

        if captured >= target || residual_energy <= total * 1e-24 {
            return Ok(Self {
                basis: self.basis.clone(),
                task_count: self.task_count + 1,
            });
        }

        let dec = linalg::svd(&residual)?;
        let free = self.dim() - self.columns();
        let mut acc = captured;
        let mut k = 0;
        for s in dec.sigma.iter().take(free) {
            if acc >= target {
                break;
            }
            acc += s * s;
            k += 1;
        }
        let mut new_cols: Vec<Vec<f64>> = (0..k).map(|j| dec.u.column(j)).collect();
        // re-orthogonalise against the stored basis and each other
        let old_cols: Vec<Vec<f64>> = (0..old.cols()).map(|j| old.column(j)).collect();
        let mut kept: Vec<Vec<f64>> = Vec::with_capacity(k);
        for mut c in new_cols.drain(..) {
            for b in old_cols.iter().chain(kept.iter()) {
                let d = math::dot(&c, b);
                for (x, y) in c.iter_mut().zip(b) {
                    *x -= d * y;
                }
            }
            let n = math::norm(&c);
            if n > 1e-8 {
                kept.push(c.into_iter().map(|x| x / n).collect());
            }
        }
        let added = Matrix::from_columns(self.dim(), &kept)?;
        Ok(Self {
            basis: old.hcat(&added)?,
            task_count: self.task_count + 1,
        })
    }

    /// `Q^T v`.
    pub fn coefficients(&self, v: &[f64]) -> Vec<f64> {
        self.basis
            .transpose_mul_vec(v)
            .expect("vector dimension matches basis")
    }

    /// `|| v - Q Q^T v ||`. Panics if `v.len() != dim`.
    pub fn residual_norm(&self, v: &[f64]) -> f64 {
        assert_eq!(v.len(), self.dim(), "vector dimension must match basis");
        let coeffs = self.coefficients(v);
        let inside = self.basis.mul_vec(&coeffs).expect("conformant");
        let r: Vec<f64> = v.iter().zip(&inside).map(|(a, b)| a - b).collect();
        math::norm(&r)
    }

    /// Bytes needed to store the basis as `f64`.
    pub fn memory_bytes(&self) -> usize {
        self.dim() * self.columns() * core::mem::size_of::<f64>()
    }
}

fn sq(x: f64) -> f64 {
    x * x
}
