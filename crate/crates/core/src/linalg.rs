//! Dense row-major `f64` matrices, one-sided Jacobi SVD, energy-threshold
//! rank truncation and projection onto the orthogonal complement of a basis.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("data length {len} does not match {rows}x{cols}")]
    LengthMismatch {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("empty matrix ({rows}x{cols})")]
    Empty { rows: usize, cols: usize },
    #[error("jacobi svd did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("matrix is identically zero; no basis can be extracted")]
    ZeroMatrix,
    #[error("energy threshold {0} must lie strictly between 0 and 1")]
    InvalidThreshold(f64),
}

pub type Result<T> = core::result::Result<T, LinalgError>;

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::LengthMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: i / cols.max(1),
                col: i % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(LinalgError::DimensionMismatch {
                    op: "from_rows",
                    left: (r, row.len()),
                    right: (r, cols),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Builds a `dim x columns.len()` matrix whose columns are the given vectors.
    pub fn from_columns(dim: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let mut m = Self::zeros(dim, columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.len() != dim {
                return Err(LinalgError::DimensionMismatch {
                    op: "from_columns",
                    left: (c.len(), 1),
                    right: (dim, 1),
                });
            }
            for (i, &x) in c.iter().enumerate() {
                m.data[i * m.cols + j] = x;
            }
        }
        if m.data.iter().any(|x| !x.is_finite()) {
            let i = m.data.iter().position(|x| !x.is_finite()).unwrap_or(0);
            return Err(LinalgError::NonFinite {
                row: i / m.cols.max(1),
                col: i % m.cols.max(1),
            });
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(LinalgError::DimensionMismatch {
                op: "mul_vec",
                left: self.shape(),
                right: (v.len(), 1),
            });
        }
        Ok((0..self.rows).map(|r| math::dot(self.row(r), v)).collect())
    }

    /// `self^T * v`.
    pub fn transpose_mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.rows != v.len() {
            return Err(LinalgError::DimensionMismatch {
                op: "transpose_mul_vec",
                left: self.shape(),
                right: (v.len(), 1),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (r, &x) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a * x;
            }
        }
        Ok(out)
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(LinalgError::DimensionMismatch {
                op: "hcat",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let cols = self.cols + other.cols;
        let mut out = Matrix::zeros(self.rows, cols);
        for r in 0..self.rows {
            out.data[r * cols..r * cols + self.cols].copy_from_slice(self.row(r));
            out.data[r * cols + self.cols..(r + 1) * cols].copy_from_slice(other.row(r));
        }
        Ok(out)
    }

    /// First `k` columns.
    pub fn leading_columns(&self, k: usize) -> Matrix {
        let k = k.min(self.cols);
        let mut out = Matrix::zeros(self.rows, k);
        for r in 0..self.rows {
            out.data[r * k..(r + 1) * k].copy_from_slice(&self.row(r)[..k]);
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        math::norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(LinalgError::DimensionMismatch {
                op: "sub",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }
}

/// Thin SVD `a = u * diag(sigma) * vt` with `r = min(rows, cols)` factors.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for r in 0..us.rows {
            for (c, s) in self.sigma.iter().enumerate() {
                us.data[r * us.cols + c] *= s;
            }
        }
        us.matmul(&self.vt).expect("svd factors are conformant")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SvdOptions {
    pub max_sweeps: usize,
    /// Relative orthogonality tolerance between column pairs.
    pub tolerance: f64,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 80,
            tolerance: 4.0 * f64::EPSILON,
        }
    }
}

pub fn svd(a: &Matrix) -> Result<SvdResult> {
    svd_with(a, SvdOptions::default())
}

pub fn svd_with(a: &Matrix, opts: SvdOptions) -> Result<SvdResult> {
    if a.rows == 0 || a.cols == 0 {
        return Err(LinalgError::Empty {
            rows: a.rows,
            cols: a.cols,
        });
    }
    if let Some(i) = a.data.iter().position(|x| !x.is_finite()) {
        return Err(LinalgError::NonFinite {
            row: i / a.cols,
            col: i % a.cols,
        });
    }
    let mut out = if a.rows >= a.cols {
        let (u, sigma, v) = jacobi_tall(a, opts)?;
        SvdResult {
            u,
            sigma,
            vt: v.transpose(),
        }
    } else {
        // a^T = u' s v'^T  =>  a = v' s u'^T
        let (u, sigma, v) = jacobi_tall(&a.transpose(), opts)?;
        SvdResult {
            u: v,
            sigma,
            vt: u.transpose(),
        }
    };
    fix_signs(&mut out);
    Ok(out)
}

/// One-sided (Hestenes) Jacobi on a matrix with `rows >= cols`. Returns
/// column-orthonormal `u` (rows x cols), descending `sigma`, orthogonal `v`.
fn jacobi_tall(a: &Matrix, opts: SvdOptions) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (m, n) = a.shape();
    // column-major working copies
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = opts.tolerance * math::sqrt(m as f64).max(1.0);
    // columns below this norm are numerically zero and never rotated
    let negligible = f64::EPSILON * a.frobenius_norm() * (n as f64);
    let negligible_sq = negligible * negligible;

    let mut converged = n < 2;
    for _ in 0..opts.max_sweeps {
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = math::dot(&w[p], &w[p]);
                let beta = math::dot(&w[q], &w[q]);
                let gamma = math::dot(&w[p], &w[q]);
                if gamma == 0.0
                    || alpha <= negligible_sq
                    || beta <= negligible_sq
                    || gamma.abs() <= tol * math::sqrt(alpha * beta)
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + math::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / math::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence {
            sweeps: opts.max_sweeps,
        });
    }

    let norms: Vec<f64> = w.iter().map(|c| math::norm(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: ties keep column order
    order.sort_by(|&i, &j| {
        norms[j]
            .partial_cmp(&norms[i])
            .unwrap_or(core::cmp::Ordering::Equal)
    });

    let floor = negligible.max(f64::MIN_POSITIVE);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut needs_completion = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        let s = norms[j];
        if s > floor {
            u_cols.push(w[j].iter().map(|x| x / s).collect());
            sigma.push(s);
        } else {
            u_cols.push(vec![0.0; m]);
            sigma.push(0.0);
            needs_completion.push(slot);
        }
        v_cols.push(v[j].clone());
    }
    complete_orthonormal(&mut u_cols, &needs_completion, m);

    let u = Matrix::from_columns(m, &u_cols)?;
    let v = Matrix::from_columns(n, &v_cols)?;
    Ok((u, sigma, v))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let cp = &mut head[p];
    let cq = &mut tail[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let a = *x;
        let b = *y;
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills the listed (zero) columns with unit vectors orthogonal to every
/// other column, drawn from the standard basis by Gram-Schmidt.
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize], dim: usize) {
    let mut candidate = 0;
    for &slot in missing {
        while candidate < dim {
            let mut e = vec![0.0; dim];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (k, c) in cols.iter().enumerate() {
                    if k == slot || (missing.contains(&k) && c.iter().all(|x| *x == 0.0)) {
                        continue;
                    }
                    let d = math::dot(&e, c);
                    for (ei, ci) in e.iter_mut().zip(c) {
                        *ei -= d * ci;
                    }
                }
            }
            let n = math::norm(&e);
            if n > 1e-8 {
                cols[slot] = e.into_iter().map(|x| x / n).collect();
                break;
            }
        }
    }
}

/// Makes the largest-magnitude entry of each left singular vector
/// non-negative, flipping the matching row of `vt`.
fn fix_signs(svd: &mut SvdResult) {
    for j in 0..svd.u.cols {
        let mut best = 0;
        for r in 0..svd.u.rows {
            if svd.u.get(r, j).abs() > svd.u.get(best, j).abs() {
                best = r;
            }
        }
        if svd.u.get(best, j) < 0.0 {
            for r in 0..svd.u.rows {
                let x = svd.u.get(r, j);
                svd.u.set(r, j, -x);
            }
            for x in svd.vt.row_mut(j) {
                *x = -*x;
            }
        }
    }
}

/// Smallest `k` whose leading squared singular values hold at least
/// `epsilon` of the total energy.
pub fn energy_rank(sigma: &[f64], epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(LinalgError::InvalidThreshold(epsilon));
    }
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return Err(LinalgError::ZeroMatrix);
    }
    let target = epsilon * total;
    let mut acc = 0.0;
    for (i, s) in sigma.iter().enumerate() {
        acc += s * s;
        if acc >= target {
            return Ok(i + 1);
        }
    }
    Ok(sigma.len())
}

/// Orthonormal basis made of the first `k` left singular vectors of `a`,
/// with `k` chosen by [`energy_rank`].
pub fn k_rank_basis(a: &Matrix, epsilon: f64) -> Result<Matrix> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(LinalgError::InvalidThreshold(epsilon));
    }
    let dec = svd(a)?;
    let k = energy_rank(&dec.sigma, epsilon)?;
    Ok(dec.u.leading_columns(k))
}

/// `k (I - q q^T)`: removes from every row of `k` its component in the span
/// of the orthonormal columns of `q`.
pub fn project_onto_complement(k: &Matrix, q: &Matrix) -> Result<Matrix> {
    if k.cols != q.rows {
        return Err(LinalgError::DimensionMismatch {
            op: "project_onto_complement",
            left: k.shape(),
            right: q.shape(),
        });
    }
    if q.cols == 0 {
        return Ok(k.clone());
    }
    let coeffs = k.matmul(q)?;
    let inside = coeffs.matmul(&q.transpose())?;
    k.sub(&inside)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed;
        Matrix::new(rows, cols, (0..rows * cols).map(|_| lcg(&mut s)).collect()).unwrap()
    }

    fn orthonormality_error(u: &Matrix) -> f64 {
        let g = u.transpose().matmul(u).unwrap();
        g.sub(&Matrix::identity(u.cols())).unwrap().frobenius_norm()
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let s = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(s.sigma, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_gives_sorted_values_and_signed_permutations() {
        let s = svd(&Matrix::from_diag(&[1.0, 3.0, 2.0])).unwrap();
        assert_eq!(s.sigma, vec![3.0, 2.0, 1.0]);
        for m in [&s.u, &s.vt] {
            for r in 0..3 {
                let nz: Vec<f64> = m.row(r).iter().copied().filter(|x| *x != 0.0).collect();
                assert_eq!(nz.len(), 1);
                assert_eq!(nz[0].abs(), 1.0);
            }
        }
    }

    #[test]
    fn wide_and_tall_reconstruct() {
        for (r, c, seed) in [(5, 8, 1), (8, 5, 2), (1, 4, 3), (4, 1, 4), (17, 17, 5)] {
            let a = random(r, c, seed);
            let s = svd(&a).unwrap();
            let err = s.reconstruct().sub(&a).unwrap().frobenius_norm() / a.frobenius_norm();
            assert!(err < 1e-12, "{r}x{c}: {err}");
            assert!(orthonormality_error(&s.u) < 1e-12);
            assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rank_deficient_input_still_gets_orthonormal_u() {
        // two identical columns plus a zero column
        let a = Matrix::from_rows(&[
            vec![1.0, 1.0, 0.0],
            vec![2.0, 2.0, 0.0],
            vec![0.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0],
        ])
        .unwrap();
        let s = svd(&a).unwrap();
        assert!(orthonormality_error(&s.u) < 1e-12);
        assert!(s.reconstruct().sub(&a).unwrap().frobenius_norm() < 1e-12);
        assert_eq!(s.sigma[2], 0.0);
    }

    #[test]
    fn zero_matrix_svd_is_defined_but_has_no_basis() {
        let z = Matrix::zeros(3, 2);
        let s = svd(&z).unwrap();
        assert_eq!(s.sigma, vec![0.0, 0.0]);
        assert!(orthonormality_error(&s.u) < 1e-12);
        assert_eq!(k_rank_basis(&z, 0.5), Err(LinalgError::ZeroMatrix));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0, f64::NAN, 0.0, 0.0]),
            Err(LinalgError::NonFinite { row: 0, col: 1 })
        ));
        assert!(matches!(
            svd(&Matrix::zeros(0, 3)),
            Err(LinalgError::Empty { .. })
        ));
        assert!(matches!(
            k_rank_basis(&Matrix::identity(2), 1.0),
            Err(LinalgError::InvalidThreshold(_))
        ));
    }

    #[test]
    fn sweep_cap_reports_failure() {
        let a = random(6, 6, 9);
        let opts = SvdOptions {
            max_sweeps: 1,
            tolerance: 0.0,
        };
        assert_eq!(
            svd_with(&a, opts),
            Err(LinalgError::NoConvergence { sweeps: 1 })
        );
    }

    #[test]
    fn k_rank_on_diagonal() {
        let d = Matrix::from_diag(&[3.0, 2.0, 1.0]);
        assert_eq!(k_rank_basis(&d, 0.6).unwrap().cols(), 1);
        assert_eq!(k_rank_basis(&d, 0.99).unwrap().cols(), 3);
        // 13/14 of the energy sits in the first two values
        assert_eq!(k_rank_basis(&d, 13.0 / 14.0 - 1e-9).unwrap().cols(), 2);
    }

    #[test]
    fn k_rank_on_orthonormal_columns_keeps_everything() {
        let q = svd(&random(6, 4, 11)).unwrap().u;
        assert_eq!(k_rank_basis(&q, 0.999_999).unwrap().cols(), 4);
    }

    #[test]
    fn axis_projection() {
        let k = Matrix::from_rows(&[vec![1.0, 1.0, 0.0]]).unwrap();
        let q = Matrix::from_columns(3, &[vec![1.0, 0.0, 0.0]]).unwrap();
        let p = project_onto_complement(&k, &q).unwrap();
        assert_eq!(p.row(0), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_basis_leaves_keys_alone() {
        let k = random(3, 4, 5);
        let q = Matrix::zeros(4, 0);
        assert_eq!(project_onto_complement(&k, &q).unwrap(), k);
    }

    #[test]
    fn projection_dimension_mismatch() {
        let k = random(3, 4, 5);
        let q = Matrix::zeros(3, 1);
        assert!(matches!(
            project_onto_complement(&k, &q),
            Err(LinalgError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn projection_matches_gram_schmidt_residual() {
        let basis = svd(&random(4, 4, 21)).unwrap().u.leading_columns(2);
        let k = random(5, 4, 22);
        let p = project_onto_complement(&k, &basis).unwrap();
        // Gram-Schmidt residual oracle
        let b0 = basis.column(0);
        let b1 = basis.column(1);
        for r in 0..k.rows() {
            let mut v = k.row(r).to_vec();
            for b in [&b0, &b1] {
                let d = math::dot(&v, b);
                for (x, y) in v.iter_mut().zip(b.iter()) {
                    *x -= d * y;
                }
            }
            for (a, b) in p.row(r).iter().zip(&v) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!(math::dot(p.row(r), &b0).abs() < 1e-9);
            assert!(math::dot(p.row(r), &b1).abs() < 1e-9);
        }
    }
}
