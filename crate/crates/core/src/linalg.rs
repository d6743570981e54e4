//! Dense complex linear algebra.
//!
//! A small row-major complex matrix type, a Hermitian wrapper that enforces
//! the symmetry invariant on construction, and a cyclic Jacobi eigensolver
//! for Hermitian matrices. Everything downstream (codebooks, leakage,
//! simulation) is built on these primitives.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Relative tolerance for the Hermitian symmetry check.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Jacobi stops once the off-diagonal Frobenius mass drops below this
/// fraction of `‖A‖_F`.
pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Dense complex matrix with `(row, col)` indexing.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        CMatrix { rows, cols, data }
    }

    /// Builds a matrix from row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(CMatrix { rows, cols, data })
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<Complex64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::DimensionMismatch("ragged column set".into()));
        }
        Ok(Self::from_fn(rows, cols, |r, c| columns[c][r]))
    }

    /// Column vector `rows x 1`.
    pub fn column_vector(v: &[Complex64]) -> Self {
        CMatrix {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn column(&self, c: usize) -> Vec<Complex64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn set_column(&mut self, c: usize, v: &[Complex64]) {
        assert_eq!(v.len(), self.rows, "column length");
        for (r, &z) in v.iter().enumerate() {
            self[(r, c)] = z;
        }
    }

    /// New matrix made of the listed columns, in order.
    pub fn select_columns(&self, idx: &[usize]) -> Self {
        Self::from_fn(self.rows, idx.len(), |r, c| self[(r, idx[c])])
    }

    /// The leading `n` columns.
    pub fn leading_columns(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.cols)).collect();
        self.select_columns(&idx)
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn matmul(&self, other: &CMatrix) -> Result<CMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let lhs = self.row(r);
            let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in lhs.iter().enumerate() {
                if a == ZERO {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^H · other` without materialising the adjoint.
    pub fn adjoint_mul(&self, other: &CMatrix) -> Result<CMatrix> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "({}x{})^H times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = CMatrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, a) in a_row.iter().enumerate() {
                let a = a.conj();
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(b_row) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn mat_vec(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `self^H · v`.
    pub fn adjoint_mat_vec(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "({}x{})^H times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![ZERO; self.cols];
        for (r, &x) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a.conj() * x;
            }
        }
        Ok(out)
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn sub(&self, other: &CMatrix) -> Result<CMatrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &CMatrix) -> Result<CMatrix> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &CMatrix, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<CMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &CMatrix) -> CMatrix {
        let (r2, c2) = (other.rows, other.cols);
        Self::from_fn(self.rows * r2, self.cols * c2, |r, c| {
            self[(r / r2, c / c2)] * other[(r % r2, c % c2)]
        })
    }

    /// `max |(A^H A − I)_{ij}|`.
    pub fn orthonormality_deviation(&self) -> f64 {
        let g = self.adjoint_mul(self).expect("square gram");
        g.sub(&CMatrix::identity(self.cols)).expect("same dims").max_abs()
    }

    /// `max |A − A^H|`, or infinity for non-square input.
    pub fn hermitian_asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for r in 0..self.rows {
            for c in r..self.cols {
                worst = worst.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        worst
    }
}

/// Unitary-invariant inner product `a^H b`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// A square matrix with `A = A^H`.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    /// Validates symmetry to [`HERMITIAN_TOL`] relative to the largest entry,
    /// then symmetrizes exactly.
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() || m.rows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "Hermitian matrix must be square and non-empty, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        if m.as_slice().iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        let asym = m.hermitian_asymmetry();
        if asym > HERMITIAN_TOL * m.max_abs().max(1.0) {
            return Err(Error::NotHermitian { asymmetry: asym });
        }
        Ok(Self::symmetrized(m))
    }

    fn symmetrized(mut m: CMatrix) -> Self {
        let n = m.rows();
        for r in 0..n {
            m[(r, r)] = Complex64::new(m[(r, r)].re, 0.0);
            for c in r + 1..n {
                let avg = (m[(r, c)] + m[(c, r)].conj()) * 0.5;
                m[(r, c)] = avg;
                m[(c, r)] = avg.conj();
            }
        }
        HermitianMatrix(m)
    }

    /// `W · diag(values) · W^H`, Hermitian by construction.
    pub fn from_spectral(vectors: &CMatrix, values: &[f64]) -> Result<Self> {
        if vectors.cols() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} eigenvalues for {} eigenvectors",
                values.len(),
                vectors.cols()
            )));
        }
        let n = vectors.rows();
        let mut out = CMatrix::zeros(n, n);
        for (d, &lam) in values.iter().enumerate() {
            for r in 0..n {
                let a = vectors[(r, d)] * lam;
                for c in 0..n {
                    out[(r, c)] += a * vectors[(c, d)].conj();
                }
            }
        }
        Ok(Self::symmetrized(out))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn kron(&self, other: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix(self.0.kron(&other.0))
    }

    /// `w^H A w`, real for Hermitian `A`.
    pub fn quadratic_form(&self, w: &[Complex64]) -> f64 {
        let aw = self.0.mat_vec(w).expect("matching length");
        inner(w, &aw).re
    }

    /// `Tr(W^H A W)`.
    pub fn projected_trace(&self, w: &CMatrix) -> Result<f64> {
        if w.rows() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} precoder against {}x{} matrix",
                w.rows(),
                w.cols(),
                self.dim(),
                self.dim()
            )));
        }
        Ok((0..w.cols()).map(|c| self.quadratic_form(&w.column(c))).sum())
    }
}

/// Eigen-decomposition `A = U Λ U^H` with descending eigenvalues.
#[derive(Clone, Debug)]
pub struct EvdResult {
    pub eigenvalues: Vec<f64>,
    /// Column `d` pairs with `eigenvalues[d]`.
    pub eigenvectors: CMatrix,
    pub sweeps: usize,
}

impl EvdResult {
    pub fn reconstruct(&self) -> HermitianMatrix {
        HermitianMatrix::from_spectral(&self.eigenvectors, &self.eigenvalues).expect("consistent dims")
    }

    /// `‖A − UΛU^H‖_F / ‖A‖_F`.
    pub fn reconstruction_residual(&self, a: &HermitianMatrix) -> f64 {
        let diff = a.matrix().sub(self.reconstruct().matrix()).expect("same dims");
        let denom = a.matrix().frobenius_norm();
        if denom == 0.0 {
            diff.frobenius_norm()
        } else {
            diff.frobenius_norm() / denom
        }
    }

    pub fn leading_vectors(&self, d: usize) -> CMatrix {
        self.eigenvectors.leading_columns(d)
    }
}

/// Cyclic Jacobi eigensolver for Hermitian matrices.
///
/// Sweeps visit pairs `(p, q)` with `p < q` in row order. Each rotation first
/// removes the phase of `a_pq` and then applies a real Givens rotation, so
/// the diagonal stays exactly real. The result is deterministic: a fixed
/// sweep order, a stable descending sort, and eigenvector phases fixed so
/// that the first non-negligible entry is real and non-negative.
pub fn hermitian_evd(a: &HermitianMatrix) -> EvdResult {
    let n = a.dim();
    let mut m = a.matrix().clone();
    let mut v = CMatrix::identity(n);
    let total = m.frobenius_norm();
    let target = JACOBI_TOL * total;

    let off_norm = |m: &CMatrix| -> f64 {
        let mut s = 0.0;
        for r in 0..n {
            for c in r + 1..n {
                s += m[(r, c)].norm_sqr();
            }
        }
        (2.0 * s).sqrt()
    };

    let mut sweeps = 0;
    while sweeps < JACOBI_MAX_SWEEPS && off_norm(&m) > target {
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                let b = apq.norm();
                if b == 0.0 || b < f64::MIN_POSITIVE.sqrt() * total {
                    continue;
                }
                let phase = apq / b; // e^{iφ}
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let theta = (aqq - app) / (2.0 * b);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let e_minus = phase.conj(); // e^{-iφ}

                // A ← A U on columns p, q.
                for r in 0..n {
                    let xp = m[(r, p)];
                    let xq = m[(r, q)];
                    m[(r, p)] = xp * c - xq * e_minus * s;
                    m[(r, q)] = xp * s + xq * e_minus * c;
                }
                // A ← U^H A on rows p, q.
                for col in 0..n {
                    let xp = m[(p, col)];
                    let xq = m[(q, col)];
                    m[(p, col)] = xp * c - xq * phase * s;
                    m[(q, col)] = xp * s + xq * phase * c;
                }
                m[(p, p)] = Complex64::new(app - t * b, 0.0);
                m[(q, q)] = Complex64::new(aqq + t * b, 0.0);
                m[(p, q)] = ZERO;
                m[(q, p)] = ZERO;

                for r in 0..n {
                    let xp = v[(r, p)];
                    let xq = v[(r, q)];
                    v[(r, p)] = xp * c - xq * e_minus * s;
                    v[(r, q)] = xp * s + xq * e_minus * c;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].re.total_cmp(&m[(i, i)].re).then(i.cmp(&j)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[(i, i)].re).collect();
    let mut vectors = v.select_columns(&order);
    fix_phases(&mut vectors);

    EvdResult {
        eigenvalues,
        eigenvectors: vectors,
        sweeps,
    }
}

/// Rotates each column so its first entry with magnitude above `1e-10` is
/// real and non-negative.
pub fn fix_phases(m: &mut CMatrix) {
    for c in 0..m.cols() {
        let col = m.column(c);
        let scale = norm(&col).max(f64::MIN_POSITIVE);
        if let Some(pivot) = col.iter().find(|z| z.norm() > 1e-10 * scale) {
            let rot = pivot.conj() / pivot.norm();
            let rotated: Vec<Complex64> = col.iter().map(|z| z * rot).collect();
            m.set_column(c, &rotated);
        }
    }
}

/// Hermitian Toeplitz matrix `A[m, n] = r[m − n]` with `r[−k] = conj(r[k])`.
pub fn toeplitz_from_correlation(r: &[Complex64]) -> Result<HermitianMatrix> {
    let n = r.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty correlation sequence".into()));
    }
    if r[0].im != 0.0 || r[0].re < 0.0 || !r[0].re.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "r[0] must be real and non-negative, got {}",
            r[0]
        )));
    }
    let m = CMatrix::from_fn(n, n, |i, j| if i >= j { r[i - j] } else { r[j - i].conj() });
    Ok(HermitianMatrix(m))
}

/// `Tr(A·B)` for Hermitian `A`, `B`; the imaginary residue is checked and
/// dropped.
pub fn trace_product(a: &HermitianMatrix, b: &HermitianMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", a.dim(), b.dim())));
    }
    let n = a.dim();
    let (am, bm) = (a.matrix(), b.matrix());
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..n {
            acc += am[(i, k)] * bm[(k, i)];
        }
    }
    let scale = am.frobenius_norm() * bm.frobenius_norm();
    if acc.im.abs() > 1e-10 * scale.max(1.0) {
        return Err(Error::NotHermitian { asymmetry: acc.im.abs() });
    }
    Ok(acc.re)
}

pub fn frobenius_distance(a: &CMatrix, b: &CMatrix) -> Result<f64> {
    Ok(a.sub(b)?.frobenius_norm())
}

/// Distance between the column spaces of two matrices with orthonormal
/// columns: `‖A A^H − B B^H‖_F`.
pub fn subspace_distance(a: &CMatrix, b: &CMatrix) -> Result<f64> {
    let pa = a.matmul(&a.adjoint())?;
    let pb = b.matmul(&b.adjoint())?;
    frobenius_distance(&pa, &pb)
}

/// Positive semi-definite square root via eigendecomposition; negative
/// round-off eigenvalues are clamped to zero.
pub fn psd_sqrt(a: &HermitianMatrix) -> CMatrix {
    let evd = hermitian_evd(a);
    let roots: Vec<f64> = evd.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    HermitianMatrix::from_spectral(&evd.eigenvectors, &roots)
        .expect("consistent dims")
        .into_matrix()
}

/// Cholesky factor `L` with `A = L L^H`. Fails when a pivot drops below
/// `rel_floor · max diag`.
pub fn cholesky(a: &CMatrix, rel_floor: f64) -> Result<CMatrix> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch("Cholesky of a non-square matrix".into()));
    }
    let n = a.rows();
    let max_diag = (0..n).map(|i| a[(i, i)].re).fold(0.0, f64::max);
    let floor = rel_floor * max_diag;
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > floor) || d <= 0.0 {
            return Err(Error::RankDeficient(format!(
                "pivot {j} is {d:.3e} (floor {floor:.3e})"
            )));
        }
        let djj = d.sqrt();
        l[(j, j)] = Complex64::new(djj, 0.0);
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `A X = B` for Hermitian positive definite `A` given its Cholesky
/// factor.
pub fn cholesky_solve(l: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let n = l.rows();
    if b.rows() != n {
        return Err(Error::DimensionMismatch(format!("{n}x{n} system with {} rows", b.rows())));
    }
    let mut x = b.clone();
    for col in 0..b.cols() {
        // forward: L y = b
        for i in 0..n {
            let mut s = x[(i, col)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, col)];
            }
            x[(i, col)] = s / l[(i, i)];
        }
        // backward: L^H x = y
        for i in (0..n).rev() {
            let mut s = x[(i, col)];
            for k in i + 1..n {
                s -= l[(k, i)].conj() * x[(k, col)];
            }
            x[(i, col)] = s / l[(i, i)];
        }
    }
    Ok(x)
}

/// Modified Gram–Schmidt with one re-orthogonalization pass.
///
/// Fails if a column's residual norm falls below `rel_tol` times its
/// original norm.
pub fn orthonormalize(m: &CMatrix, rel_tol: f64) -> Result<CMatrix> {
    if m.cols() == 0 {
        return Ok(CMatrix::zeros(m.rows(), 0));
    }
    let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(m.cols());
    for c in 0..m.cols() {
        let mut v = m.column(c);
        let original = norm(&v);
        for _pass in 0..2 {
            for b in &basis {
                let proj = inner(b, &v);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= proj * y;
                }
            }
        }
        let n = norm(&v);
        if original == 0.0 || n < rel_tol * original {
            return Err(Error::RankDeficient(format!(
                "column {c} is linearly dependent on the preceding columns"
            )));
        }
        basis.push(v.into_iter().map(|x| x / n).collect());
    }
    CMatrix::from_columns(&basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_gaussian, stream};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    pub(crate) fn random_hermitian(n: usize, seed: u64) -> HermitianMatrix {
        let mut rng = stream(seed, n as u64);
        let g = CMatrix::from_fn(n, n, |_, _| complex_gaussian(&mut rng));
        let h = g.add(&g.adjoint()).unwrap().scale(c(0.5, 0.0));
        HermitianMatrix::new(h).unwrap()
    }

    #[test]
    fn two_by_two_closed_form() {
        let a = CMatrix::from_row_major(2, 2, vec![c(2., 0.), c(0., 1.), c(0., -1.), c(2., 0.)]).unwrap();
        let evd = hermitian_evd(&HermitianMatrix::new(a.clone()).unwrap());
        assert!((evd.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((evd.eigenvalues[1] - 1.0).abs() < 1e-14);
        assert!(evd.reconstruction_residual(&HermitianMatrix::new(a).unwrap()) < 1e-14);
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let a = HermitianMatrix::new(CMatrix::identity(4)).unwrap();
        let evd = hermitian_evd(&a);
        assert_eq!(evd.eigenvalues, vec![1.0; 4]);
        assert!(evd.eigenvectors.orthonormality_deviation() < 1e-15);
        assert!(evd.reconstruction_residual(&a) < 1e-15);
    }

    #[test]
    fn rejects_non_hermitian() {
        let a = CMatrix::from_row_major(2, 2, vec![c(1., 0.), c(2., 0.), c(0., 0.), c(1., 0.)]).unwrap();
        match HermitianMatrix::new(a) {
            Err(Error::NotHermitian { asymmetry }) => assert!((asymmetry - 2.0).abs() < 1e-15),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn phase_convention_is_applied() {
        let a = random_hermitian(12, 5);
        let evd = hermitian_evd(&a);
        for d in 0..12 {
            let first = evd.eigenvectors.column(d).into_iter().find(|z| z.norm() > 1e-10).unwrap();
            assert!(first.im.abs() < 1e-15 && first.re > 0.0);
        }
    }

    #[test]
    fn evd_is_deterministic() {
        let a = random_hermitian(20, 9);
        let x = hermitian_evd(&a);
        let y = hermitian_evd(&a);
        assert_eq!(x.eigenvalues, y.eigenvalues);
        assert_eq!(x.eigenvectors, y.eigenvectors);
    }

    #[test]
    fn toeplitz_examples() {
        let t = toeplitz_from_correlation(&[c(1., 0.), c(0., 1.)]).unwrap();
        assert_eq!(t.matrix()[(0, 1)], c(0., -1.));
        assert_eq!(t.matrix()[(1, 0)], c(0., 1.));
        let eye = toeplitz_from_correlation(&[c(1., 0.), c(0., 0.), c(0., 0.)]).unwrap();
        assert_eq!(eye.matrix(), &CMatrix::identity(3));
        assert!(toeplitz_from_correlation(&[c(1., 0.5)]).is_err());
        assert!(toeplitz_from_correlation(&[c(-1., 0.)]).is_err());
    }

    #[test]
    fn trace_product_examples() {
        let a = random_hermitian(5, 1);
        let eye = HermitianMatrix::new(CMatrix::identity(5)).unwrap();
        assert!((trace_product(&eye, &a).unwrap() - a.matrix().trace().re).abs() < 1e-12);
        let half = HermitianMatrix::new(CMatrix::from_fn(2, 2, |_, _| c(0.5, 0.))).unwrap();
        assert!((trace_product(&half, &half).unwrap() - 1.0).abs() < 1e-15);
        assert!(trace_product(&a, &eye_dim(3)).is_err());
    }

    fn eye_dim(n: usize) -> HermitianMatrix {
        HermitianMatrix::new(CMatrix::identity(n)).unwrap()
    }

    #[test]
    fn frobenius_examples() {
        let a = random_hermitian(4, 2);
        assert_eq!(frobenius_distance(a.matrix(), a.matrix()).unwrap(), 0.0);
        let d = frobenius_distance(&CMatrix::identity(4), &CMatrix::zeros(4, 4)).unwrap();
        assert!((d - 2.0).abs() < 1e-15);
        assert!(frobenius_distance(&CMatrix::identity(4), &CMatrix::identity(3)).is_err());

        // double-loop oracle
        let b = random_hermitian(4, 3);
        let mut s = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                s += (a.matrix()[(i, j)] - b.matrix()[(i, j)]).norm_sqr();
            }
        }
        assert!((frobenius_distance(a.matrix(), b.matrix()).unwrap() - s.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn cholesky_solves_and_detects_singularity() {
        let g = random_hermitian(6, 8);
        let spd = g.matrix().matmul(g.matrix()).unwrap().add(&CMatrix::identity(6)).unwrap();
        let l = cholesky(&spd, 1e-12).unwrap();
        let b = CMatrix::from_fn(6, 2, |r, c2| c(r as f64, c2 as f64));
        let x = cholesky_solve(&l, &b).unwrap();
        let back = spd.matmul(&x).unwrap();
        assert!(frobenius_distance(&back, &b).unwrap() < 1e-10);

        let rank1 = CMatrix::from_fn(3, 3, |_, _| c(1., 0.));
        assert!(cholesky(&rank1, 1e-10).is_err());
    }

    #[test]
    fn orthonormalize_rejects_dependent_columns() {
        let m = CMatrix::from_fn(4, 2, |r, _| c(r as f64, 1.0));
        assert!(orthonormalize(&m, 1e-8).is_err());
        let ok = CMatrix::from_fn(4, 3, |r, c2| c(((r + 1).pow(c2 as u32 + 1)) as f64, (r * c2) as f64));
        let q = orthonormalize(&ok, 1e-8).unwrap();
        assert!(q.orthonormality_deviation() < 1e-13);
    }

    #[test]
    fn kron_dims_and_entries() {
        let a = CMatrix::from_fn(2, 2, |r, c2| c((r * 2 + c2) as f64, 0.));
        let b = CMatrix::identity(3);
        let k = a.kron(&b);
        assert_eq!((k.rows(), k.cols()), (6, 6));
        assert_eq!(k[(3, 0)], c(2., 0.));
        assert_eq!(k[(4, 1)], c(2., 0.));
        assert_eq!(k[(4, 2)], c(0., 0.));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn evd_invariants(n in 1usize..24, seed in any::<u64>()) {
            let a = random_hermitian(n, seed);
            let evd = hermitian_evd(&a);
            prop_assert!(evd.reconstruction_residual(&a) <= 1e-9);
            prop_assert!(evd.eigenvectors.orthonormality_deviation() <= 1e-10);
            prop_assert!(evd.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
            let trace: f64 = evd.eigenvalues.iter().sum();
            prop_assert!((trace - a.matrix().trace().re).abs() < 1e-9 * (1.0 + trace.abs()));
        }

        #[test]
        fn trace_product_commutes(n in 1usize..12, s1 in any::<u64>(), s2 in any::<u64>()) {
            let a = random_hermitian(n, s1);
            let b = random_hermitian(n, s2.wrapping_add(1));
            let ab = trace_product(&a, &b).unwrap();
            let ba = trace_product(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-10 * (1.0 + ab.abs()));
        }

        #[test]
        fn toeplitz_is_exactly_hermitian(re in proptest::collection::vec(-2.0f64..2.0, 1..16),
                                         im in proptest::collection::vec(-2.0f64..2.0, 16)) {
            let mut r: Vec<Complex64> = re.iter().zip(&im).map(|(&a, &b)| c(a, b)).collect();
            r[0] = c(r[0].re.abs(), 0.0);
            let t = toeplitz_from_correlation(&r).unwrap();
            prop_assert_eq!(t.matrix().hermitian_asymmetry(), 0.0);
        }
    }
}
