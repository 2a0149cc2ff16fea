//! Fixed-capacity complex matrices for the pointwise algebra (n ≤ 3).
//!
//! Every grid point carries a handful of n×n Hermitian matrices, so these are
//! plain stack values with no allocation. Hermitian eigenvalues come from a
//! closed form for n = 2 and cyclic complex Jacobi otherwise.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use num_complex::Complex64;

use crate::error::{DhymError, Result};

pub const MAX_DIM: usize = 3;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CMat {
    n: usize,
    a: [[Complex64; MAX_DIM]; MAX_DIM],
}

impl CMat {
    pub fn zeros(n: usize) -> Self {
        assert!(
            (1..=MAX_DIM).contains(&n),
            "matrix dimension {n} out of range"
        );
        CMat {
            n,
            a: [[ZERO; MAX_DIM]; MAX_DIM],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n);
        for i in 0..n {
            m.a[i][i] = ONE;
        }
        m
    }

    pub fn scalar(n: usize, c: f64) -> Self {
        CMat::identity(n) * c
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let mut m = CMat::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.a[i][i] = Complex64::new(d, 0.0);
        }
        m
    }

    /// Builds a matrix from row slices; every row must have `rows.len()` entries.
    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let n = rows.len();
        if !(1..=MAX_DIM).contains(&n) {
            return Err(DhymError::InvalidDimension(n));
        }
        let mut m = CMat::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(DhymError::ShapeMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                m.a[i][j] = v;
            }
        }
        Ok(m)
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<Complex64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| Complex64::new(x, 0.0)).collect())
            .collect();
        CMat::from_rows(&rows)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> Vec<Vec<Complex64>> {
        (0..self.n).map(|i| self.a[i][..self.n].to_vec()).collect()
    }

    pub fn adjoint(&self) -> Self {
        let mut m = CMat::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m.a[i][j] = self.a[j][i].conj();
            }
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let mut m = CMat::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m.a[i][j] = self.a[j][i];
            }
        }
        m
    }

    pub fn conj(&self) -> Self {
        let mut m = *self;
        for i in 0..self.n {
            for j in 0..self.n {
                m.a[i][j] = self.a[i][j].conj();
            }
        }
        m
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.n).map(|i| self.a[i][i]).sum()
    }

    pub fn det(&self) -> Complex64 {
        let a = &self.a;
        match self.n {
            1 => a[0][0],
            2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
            _ => {
                a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                    - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                    + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
            }
        }
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s += self.a[i][j].norm_sqr();
            }
        }
        s.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                m = m.max(self.a[i][j].norm());
            }
        }
        m
    }

    /// Largest entrywise |M − M*|.
    pub fn hermitian_deviation(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.n {
            for j in i..self.n {
                d = d.max((self.a[i][j] - self.a[j][i].conj()).norm());
            }
        }
        d
    }

    /// Replaces the matrix by its Hermitian part (M + M*)/2.
    pub fn hermitize(&self) -> Self {
        let mut m = CMat::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m.a[i][j] = (self.a[i][j] + self.a[j][i].conj()) * 0.5;
            }
        }
        m
    }

    /// Lower-triangular L with L L* = self, or `None` if not positive definite.
    pub fn cholesky(&self) -> Option<Self> {
        let n = self.n;
        let mut l = CMat::zeros(n);
        for j in 0..n {
            let mut d = self.a[j][j].re;
            for k in 0..j {
                d -= l.a[j][k].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l.a[j][j] = Complex64::new(djj, 0.0);
            for i in (j + 1)..n {
                let mut s = self.a[i][j];
                for k in 0..j {
                    s -= l.a[i][k] * l.a[j][k].conj();
                }
                l.a[i][j] = s / djj;
            }
        }
        Some(l)
    }

    /// Inverse of a lower-triangular matrix.
    pub fn lower_inverse(&self) -> Self {
        let n = self.n;
        let mut inv = CMat::zeros(n);
        for j in 0..n {
            inv.a[j][j] = ONE / self.a[j][j];
            for i in (j + 1)..n {
                let mut s = ZERO;
                for k in j..i {
                    s += self.a[i][k] * inv.a[k][j];
                }
                inv.a[i][j] = -s / self.a[i][i];
            }
        }
        inv
    }

    /// General inverse by Gauss–Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Option<Self> {
        let n = self.n;
        let mut a = self.a;
        let mut inv = CMat::identity(n).a;
        for col in 0..n {
            let mut piv = col;
            for r in (col + 1)..n {
                if a[r][col].norm() > a[piv][col].norm() {
                    piv = r;
                }
            }
            if a[piv][col].norm() == 0.0 {
                return None;
            }
            a.swap(col, piv);
            inv.swap(col, piv);
            let p = ONE / a[col][col];
            for j in 0..n {
                a[col][j] *= p;
                inv[col][j] *= p;
            }
            for r in 0..n {
                if r != col {
                    let f = a[r][col];
                    if f != ZERO {
                        for j in 0..n {
                            let (acj, icj) = (a[col][j], inv[col][j]);
                            a[r][j] -= f * acj;
                            inv[r][j] -= f * icj;
                        }
                    }
                }
            }
        }
        Some(CMat { n, a: inv })
    }

    /// Inverse of a Hermitian positive-definite matrix, returned exactly Hermitian.
    pub fn hermitian_inverse(&self) -> Option<Self> {
        let l = self.cholesky()?;
        let li = l.lower_inverse();
        Some((li.adjoint() * li).hermitize())
    }

    /// Eigenvalues of a Hermitian matrix in ascending order.
    pub fn hermitian_eigenvalues(&self) -> [f64; MAX_DIM] {
        match self.n {
            1 => [self.a[0][0].re, 0.0, 0.0],
            2 => {
                let a = self.a[0][0].re;
                let d = self.a[1][1].re;
                let mean = 0.5 * (a + d);
                let r = (0.5 * (a - d)).hypot(self.a[0][1].norm());
                [mean - r, mean + r, 0.0]
            }
            _ => jacobi(self, false).0,
        }
    }

    /// Eigenvalues (ascending) and unitary eigenvector matrix (columns).
    pub fn hermitian_eigen(&self) -> ([f64; MAX_DIM], CMat) {
        jacobi(self, true)
    }
}

/// Cyclic Jacobi for Hermitian matrices: each rotation first removes the phase
/// of the pivot entry, then applies a real Givens rotation.
fn jacobi(m: &CMat, want_vectors: bool) -> ([f64; MAX_DIM], CMat) {
    let n = m.n;
    let mut a = m.hermitize();
    let mut v = CMat::identity(n);
    let scale = a.norm();
    if n > 1 && scale > 0.0 {
        for _sweep in 0..64 {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a.a[p][q].norm_sqr();
                }
            }
            if off <= (1e-18 * scale).powi(2) {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let b = a.a[p][q];
                    let beta = b.norm();
                    if beta <= 1e-300 {
                        continue;
                    }
                    let phase = b / beta;
                    let alpha = a.a[p][p].re;
                    let gamma = a.a[q][q].re;
                    let zeta = (gamma - alpha) / (2.0 * beta);
                    let t = zeta.signum() / (zeta.abs() + (zeta * zeta + 1.0).sqrt());
                    let t = if zeta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    // U = D R with D = diag(.., 1 at p, conj(phase) at q, ..)
                    let mut u = CMat::identity(n);
                    u.a[p][p] = Complex64::new(c, 0.0);
                    u.a[p][q] = Complex64::new(s, 0.0);
                    u.a[q][p] = phase.conj() * (-s);
                    u.a[q][q] = phase.conj() * c;
                    a = (u.adjoint() * a * u).hermitize();
                    a.a[p][q] = ZERO;
                    a.a[q][p] = ZERO;
                    if want_vectors {
                        v = v * u;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.a[i][i].re.total_cmp(&a.a[j][j].re));
    let mut vals = [0.0; MAX_DIM];
    let mut vecs = CMat::zeros(n);
    for (k, &i) in order.iter().enumerate() {
        vals[k] = a.a[i][i].re;
        for r in 0..n {
            vecs.a[r][k] = v.a[r][i];
        }
    }
    (vals, vecs)
}

impl Index<(usize, usize)> for CMat {
    type Output = Complex64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        debug_assert!(i < self.n && j < self.n);
        &self.a[i][j]
    }
}

impl IndexMut<(usize, usize)> for CMat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        debug_assert!(i < self.n && j < self.n);
        &mut self.a[i][j]
    }
}

impl Add for CMat {
    type Output = CMat;
    fn add(mut self, rhs: CMat) -> CMat {
        self += rhs;
        self
    }
}

impl AddAssign for CMat {
    fn add_assign(&mut self, rhs: CMat) {
        debug_assert_eq!(self.n, rhs.n);
        for i in 0..self.n {
            for j in 0..self.n {
                self.a[i][j] += rhs.a[i][j];
            }
        }
    }
}

impl Sub for CMat {
    type Output = CMat;
    fn sub(mut self, rhs: CMat) -> CMat {
        debug_assert_eq!(self.n, rhs.n);
        for i in 0..self.n {
            for j in 0..self.n {
                self.a[i][j] -= rhs.a[i][j];
            }
        }
        self
    }
}

impl Neg for CMat {
    type Output = CMat;
    fn neg(self) -> CMat {
        self * -1.0
    }
}

impl Mul for CMat {
    type Output = CMat;
    fn mul(self, rhs: CMat) -> CMat {
        debug_assert_eq!(self.n, rhs.n);
        let n = self.n;
        let mut m = CMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.a[i][k];
                for j in 0..n {
                    m.a[i][j] += aik * rhs.a[k][j];
                }
            }
        }
        m
    }
}

impl Mul<f64> for CMat {
    type Output = CMat;
    fn mul(mut self, s: f64) -> CMat {
        for i in 0..self.n {
            for j in 0..self.n {
                self.a[i][j] *= s;
            }
        }
        self
    }
}

impl Mul<Complex64> for CMat {
    type Output = CMat;
    fn mul(mut self, s: Complex64) -> CMat {
        for i in 0..self.n {
            for j in 0..self.n {
                self.a[i][j] *= s;
            }
        }
        self
    }
}

/// Tr(A B) without forming the product.
#[inline]
pub fn trace_prod(a: &CMat, b: &CMat) -> Complex64 {
    let n = a.n;
    let mut s = ZERO;
    for i in 0..n {
        for k in 0..n {
            s += a.a[i][k] * b.a[k][i];
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn sample_hermitian() -> CMat {
        CMat::from_rows(&[
            vec![c(2.0, 0.0), c(0.5, -1.0), c(0.1, 0.3)],
            vec![c(0.5, 1.0), c(-1.0, 0.0), c(0.7, 0.2)],
            vec![c(0.1, -0.3), c(0.7, -0.2), c(0.4, 0.0)],
        ])
        .unwrap()
    }

    #[test]
    fn jacobi_diagonalizes() {
        let a = sample_hermitian();
        let (vals, v) = a.hermitian_eigen();
        let lam = CMat::from_real_diag(&vals[..3]);
        let resid = (a * v - v * lam).norm();
        assert!(resid < 1e-13 * a.norm(), "residual {resid}");
        let unit = (v.adjoint() * v - CMat::identity(3)).norm();
        assert!(unit < 1e-13);
        assert!(vals[0] <= vals[1] && vals[1] <= vals[2]);
        let tr: f64 = vals.iter().sum();
        assert!((tr - a.trace().re).abs() < 1e-13);
    }

    #[test]
    fn closed_form_2x2_matches_jacobi() {
        let a = CMat::from_rows(&[
            vec![c(1.5, 0.0), c(-0.3, 0.8)],
            vec![c(-0.3, -0.8), c(-2.0, 0.0)],
        ])
        .unwrap();
        let fast = a.hermitian_eigenvalues();
        let (slow, _) = a.hermitian_eigen();
        assert!((fast[0] - slow[0]).abs() < 1e-14);
        assert!((fast[1] - slow[1]).abs() < 1e-14);
    }

    #[test]
    fn inverse_and_cholesky() {
        let mut a = sample_hermitian();
        a += CMat::scalar(3, 4.0);
        let l = a.cholesky().expect("positive definite");
        assert!((l * l.adjoint() - a).norm() < 1e-13);
        let inv = a.hermitian_inverse().unwrap();
        assert!((inv * a - CMat::identity(3)).norm() < 1e-13);
        let ginv = a.inverse().unwrap();
        assert!((ginv - inv).norm() < 1e-13);
        let det: Complex64 = (0..3).map(|i| l[(i, i)] * l[(i, i)]).product();
        assert!((a.det() - det).norm() < 1e-12);
    }

    #[test]
    fn indefinite_has_no_cholesky() {
        assert!(CMat::from_real_diag(&[1.0, -1.0]).cholesky().is_none());
        assert!(CMat::from_real_diag(&[0.0]).cholesky().is_none());
    }

    #[test]
    fn repeated_eigenvalues() {
        let a = CMat::scalar(3, 2.5);
        let (vals, _) = a.hermitian_eigen();
        assert_eq!(&vals[..3], &[2.5, 2.5, 2.5]);
    }
}
