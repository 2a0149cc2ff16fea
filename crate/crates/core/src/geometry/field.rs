//! Grid-sampled fields. Values are stored row-major over the real axes
//! `(x_1, .., x_n, y_1, .., y_n)`, the last axis varying fastest.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{DhymError, Result};
use crate::geometry::reduce;
use crate::linalg::CMat;

const PAR_POINTS: usize = 1 << 14;

/// Real scalar field (u, θ, diagnostics).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

/// Complex scalar field (ζ, first derivatives u_i).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    pub values: Vec<Complex64>,
}

/// n×n complex matrix per grid point, packed row-major per point.
///
/// Holds F_{ij̄}, u_{ij̄}, η and also non-Hermitian tensors such as u_{ij̄k}
/// for a fixed k.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixField {
    n: usize,
    data: Vec<Complex64>,
}

impl ScalarField {
    pub fn zeros(len: usize) -> Self {
        ScalarField {
            values: vec![0.0; len],
        }
    }

    pub fn constant(len: usize, c: f64) -> Self {
        ScalarField {
            values: vec![c; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        reduce::max(&self.values)
    }

    pub fn min(&self) -> f64 {
        reduce::min(&self.values)
    }

    pub fn sup_abs(&self) -> f64 {
        reduce::sup_abs(&self.values)
    }

    /// sup − inf.
    pub fn oscillation(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn mean(&self) -> f64 {
        reduce::pairwise_sum(&self.values) / self.values.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync + Send) -> ScalarField {
        ScalarField {
            values: par_map(&self.values, |&x| f(x)),
        }
    }

    pub fn zip_map(
        &self,
        other: &ScalarField,
        f: impl Fn(f64, f64) -> f64 + Sync + Send,
    ) -> ScalarField {
        assert_eq!(self.len(), other.len());
        let values = if self.len() >= PAR_POINTS {
            self.values
                .par_iter()
                .zip(other.values.par_iter())
                .map(|(&a, &b)| f(a, b))
                .collect()
        } else {
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect()
        };
        ScalarField { values }
    }

    /// self + s·other
    pub fn axpy(&self, s: f64, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn scaled(&self, s: f64) -> ScalarField {
        self.map(|x| s * x)
    }

    /// Errors on the first NaN/Inf entry.
    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        match self.values.iter().position(|x| !x.is_finite()) {
            Some(index) => Err(DhymError::NonFinite { what, index }),
            None => Ok(()),
        }
    }
}

impl ComplexField {
    pub fn zeros(len: usize) -> Self {
        ComplexField {
            values: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> Complex64 {
        reduce::pairwise_sum_complex(&self.values) / self.values.len() as f64
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn re(&self) -> ScalarField {
        ScalarField {
            values: self.values.iter().map(|z| z.re).collect(),
        }
    }

    pub fn im(&self) -> ScalarField {
        ScalarField {
            values: self.values.iter().map(|z| z.im).collect(),
        }
    }
}

impl MatrixField {
    pub fn zeros(n: usize, len: usize) -> Self {
        MatrixField {
            n,
            data: vec![Complex64::new(0.0, 0.0); n * n * len],
        }
    }

    /// Same constant matrix at every point.
    pub fn constant(m: &CMat, len: usize) -> Self {
        let n = m.n();
        let mut f = MatrixField::zeros(n, len);
        for p in 0..len {
            f.set(p, m);
        }
        f
    }

    /// Builds the field from a per-point generator (parallel for large grids).
    pub fn from_fn(n: usize, len: usize, f: impl Fn(usize) -> CMat + Sync + Send) -> Self {
        let nn = n * n;
        let mut data = vec![Complex64::new(0.0, 0.0); nn * len];
        let fill = |(p, chunk): (usize, &mut [Complex64])| {
            let m = f(p);
            for i in 0..n {
                for j in 0..n {
                    chunk[i * n + j] = m[(i, j)];
                }
            }
        };
        if len >= PAR_POINTS {
            data.par_chunks_mut(nn).enumerate().for_each(fill);
        } else {
            data.chunks_mut(nn).enumerate().for_each(fill);
        }
        MatrixField { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.n * self.n)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, p: usize) -> CMat {
        let n = self.n;
        let base = p * n * n;
        let mut m = CMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.data[base + i * n + j];
            }
        }
        m
    }

    #[inline]
    pub fn set(&mut self, p: usize, m: &CMat) {
        let n = self.n;
        let base = p * n * n;
        for i in 0..n {
            for j in 0..n {
                self.data[base + i * n + j] = m[(i, j)];
            }
        }
    }

    #[inline]
    pub fn entry(&self, p: usize, i: usize, j: usize) -> Complex64 {
        self.data[p * self.n * self.n + i * self.n + j]
    }

    /// Writes one matrix entry across the whole grid.
    pub fn set_entry_field(&mut self, i: usize, j: usize, values: &[Complex64]) {
        let n = self.n;
        for (p, &v) in values.iter().enumerate() {
            self.data[p * n * n + i * n + j] = v;
        }
    }

    /// Writes a real field into diagonal entry (i, i).
    pub(crate) fn set_real_diagonal_field(&mut self, i: usize, values: &[f64]) {
        let n = self.n;
        for (p, &v) in values.iter().enumerate() {
            self.data[p * n * n + i * n + i] = Complex64::new(v, 0.0);
        }
    }

    pub fn entry_field(&self, i: usize, j: usize) -> ComplexField {
        let n = self.n;
        ComplexField {
            values: (0..self.len())
                .map(|p| self.data[p * n * n + i * n + j])
                .collect(),
        }
    }

    pub fn add(&self, other: &MatrixField) -> MatrixField {
        assert_eq!(self.n, other.n);
        assert_eq!(self.data.len(), other.data.len());
        MatrixField {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Largest pointwise |M − M*| relative to max(1, |M|).
    pub fn hermitian_deviation(&self) -> f64 {
        (0..self.len())
            .map(|p| {
                let m = self.at(p);
                m.hermitian_deviation() / m.max_abs().max(1.0)
            })
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn raw(&self) -> &[Complex64] {
        &self.data
    }
}

pub(crate) fn par_map<T: Sync, U: Send>(xs: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    if xs.len() >= PAR_POINTS {
        xs.par_iter().map(f).collect()
    } else {
        xs.iter().map(f).collect()
    }
}

/// Maps grid indices 0..len in parallel (for large grids) preserving order.
pub(crate) fn par_index_map<U: Send>(len: usize, f: impl Fn(usize) -> U + Sync + Send) -> Vec<U> {
    if len >= PAR_POINTS {
        (0..len).into_par_iter().map(f).collect()
    } else {
        (0..len).map(f).collect()
    }
}
