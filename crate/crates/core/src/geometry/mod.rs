//! Flat Kähler torus discretization.
//!
//! The torus is `[0, 2π)^{2n}` with real coordinates `x_j, y_j` and complex
//! coordinates `z_j = x_j + i y_j`; the Kähler metric is a constant Hermitian
//! matrix `g_{ij̄}`. Fields are sampled on a uniform `N^{2n}` grid and
//! differentiated spectrally.

mod field;
mod noise;
pub mod reduce;
mod spectral;

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

pub(crate) use field::par_index_map;
pub use field::{ComplexField, MatrixField, ScalarField};
pub use spectral::{Dir, Spectrum};

use crate::error::{DhymError, Result};
use crate::linalg::CMat;

/// Tolerance for accepting a metric as Hermitian, relative to max(1, |g|).
pub const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Clone)]
pub struct TorusGeometry {
    n: usize,
    resolution: usize,
    metric: CMat,
    metric_inv: CMat,
    /// L⁻¹ for the Cholesky factor g = L L*.
    chol_inv: CMat,
    det_g: f64,
    vol: f64,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for TorusGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGeometry")
            .field("n", &self.n)
            .field("resolution", &self.resolution)
            .field("metric", &self.metric.rows())
            .field("vol", &self.vol)
            .finish()
    }
}

/// Validates and builds a torus geometry.
pub fn build_torus(n: usize, resolution: usize, metric: CMat) -> Result<TorusGeometry> {
    TorusGeometry::new(n, resolution, metric)
}

impl TorusGeometry {
    pub fn new(n: usize, resolution: usize, metric: CMat) -> Result<Self> {
        if !(1..=3).contains(&n) {
            return Err(DhymError::InvalidDimension(n));
        }
        if resolution < 8 || !resolution.is_power_of_two() {
            return Err(DhymError::InvalidResolution(resolution));
        }
        if metric.n() != n {
            return Err(DhymError::ShapeMismatch {
                expected: n,
                got: metric.n(),
            });
        }
        let dev = metric.hermitian_deviation();
        if dev > HERMITIAN_TOL * metric.max_abs().max(1.0) {
            return Err(DhymError::NonHermitian { deviation: dev });
        }
        let metric = metric.hermitize();
        let chol = metric
            .cholesky()
            .ok_or(DhymError::MetricNotPositiveDefinite)?;
        let det_g: f64 = (0..n).map(|i| chol[(i, i)].re.powi(2)).product();
        let metric_inv = metric
            .hermitian_inverse()
            .ok_or(DhymError::MetricNotPositiveDefinite)?;
        let chol_inv = chol.lower_inverse();
        let vol = det_g * (0..2 * n).fold(1.0, |acc, _| acc * 2.0 * PI);

        let mut real_planner = RealFftPlanner::<f64>::new();
        let mut planner = FftPlanner::<f64>::new();
        Ok(TorusGeometry {
            n,
            resolution,
            metric,
            metric_inv,
            chol_inv,
            det_g,
            vol,
            r2c: real_planner.plan_fft_forward(resolution),
            c2r: real_planner.plan_fft_inverse(resolution),
            fft_fwd: planner.plan_fft_forward(resolution),
            fft_inv: planner.plan_fft_inverse(resolution),
        })
    }

    /// Flat torus with the identity metric.
    pub fn standard(n: usize, resolution: usize) -> Result<Self> {
        if !(1..=3).contains(&n) {
            return Err(DhymError::InvalidDimension(n));
        }
        TorusGeometry::new(n, resolution, CMat::identity(n))
    }

    /// Complex dimension n.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Grid points per real axis, N.
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Number of real axes, 2n.
    pub fn real_dim(&self) -> usize {
        2 * self.n
    }

    pub fn num_points(&self) -> usize {
        self.resolution.pow(self.real_dim() as u32)
    }

    pub fn metric(&self) -> &CMat {
        &self.metric
    }

    pub fn metric_inv(&self) -> &CMat {
        &self.metric_inv
    }

    pub(crate) fn chol_inv(&self) -> &CMat {
        &self.chol_inv
    }

    pub fn det_metric(&self) -> f64 {
        self.det_g
    }

    /// Total volume det(g)·(2π)^{2n}.
    pub fn vol(&self) -> f64 {
        self.vol
    }

    /// Largest eigenvalue of g⁻¹.
    pub fn metric_inv_max_eigenvalue(&self) -> f64 {
        let ev = self.metric_inv.hermitian_eigenvalues();
        ev[..self.n]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Multi-index of a grid point, axes ordered `(x_1..x_n, y_1..y_n)`.
    pub fn grid_index(&self, mut p: usize) -> [usize; 6] {
        let d = self.real_dim();
        let mut idx = [0usize; 6];
        for a in (0..d).rev() {
            idx[a] = p % self.resolution;
            p /= self.resolution;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.resolution + i)
    }

    /// Real coordinates of grid point `p`.
    pub fn coords(&self, p: usize) -> [f64; 6] {
        let h = 2.0 * PI / self.resolution as f64;
        let idx = self.grid_index(p);
        let mut x = [0.0; 6];
        for a in 0..self.real_dim() {
            x[a] = h * idx[a] as f64;
        }
        x
    }

    /// Samples `f(x)` at every grid point; `x` has length 2n.
    pub fn field_from_fn(&self, f: impl Fn(&[f64]) -> f64 + Sync + Send) -> ScalarField {
        let d = self.real_dim();
        ScalarField {
            values: par_index_map(self.num_points(), |p| f(&self.coords(p)[..d])),
        }
    }

    pub fn zeros(&self) -> ScalarField {
        ScalarField::zeros(self.num_points())
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len != self.num_points() {
            return Err(DhymError::FieldLength {
                expected: self.num_points(),
                got: len,
            });
        }
        Ok(())
    }

    /// ∫ f ωⁿ/n! = mean(f)·vol.
    pub fn volume_integral(&self, f: &ScalarField) -> f64 {
        f.mean() * self.vol
    }

    pub fn volume_integral_complex(&self, f: &ComplexField) -> Complex64 {
        f.mean() * self.vol
    }

    /// u_{ij̄} = ∂_{z_i}∂_{z̄_j}u, Hermitian at every point.
    pub fn complex_hessian(&self, u: &ScalarField) -> MatrixField {
        let spec = self.spectrum(u);
        self.hessian_from_spectrum(&spec)
    }

    /// ∂_{z_j} f
    pub fn d_z(&self, f: &ScalarField, j: usize) -> ComplexField {
        self.derivative(&self.spectrum(f), &[Dir::Z(j)])
    }

    /// ∂_{z̄_j} f
    pub fn d_zbar(&self, f: &ScalarField, j: usize) -> ComplexField {
        self.derivative(&self.spectrum(f), &[Dir::Zbar(j)])
    }
}

/// Builds a `CMat` metric from real diagonal entries (convenience for tests and configs).
pub fn diagonal_metric(diag: &[f64]) -> CMat {
    CMat::from_real_diag(diag)
}

pub use noise::bandlimited_noise;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_examples() {
        let g = TorusGeometry::new(1, 8, CMat::identity(1)).unwrap();
        assert!((g.vol() - 4.0 * PI * PI).abs() < 1e-12);
        assert!((g.vol() - 39.478).abs() < 1e-3);
        let g2 = TorusGeometry::new(2, 16, CMat::identity(2)).unwrap();
        assert!((g2.vol() / (2.0 * PI).powi(4) - 1.0).abs() < 1e-15);
        assert_eq!(g2.num_points(), 16usize.pow(4));
        let err = TorusGeometry::new(1, 8, CMat::from_real_diag(&[-1.0])).unwrap_err();
        assert_eq!(err.to_string(), "metric not positive definite");
    }

    #[test]
    fn rejects_bad_resolution_and_dimension() {
        assert!(matches!(
            TorusGeometry::standard(1, 12),
            Err(DhymError::InvalidResolution(12))
        ));
        assert!(matches!(
            TorusGeometry::standard(1, 4),
            Err(DhymError::InvalidResolution(4))
        ));
        assert!(matches!(
            TorusGeometry::standard(4, 8),
            Err(DhymError::InvalidDimension(4))
        ));
    }

    #[test]
    fn rejects_non_hermitian_metric() {
        let g = CMat::from_rows(&[
            vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.5)],
            vec![Complex64::new(0.0, 0.4), Complex64::new(1.0, 0.0)],
        ])
        .unwrap();
        assert!(matches!(
            TorusGeometry::new(2, 8, g),
            Err(DhymError::NonHermitian { .. })
        ));
    }

    #[test]
    fn volume_integral_examples() {
        let g = TorusGeometry::standard(1, 8).unwrap();
        let one = ScalarField::constant(g.num_points(), 1.0);
        assert!((g.volume_integral(&one) - 4.0 * PI * PI).abs() < 1e-12);
        let c = g.field_from_fn(|x| x[0].cos());
        assert!(g.volume_integral(&c).abs() < 1e-13);
        let g2 = TorusGeometry::new(1, 8, CMat::from_real_diag(&[2.0])).unwrap();
        let f = g2.field_from_fn(|x| 2.0 + x[0].cos());
        assert!((g2.volume_integral(&f) - 16.0 * PI * PI).abs() < 1e-11);
    }

    #[test]
    fn grid_indexing_roundtrip() {
        let g = TorusGeometry::standard(2, 8).unwrap();
        for p in [0, 1, 77, 4095] {
            let idx = g.grid_index(p);
            assert_eq!(g.flat_index(&idx[..4]), p);
        }
    }
}
