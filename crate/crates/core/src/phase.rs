//! Pointwise phase algebra of a curvature matrix relative to the Kähler metric.
//!
//! For Hermitian `F` and positive-definite `g` the eigenvalues `λ_j` of
//! `K = g⁻¹F` are real. From them we build the Lagrangian phase
//! `θ = Σ arctan λ_j`, the complex volume ratio `ζ = Π (1 + iλ_j)`, and the
//! linearization metric `η = g + F g⁻¹ F`, whose inverse is the coefficient
//! matrix of `δθ = η^{pq̄} δF_{pq̄}`.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DhymError, Result};
use crate::geometry::{
    par_index_map, reduce, ComplexField, MatrixField, ScalarField, TorusGeometry, HERMITIAN_TOL,
};
use crate::linalg::CMat;

/// Phase data at a single point.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePointData {
    /// Eigenvalues of `g⁻¹F`, ascending.
    pub lambda: Vec<f64>,
    /// Σ arctan λ_j, in (−nπ/2, nπ/2).
    pub theta: f64,
    /// Π (1 + iλ_j).
    pub zeta: Complex64,
    /// η_{ij̄} = g_{ij̄} + F_{il̄} g^{lm̄} F_{mj̄}.
    pub eta: CMat,
    /// η^{pq̄} stored as the matrix inverse of `eta`.
    pub eta_inv: CMat,
}

/// Phase data sampled over the grid.
#[derive(Clone, Debug)]
pub struct PhaseFields {
    pub theta: ScalarField,
    pub zeta: ComplexField,
    pub eta: MatrixField,
    pub eta_inv: MatrixField,
    pub lambda_min: ScalarField,
    pub lambda_max: ScalarField,
}

/// Phase branch of a θ field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseBranch {
    /// min θ > (n−1)π/2.
    Hypercritical,
    /// min θ > (n−2)π/2.
    Supercritical,
    None,
}

/// Metric data reused at every grid point.
#[derive(Clone, Debug)]
pub(crate) struct MetricFactor {
    g: CMat,
    g_inv: CMat,
    /// L⁻¹ where g = L L*.
    l_inv: CMat,
}

impl MetricFactor {
    pub(crate) fn new(g: &CMat) -> Result<Self> {
        let dev = g.hermitian_deviation();
        if dev > HERMITIAN_TOL * g.max_abs().max(1.0) {
            return Err(DhymError::MetricNotPositiveDefinite);
        }
        let g = g.hermitize();
        let l = g.cholesky().ok_or(DhymError::MetricNotPositiveDefinite)?;
        let l_inv = l.lower_inverse();
        let g_inv = (l_inv.adjoint() * l_inv).hermitize();
        Ok(MetricFactor { g, g_inv, l_inv })
    }

    pub(crate) fn from_geometry(geom: &TorusGeometry) -> Self {
        MetricFactor {
            g: *geom.metric(),
            g_inv: *geom.metric_inv(),
            l_inv: *geom.chol_inv(),
        }
    }

    /// Eigenvalues of g⁻¹F via the congruent Hermitian matrix L⁻¹ F L⁻*.
    #[inline]
    pub(crate) fn eigenvalues(&self, f: &CMat) -> [f64; 3] {
        let k = (self.l_inv * *f * self.l_inv.adjoint()).hermitize();
        k.hermitian_eigenvalues()
    }

    /// θ only — the hot path of the flow right-hand side.
    #[inline]
    pub(crate) fn theta(&self, f: &CMat) -> f64 {
        let n = f.n();
        if n == 1 {
            return (f[(0, 0)].re * self.g_inv[(0, 0)].re).atan();
        }
        let lam = self.eigenvalues(f);
        lam[..n].iter().map(|l| l.atan()).sum()
    }

    pub(crate) fn point(&self, f: &CMat) -> Result<PhasePointData> {
        let n = f.n();
        if n != self.g.n() {
            return Err(DhymError::ShapeMismatch {
                expected: self.g.n(),
                got: n,
            });
        }
        let dev = f.hermitian_deviation();
        if dev > HERMITIAN_TOL * f.max_abs().max(1.0) {
            return Err(DhymError::NonHermitian { deviation: dev });
        }
        let f = f.hermitize();
        let lam = self.eigenvalues(&f);
        let lambda = lam[..n].to_vec();
        let theta = lambda.iter().map(|l| l.atan()).sum();
        let zeta = lambda.iter().fold(Complex64::new(1.0, 0.0), |acc, &l| {
            acc * Complex64::new(1.0, l)
        });
        let eta = (self.g + f * self.g_inv * f).hermitize();
        let eta_inv = eta
            .hermitian_inverse()
            .ok_or(DhymError::MetricNotPositiveDefinite)?;
        Ok(PhasePointData {
            lambda,
            theta,
            zeta,
            eta,
            eta_inv,
        })
    }

    /// Generalized eigenvectors V with F V = g V diag(λ) (used by tests).
    #[cfg(test)]
    pub(crate) fn eigenvectors(&self, f: &CMat) -> ([f64; 3], CMat) {
        let k = (self.l_inv * *f * self.l_inv.adjoint()).hermitize();
        let (vals, w) = k.hermitian_eigen();
        (vals, self.l_inv.adjoint() * w)
    }
}

/// Phase data of a single Hermitian matrix `f` relative to the metric `g`.
pub fn pointwise_phase(f: &CMat, g: &CMat) -> Result<PhasePointData> {
    MetricFactor::new(g)?.point(f)
}

/// Applies [`pointwise_phase`] at every grid point of `f`.
pub fn phase_fields(f: &MatrixField, geom: &TorusGeometry) -> Result<PhaseFields> {
    geom.check_len(f.len())?;
    if f.n() != geom.n() {
        return Err(DhymError::ShapeMismatch {
            expected: geom.n(),
            got: f.n(),
        });
    }
    let mf = MetricFactor::from_geometry(geom);
    let points = par_index_map(f.len(), |p| mf.point(&f.at(p)));
    let len = f.len();
    let n = geom.n();
    let mut theta = Vec::with_capacity(len);
    let mut zeta = Vec::with_capacity(len);
    let mut lmin = Vec::with_capacity(len);
    let mut lmax = Vec::with_capacity(len);
    let mut eta = MatrixField::zeros(n, len);
    let mut eta_inv = MatrixField::zeros(n, len);
    for (p, res) in points.into_iter().enumerate() {
        let d = res.map_err(|e| DhymError::at_point(p, e))?;
        theta.push(d.theta);
        zeta.push(d.zeta);
        lmin.push(d.lambda[0]);
        lmax.push(d.lambda[n - 1]);
        eta.set(p, &d.eta);
        eta_inv.set(p, &d.eta_inv);
    }
    Ok(PhaseFields {
        theta: ScalarField { values: theta },
        zeta: ComplexField { values: zeta },
        eta,
        eta_inv,
        lambda_min: ScalarField { values: lmin },
        lambda_max: ScalarField { values: lmax },
    })
}

/// θ field only; skips η and ζ.
pub fn theta_field(f: &MatrixField, geom: &TorusGeometry) -> ScalarField {
    let mf = MetricFactor::from_geometry(geom);
    ScalarField {
        values: par_index_map(f.len(), |p| mf.theta(&f.at(p))),
    }
}

/// θ field of `f + offset` for a constant matrix `offset`.
pub(crate) fn theta_field_offset(
    f: &MatrixField,
    offset: &CMat,
    geom: &TorusGeometry,
) -> ScalarField {
    let mf = MetricFactor::from_geometry(geom);
    ScalarField {
        values: par_index_map(f.len(), |p| mf.theta(&(f.at(p) + *offset))),
    }
}

/// Classifies the phase branch from the minimum of θ.
pub fn hypercritical_classify(theta: &ScalarField, n: usize) -> PhaseBranch {
    let min = reduce::min(&theta.values);
    if min > (n as f64 - 1.0) * FRAC_PI_2 {
        PhaseBranch::Hypercritical
    } else if min > (n as f64 - 2.0) * FRAC_PI_2 {
        PhaseBranch::Supercritical
    } else {
        PhaseBranch::None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_hermitian(rng: &mut impl Rng, n: usize) -> CMat {
        let mut m = CMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = c(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            }
        }
        m.hermitize()
    }

    fn random_metric(rng: &mut impl Rng, n: usize) -> CMat {
        let mut a = CMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
        }
        (a * a.adjoint() + CMat::scalar(n, 0.5)).hermitize()
    }

    #[test]
    fn examples() {
        let z = pointwise_phase(&CMat::zeros(2), &CMat::identity(2)).unwrap();
        assert_eq!(z.lambda, vec![0.0, 0.0]);
        assert_eq!(z.theta, 0.0);
        assert_eq!(z.zeta, c(1.0, 0.0));
        assert_eq!(z.eta, CMat::identity(2));

        let one = pointwise_phase(&CMat::identity(1), &CMat::identity(1)).unwrap();
        assert!((one.theta - PI / 4.0).abs() < 1e-15);
        assert!((one.zeta - c(1.0, 1.0)).norm() < 1e-15);
        assert!((one.eta[(0, 0)] - c(2.0, 0.0)).norm() < 1e-15);
        assert!((one.eta_inv[(0, 0)] - c(0.5, 0.0)).norm() < 1e-15);

        let s3 = 3f64.sqrt();
        let d = pointwise_phase(&CMat::from_real_diag(&[1.0, s3]), &CMat::identity(2)).unwrap();
        assert!((d.theta - 7.0 * PI / 12.0).abs() < 1e-14);
        assert!((d.zeta - c(1.0 - s3, 1.0 + s3)).norm() < 1e-14);
    }

    #[test]
    fn errors() {
        let bad = pointwise_phase(&CMat::identity(1), &CMat::from_real_diag(&[-1.0])).unwrap_err();
        assert_eq!(bad.to_string(), "metric not positive definite");
        let f = CMat::from_rows(&[
            vec![c(1.0, 0.0), c(0.0, 0.5)],
            vec![c(0.0, 0.4), c(1.0, 0.0)],
        ])
        .unwrap();
        let err = pointwise_phase(&f, &CMat::identity(2)).unwrap_err();
        assert!(err.to_string().starts_with("non-Hermitian curvature input"));
    }

    #[test]
    fn random_point_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..3000 {
            let n = 1 + trial % 3;
            let g = random_metric(&mut rng, n);
            let f = random_hermitian(&mut rng, n);
            let mf = MetricFactor::new(&g).unwrap();
            let d = mf.point(&f).unwrap();
            assert!(d.theta.abs() < n as f64 * FRAC_PI_2);
            assert!(d.lambda.windows(2).all(|w| w[0] <= w[1]));
            // e^{iθ}|ζ| = ζ
            let rot = Complex64::from_polar(d.zeta.norm(), d.theta);
            assert!((rot - d.zeta).norm() <= 1e-12 * d.zeta.norm());
            // det η = det g Π(1+λ²)
            let prod: f64 = d.lambda.iter().map(|l| 1.0 + l * l).product();
            let det_eta = d.eta.det().re;
            let det_g = g.det().re;
            assert!((det_eta - det_g * prod).abs() <= 1e-10 * det_eta.abs());
            // generalized eigenvectors
            let (vals, v) = mf.eigenvectors(&f);
            let mut lam = CMat::zeros(n);
            for k in 0..n {
                lam[(k, k)] = c(vals[k], 0.0);
            }
            let resid = (f * v - g * v * lam).norm();
            assert!(resid <= 1e-10 * f.norm().max(1e-300), "resid {resid}");
            // fast θ path agrees
            assert!((mf.theta(&f) - d.theta).abs() < 1e-13);
        }
    }

    #[test]
    fn adding_metric_increases_every_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..200 {
            let n = 1 + trial % 3;
            let g = random_metric(&mut rng, n);
            let f = random_hermitian(&mut rng, n);
            let a = pointwise_phase(&f, &g).unwrap();
            let b = pointwise_phase(&(f + g * 0.1), &g).unwrap();
            for k in 0..n {
                assert!((b.lambda[k] - a.lambda[k] - 0.1).abs() < 1e-10);
            }
            assert!(b.theta > a.theta);
        }
    }

    #[test]
    fn phase_fields_examples() {
        let geom = TorusGeometry::standard(1, 8).unwrap();
        let f = MatrixField::constant(&CMat::identity(1), geom.num_points());
        let pf = phase_fields(&f, &geom).unwrap();
        assert!(pf.theta.values.iter().all(|t| (t - PI / 4.0).abs() < 1e-15));
        let zero = MatrixField::zeros(1, geom.num_points());
        let pz = phase_fields(&zero, &geom).unwrap();
        assert!(pz.theta.values.iter().all(|&t| t == 0.0));
        assert!(pz.zeta.values.iter().all(|&z| z == c(1.0, 0.0)));
    }

    #[test]
    fn perturbation_bound() {
        // u = δ cos x₁ on top of cω: |θ − n arctan c| ≤ n δ/4
        for n in 1..=2 {
            let geom = TorusGeometry::standard(n, 8).unwrap();
            let cc = 1.3;
            let delta = 0.2;
            let u = geom.field_from_fn(|x| delta * x[0].cos());
            let f = geom.complex_hessian(&u).add(&MatrixField::constant(
                &CMat::scalar(n, cc),
                geom.num_points(),
            ));
            let pf = phase_fields(&f, &geom).unwrap();
            let target = n as f64 * cc.atan();
            let dev = pf
                .theta
                .values
                .iter()
                .fold(0.0f64, |m, t| m.max((t - target).abs()));
            assert!(dev <= n as f64 * delta / 4.0 * (1.0 + 1e-12));
            assert!(dev > 0.0);
        }
    }

    #[test]
    fn error_carries_grid_location() {
        let geom = TorusGeometry::standard(2, 8).unwrap();
        let mut f = MatrixField::zeros(2, geom.num_points());
        let bad = CMat::from_rows(&[
            vec![c(1.0, 0.0), c(1.0, 0.0)],
            vec![c(0.0, 0.0), c(1.0, 0.0)],
        ])
        .unwrap();
        f.set(17, &bad);
        match phase_fields(&f, &geom) {
            Err(DhymError::AtPoint { index, source }) => {
                assert_eq!(index, 17);
                assert!(matches!(*source, DhymError::NonHermitian { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn classification_examples() {
        let t = |v: f64| ScalarField::constant(4, v);
        assert_eq!(
            hypercritical_classify(&t(FRAC_PI_2 + 0.1), 2),
            PhaseBranch::Hypercritical
        );
        assert_eq!(
            hypercritical_classify(&t(0.1), 2),
            PhaseBranch::Supercritical
        );
        assert_eq!(
            hypercritical_classify(&t(-0.3), 1),
            PhaseBranch::Supercritical
        );
        assert_eq!(hypercritical_classify(&t(-0.1), 2), PhaseBranch::None);
    }
}
