//! The invariant `Z = ∫ ζ ωⁿ/n!` and its lifted argument θ̂.
//!
//! `Z` depends only on the cohomology class of `F`, so it is conserved by the
//! flow. The lift θ̂ follows the argument of
//! `Z(t) = ∫ Π_j (t + iλ_j) ωⁿ/n!` continuously as `t` decreases from a large
//! value (where the argument is near zero) to `t = 1`, where `Z(1) = Z`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DhymError, Result};
use crate::geometry::{par_index_map, reduce, MatrixField, TorusGeometry};
use crate::phase::MetricFactor;

/// Default largest winding parameter.
pub const DEFAULT_T_START: f64 = 1e4;
/// Default number of log-spaced winding samples.
pub const DEFAULT_N_STEPS: usize = 4096;

/// Z, its lifted argument and the path used to lift it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CohomologyInvariants {
    pub z: Complex64,
    pub hat_theta: f64,
    pub vol: f64,
    /// `(t, Z(t))` along the winding path, from `t_start` down to 1.
    pub winding_samples: Vec<(f64, Complex64)>,
}

/// `∫ ζ(F) ωⁿ/n!` over the torus.
pub fn compute_z(f: &MatrixField, geom: &TorusGeometry) -> Result<Complex64> {
    Ok(ZPolynomial::new(f, geom)?.eval(1.0))
}

/// θ̂ obtained by unwrapping `arg Z(t)` from `t_start` down to 1.
pub fn winding_hat_theta(
    f: &MatrixField,
    geom: &TorusGeometry,
    t_start: f64,
    n_steps: usize,
) -> Result<f64> {
    Ok(cohomology_invariants_with(f, geom, t_start, n_steps)?.hat_theta)
}

/// Invariants with the default winding path.
pub fn cohomology_invariants(
    f: &MatrixField,
    geom: &TorusGeometry,
) -> Result<CohomologyInvariants> {
    cohomology_invariants_with(f, geom, DEFAULT_T_START, DEFAULT_N_STEPS)
}

pub fn cohomology_invariants_with(
    f: &MatrixField,
    geom: &TorusGeometry,
    t_start: f64,
    n_steps: usize,
) -> Result<CohomologyInvariants> {
    if !(t_start > 1.0) || !t_start.is_finite() {
        return Err(DhymError::InvalidArgument(format!(
            "t_start must exceed 1, got {t_start}"
        )));
    }
    if n_steps < 2 {
        return Err(DhymError::InvalidArgument(
            "n_steps must be at least 2".into(),
        ));
    }
    let poly = ZPolynomial::new(f, geom)?;
    let n = geom.n() as i32;
    // For t ≥ t_start every factor t + iλ lies in the cone |arg| < atan(Λ/t),
    // so the principal argument of Z(t_start) is the continuous lift from +∞.
    let cone = n as f64 * (poly.lambda_abs_max / t_start).atan();
    if cone >= std::f64::consts::FRAC_PI_2 {
        return Err(DhymError::InvalidArgument(format!(
            "t_start = {t_start} is too small for eigenvalues of size {:.3e}",
            poly.lambda_abs_max
        )));
    }

    let log_start = t_start.ln();
    let mut samples = Vec::with_capacity(n_steps);
    let mut lifted = 0.0;
    let mut prev = Complex64::new(1.0, 0.0);
    for k in 0..n_steps {
        let t = if k + 1 == n_steps {
            1.0
        } else {
            (log_start * (1.0 - k as f64 / (n_steps - 1) as f64)).exp()
        };
        let z = poly.eval(t);
        if !(z.norm() >= 1e-8 * t.powi(n) * geom.vol()) {
            return Err(DhymError::WindingCrossesZero { t });
        }
        if k == 0 {
            lifted = z.arg();
        } else {
            let jump = (z * prev.conj()).arg();
            if jump.abs() > std::f64::consts::FRAC_PI_2 {
                return Err(DhymError::WindingUnderResolved { t, jump });
            }
            lifted += jump;
        }
        prev = z;
        samples.push((t, z));
    }
    let z = poly.eval(1.0);
    // snap the accumulated lift onto the exact argument of Z
    let principal = z.arg();
    let turns = ((lifted - principal) / std::f64::consts::TAU).round();
    let hat_theta = principal + turns * std::f64::consts::TAU;
    Ok(CohomologyInvariants {
        z,
        hat_theta,
        vol: geom.vol(),
        winding_samples: samples,
    })
}

/// `Z(t) = Σ_k t^{n−k} iᵏ ∫ e_k(λ) ωⁿ/n!` with `e_k` the elementary
/// symmetric polynomials of the eigenvalues.
struct ZPolynomial {
    /// ∫ e_k(λ), k = 0..=n.
    moments: Vec<f64>,
    lambda_abs_max: f64,
}

impl ZPolynomial {
    fn new(f: &MatrixField, geom: &TorusGeometry) -> Result<Self> {
        geom.check_len(f.len())?;
        if f.n() != geom.n() {
            return Err(DhymError::ShapeMismatch {
                expected: geom.n(),
                got: f.n(),
            });
        }
        let n = geom.n();
        let mf = MetricFactor::from_geometry(geom);
        let lams = par_index_map(f.len(), |p| mf.eigenvalues(&f.at(p)));
        let mut moments = vec![geom.vol(); n + 1];
        let mut column = vec![0.0; lams.len()];
        for (k, moment) in moments.iter_mut().enumerate().skip(1) {
            for (c, lam) in column.iter_mut().zip(&lams) {
                *c = elementary_symmetric(&lam[..n], k);
            }
            *moment = reduce::pairwise_sum(&column) / lams.len() as f64 * geom.vol();
        }
        let lambda_abs_max = lams
            .iter()
            .flat_map(|l| l[..n].iter())
            .fold(0.0f64, |m, l| m.max(l.abs()));
        if !lambda_abs_max.is_finite() {
            return Err(DhymError::NonFinite {
                what: "curvature eigenvalues",
                index: lams
                    .iter()
                    .position(|l| l[..n].iter().any(|x| !x.is_finite()))
                    .unwrap_or(0),
            });
        }
        Ok(ZPolynomial {
            moments,
            lambda_abs_max,
        })
    }

    fn eval(&self, t: f64) -> Complex64 {
        let n = self.moments.len() - 1;
        let mut ik = Complex64::new(1.0, 0.0);
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, &e) in self.moments.iter().enumerate() {
            acc += ik * e * t.powi((n - k) as i32);
            ik *= Complex64::new(0.0, 1.0);
        }
        acc
    }
}

fn elementary_symmetric(lam: &[f64], k: usize) -> f64 {
    match (lam.len(), k) {
        (_, 0) => 1.0,
        (_, 1) => lam.iter().sum(),
        (2, 2) => lam[0] * lam[1],
        (3, 2) => lam[0] * lam[1] + lam[0] * lam[2] + lam[1] * lam[2],
        (3, 3) => lam[0] * lam[1] * lam[2],
        _ => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CMat;
    use crate::phase::phase_fields;
    use std::f64::consts::PI;

    fn constant(geom: &TorusGeometry, c: f64) -> MatrixField {
        MatrixField::constant(&CMat::scalar(geom.n(), c), geom.num_points())
    }

    #[test]
    fn z_examples() {
        let g = TorusGeometry::standard(1, 16).unwrap();
        let z = compute_z(&constant(&g, 1.0), &g).unwrap();
        assert!((z - Complex64::new(1.0, 1.0) * 4.0 * PI * PI).norm() < 1e-12);
        let z0 = compute_z(&constant(&g, 0.0), &g).unwrap();
        assert!((z0 - Complex64::new(g.vol(), 0.0)).norm() < 1e-12);
    }

    #[test]
    fn z_matches_direct_zeta_integral() {
        let g = TorusGeometry::new(2, 8, CMat::from_real_diag(&[1.5, 0.7])).unwrap();
        let u = crate::geometry::bandlimited_noise(&g, 2, 0.3, 4).unwrap();
        let f = g.complex_hessian(&u).add(&constant(&g, 0.8));
        let pf = phase_fields(&f, &g).unwrap();
        let direct = g.volume_integral_complex(&pf.zeta);
        let z = compute_z(&f, &g).unwrap();
        assert!((z - direct).norm() < 1e-12 * z.norm());
    }

    #[test]
    fn z_is_invariant_under_exact_perturbation() {
        let c = 1.0;
        let g = TorusGeometry::standard(1, 64).unwrap();
        let u = g.field_from_fn(|x| 0.1 * x[0].cos());
        let f = g.complex_hessian(&u).add(&constant(&g, c));
        let z = compute_z(&f, &g).unwrap();
        let expect = Complex64::new(1.0, c) * g.vol();
        assert!((z - expect).norm() / z.norm() <= 1e-10);
    }

    #[test]
    fn winding_examples() {
        for n in 1..=2 {
            let g = TorusGeometry::standard(n, 8).unwrap();
            for c in [0.5, 1.0, 2.0] {
                let th = winding_hat_theta(&constant(&g, c), &g, 1e4, 4096).unwrap();
                assert!((th - n as f64 * f64::atan(c)).abs() < 1e-10, "n={n} c={c}");
            }
            let zero = winding_hat_theta(&constant(&g, 0.0), &g, 1e4, 4096).unwrap();
            assert!(zero.abs() < 1e-15);
        }
    }

    #[test]
    fn winding_past_pi_is_lifted() {
        // n = 3, c = 3: θ̂ = 3 atan 3 ≈ 3.75 > π, so the lift differs from arg Z.
        let g = TorusGeometry::standard(3, 8).unwrap();
        let inv = cohomology_invariants(&constant(&g, 3.0), &g).unwrap();
        assert!((inv.hat_theta - 3.0 * 3f64.atan()).abs() < 1e-10);
        assert!((inv.hat_theta - inv.z.arg()).abs() > 1.0);
        let rot = Complex64::from_polar(1.0, inv.hat_theta);
        assert!((rot - inv.z / inv.z.norm()).norm() < 1e-9);
        assert_eq!(inv.winding_samples.len(), DEFAULT_N_STEPS);
        assert_eq!(inv.winding_samples.last().unwrap().0, 1.0);
    }

    #[test]
    fn winding_agrees_with_principal_arg_for_small_angles() {
        let g = TorusGeometry::standard(1, 32).unwrap();
        let psi = g.field_from_fn(|x| 0.2 * x[0].cos() + 0.1 * (x[1] + 0.3).sin());
        let f = g.complex_hessian(&psi).add(&constant(&g, 0.7));
        let inv = cohomology_invariants(&f, &g).unwrap();
        assert!((inv.hat_theta - inv.z.arg()).abs() < 1e-9);
        assert!(inv.z.im.abs() > 0.0);
        assert!((inv.hat_theta.sin() * inv.z.norm() - inv.z.im).abs() <= 1e-9 * inv.z.norm());
    }

    #[test]
    fn crossing_zero_is_an_error() {
        // λ = (a, a) with a = ±1 on two halves: Z(t) = (t² − 1)·vol vanishes at t = 1.
        let g = TorusGeometry::standard(2, 8).unwrap();
        let s = g.field_from_fn(|x| if x[0] < PI { 1.0 } else { -1.0 });
        let mut f = MatrixField::zeros(2, g.num_points());
        for (p, &a) in s.values.iter().enumerate() {
            f.set(p, &CMat::scalar(2, a));
        }
        let err = winding_hat_theta(&f, &g, 1e4, 4096).unwrap_err();
        assert!(err.to_string().starts_with("winding path crosses zero"));
    }

    #[test]
    fn metric_scaling_moves_hat_theta() {
        let s = 2.5;
        let base = TorusGeometry::standard(2, 8).unwrap();
        let scaled = TorusGeometry::new(2, 8, CMat::scalar(2, s)).unwrap();
        let f = constant(&base, 1.2);
        let a = winding_hat_theta(&f, &scaled, 1e4, 4096).unwrap();
        assert!((a - 2.0 * (1.2 / s).atan()).abs() < 1e-10);
    }
}
