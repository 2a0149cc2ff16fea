//! Derived quantities along the flow and numerical checks of the identities
//! they satisfy.
//!
//! Tensor norms use the constant metric: `|∇u|² = g^{ij̄}u_i u_j̄`,
//! `Θ = |∇∇̄u|²`, `Θ′ = |∇∇u|²`, `Γ = |∇∇̄∇u|²`. All derivatives are spectral.

mod identities;
mod monitors;

pub use identities::{
    dhym_point_identities, verify_evolution_identity, EvolutionIdentity, IdentityReport,
};
pub use monitors::{
    harnack_monitor, maximum_principle_monitor, maximum_principle_records, oscillation_decay,
    HarnackReport, HarnackRow, MaxPrincipleReport, OscillationReport, PositivityViolation,
};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cohomology::compute_z;
use crate::error::{DhymError, Result};
use crate::flow::{BaseCurvature, FlowProblem, FlowState};
use crate::geometry::{par_index_map, reduce, Dir, ScalarField, Spectrum, TorusGeometry};
use crate::linalg::{trace_prod, CMat};
use crate::phase::{phase_fields, theta_field};

/// Parameters of `Q = Θ + Θ′ + K₁|∇u|² + (K₂/2)(u − u(p,0))²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QConfig {
    pub k1: f64,
    pub k2: f64,
    /// Flat grid index of the base point p.
    pub base_point: usize,
}

impl Default for QConfig {
    fn default() -> Self {
        QConfig {
            k1: 1.0,
            k2: 1.0,
            base_point: 0,
        }
    }
}

impl QConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(DhymError::InvalidArgument(format!(
                "Q constants must be positive, got K1 = {}, K2 = {}",
                self.k1, self.k2
            )));
        }
        Ok(())
    }
}

/// Scalars recorded at one sample time. Field order matches the CSV columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    /// sup |θ − θ̂|.
    pub residual_sup: f64,
    pub theta_max: f64,
    pub theta_min: f64,
    pub grad_sq_sup: f64,
    /// sup Θ.
    #[serde(rename = "Theta_sup")]
    pub big_theta_sup: f64,
    /// sup Θ′.
    #[serde(rename = "ThetaP_sup")]
    pub big_theta_prime_sup: f64,
    /// sup Γ.
    #[serde(rename = "Gamma_sup")]
    pub gamma_sup: f64,
    #[serde(rename = "Q_sup")]
    pub q_sup: f64,
    /// sup (Θ + Θ′)^{1/2}, the working definition of ‖D²u‖∞.
    pub hess_sup: f64,
    #[serde(rename = "Z_re")]
    pub z_re: f64,
    #[serde(rename = "Z_im")]
    pub z_im: f64,
    /// χ = osc(u̇).
    pub osc_udot: f64,
    pub mean_u: f64,
}

impl DiagnosticsRecord {
    pub const CSV_HEADER: &'static str = "t,residual_sup,theta_max,theta_min,grad_sq_sup,Theta_sup,ThetaP_sup,Gamma_sup,Q_sup,hess_sup,Z_re,Z_im,osc_udot,mean_u";

    /// Values in CSV column order.
    pub fn values(&self) -> [f64; 14] {
        [
            self.t,
            self.residual_sup,
            self.theta_max,
            self.theta_min,
            self.grad_sq_sup,
            self.big_theta_sup,
            self.big_theta_prime_sup,
            self.gamma_sup,
            self.q_sup,
            self.hess_sup,
            self.z_re,
            self.z_im,
            self.osc_udot,
            self.mean_u,
        ]
    }
}

/// Pointwise tensor norms of a potential.
#[derive(Clone, Debug)]
pub struct TensorNorms {
    pub grad_sq: ScalarField,
    /// Θ = g^{ij̄}g^{kl̄}u_{il̄}u_{kj̄}.
    pub big_theta: ScalarField,
    /// Θ′ = g^{ij̄}g^{pq̄}u_{ip}u_{j̄q̄}.
    pub big_theta_prime: ScalarField,
    /// Γ = g^{iā}g^{bj̄}g^{kc̄}u_{ij̄k}u_{ābc̄}.
    pub gamma: ScalarField,
}

impl TensorNorms {
    pub fn grad_sq_sup(&self) -> f64 {
        self.grad_sq.max().max(0.0)
    }
    pub fn big_theta_sup(&self) -> f64 {
        self.big_theta.max().max(0.0)
    }
    pub fn big_theta_prime_sup(&self) -> f64 {
        self.big_theta_prime.max().max(0.0)
    }
    pub fn gamma_sup(&self) -> f64 {
        self.gamma.max().max(0.0)
    }
    /// sup_x (Θ + Θ′)^{1/2} — supremum of the pointwise sum, not a sum of suprema.
    pub fn hess_sup(&self) -> f64 {
        let s = self.big_theta.zip_map(&self.big_theta_prime, |a, b| a + b);
        s.max().max(0.0).sqrt()
    }
}

/// Spectral derivatives of one real field, computed on demand.
pub(crate) struct Jet<'a> {
    pub geom: &'a TorusGeometry,
    pub spec: Spectrum,
}

impl<'a> Jet<'a> {
    pub fn new(geom: &'a TorusGeometry, f: &ScalarField) -> Self {
        Jet {
            geom,
            spec: geom.spectrum(f),
        }
    }

    /// (∂_{z_1} f, …, ∂_{z_n} f) per point.
    pub fn gradient(&self) -> Vec<Vec<Complex64>> {
        (0..self.geom.n())
            .map(|i| self.geom.derivative(&self.spec, &[Dir::Z(i)]).values)
            .collect()
    }

    /// [i][j] = ∂_{prefix} f_{ij̄}.
    pub fn mixed(&self, prefix: &[Dir]) -> crate::geometry::MatrixField {
        self.geom.mixed_tensor(&self.spec, prefix)
    }

    /// [i][j] = ∂_{prefix} f_{ij}.
    pub fn holomorphic(&self, prefix: &[Dir]) -> crate::geometry::MatrixField {
        self.geom.holomorphic_tensor(&self.spec, prefix)
    }
}

/// `v* M v` for a Hermitian M.
pub(crate) fn quad_form(m: &CMat, v: &[Complex64]) -> f64 {
    let n = m.n();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += v[i].conj() * m[(i, j)] * v[j];
        }
    }
    acc.re
}

/// The four tensor norms of `u`.
pub fn tensor_norms(u: &ScalarField, geom: &TorusGeometry) -> TensorNorms {
    let n = geom.n();
    let jet = Jet::new(geom, u);
    let grad = jet.gradient();
    let hess = jet.mixed(&[]);
    let holo = jet.holomorphic(&[]);
    let third: Vec<_> = (0..n).map(|k| jet.mixed(&[Dir::Z(k)])).collect();
    let g_inv = *geom.metric_inv();
    let g_inv_t = g_inv.transpose();

    let values = par_index_map(geom.num_points(), |p| {
        let v: Vec<Complex64> = grad.iter().map(|c| c[p]).collect();
        // g^{ij̄} u_i u_j̄ = Σ G[j][i] u_i conj(u_j) = v* G v
        let grad_sq = quad_form(&g_inv, &v);
        let h = hess.at(p);
        let gh = g_inv * h;
        let big_theta = trace_prod(&gh, &gh).re;
        let s = holo.at(p);
        let big_theta_prime = (g_inv * s * g_inv_t * s.conj()).trace().re;
        let ts: Vec<CMat> = third.iter().map(|t| t.at(p)).collect();
        let mut gamma = 0.0;
        for k in 0..n {
            let left = ts[k] * g_inv;
            for c in 0..n {
                let w = g_inv[(c, k)];
                if w == Complex64::new(0.0, 0.0) {
                    continue;
                }
                gamma += (w * trace_prod(&left, &(ts[c].adjoint() * g_inv))).re;
            }
        }
        [grad_sq, big_theta, big_theta_prime, gamma]
    });
    let col = |k: usize| ScalarField {
        values: values.iter().map(|v| v[k]).collect(),
    };
    TensorNorms {
        grad_sq: col(0),
        big_theta: col(1),
        big_theta_prime: col(2),
        gamma: col(3),
    }
}

/// Pointwise Q and its supremum.
pub fn q_functional(
    u: &ScalarField,
    u0_at_p: f64,
    qcfg: &QConfig,
    geom: &TorusGeometry,
) -> Result<(ScalarField, f64)> {
    qcfg.validate()?;
    geom.check_len(u.len())?;
    let norms = tensor_norms(u, geom);
    Ok(q_from_norms(&norms, u, u0_at_p, qcfg))
}

fn q_from_norms(
    norms: &TensorNorms,
    u: &ScalarField,
    u0_at_p: f64,
    qcfg: &QConfig,
) -> (ScalarField, f64) {
    let values: Vec<f64> = (0..u.len())
        .map(|p| {
            let d = u.values[p] - u0_at_p;
            norms.big_theta.values[p]
                + norms.big_theta_prime.values[p]
                + qcfg.k1 * norms.grad_sq.values[p]
                + 0.5 * qcfg.k2 * d * d
        })
        .collect();
    let q = ScalarField { values };
    let sup = q.max().max(0.0);
    (q, sup)
}

/// Diagnostics record of a flow state.
pub fn sample_record(
    problem: &FlowProblem,
    state: &FlowState,
    u0_at_p: f64,
    qcfg: &QConfig,
) -> Result<DiagnosticsRecord> {
    let geom = &problem.geometry;
    let norms = tensor_norms(&state.u, geom);
    let (_, q_sup) = q_from_norms(&norms, &state.u, u0_at_p, qcfg);
    let f = problem.base.curvature(geom, &state.u);
    let z = compute_z(&f, geom)?;
    let rec = DiagnosticsRecord {
        t: state.t,
        residual_sup: state.udot.sup_abs(),
        theta_max: state.theta.max(),
        theta_min: state.theta.min(),
        grad_sq_sup: norms.grad_sq_sup(),
        big_theta_sup: norms.big_theta_sup(),
        big_theta_prime_sup: norms.big_theta_prime_sup(),
        gamma_sup: norms.gamma_sup(),
        q_sup,
        hess_sup: norms.hess_sup(),
        z_re: z.re,
        z_im: z.im,
        osc_udot: state.udot.oscillation(),
        mean_u: state.u.mean(),
    };
    if let Some(k) = rec.values().iter().position(|v| !v.is_finite()) {
        return Err(DhymError::NonFinite {
            what: "diagnostics record",
            index: k,
        });
    }
    Ok(rec)
}

/// Relative sup-norm error between the central difference
/// `(θ(F_{u+εφ}) − θ(F_{u−εφ}))/2ε` and `η^{pq̄}φ_{pq̄}`.
pub fn verify_linearization(
    u: &ScalarField,
    phi: &ScalarField,
    eps: f64,
    base: &BaseCurvature,
    geom: &TorusGeometry,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(DhymError::InvalidArgument(format!(
            "eps must lie in [1e-7, 1e-3], got {eps}"
        )));
    }
    geom.check_len(u.len())?;
    geom.check_len(phi.len())?;
    let plus = theta_field(&base.curvature(geom, &u.axpy(eps, phi)), geom);
    let minus = theta_field(&base.curvature(geom, &u.axpy(-eps, phi)), geom);
    let fd = plus.zip_map(&minus, |a, b| (a - b) / (2.0 * eps));
    let pf = phase_fields(&base.curvature(geom, u), geom)?;
    let dphi = geom.complex_hessian(phi);
    let exact = ScalarField {
        values: par_index_map(geom.num_points(), |p| {
            trace_prod(&pf.eta_inv.at(p), &dphi.at(p)).re
        }),
    };
    let diff = fd.zip_map(&exact, |a, b| a - b);
    let scale = exact.sup_abs();
    let err = diff.sup_abs();
    Ok(if scale > 0.0 { err / scale } else { err })
}

/// Convenience: sup of a field's absolute value.
pub(crate) fn sup(xs: &[f64]) -> f64 {
    reduce::sup_abs(xs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::bandlimited_noise;

    #[test]
    fn tensor_norms_of_zero() {
        let g = TorusGeometry::standard(2, 8).unwrap();
        let t = tensor_norms(&g.zeros(), &g);
        assert_eq!(t.grad_sq_sup(), 0.0);
        assert_eq!(t.big_theta_sup(), 0.0);
        assert_eq!(t.big_theta_prime_sup(), 0.0);
        assert_eq!(t.gamma_sup(), 0.0);
    }

    #[test]
    fn tensor_norms_of_cosine() {
        let a = 0.7;
        let g = TorusGeometry::standard(1, 16).unwrap();
        let u = g.field_from_fn(|x| a * x[0].cos());
        let t = tensor_norms(&u, &g);
        for p in 0..g.num_points() {
            let x = g.coords(p)[0];
            let (c, s) = (x.cos(), x.sin());
            assert!((t.big_theta.values[p] - a * a / 16.0 * c * c).abs() < 1e-14);
            assert!((t.big_theta_prime.values[p] - a * a / 16.0 * c * c).abs() < 1e-14);
            assert!((t.gamma.values[p] - a * a / 64.0 * s * s).abs() < 1e-14);
            assert!((t.grad_sq.values[p] - a * a / 4.0 * s * s).abs() < 1e-14);
        }
        assert!((t.hess_sup() - (a * a / 8.0f64).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn q_examples() {
        let g = TorusGeometry::standard(1, 16).unwrap();
        let q0 = q_functional(&g.zeros(), 0.0, &QConfig::default(), &g).unwrap();
        assert_eq!(q0.1, 0.0);
        let c = ScalarField::constant(g.num_points(), 2.5);
        let qc = q_functional(&c, 2.5, &QConfig::default(), &g).unwrap();
        assert!(qc.0.values.iter().all(|&v| v.abs() < 1e-28));
        let a = 0.3;
        let u = g.field_from_fn(|x| a * x[0].cos());
        let (q, _) = q_functional(&u, a, &QConfig::default(), &g).unwrap();
        for p in 0..g.num_points() {
            let x = g.coords(p)[0];
            let expect = a * a / 16.0 * x.cos().powi(2) * 2.0
                + a * a / 4.0 * x.sin().powi(2)
                + 0.5 * (a * x.cos() - a).powi(2);
            assert!((q.values[p] - expect).abs() < 1e-14);
        }
        let bad = QConfig {
            k1: 0.0,
            ..QConfig::default()
        };
        assert!(q_functional(&u, a, &bad, &g).is_err());
    }

    #[test]
    fn tensor_norms_are_resolution_independent() {
        let coarse = TorusGeometry::new(2, 16, CMat::from_real_diag(&[1.0, 1.7])).unwrap();
        let fine = TorusGeometry::new(2, 32, CMat::from_real_diag(&[1.0, 1.7])).unwrap();
        let a = bandlimited_noise(&coarse, 2, 0.1, 9).unwrap();
        let b = bandlimited_noise(&fine, 2, 0.1, 9).unwrap();
        let ta = tensor_norms(&a, &coarse);
        let tb = tensor_norms(&b, &fine);
        // sup over the coarse grid equals sup over the matching fine points
        for (fa, fb) in [
            (&ta.grad_sq, &tb.grad_sq),
            (&ta.big_theta, &tb.big_theta),
            (&ta.big_theta_prime, &tb.big_theta_prime),
            (&ta.gamma, &tb.gamma),
        ] {
            for p in 0..coarse.num_points() {
                let idx = coarse.grid_index(p);
                let q = fine.flat_index(&[2 * idx[0], 2 * idx[1], 2 * idx[2], 2 * idx[3]]);
                let scale = 1.0 + fa.values[p].abs();
                assert!((fa.values[p] - fb.values[q]).abs() < 1e-12 * scale);
            }
        }
    }

    #[test]
    fn linearization_scalar_case() {
        let c = 1.5;
        let g = TorusGeometry::standard(1, 32).unwrap();
        let base = BaseCurvature::multiple_of_metric(&g, c);
        let zero = g.zeros();
        assert_eq!(
            verify_linearization(&zero, &zero, 1e-4, &base, &g).unwrap(),
            0.0
        );
        let phi = g.field_from_fn(|x| x[0].cos() + 0.5 * (2.0 * x[1]).sin());
        let eps = 1e-4;
        let err = verify_linearization(&zero, &phi, eps, &base, &g).unwrap();
        // third derivative of arctan bounds the central-difference error
        let scale = 1.0 + phi.sup_abs().powi(2);
        assert!(err <= eps * eps * scale * 10.0, "err = {err}");
        assert!(verify_linearization(&zero, &phi, 1e-2, &base, &g).is_err());
    }
}
