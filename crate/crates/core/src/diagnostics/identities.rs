//! Evolution identities of `u²`, `|∇u|²`, `Θ`, `Θ′` on a flat torus, and the
//! first/second-derivative identities satisfied at a dHYM point.
//!
//! Matrix conventions: `F[i][j] = F_{ij̄}`, `A = η⁻¹` so that
//! `η^{pq̄} = A[q][p]`, and `G = g⁻¹` with `g^{ij̄} = G[j][i]`. Then
//! `Δ_η f = Tr(A·∂∂̄f)`, `∂θ = Tr(A ∂F)` and `∂A = −A (∂η) A` with
//! `∂η = ∂F G F + F G ∂F`. Curvature terms of the base vanish identically;
//! derivatives of `F̂ = F̂⁰ + ∂∂̄ψ` are kept and taken spectrally from ψ.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{quad_form, sup, tensor_norms, Jet};
use crate::cohomology::cohomology_invariants;
use crate::error::{DhymError, Result};
use crate::flow::{BaseCurvature, Sample, Trajectory};
use crate::geometry::{par_index_map, Dir, MatrixField, ScalarField, TorusGeometry};
use crate::linalg::{trace_prod, CMat};
use crate::phase::phase_fields;

/// Result of one identity check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub identity: String,
    pub t: f64,
    pub lhs_norm: f64,
    pub rhs_norm: f64,
    /// ‖LHS − RHS‖∞ / (1 + ‖RHS‖∞).
    pub residual_rel: f64,
    pub dt_used: f64,
    pub resolution: usize,
}

impl IdentityReport {
    fn new(
        identity: &str,
        t: f64,
        lhs: &[f64],
        rhs: &[f64],
        dt_used: f64,
        resolution: usize,
    ) -> Self {
        let diff: Vec<f64> = lhs.iter().zip(rhs).map(|(a, b)| a - b).collect();
        let rhs_norm = sup(rhs);
        IdentityReport {
            identity: identity.to_string(),
            t,
            lhs_norm: sup(lhs),
            rhs_norm,
            residual_rel: sup(&diff) / (1.0 + rhs_norm),
            dt_used,
            resolution,
        }
    }
}

/// Quantities whose heat-type evolution is checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvolutionIdentity {
    /// (∂_t − Δ_η) u²
    #[serde(rename = "u_sq")]
    USq,
    /// (∂_t − Δ_η) |∇u|²
    #[serde(rename = "grad_sq")]
    GradSq,
    /// (∂_t − Δ_η) Θ
    #[serde(rename = "Theta")]
    Theta,
    /// (∂_t − Δ_η) Θ′
    #[serde(rename = "ThetaP")]
    ThetaP,
}

impl EvolutionIdentity {
    pub const ALL: [EvolutionIdentity; 4] = [
        EvolutionIdentity::USq,
        EvolutionIdentity::GradSq,
        EvolutionIdentity::Theta,
        EvolutionIdentity::ThetaP,
    ];

    /// Acceptable `residual_rel` at N = 64, dt_s = 1e−3.
    pub fn tolerance(self) -> f64 {
        match self {
            EvolutionIdentity::USq | EvolutionIdentity::GradSq => 1e-4,
            EvolutionIdentity::Theta | EvolutionIdentity::ThetaP => 1e-3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EvolutionIdentity::USq => "u_sq",
            EvolutionIdentity::GradSq => "grad_sq",
            EvolutionIdentity::Theta => "Theta",
            EvolutionIdentity::ThetaP => "ThetaP",
        }
    }
}

impl fmt::Display for EvolutionIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvolutionIdentity {
    type Err = DhymError;
    fn from_str(s: &str) -> Result<Self> {
        EvolutionIdentity::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| DhymError::InvalidArgument(format!("unknown identity `{s}`")))
    }
}

/// The scalar quantity tracked by an identity.
fn quantity(which: EvolutionIdentity, u: &ScalarField, geom: &TorusGeometry) -> ScalarField {
    match which {
        EvolutionIdentity::USq => u.map(|x| x * x),
        EvolutionIdentity::GradSq => tensor_norms(u, geom).grad_sq,
        EvolutionIdentity::Theta => tensor_norms(u, geom).big_theta,
        EvolutionIdentity::ThetaP => tensor_norms(u, geom).big_theta_prime,
    }
}

/// Finds samples at `t − dt_s`, `t`, `t + dt_s`.
fn bracket(traj: &Trajectory, t: f64) -> Result<(&Sample, &Sample, &Sample, f64)> {
    let samples: Vec<&Sample> = traj.samples().collect();
    let tol = 1e-9 * t.abs().max(1.0);
    let k = samples
        .iter()
        .position(|s| (s.t - t).abs() <= tol)
        .ok_or_else(|| DhymError::InsufficientSampling(format!("no sample at t = {t}")))?;
    if k == 0 || k + 1 >= samples.len() {
        return Err(DhymError::InsufficientSampling(format!(
            "sample at t = {t} is not bracketed by neighbours"
        )));
    }
    let (a, b, c) = (samples[k - 1], samples[k], samples[k + 1]);
    let (h1, h2) = (b.t - a.t, c.t - b.t);
    if !(h1 > 0.0) || (h1 - h2).abs() > 1e-9 * h1 {
        return Err(DhymError::InsufficientSampling(format!(
            "samples around t = {t} are not uniformly spaced ({h1:e} vs {h2:e})"
        )));
    }
    Ok((a, b, c, 0.5 * (h1 + h2)))
}

/// Checks `(∂_t − Δ_η) Q = RHS` at sample time `t` using a central time
/// difference of the stored samples.
pub fn verify_evolution_identity(
    which: EvolutionIdentity,
    traj: &Trajectory,
    t: f64,
) -> Result<IdentityReport> {
    let (before, at, after, dt_s) = bracket(traj, t)?;
    let problem = &traj.problem;
    let geom = &problem.geometry;
    let n = geom.n();
    let u = &at.u;
    let base = &problem.base;

    let q_minus = quantity(which, &before.u, geom);
    let q_plus = quantity(which, &after.u, geom);
    let q_now = quantity(which, u, geom);

    let phi = base.psi().axpy(1.0, u);
    let f = base.curvature(geom, u);
    let pf = phase_fields(&f, geom)?;
    let a_field = &pf.eta_inv;
    let q_hess = Jet::new(geom, &q_now).mixed(&[]);

    let lhs: Vec<f64> = par_index_map(geom.num_points(), |p| {
        let dq = (q_plus.values[p] - q_minus.values[p]) / (2.0 * dt_s);
        dq - trace_prod(&a_field.at(p), &q_hess.at(p)).re
    });

    let g_inv = *geom.metric_inv();
    let g_inv_t = g_inv.transpose();
    let ju = Jet::new(geom, u);
    let jpsi = Jet::new(geom, base.psi());
    let jphi = Jet::new(geom, &phi);
    let rhs: Vec<f64> = match which {
        EvolutionIdentity::USq => {
            let grad = ju.gradient();
            let hess = ju.mixed(&[]);
            par_index_map(geom.num_points(), |p| {
                let a = a_field.at(p);
                let lap = trace_prod(&a, &hess.at(p)).re;
                let v: Vec<Complex64> = grad.iter().map(|c| c[p]).collect();
                let uu = u.values[p];
                2.0 * uu * (at.udot.values[p] - lap) - 2.0 * quad_form(&a, &v)
            })
        }
        EvolutionIdentity::GradSq => {
            let grad = ju.gradient();
            let hess = ju.mixed(&[]);
            let holo = ju.holomorphic(&[]);
            let dfh: Vec<MatrixField> = (0..n).map(|i| jpsi.mixed(&[Dir::Z(i)])).collect();
            par_index_map(geom.num_points(), |p| {
                let a = a_field.at(p);
                let h = hess.at(p);
                let s = holo.at(p);
                let t1 = (s * a.transpose() * s.adjoint() * g_inv).trace().re;
                let t2 = (g_inv * h * a * h).trace().re;
                let mut t3 = Complex64::new(0.0, 0.0);
                for i in 0..n {
                    let d = trace_prod(&a, &dfh[i].at(p));
                    for j in 0..n {
                        t3 += g_inv[(j, i)] * grad[j][p].conj() * d;
                    }
                }
                -t1 - t2 + 2.0 * t3.re
            })
        }
        EvolutionIdentity::Theta => {
            let hess = ju.mixed(&[]);
            let h_p: Vec<MatrixField> = (0..n).map(|k| ju.mixed(&[Dir::Z(k)])).collect();
            let f_k: Vec<MatrixField> = (0..n).map(|k| jphi.mixed(&[Dir::Z(k)])).collect();
            let fh_kl = mixed_second(&jpsi, n);
            par_index_map(geom.num_points(), |p| {
                let a = a_field.at(p);
                let fp = f.at(p);
                let h = hess.at(p);
                let hp: Vec<CMat> = h_p.iter().map(|m| m.at(p)).collect();
                let fk: Vec<CMat> = f_k.iter().map(|m| m.at(p)).collect();
                let mut t1 = 0.0;
                for pp in 0..n {
                    for q in 0..n {
                        let w = a[(q, pp)];
                        t1 += (w * (g_inv * hp[pp] * g_inv * hp[q].adjoint()).trace()).re;
                    }
                }
                // N − M with N = Tr(A ∂_k∂_l̄F̂), M = Tr(A ∂_kη A ∂_l̄F)
                let mut nm = CMat::zeros(n);
                for k in 0..n {
                    let deta = fk[k] * g_inv * fp + fp * g_inv * fk[k];
                    let left = a * deta * a;
                    for l in 0..n {
                        let nkl = trace_prod(&a, &fh_kl[k * n + l].at(p));
                        let mkl = trace_prod(&left, &fk[l].adjoint());
                        nm[(k, l)] = nkl - mkl;
                    }
                }
                -2.0 * t1 + 2.0 * (g_inv * nm * g_inv * h).trace().re
            })
        }
        EvolutionIdentity::ThetaP => {
            let holo = ju.holomorphic(&[]);
            let p_a: Vec<MatrixField> = (0..n).map(|a| ju.holomorphic(&[Dir::Z(a)])).collect();
            let q_b: Vec<MatrixField> = (0..n).map(|b| ju.holomorphic(&[Dir::Zbar(b)])).collect();
            let f_k: Vec<MatrixField> = (0..n).map(|k| jphi.mixed(&[Dir::Z(k)])).collect();
            let fh_ip = holo_second(&jpsi, n);
            par_index_map(geom.num_points(), |p| {
                let a = a_field.at(p);
                let fp = f.at(p);
                let s = holo.at(p);
                let fk: Vec<CMat> = f_k.iter().map(|m| m.at(p)).collect();
                let pa: Vec<CMat> = p_a.iter().map(|m| m.at(p)).collect();
                let qb: Vec<CMat> = q_b.iter().map(|m| m.at(p)).collect();
                // R_{ip} = Tr(A F̂_{,ip}) − Tr(A ∂_iη A ∂_pF)
                let mut r = CMat::zeros(n);
                for i in 0..n {
                    let deta = fk[i] * g_inv * fp + fp * g_inv * fk[i];
                    let left = a * deta * a;
                    for q in 0..n {
                        r[(i, q)] =
                            trace_prod(&a, &fh_ip[i * n + q].at(p)) - trace_prod(&left, &fk[q]);
                    }
                }
                let t1 = (g_inv * r * g_inv_t * s.conj()).trace().re;
                let mut t2 = 0.0;
                for ia in 0..n {
                    for ib in 0..n {
                        let w = a[(ib, ia)];
                        let x = (g_inv * pa[ia] * g_inv_t * pa[ib].conj()).trace()
                            + (g_inv * qb[ib] * g_inv_t * qb[ia].conj()).trace();
                        t2 += (w * x).re;
                    }
                }
                2.0 * t1 - t2
            })
        }
    };
    Ok(IdentityReport::new(
        which.name(),
        t,
        &lhs,
        &rhs,
        dt_s,
        geom.resolution(),
    ))
}

/// ∂_k∂_l̄ of the mixed Hessian, indexed `[k·n + l]`.
fn mixed_second(jet: &Jet, n: usize) -> Vec<MatrixField> {
    let mut out = Vec::with_capacity(n * n);
    for k in 0..n {
        for l in 0..n {
            out.push(jet.mixed(&[Dir::Z(k), Dir::Zbar(l)]));
        }
    }
    out
}

/// ∂_i∂_p of the mixed Hessian, indexed `[i·n + p]`.
fn holo_second(jet: &Jet, n: usize) -> Vec<MatrixField> {
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for p in 0..n {
            out.push(jet.mixed(&[Dir::Z(i), Dir::Z(p)]));
        }
    }
    out
}

/// Checks at a dHYM point `F = F̂ + ∂∂̄û`:
/// (i) `η^{pq̄}F_{pq̄,i} = 0` and
/// (ii) `η^{pq̄}F_{pq̄,j̄i} = η^{pt̄}η^{sq̄}η_{st̄,i}F_{pq̄,j̄}`.
pub fn dhym_point_identities(
    u_hat: &ScalarField,
    base: &BaseCurvature,
    geom: &TorusGeometry,
) -> Result<(IdentityReport, IdentityReport)> {
    geom.check_len(u_hat.len())?;
    let n = geom.n();
    let hat_theta = cohomology_invariants(&base.realized(geom), geom)?.hat_theta;
    let f = base.curvature(geom, u_hat);
    let pf = phase_fields(&f, geom)?;
    let residual = pf
        .theta
        .values
        .iter()
        .fold(0.0f64, |m, t| m.max((t - hat_theta).abs()));
    if !(residual <= 1e-9) {
        return Err(DhymError::NotDhymPoint { residual });
    }
    let phi = base.psi().axpy(1.0, u_hat);
    let jphi = Jet::new(geom, &phi);
    let f_k: Vec<MatrixField> = (0..n).map(|k| jphi.mixed(&[Dir::Z(k)])).collect();
    let f_kl = mixed_second(&jphi, n);
    let g_inv = *geom.metric_inv();

    let first: Vec<f64> = par_index_map(geom.num_points(), |p| {
        let a = pf.eta_inv.at(p);
        (0..n)
            .map(|i| trace_prod(&a, &f_k[i].at(p)).norm())
            .fold(0.0, f64::max)
    });
    let zeros = vec![0.0; first.len()];
    let report_first = IdentityReport::new(
        "dhym_first_derivative",
        0.0,
        &first,
        &zeros,
        0.0,
        geom.resolution(),
    );

    // complex entries flattened as (re, im) pairs
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = par_index_map(geom.num_points(), |p| {
        let a = pf.eta_inv.at(p);
        let fp = f.at(p);
        let fk: Vec<CMat> = f_k.iter().map(|m| m.at(p)).collect();
        let mut lhs = Vec::with_capacity(2 * n * n);
        let mut rhs = Vec::with_capacity(2 * n * n);
        for i in 0..n {
            let deta = fk[i] * g_inv * fp + fp * g_inv * fk[i];
            let left = a * deta * a;
            for j in 0..n {
                let l = trace_prod(&a, &f_kl[i * n + j].at(p));
                let r = trace_prod(&left, &fk[j].adjoint());
                lhs.extend([l.re, l.im]);
                rhs.extend([r.re, r.im]);
            }
        }
        (lhs, rhs)
    });
    let lhs: Vec<f64> = pairs.iter().flat_map(|(l, _)| l.iter().copied()).collect();
    let rhs: Vec<f64> = pairs.iter().flat_map(|(_, r)| r.iter().copied()).collect();
    let report_second = IdentityReport::new(
        "dhym_second_derivative",
        0.0,
        &lhs,
        &rhs,
        0.0,
        geom.resolution(),
    );
    Ok((report_first, report_second))
}
