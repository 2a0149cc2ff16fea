//! Maximum principle, oscillation decay and Harnack quotients along a run.
//!
//! `u̇ = θ − θ̂` solves the linear parabolic equation `∂_t u̇ = Δ_η u̇`, so its
//! supremum cannot increase and its infimum cannot decrease. These monitors
//! check that behaviour on recorded samples and fit the decay rate.

use serde::{Deserialize, Serialize};

use super::DiagnosticsRecord;
use crate::error::{DhymError, Result};
use crate::flow::{Sample, Trajectory};
use crate::geometry::reduce;

/// Outcome of the θ max/min monotonicity check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxPrincipleReport {
    pub pass: bool,
    /// Largest excess over the allowed slack (≤ 0 when passing).
    pub worst_violation: f64,
    /// Index of the record where the worst violation occurs.
    pub worst_sample: Option<usize>,
}

/// θ_max must not increase and θ_min must not decrease, up to a slack of
/// `1e−9·(1+|θ̂|)` per unit time.
pub fn maximum_principle_monitor(traj: &Trajectory) -> Result<MaxPrincipleReport> {
    maximum_principle_records(&traj.records, traj.problem.hat_theta)
}

/// [`maximum_principle_monitor`] on a bare record series.
pub fn maximum_principle_records(
    recs: &[DiagnosticsRecord],
    hat_theta: f64,
) -> Result<MaxPrincipleReport> {
    if recs.len() < 2 {
        return Err(DhymError::InsufficientSampling(
            "maximum principle needs at least two samples".into(),
        ));
    }
    let slack_rate = 1e-9 * (1.0 + hat_theta.abs());
    let mut worst = f64::NEG_INFINITY;
    let mut at = None;
    for k in 1..recs.len() {
        let dt = recs[k].t - recs[k - 1].t;
        let up = recs[k].theta_max - recs[k - 1].theta_max;
        let down = recs[k - 1].theta_min - recs[k].theta_min;
        let v = up.max(down) - slack_rate * dt;
        if v > worst {
            worst = v;
            at = Some(k);
        }
    }
    let pass = worst <= 0.0;
    Ok(MaxPrincipleReport {
        pass,
        worst_violation: worst,
        worst_sample: at,
    })
}

/// Oscillation χ(t) = osc u̇ and its exponential fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillationReport {
    /// `(t, χ(t))` for every record.
    pub chi: Vec<(f64, f64)>,
    /// Fitted decay rate −d ln χ/dt over the tail window.
    pub rate: f64,
    pub r_squared: f64,
    /// `(t, (χ_{k+1}/χ_k)^{1/Δt})` per-unit-time contraction between records.
    pub contraction: Vec<(f64, f64)>,
    /// Largest consecutive ratio χ_{k+1}/χ_k.
    pub max_ratio: f64,
    /// Every consecutive ratio ≤ 1 + 1e−9.
    pub monotone: bool,
    pub fit_window: (f64, f64),
    pub fit_points: usize,
}

/// Floor below which χ is treated as zero.
pub const CHI_FLOOR: f64 = 1e-14;

/// Least-squares fit of ln χ against t over the last `tail_fraction` of the
/// time span.
pub fn oscillation_decay(traj: &Trajectory, tail_fraction: f64) -> Result<OscillationReport> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(DhymError::InvalidArgument(format!(
            "tail_fraction must lie in (0, 1], got {tail_fraction}"
        )));
    }
    let chi: Vec<(f64, f64)> = traj.records.iter().map(|r| (r.t, r.osc_udot)).collect();
    if chi.is_empty() {
        return Err(DhymError::InsufficientSampling("no records".into()));
    }
    let (t0, t1) = (chi[0].0, chi[chi.len() - 1].0);
    let start = t1 - tail_fraction * (t1 - t0);
    let window: Vec<&(f64, f64)> = chi.iter().filter(|(t, _)| *t >= start).collect();
    let usable: Vec<(f64, f64)> = window
        .iter()
        .filter(|(_, c)| *c > CHI_FLOOR)
        .map(|&&(t, c)| (t, c.ln()))
        .collect();
    if usable.is_empty() {
        return Err(DhymError::OscillationFloor);
    }
    if usable.len() < 8 {
        return Err(DhymError::InsufficientSampling(format!(
            "only {} usable samples in the fit window (need 8)",
            usable.len()
        )));
    }
    let (slope, r_squared) = linear_fit(&usable);

    let mut contraction = Vec::with_capacity(chi.len().saturating_sub(1));
    let mut max_ratio: f64 = 0.0;
    for w in chi.windows(2) {
        let (ta, ca) = w[0];
        let (tb, cb) = w[1];
        if ca > CHI_FLOOR {
            let ratio = cb / ca;
            max_ratio = max_ratio.max(ratio);
            if tb > ta {
                contraction.push((tb, ratio.powf(1.0 / (tb - ta))));
            }
        }
    }
    Ok(OscillationReport {
        chi,
        rate: -slope,
        r_squared,
        contraction,
        max_ratio,
        monotone: max_ratio <= 1.0 + 1e-9,
        fit_window: (usable[0].0, usable[usable.len() - 1].0),
        fit_points: usable.len(),
    })
}

/// Slope and R² of an ordinary least-squares line.
fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return (0.0, 0.0);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (slope, r2)
}

/// One row of the Harnack table: extremes of ξ_m and ψ_m at time `t`
/// (measured from m−1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnackRow {
    pub t: f64,
    pub xi_sup: f64,
    pub xi_inf: f64,
    pub psi_sup: f64,
    pub psi_inf: f64,
}

/// A point where ξ_m or ψ_m fails to be positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositivityViolation {
    pub function: String,
    pub t: f64,
    pub grid_index: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnackReport {
    pub m: usize,
    pub rows: Vec<HarnackRow>,
    /// sup ξ_m(·, ½) / inf ξ_m(·, 1), using the nearest samples.
    pub xi_quotient: f64,
    pub psi_quotient: f64,
    /// Sample times actually used for ½ and 1 (relative to m−1).
    pub quotient_times: (f64, f64),
    pub positive: bool,
    pub violation: Option<PositivityViolation>,
    /// sup nonincreasing and inf nondecreasing in t, for both ξ_m and ψ_m.
    pub monotone: bool,
    /// Fitted (C₁, C₂, C₃) of `ln(sup ξ(t₁)/inf ξ(t₂)) ≈ C₂ ln(t₂/t₁) + C₃/(t₂−t₁) + C₁(t₂−t₁)`.
    pub fitted_constants: Option<(f64, f64, f64)>,
}

/// Builds ξ_m(x,t) = sup φ(·,m−1) − φ(x,m−1+t) and
/// ψ_m(x,t) = φ(x,m−1+t) − inf φ(·,m−1) from samples of φ = u̇ on [m−1, m].
pub fn harnack_monitor(traj: &Trajectory, m: usize) -> Result<HarnackReport> {
    if m == 0 {
        return Err(DhymError::InvalidArgument("m must be at least 1".into()));
    }
    let t_start = (m - 1) as f64;
    let tol = 1e-9 * (1.0 + t_start);
    let window: Vec<&Sample> = traj
        .samples()
        .filter(|s| s.t >= t_start - tol && s.t <= m as f64 + tol)
        .collect();
    let first = window
        .first()
        .filter(|s| (s.t - t_start).abs() <= tol)
        .ok_or_else(|| {
            DhymError::InsufficientSampling(format!("no stored sample at t = {t_start}"))
        })?;
    if window.len() < 3 || window[window.len() - 1].t < m as f64 - 0.25 {
        return Err(DhymError::InsufficientSampling(format!(
            "stored samples do not cover [{t_start}, {m}]"
        )));
    }
    let sup0 = first.udot.max();
    let inf0 = first.udot.min();
    if sup0 - inf0 <= 1e-14 * (1.0 + sup0.abs().max(inf0.abs())) {
        return Err(DhymError::Degenerate);
    }

    let mut rows = Vec::with_capacity(window.len());
    let mut violation: Option<PositivityViolation> = None;
    for s in &window {
        let tau = s.t - t_start;
        let phi = &s.udot.values;
        let (pmax, pmin) = (reduce::max(phi), reduce::min(phi));
        rows.push(HarnackRow {
            t: tau,
            xi_sup: sup0 - pmin,
            xi_inf: sup0 - pmax,
            psi_sup: pmax - inf0,
            psi_inf: pmin - inf0,
        });
        if tau > tol && violation.is_none() {
            let row = rows.last().expect("just pushed");
            if row.xi_inf <= 0.0 {
                violation = Some(PositivityViolation {
                    function: "xi".into(),
                    t: s.t,
                    grid_index: reduce::argmax(phi),
                    value: row.xi_inf,
                });
            } else if row.psi_inf <= 0.0 {
                violation = Some(PositivityViolation {
                    function: "psi".into(),
                    t: s.t,
                    grid_index: reduce::argmin(phi),
                    value: row.psi_inf,
                });
            }
        }
    }

    let slack = 1e-12 * (1.0 + sup0.abs().max(inf0.abs()));
    let monotone = rows.windows(2).all(|w| {
        w[1].xi_sup <= w[0].xi_sup + slack
            && w[1].xi_inf >= w[0].xi_inf - slack
            && w[1].psi_sup <= w[0].psi_sup + slack
            && w[1].psi_inf >= w[0].psi_inf - slack
    });

    let nearest = |target: f64| -> &HarnackRow {
        rows.iter()
            .min_by(|a, b| (a.t - target).abs().total_cmp(&(b.t - target).abs()))
            .expect("window is nonempty")
    };
    let half = nearest(0.5);
    let one = nearest(1.0);
    let xi_quotient = half.xi_sup / one.xi_inf;
    let psi_quotient = half.psi_sup / one.psi_inf;

    Ok(HarnackReport {
        m,
        xi_quotient,
        psi_quotient,
        quotient_times: (half.t, one.t),
        positive: violation.is_none(),
        violation,
        monotone,
        fitted_constants: fit_harnack(&rows),
        rows,
    })
}

/// Least squares over all sample pairs with positive infimum.
fn fit_harnack(rows: &[HarnackRow]) -> Option<(f64, f64, f64)> {
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    let mut count = 0;
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            if !(a.t > 0.0 && b.t > a.t && a.xi_sup > 0.0 && b.xi_inf > 0.0) {
                continue;
            }
            let y = (a.xi_sup / b.xi_inf).ln();
            let dt = b.t - a.t;
            // unknowns (C₁, C₂, C₃)
            let x = [dt, (b.t / a.t).ln(), 1.0 / dt];
            for r in 0..3 {
                for c in 0..3 {
                    ata[r][c] += x[r] * x[c];
                }
                atb[r] += x[r] * y;
            }
            count += 1;
        }
    }
    if count < 3 {
        return None;
    }
    solve3(ata, atb).map(|c| (c[0], c[1], c[2]))
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let f = a[r][col] / a[col][col];
                let pivot_row = a[col];
                for (x, p) in a[r].iter_mut().zip(pivot_row) {
                    *x -= f * p;
                }
                b[r] -= f * b[col];
            }
        }
    }
    let x = [b[0] / a[0][0], b[1] / a[1][1], b[2] / a[2][2]];
    x.iter().all(|v| v.is_finite()).then_some(x)
}
