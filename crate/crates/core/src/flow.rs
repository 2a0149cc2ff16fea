//! Explicit time integration of `∂u/∂t = θ(F̂ + ∂∂̄u) − θ̂`.
//!
//! The step size comes from an a-priori diffusion bound: the linearization is
//! `Δ_η = η^{pq̄}∂_p∂_q̄` and `η⁻¹ ≼ g⁻¹`, so the stiffest resolved mode decays
//! at most at rate `2n·λ_max(g⁻¹)·(N/2)²/4`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::cohomology::cohomology_invariants;
use crate::diagnostics::{sample_record, DiagnosticsRecord, QConfig};
use crate::error::{DhymError, Result};
use crate::geometry::{MatrixField, ScalarField, TorusGeometry, HERMITIAN_TOL};
use crate::linalg::CMat;
use crate::phase::theta_field_offset;

/// Right end of the RK4 stability interval on the negative real axis.
pub const RK4_STABILITY_LIMIT: f64 = 2.785_293_563_405_282;

/// Maximum number of dt halvings attempted on a single step.
pub const MAX_HALVINGS: usize = 10;

/// Base curvature `F̂ = F̂⁰ + ∂∂̄ψ`.
#[derive(Clone, Debug)]
pub struct BaseCurvature {
    f0: CMat,
    psi: ScalarField,
}

impl BaseCurvature {
    pub fn new(geom: &TorusGeometry, f0: CMat, psi: ScalarField) -> Result<Self> {
        if f0.n() != geom.n() {
            return Err(DhymError::ShapeMismatch {
                expected: geom.n(),
                got: f0.n(),
            });
        }
        let dev = f0.hermitian_deviation();
        if dev > HERMITIAN_TOL * f0.max_abs().max(1.0) {
            return Err(DhymError::NonHermitian { deviation: dev });
        }
        geom.check_len(psi.len())?;
        psi.check_finite("base potential")?;
        Ok(BaseCurvature {
            f0: f0.hermitize(),
            psi,
        })
    }

    /// Spatially constant `F̂ = F̂⁰`.
    pub fn constant(geom: &TorusGeometry, f0: CMat) -> Result<Self> {
        BaseCurvature::new(geom, f0, geom.zeros())
    }

    /// `F̂ = c·ω`, i.e. `F̂⁰ = c·g`.
    pub fn multiple_of_metric(geom: &TorusGeometry, c: f64) -> Self {
        BaseCurvature {
            f0: *geom.metric() * c,
            psi: geom.zeros(),
        }
    }

    pub fn f0(&self) -> &CMat {
        &self.f0
    }

    pub fn psi(&self) -> &ScalarField {
        &self.psi
    }

    /// The same class with potential `ψ + v`.
    pub fn shifted(&self, v: &ScalarField) -> BaseCurvature {
        BaseCurvature {
            f0: self.f0,
            psi: self.psi.axpy(1.0, v),
        }
    }

    /// `F̂` sampled on the grid.
    pub fn realized(&self, geom: &TorusGeometry) -> MatrixField {
        self.curvature(geom, &geom.zeros())
    }

    /// θ(F̂⁰ + ∂∂̄(ψ + u)) without materializing η or ζ.
    pub fn theta(&self, geom: &TorusGeometry, u: &ScalarField) -> ScalarField {
        let phi = self.psi.axpy(1.0, u);
        let spec = geom.spectrum(&phi);
        if geom.n() == 1 {
            let lap = geom.diagonal_hessian(&spec, 0);
            let f0 = self.f0[(0, 0)].re;
            let g_inv = geom.metric_inv()[(0, 0)].re;
            return lap.map(|v| ((f0 + v) * g_inv).atan());
        }
        let hess = geom.hessian_from_spectrum(&spec);
        theta_field_offset(&hess, &self.f0, geom)
    }

    /// `F = F̂⁰ + ∂∂̄(ψ + u)`.
    pub fn curvature(&self, geom: &TorusGeometry, u: &ScalarField) -> MatrixField {
        let phi = self.psi.axpy(1.0, u);
        let hess = geom.complex_hessian(&phi);
        hess.add(&MatrixField::constant(&self.f0, geom.num_points()))
    }
}

/// Immutable data shared by every step of one run.
#[derive(Clone, Debug)]
pub struct FlowProblem {
    pub geometry: TorusGeometry,
    pub base: BaseCurvature,
    pub hat_theta: f64,
}

impl FlowProblem {
    /// Returns `(θ, θ − θ̂)` at `u`.
    pub fn evaluate(&self, u: &ScalarField) -> Result<(ScalarField, ScalarField)> {
        let theta = self.base.theta(&self.geometry, u);
        let h = self.hat_theta;
        let udot = theta.map(|t| t - h);
        udot.check_finite("flow right-hand side")?;
        Ok((theta, udot))
    }

    /// Largest decay rate of the linearized operator admitted by `η⁻¹ ≼ g⁻¹`.
    pub fn stiffness_bound(&self) -> f64 {
        stiffness_bound(&self.geometry)
    }
}

/// `2n·λ_max(g⁻¹)·(N/2)²/4`.
pub fn stiffness_bound(geom: &TorusGeometry) -> f64 {
    let half = geom.resolution() as f64 / 2.0;
    2.0 * geom.n() as f64 * geom.metric_inv_max_eigenvalue() * half * half / 4.0
}

/// Step size for safety factor σ.
pub fn cfl_dt(geom: &TorusGeometry, dt_safety: f64) -> f64 {
    dt_safety / stiffness_bound(geom)
}

/// θ(F̂ + ∂∂̄u) − θ̂.
pub fn flow_rhs(
    u: &ScalarField,
    base: &BaseCurvature,
    hat_theta: f64,
    geom: &TorusGeometry,
) -> Result<ScalarField> {
    geom.check_len(u.len())?;
    let h = hat_theta;
    let udot = base.theta(geom, u).map(|t| t - h);
    udot.check_finite("flow right-hand side")?;
    Ok(udot)
}

/// Current point of a trajectory with its cached phase data.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    pub u: ScalarField,
    pub theta: ScalarField,
    /// θ − θ̂.
    pub udot: ScalarField,
}

impl FlowState {
    pub fn new(problem: &FlowProblem, t: f64, u: ScalarField) -> Result<Self> {
        problem.geometry.check_len(u.len())?;
        u.check_finite("potential")?;
        let (theta, udot) = problem.evaluate(&u)?;
        Ok(FlowState { t, u, theta, udot })
    }

    /// sup |θ − θ̂|.
    pub fn residual(&self) -> f64 {
        self.udot.sup_abs()
    }

    /// ũ = u − mean(u).
    pub fn normalized_u(&self) -> ScalarField {
        let m = self.u.mean();
        self.u.map(|x| x - m)
    }
}

/// One classical RK4 step.
///
/// A step is rejected as diverged when (a) `dt` puts the stiffest resolved
/// mode outside the RK4 stability interval, (b) any stage is non-finite, or
/// (c) `sup|u̇|` grows, which the maximum principle rules out for the exact
/// flow.
pub fn rk4_step(problem: &FlowProblem, state: &FlowState, dt: f64) -> Result<FlowState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(DhymError::InvalidArgument(format!(
            "time step must be positive, got {dt}"
        )));
    }
    if dt * problem.stiffness_bound() > RK4_STABILITY_LIMIT {
        return Err(DhymError::StepDiverged { stage: 1 });
    }
    let stage = |s: usize, u: &ScalarField| -> Result<ScalarField> {
        if u.check_finite("stage input").is_err() {
            return Err(DhymError::StepDiverged { stage: s });
        }
        problem
            .evaluate(u)
            .map(|(_, k)| k)
            .map_err(|_| DhymError::StepDiverged { stage: s })
    };
    let u = &state.u;
    let k1 = &state.udot;
    let k2 = stage(2, &u.axpy(0.5 * dt, k1))?;
    let k3 = stage(3, &u.axpy(0.5 * dt, &k2))?;
    let k4 = stage(4, &u.axpy(dt, &k3))?;
    let values = (0..u.len())
        .map(|p| {
            u.values[p]
                + dt / 6.0 * (k1.values[p] + 2.0 * (k2.values[p] + k3.values[p]) + k4.values[p])
        })
        .collect();
    let u_new = ScalarField { values };
    if u_new.check_finite("potential").is_err() {
        return Err(DhymError::StepDiverged { stage: 4 });
    }
    let (theta, udot) = problem
        .evaluate(&u_new)
        .map_err(|_| DhymError::StepDiverged { stage: 4 })?;
    let before = state.udot.sup_abs();
    if udot.sup_abs() > before * (1.0 + 1e-6) + 1e-13 {
        return Err(DhymError::StepDiverged { stage: 4 });
    }
    Ok(FlowState {
        t: state.t + dt,
        u: u_new,
        theta,
        udot,
    })
}

/// Full run configuration.
#[derive(Clone, Debug)]
pub struct FlowConfig {
    pub geometry: TorusGeometry,
    pub base: BaseCurvature,
    pub u0: ScalarField,
    pub hat_theta: f64,
    /// σ ∈ (0, 1].
    pub dt_safety: f64,
    pub t_max: f64,
    pub residual_tol: f64,
    /// Accepted steps between diagnostic samples.
    pub sample_every: usize,
    pub qcfg: QConfig,
    /// Field samples with `t ≤ retain_until` are kept for the whole run.
    pub retain_until: f64,
    /// Number of most recent field samples kept beyond `retain_until`.
    pub ring_capacity: usize,
}

impl FlowConfig {
    /// Config with default numerics and θ̂ from the winding lift of `F̂`.
    pub fn new(geometry: TorusGeometry, base: BaseCurvature, u0: ScalarField) -> Result<Self> {
        geometry.check_len(u0.len())?;
        let hat_theta = cohomology_invariants(&base.realized(&geometry), &geometry)?.hat_theta;
        Ok(FlowConfig {
            geometry,
            base,
            u0,
            hat_theta,
            dt_safety: 0.5,
            t_max: 100.0,
            residual_tol: 1e-10,
            sample_every: 100,
            qcfg: QConfig::default(),
            retain_until: 0.0,
            ring_capacity: 4,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DhymError::InvalidArgument(m));
        if !(self.dt_safety > 0.0 && self.dt_safety <= 1.0) {
            return bad(format!(
                "dt_safety must lie in (0, 1], got {}",
                self.dt_safety
            ));
        }
        if !(self.t_max > 0.0) || !self.t_max.is_finite() {
            return bad(format!("t_max must be positive, got {}", self.t_max));
        }
        if !(self.residual_tol > 0.0) {
            return bad(format!(
                "residual_tol must be positive, got {}",
                self.residual_tol
            ));
        }
        if self.sample_every == 0 {
            return bad("sample_every must be at least 1".into());
        }
        if !self.hat_theta.is_finite() {
            return bad("hat_theta must be finite".into());
        }
        self.qcfg.validate()?;
        self.geometry.check_len(self.u0.len())?;
        self.u0.check_finite("initial potential")
    }

    pub fn problem(&self) -> FlowProblem {
        FlowProblem {
            geometry: self.geometry.clone(),
            base: self.base.clone(),
            hat_theta: self.hat_theta,
        }
    }

    /// Largest step of the form 1/M (M integer) not exceeding the CFL step.
    pub fn base_dt(&self) -> f64 {
        1.0 / (1.0 / cfl_dt(&self.geometry, self.dt_safety)).ceil()
    }
}

/// How a run ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FlowStatus {
    Converged,
    Timeout,
    BlowUp { message: String },
}

/// Stored fields at one sample time.
#[derive(Clone, Debug)]
pub struct Sample {
    pub t: f64,
    pub u: ScalarField,
    pub udot: ScalarField,
    pub theta: ScalarField,
}

/// Recorded history of one run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub problem: FlowProblem,
    /// u₀ at the Q base point.
    pub u0_at_p: f64,
    pub qcfg: QConfig,
    pub records: Vec<DiagnosticsRecord>,
    retained: Vec<Sample>,
    ring: VecDeque<Sample>,
    retain_until: f64,
    ring_capacity: usize,
    pub status: FlowStatus,
    /// Last accepted state.
    pub last: FlowState,
    pub steps: usize,
    /// Step size in use when the run ended.
    pub dt: f64,
}

impl Trajectory {
    fn new(problem: FlowProblem, cfg: &FlowConfig, first: FlowState) -> Self {
        Trajectory {
            problem,
            u0_at_p: cfg.u0.values[cfg.qcfg.base_point],
            qcfg: cfg.qcfg,
            records: Vec::new(),
            retained: Vec::new(),
            ring: VecDeque::new(),
            retain_until: cfg.retain_until,
            ring_capacity: cfg.ring_capacity,
            status: FlowStatus::Timeout,
            last: first,
            steps: 0,
            dt: 0.0,
        }
    }

    /// Field samples in time order.
    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.retained.iter().chain(self.ring.iter())
    }

    pub fn num_samples(&self) -> usize {
        self.retained.len() + self.ring.len()
    }

    pub fn geometry(&self) -> &TorusGeometry {
        &self.problem.geometry
    }

    fn record(&mut self, state: &FlowState) -> Result<()> {
        if self.records.last().is_some_and(|r| r.t == state.t) {
            return Ok(());
        }
        let rec = sample_record(&self.problem, state, self.u0_at_p, &self.qcfg)?;
        self.records.push(rec);
        let sample = Sample {
            t: state.t,
            u: state.u.clone(),
            udot: state.udot.clone(),
            theta: state.theta.clone(),
        };
        if state.t <= self.retain_until {
            self.retained.push(sample);
        } else if self.ring_capacity > 0 {
            if self.ring.len() == self.ring_capacity {
                self.ring.pop_front();
            }
            self.ring.push_back(sample);
        }
        Ok(())
    }

    /// Builds a trajectory directly from samples (used by tests and by
    /// tools that reload stored runs).
    pub fn from_samples(
        problem: FlowProblem,
        qcfg: QConfig,
        u0_at_p: f64,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| DhymError::InsufficientSampling("no samples".into()))?;
        let mut records = Vec::with_capacity(samples.len());
        for s in &samples {
            let state = FlowState {
                t: s.t,
                u: s.u.clone(),
                theta: s.theta.clone(),
                udot: s.udot.clone(),
            };
            records.push(sample_record(&problem, &state, u0_at_p, &qcfg)?);
        }
        let last = samples.last().unwrap_or(first);
        let last = FlowState {
            t: last.t,
            u: last.u.clone(),
            theta: last.theta.clone(),
            udot: last.udot.clone(),
        };
        Ok(Trajectory {
            problem,
            u0_at_p,
            qcfg,
            records,
            retain_until: f64::INFINITY,
            ring_capacity: 0,
            retained: samples,
            ring: VecDeque::new(),
            status: FlowStatus::Timeout,
            last,
            steps: 0,
            dt: 0.0,
        })
    }
}

/// Runs the flow until convergence, `t_max`, or suspected blow-up.
pub fn run_flow(cfg: &FlowConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let problem = cfg.problem();
    let state = FlowState::new(&problem, 0.0, cfg.u0.clone())?;
    let mut traj = Trajectory::new(problem, cfg, state.clone());
    traj.record(&state)?;
    let mut state = state;
    let mut dt = cfg.base_dt();
    traj.dt = dt;
    let mut since_sample = 0;
    loop {
        if state.residual() < cfg.residual_tol {
            traj.status = FlowStatus::Converged;
            break;
        }
        if state.t >= cfg.t_max {
            traj.status = FlowStatus::Timeout;
            break;
        }
        let remaining = cfg.t_max - state.t;
        let mut halvings = 0;
        let next = loop {
            let h = dt.min(remaining);
            match rk4_step(&traj.problem, &state, h) {
                Ok(s) => break Some(s),
                Err(DhymError::StepDiverged { .. }) if halvings < MAX_HALVINGS => {
                    halvings += 1;
                    dt *= 0.5;
                }
                Err(DhymError::StepDiverged { .. }) => break None,
                Err(e) => return Err(e),
            }
        };
        let Some(mut next) = next else {
            traj.status = FlowStatus::BlowUp {
                message: DhymError::BlowUp { t: state.t }.to_string(),
            };
            break;
        };
        if (next.t - cfg.t_max).abs() <= 1e-12 * cfg.t_max {
            next.t = cfg.t_max;
        }
        state = next;
        traj.steps += 1;
        traj.dt = dt;
        since_sample += 1;
        if since_sample == cfg.sample_every {
            since_sample = 0;
            traj.record(&state)?;
        }
    }
    traj.record(&state)?;
    traj.last = state;
    Ok(traj)
}

/// Integrates to `t_center − dt_s` and records three samples spaced exactly
/// `dt_s` apart, for central time differences at `t_center`.
pub fn record_identity_window(cfg: &FlowConfig, t_center: f64, dt_s: f64) -> Result<Trajectory> {
    cfg.validate()?;
    if !(dt_s > 0.0) || !(t_center - dt_s >= 0.0) {
        return Err(DhymError::InvalidArgument(format!(
            "identity window [{} , {}] must start at t ≥ 0",
            t_center - dt_s,
            t_center + dt_s
        )));
    }
    let problem = cfg.problem();
    let dt_cfl = cfl_dt(&cfg.geometry, cfg.dt_safety);
    let mut state = FlowState::new(&problem, 0.0, cfg.u0.clone())?;
    let mut window_cfg = cfg.clone();
    window_cfg.retain_until = f64::INFINITY;
    let mut traj = Trajectory::new(problem, &window_cfg, state.clone());
    let t0 = t_center - dt_s;
    if t0 > 0.0 {
        state = advance_exactly(&traj.problem, &state, t0, dt_cfl, &mut traj.steps)?;
    }
    traj.record(&state)?;
    for _ in 0..2 {
        state = advance_exactly(&traj.problem, &state, dt_s, dt_cfl, &mut traj.steps)?;
        traj.record(&state)?;
    }
    traj.last = state;
    traj.dt = dt_s;
    Ok(traj)
}

/// Advances by exactly `span` using ⌈span/dt_max⌉ equal RK4 substeps.
fn advance_exactly(
    problem: &FlowProblem,
    state: &FlowState,
    span: f64,
    dt_max: f64,
    steps: &mut usize,
) -> Result<FlowState> {
    let m = (span / dt_max).ceil().max(1.0) as usize;
    let h = span / m as f64;
    let start = state.t;
    let mut s = state.clone();
    for k in 0..m {
        s = rk4_step(problem, &s, h)?;
        s.t = start + (k + 1) as f64 * h;
    }
    *steps += m;
    Ok(s)
}
