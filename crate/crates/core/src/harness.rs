//! Perturbation experiments around a dHYM reference.
//!
//! A reference `û` is obtained by running the flow from zero to a tight
//! residual. Each sweep cell then perturbs the reference by band-limited noise
//! scaled so that `‖D²u₀‖∞ = δ` and records how the flow returns.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    dhym_point_identities, maximum_principle_records, oscillation_decay, tensor_norms,
    DiagnosticsRecord, IdentityReport, MaxPrincipleReport, QConfig,
};
use crate::error::{DhymError, Result};
use crate::flow::{run_flow, BaseCurvature, FlowConfig, FlowStatus};
use crate::geometry::{bandlimited_noise, ScalarField, TorusGeometry};

/// Residual a reference must reach.
pub const REFERENCE_TOL: f64 = 1e-11;

/// Tail fraction used for the exponential fit of χ(t).
pub const FIT_TAIL: f64 = 0.5;

/// Relative slack allowed before a non-monotone `time_to_tol` is reported.
pub const MONOTONE_SLACK: f64 = 0.05;

/// A converged dHYM potential together with its pointwise identity checks.
#[derive(Clone, Debug)]
pub struct Reference {
    /// Mean-zero potential with `θ(F̂ + ∂∂̄û) ≡ θ̂`.
    pub u_hat: ScalarField,
    pub hat_theta: f64,
    /// Flow time needed to reach the reference.
    pub t: f64,
    pub residual: f64,
    /// `sup|η^{pq̄}F_{pq̄,i}|`.
    pub first_identity: IdentityReport,
    /// Second-derivative expansion at the dHYM point.
    pub second_identity: IdentityReport,
}

/// Runs `cfg` to a residual of at most [`REFERENCE_TOL`].
///
/// A timeout or suspected blow-up yields [`DhymError::NoReference`].
pub fn generate_reference(cfg: &FlowConfig) -> Result<Reference> {
    let mut cfg = cfg.clone();
    cfg.residual_tol = cfg.residual_tol.min(REFERENCE_TOL);
    cfg.retain_until = 0.0;
    cfg.ring_capacity = 0;
    let traj = run_flow(&cfg)?;
    match &traj.status {
        FlowStatus::Converged => {}
        FlowStatus::Timeout => {
            return Err(DhymError::NoReference(format!(
                "timeout at t = {} with residual {:e}",
                traj.last.t,
                traj.last.residual()
            )))
        }
        FlowStatus::BlowUp { message } => return Err(DhymError::NoReference(message.clone())),
    }
    let u_hat = traj.last.normalized_u();
    let (first_identity, second_identity) =
        dhym_point_identities(&u_hat, &cfg.base, &cfg.geometry)?;
    Ok(Reference {
        u_hat,
        hat_theta: cfg.hat_theta,
        t: traj.last.t,
        residual: traj.last.residual(),
        first_identity,
        second_identity,
    })
}

/// Numerical settings shared by every run of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowTemplate {
    pub dt_safety: f64,
    pub t_max: f64,
    pub residual_tol: f64,
    pub sample_every: usize,
    /// Replaces the winding value of θ̂ when set.
    #[serde(default)]
    pub hat_theta: Option<f64>,
    #[serde(default)]
    pub qcfg: QConfig,
}

impl Default for FlowTemplate {
    fn default() -> Self {
        FlowTemplate {
            dt_safety: 0.5,
            t_max: 100.0,
            residual_tol: 1e-10,
            sample_every: 100,
            hat_theta: None,
            qcfg: QConfig::default(),
        }
    }
}

impl FlowTemplate {
    /// Full run configuration for initial data `u0`.
    pub fn instantiate(
        &self,
        geometry: &TorusGeometry,
        base: &BaseCurvature,
        u0: ScalarField,
    ) -> Result<FlowConfig> {
        let mut cfg = FlowConfig::new(geometry.clone(), base.clone(), u0)?;
        if let Some(h) = self.hat_theta {
            cfg.hat_theta = h;
        }
        cfg.dt_safety = self.dt_safety;
        cfg.t_max = self.t_max;
        cfg.residual_tol = self.residual_tol;
        cfg.sample_every = self.sample_every;
        cfg.qcfg = self.qcfg;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A grid of perturbation experiments.
#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub geometry: TorusGeometry,
    pub base: BaseCurvature,
    /// Target `‖D²u₀‖∞` values, ascending; zero means no perturbation.
    pub delta_list: Vec<f64>,
    /// Seeds per δ; cell `s` uses seed `base_seed + s`.
    pub seeds: usize,
    pub base_seed: u64,
    pub k_band: usize,
    pub flow: FlowTemplate,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DhymError::InvalidArgument(m));
        if self.delta_list.is_empty() {
            return bad("delta_list is empty".into());
        }
        if self
            .delta_list
            .iter()
            .any(|d| !(d.is_finite() && *d >= 0.0))
        {
            return bad("deltas must be finite and non-negative".into());
        }
        if self.delta_list.windows(2).any(|w| w[1] <= w[0]) {
            return bad("delta_list must be strictly ascending".into());
        }
        if self.seeds == 0 {
            return bad("seeds must be at least 1".into());
        }
        Ok(())
    }
}

/// Outcome of one (δ, seed) run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepCell {
    pub delta: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub status: FlowStatus,
    /// Time at which the residual fell below tolerance.
    pub time_to_tol: Option<f64>,
    pub steps: usize,
    pub final_residual: f64,
    /// Measured `‖D²u₀‖∞ / δ`; 1 up to rounding.
    pub initial_ratio: Option<f64>,
    /// `sup_t ‖D²u_t‖∞ / δ` over the recorded samples.
    pub max_hess_ratio: Option<f64>,
    /// Decay rate `C₂` of the fit `χ(t) ≈ C₁e^{−C₂t}`.
    pub fitted_rate: Option<f64>,
    pub r_squared: Option<f64>,
    /// θ max/min monotonicity along the recorded samples.
    pub max_principle: Option<MaxPrincipleReport>,
    /// Why a run or its fit could not be completed.
    pub error: Option<String>,
    /// Diagnostics time series; written separately, not part of the report.
    #[serde(skip)]
    pub records: Vec<DiagnosticsRecord>,
}

impl SweepCell {
    pub fn converged(&self) -> bool {
        self.status == FlowStatus::Converged
    }
}

/// Per-δ summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateRow {
    pub delta: f64,
    pub converged: usize,
    pub runs: usize,
    pub mean_rate: Option<f64>,
    pub min_rate: Option<f64>,
    pub max_rate: Option<f64>,
    pub min_r_squared: Option<f64>,
    pub max_hess_ratio: Option<f64>,
}

/// Aggregated results of a sweep, cells in (δ, seed) order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub hat_theta: f64,
    pub reference_t: f64,
    pub reference_residual: f64,
    pub cells: Vec<SweepCell>,
    /// Largest δ at which every seed converged.
    pub largest_all_converged: Option<f64>,
    pub rate_table: Vec<RateRow>,
    /// Cases where `time_to_tol` decreased with δ by more than the slack.
    pub warnings: Vec<String>,
}

/// Runs every (δ, seed) cell around the reference of `cfg.base`.
///
/// Individual run failures are recorded in their cell; only a failure to
/// obtain the reference aborts the sweep.
pub fn stability_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let ref_cfg = cfg
        .flow
        .instantiate(&cfg.geometry, &cfg.base, cfg.geometry.zeros())?;
    let reference = generate_reference(&ref_cfg)?;
    let base = cfg.base.shifted(&reference.u_hat);

    let jobs: Vec<(f64, u64)> = cfg
        .delta_list
        .iter()
        .flat_map(|&d| (0..cfg.seeds as u64).map(move |s| (d, cfg.base_seed + s)))
        .collect();
    let cells: Vec<SweepCell> = jobs
        .par_iter()
        .map(|&(delta, seed)| run_cell(cfg, &base, reference.hat_theta, delta, seed))
        .collect();

    let rate_table = rate_table(&cfg.delta_list, &cells);
    let largest_all_converged = rate_table
        .iter()
        .filter(|r| r.converged == r.runs)
        .map(|r| r.delta)
        .fold(None, |acc: Option<f64>, d| {
            Some(acc.map_or(d, |a| a.max(d)))
        });
    let warnings = monotone_warnings(cfg, &cells);
    Ok(SweepReport {
        hat_theta: reference.hat_theta,
        reference_t: reference.t,
        reference_residual: reference.residual,
        cells,
        largest_all_converged,
        rate_table,
        warnings,
    })
}

/// Noise with `‖D²u₀‖∞ = δ`.
pub fn normalized_perturbation(
    geom: &TorusGeometry,
    k_band: usize,
    delta: f64,
    seed: u64,
) -> Result<ScalarField> {
    if delta == 0.0 {
        return Ok(geom.zeros());
    }
    let noise = bandlimited_noise(geom, k_band, 1.0, seed)?;
    let h = tensor_norms(&noise, geom).hess_sup();
    if !(h > 0.0) {
        return Err(DhymError::Degenerate);
    }
    Ok(noise.scaled(delta / h))
}

fn run_cell(
    cfg: &SweepConfig,
    base: &BaseCurvature,
    hat_theta: f64,
    delta: f64,
    seed: u64,
) -> SweepCell {
    let mut cell = SweepCell {
        delta,
        seed,
        status: FlowStatus::Timeout,
        time_to_tol: None,
        steps: 0,
        final_residual: f64::NAN,
        initial_ratio: None,
        max_hess_ratio: None,
        fitted_rate: None,
        r_squared: None,
        max_principle: None,
        error: None,
        records: Vec::new(),
    };
    let run = || -> Result<_> {
        let u0 = normalized_perturbation(&cfg.geometry, cfg.k_band, delta, seed)?;
        let mut flow = cfg.flow.instantiate(&cfg.geometry, base, u0)?;
        flow.hat_theta = hat_theta;
        run_flow(&flow)
    };
    let traj = match run() {
        Ok(t) => t,
        Err(e) => {
            cell.status = FlowStatus::BlowUp {
                message: e.to_string(),
            };
            cell.error = Some(e.to_string());
            return cell;
        }
    };
    cell.status = traj.status.clone();
    cell.steps = traj.steps;
    cell.final_residual = traj.last.residual();
    if cell.converged() {
        cell.time_to_tol = Some(traj.last.t);
    }
    cell.max_principle = maximum_principle_records(&traj.records, hat_theta).ok();
    if delta > 0.0 {
        cell.initial_ratio = traj.records.first().map(|r| r.hess_sup / delta);
        cell.max_hess_ratio = Some(
            traj.records
                .iter()
                .map(|r| r.hess_sup / delta)
                .fold(0.0, f64::max),
        );
        match oscillation_decay(&traj, FIT_TAIL) {
            Ok(fit) => {
                cell.fitted_rate = Some(fit.rate);
                cell.r_squared = Some(fit.r_squared);
            }
            Err(e) => cell.error = Some(e.to_string()),
        }
    }
    cell.records = traj.records;
    cell
}

fn rate_table(deltas: &[f64], cells: &[SweepCell]) -> Vec<RateRow> {
    deltas
        .iter()
        .map(|&delta| {
            let row: Vec<&SweepCell> = cells.iter().filter(|c| c.delta == delta).collect();
            let rates: Vec<f64> = row.iter().filter_map(|c| c.fitted_rate).collect();
            let fold = |v: &[f64], f: fn(f64, f64) -> f64| v.iter().copied().reduce(f);
            let r2: Vec<f64> = row.iter().filter_map(|c| c.r_squared).collect();
            let ratios: Vec<f64> = row.iter().filter_map(|c| c.max_hess_ratio).collect();
            RateRow {
                delta,
                converged: row.iter().filter(|c| c.converged()).count(),
                runs: row.len(),
                mean_rate: (!rates.is_empty())
                    .then(|| rates.iter().sum::<f64>() / rates.len() as f64),
                min_rate: fold(&rates, f64::min),
                max_rate: fold(&rates, f64::max),
                min_r_squared: fold(&r2, f64::min),
                max_hess_ratio: fold(&ratios, f64::max),
            }
        })
        .collect()
}

fn monotone_warnings(cfg: &SweepConfig, cells: &[SweepCell]) -> Vec<String> {
    let mut out = Vec::new();
    for s in 0..cfg.seeds as u64 {
        let seed = cfg.base_seed + s;
        let series: Vec<(f64, f64)> = cells
            .iter()
            .filter(|c| c.seed == seed)
            .filter_map(|c| c.time_to_tol.map(|t| (c.delta, t)))
            .collect();
        for w in series.windows(2) {
            let ((d0, t0), (d1, t1)) = (w[0], w[1]);
            if t1 < t0 * (1.0 - MONOTONE_SLACK) {
                out.push(format!(
                    "seed {seed}: time_to_tol fell from {t0} (δ = {d0}) to {t1} (δ = {d1})"
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CMat;

    fn cos_psi(geom: &TorusGeometry, amp: f64) -> ScalarField {
        geom.field_from_fn(|x| amp * x[0].cos())
    }

    fn template(t_max: f64) -> FlowTemplate {
        FlowTemplate {
            dt_safety: 1.0,
            t_max,
            sample_every: 20,
            ..FlowTemplate::default()
        }
    }

    #[test]
    fn trivial_reference_is_immediate() {
        let geom = TorusGeometry::standard(1, 16).unwrap();
        let base = BaseCurvature::multiple_of_metric(&geom, 1.0);
        let cfg = template(1.0)
            .instantiate(&geom, &base, geom.zeros())
            .unwrap();
        let r = generate_reference(&cfg).unwrap();
        assert_eq!(r.t, 0.0);
        assert!(r.u_hat.values.iter().all(|&v| v == 0.0));
        assert!(r.first_identity.lhs_norm < 1e-14);
    }

    #[test]
    fn reference_with_potential_has_constant_phase() {
        let geom = TorusGeometry::standard(1, 32).unwrap();
        let base =
            BaseCurvature::new(&geom, CMat::from_real_diag(&[1.0]), cos_psi(&geom, 0.2)).unwrap();
        let cfg = template(400.0)
            .instantiate(&geom, &base, geom.zeros())
            .unwrap();
        let r = generate_reference(&cfg).unwrap();
        assert!(r.residual <= REFERENCE_TOL);
        let theta = base.theta(&geom, &r.u_hat);
        assert!(theta.oscillation() < 2e-11);
        assert!((theta.mean() - std::f64::consts::FRAC_PI_4).abs() < 1e-10);
        assert!(r.first_identity.lhs_norm <= 1e-8);
        assert!(r.second_identity.residual_rel <= 1e-6);
    }

    #[test]
    fn large_potential_yields_no_reference() {
        let geom = TorusGeometry::standard(1, 16).unwrap();
        let base =
            BaseCurvature::new(&geom, CMat::from_real_diag(&[1.0]), cos_psi(&geom, 60.0)).unwrap();
        let cfg = template(5.0)
            .instantiate(&geom, &base, geom.zeros())
            .unwrap();
        match generate_reference(&cfg) {
            Err(DhymError::NoReference(msg)) => assert!(msg.contains("timeout")),
            other => panic!("expected NoReference, got {other:?}"),
        }
    }

    fn small_sweep(deltas: Vec<f64>, t_max: f64) -> SweepConfig {
        let geom = TorusGeometry::standard(1, 16).unwrap();
        SweepConfig {
            base: BaseCurvature::multiple_of_metric(&geom, 1.0),
            geometry: geom,
            delta_list: deltas,
            seeds: 2,
            base_seed: 11,
            k_band: 2,
            flow: FlowTemplate {
                residual_tol: 1e-6,
                ..template(t_max)
            },
        }
    }

    #[test]
    fn zero_delta_cells_converge_at_start() {
        let rep = stability_sweep(&small_sweep(vec![0.0], 1.0)).unwrap();
        assert_eq!(rep.cells.len(), 2);
        for c in &rep.cells {
            assert!(c.converged());
            assert_eq!(c.time_to_tol, Some(0.0));
            assert!(c.initial_ratio.is_none());
        }
        assert_eq!(rep.largest_all_converged, Some(0.0));
    }

    #[test]
    fn sweep_normalizes_and_is_deterministic() {
        let cfg = small_sweep(vec![0.02, 0.05], 200.0);
        let a = stability_sweep(&cfg).unwrap();
        let b = stability_sweep(&cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        for c in &a.cells {
            assert!(c.converged(), "{c:?}");
            assert!((c.initial_ratio.unwrap() - 1.0).abs() < 1e-12);
            assert!(c.max_hess_ratio.unwrap() >= 1.0 - 1e-12);
            assert!(!c.records.is_empty());
        }
        let order: Vec<(f64, u64)> = a.cells.iter().map(|c| (c.delta, c.seed)).collect();
        assert_eq!(order, vec![(0.02, 11), (0.02, 12), (0.05, 11), (0.05, 12)]);
        assert_eq!(a.largest_all_converged, Some(0.05));
    }

    #[test]
    fn large_delta_is_recorded_not_fatal() {
        let cfg = small_sweep(vec![0.05, 50.0], 2.0);
        let rep = stability_sweep(&cfg).unwrap();
        let big: Vec<&SweepCell> = rep.cells.iter().filter(|c| c.delta == 50.0).collect();
        assert!(big.iter().all(|c| !c.converged()));
        assert_eq!(rep.rate_table[1].converged, 0);
    }

    #[test]
    fn invalid_sweeps_are_rejected() {
        let mut cfg = small_sweep(vec![0.1, 0.05], 1.0);
        assert!(cfg.validate().is_err());
        cfg.delta_list = vec![0.05];
        cfg.seeds = 0;
        assert!(cfg.validate().is_err());
    }
}
