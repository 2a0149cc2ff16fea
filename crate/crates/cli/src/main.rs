//! `dhym-lab`: command-line driver for the flow laboratory.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use dhym_core::cohomology::cohomology_invariants;
use dhym_core::diagnostics::{
    dhym_point_identities, maximum_principle_monitor, oscillation_decay, verify_evolution_identity,
    EvolutionIdentity, IdentityReport,
};
use dhym_core::flow::{
    record_identity_window, run_flow, FlowState, FlowStatus, Sample, Trajectory,
};
use dhym_core::harness::{generate_reference, stability_sweep, FIT_TAIL};
use dhym_core::io::{
    matrix_from_spec, parse_config, read_scalar_snapshot, write_diagnostics, write_json,
    write_snapshot, MatrixSpec, RunConfig, SnapshotPolicy,
};
use dhym_core::linalg::CMat;
use dhym_core::phase::pointwise_phase;

#[derive(Parser, Debug)]
#[command(
    name = "dhym-lab",
    version,
    about = "Line bundle mean curvature flow laboratory on flat complex tori"
)]
struct Cli {
    /// Worker thread cap (default: all cores).
    #[arg(long, env = "DHYM_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the flow and write effective-config.json, diagnostics.csv, report.json and snapshots.
    Simulate(SimulateArgs),
    /// Check the evolution identities (and optionally the dHYM-point identities); JSONL output.
    Verify(VerifyArgs),
    /// Perturbation sweep over the `sweep` section of the config.
    Sweep(SweepArgs),
    /// Flow to a dHYM reference potential and write it as a snapshot.
    Reference(ReferenceArgs),
    /// Print Z, |Z| and the lifted angle θ̂ of the configured base curvature.
    HatTheta(HatThetaArgs),
    /// Phase data for Hermitian matrices read one JSON array per line.
    PhaseTable(PhaseTableArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `outputs.dir` from the config).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Snapshot policy: none, final or all-samples (default: from the config).
    #[arg(long)]
    snapshots: Option<SnapshotPolicy>,
    /// Replace the noise seed of the initial data.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Directory of `u_*.snap` sample snapshots from `simulate --snapshots all-samples`;
    /// when absent the flow is integrated from the config.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Time at which the identities are checked (nearest stored sample with --trajectory).
    #[arg(long, default_value_t = 0.5)]
    t_center: f64,
    /// Sample spacing for the central time difference.
    #[arg(long, default_value_t = 1e-3)]
    dt_s: f64,
    /// Converged potential snapshot; adds the dHYM-point identities.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// JSONL output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Run configuration with a `sweep` section (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Sweep report path.
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    /// Directory for per-cell diagnostics CSVs (default: `outputs.dir`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReferenceArgs {
    /// Run configuration (JSON); the initial data is the starting point.
    #[arg(long)]
    config: PathBuf,
    /// Snapshot path for the converged potential.
    #[arg(long, default_value = "u_hat.snap")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct HatThetaArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args, Debug)]
struct PhaseTableArgs {
    /// Input file: one matrix per line as nested JSON arrays (entries real or [re, im]).
    #[arg(long)]
    input: PathBuf,
    /// Metric as a JSON matrix (default: identity).
    #[arg(long)]
    metric: Option<String>,
    /// CSV output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
        {
            eprintln!("warning: could not configure thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Verify(a) => verify(a),
        Command::Sweep(a) => sweep(a).map(|_| 0),
        Command::Reference(a) => reference(a).map(|_| 0),
        Command::HatTheta(a) => hat_theta(a).map(|_| 0),
        Command::PhaseTable(a) => phase_table(a).map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load(path: &Path) -> Result<RunConfig> {
    parse_config(path).with_context(|| format!("loading {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn simulate(a: SimulateArgs) -> Result<u8> {
    let mut cfg = load(&a.config)?;
    if let Some(d) = a.out_dir {
        cfg.outputs.dir = d;
    }
    if let Some(s) = a.snapshots {
        cfg.outputs.snapshots = s;
    }
    if let (Some(seed), dhym_core::io::InitialSpec::Noise { seed: s, .. }) =
        (a.seed_override, &mut cfg.initial)
    {
        *s = seed;
    }
    let dir = cfg.outputs.dir.clone();
    create_dir(&dir)?;
    write_json(&cfg, dir.join("effective-config.json"))?;

    let mut flow = cfg.flow_config(None)?;
    if cfg.outputs.snapshots == SnapshotPolicy::AllSamples {
        flow.retain_until = f64::INFINITY;
    }
    let traj = run_flow(&flow)?;
    write_diagnostics(&traj.records, dir.join("diagnostics.csv"))?;

    let geom = &flow.geometry;
    match cfg.outputs.snapshots {
        SnapshotPolicy::None => {}
        SnapshotPolicy::Final => write_snapshot(
            &traj.last.u,
            "u",
            traj.last.t,
            geom,
            dir.join("u_final.snap"),
        )?,
        SnapshotPolicy::AllSamples => {
            for (k, s) in traj.samples().enumerate() {
                write_snapshot(&s.u, "u", s.t, geom, dir.join(format!("u_{k:06}.snap")))?;
            }
            write_snapshot(
                &traj.last.u,
                "u",
                traj.last.t,
                geom,
                dir.join("u_final.snap"),
            )?;
        }
    }

    let z0 = (traj.records[0].z_re, traj.records[0].z_im);
    let drift = traj
        .records
        .iter()
        .map(|r| (r.z_re - z0.0).hypot(r.z_im - z0.1) / z0.0.hypot(z0.1))
        .fold(0.0, f64::max);
    let mp = maximum_principle_monitor(&traj)?;
    let osc = oscillation_decay(&traj, FIT_TAIL);
    let hess_max = traj.records.iter().map(|r| r.hess_sup).fold(0.0, f64::max);
    let report = json!({
        "status": status_word(&traj.status),
        "message": match &traj.status {
            FlowStatus::BlowUp { message } => Some(message.as_str()),
            _ => None,
        },
        "t_final": traj.last.t,
        "steps": traj.steps,
        "dt": traj.dt,
        "hat_theta": flow.hat_theta,
        "residual": traj.last.residual(),
        "z_initial": [z0.0, z0.1],
        "z_drift_rel_max": drift,
        "hess_sup_max": hess_max,
        "maximum_principle": mp,
        "oscillation": match &osc {
            Ok(o) => json!({
                "rate": o.rate,
                "r_squared": o.r_squared,
                "monotone": o.monotone,
                "max_ratio": o.max_ratio,
                "fit_window": o.fit_window,
                "fit_points": o.fit_points,
            }),
            Err(e) => json!({ "error": e.to_string() }),
        },
    });
    write_json(&report, dir.join("report.json"))?;
    eprintln!(
        "{} at t = {} after {} steps (residual {:e})",
        status_word(&traj.status),
        traj.last.t,
        traj.steps,
        traj.last.residual()
    );
    Ok(match traj.status {
        FlowStatus::Converged => 0,
        FlowStatus::Timeout => 2,
        FlowStatus::BlowUp { .. } => 3,
    })
}

fn status_word(s: &FlowStatus) -> &'static str {
    match s {
        FlowStatus::Converged => "converged",
        FlowStatus::Timeout => "timeout",
        FlowStatus::BlowUp { .. } => "blow_up",
    }
}

/// Loads `u_*.snap` samples (excluding `u_final.snap`) in name order.
fn load_trajectory(dir: &Path, cfg: &RunConfig) -> Result<Trajectory> {
    let flow = cfg.flow_config(None)?;
    let problem = flow.problem();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("u_") && n.ends_with(".snap") && n != "u_final.snap")
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no u_*.snap samples in {}", dir.display());
    }
    let mut samples = Vec::with_capacity(paths.len());
    for p in &paths {
        let (meta, u) = read_scalar_snapshot(p, &flow.geometry)?;
        let state = FlowState::new(&problem, meta.t, u)?;
        samples.push(Sample {
            t: state.t,
            u: state.u,
            udot: state.udot,
            theta: state.theta,
        });
    }
    let u0_at_p = samples[0].u.values[flow.qcfg.base_point];
    Ok(Trajectory::from_samples(
        problem, flow.qcfg, u0_at_p, samples,
    )?)
}

fn verify(a: VerifyArgs) -> Result<u8> {
    let cfg = load(&a.config)?;
    let (traj, t) = match &a.trajectory {
        Some(dir) => {
            let traj = load_trajectory(dir, &cfg)?;
            let times: Vec<f64> = traj.samples().map(|s| s.t).collect();
            let k = (1..times.len().saturating_sub(1))
                .min_by(|&i, &j| {
                    (times[i] - a.t_center)
                        .abs()
                        .total_cmp(&(times[j] - a.t_center).abs())
                })
                .context("need at least three stored samples")?;
            (traj, times[k])
        }
        None => {
            let flow = cfg.flow_config(None)?;
            (
                record_identity_window(&flow, a.t_center, a.dt_s)?,
                a.t_center,
            )
        }
    };
    let mut reports: Vec<IdentityReport> = Vec::new();
    let mut pass = true;
    for which in EvolutionIdentity::ALL {
        let r = verify_evolution_identity(which, &traj, t)?;
        pass &= r.residual_rel <= which.tolerance();
        reports.push(r);
    }
    if let Some(path) = &a.reference {
        let flow = cfg.flow_config(None)?;
        let (_, u_hat) = read_scalar_snapshot(path, &flow.geometry)?;
        let (first, second) = dhym_point_identities(&u_hat, &flow.base, &flow.geometry)?;
        pass &= first.lhs_norm <= 1e-8 && second.residual_rel <= 1e-6;
        reports.push(first);
        reports.push(second);
    }
    let mut text = String::new();
    for r in &reports {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    match &a.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(if pass { 0 } else { 1 })
}

fn sweep(a: SweepArgs) -> Result<()> {
    let cfg = load(&a.config)?;
    let sweep = cfg.sweep_config()?;
    let dir = a.out_dir.unwrap_or_else(|| cfg.outputs.dir.clone());
    create_dir(&dir)?;
    write_json(&cfg, dir.join("effective-config.json"))?;
    let report = stability_sweep(&sweep)?;
    for c in &report.cells {
        if !c.records.is_empty() {
            let name = format!("cell_delta{}_seed{}.csv", c.delta, c.seed);
            write_diagnostics(&c.records, dir.join(name))?;
        }
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_json(&report, &a.out)?;
    eprintln!(
        "{} cells; largest δ with all runs converged: {:?}",
        report.cells.len(),
        report.largest_all_converged
    );
    Ok(())
}

fn reference(a: ReferenceArgs) -> Result<()> {
    let cfg = load(&a.config)?;
    let flow = cfg.flow_config(None)?;
    let r = generate_reference(&flow)?;
    write_snapshot(&r.u_hat, "u_hat", r.t, &flow.geometry, &a.out)?;
    let out = json!({
        "t": r.t,
        "residual": r.residual,
        "hat_theta": r.hat_theta,
        "identities": [r.first_identity, r.second_identity],
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn hat_theta(a: HatThetaArgs) -> Result<()> {
    let cfg = load(&a.config)?;
    let geom = cfg.geometry()?;
    let base = cfg.base(&geom)?;
    let inv = cohomology_invariants(&base.realized(&geom), &geom)?;
    let two_pi = std::f64::consts::TAU;
    let out = json!({
        "z_re": inv.z.re,
        "z_im": inv.z.im,
        "z_abs": inv.z.norm(),
        "hat_theta": inv.hat_theta,
        "hat_theta_mod_2pi": inv.hat_theta.rem_euclid(two_pi),
        "vol": inv.vol,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn parse_matrix(text: &str, n: Option<usize>, what: &str) -> Result<CMat> {
    let spec: MatrixSpec =
        serde_json::from_str(text).with_context(|| format!("{what}: not a JSON matrix"))?;
    let n = n.unwrap_or(spec.len());
    Ok(matrix_from_spec(&spec, n, what)?)
}

fn phase_table(a: PhaseTableArgs) -> Result<()> {
    let metric = match &a.metric {
        Some(m) => Some(parse_matrix(m, None, "metric")?),
        None => None,
    };
    let file =
        fs::File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let mut out = String::new();
    let mut n_cols = None;
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let what = format!("line {}", k + 1);
        let f = parse_matrix(&line, metric.as_ref().map(|g| g.n()), &what)?;
        let n = f.n();
        match n_cols {
            None => {
                let lambdas: Vec<String> = (1..=n).map(|j| format!("lambda_{j}")).collect();
                out.push_str(&format!(
                    "{},theta,zeta_re,zeta_im,det_eta\n",
                    lambdas.join(",")
                ));
                n_cols = Some(n);
            }
            Some(m) if m != n => bail!("{what}: expected a {m}x{m} matrix"),
            _ => {}
        }
        let g = metric.unwrap_or_else(|| CMat::identity(n));
        let d = pointwise_phase(&f, &g).with_context(|| what.clone())?;
        let mut row: Vec<String> = d.lambda.iter().map(|v| v.to_string()).collect();
        row.push(d.theta.to_string());
        row.push(d.zeta.re.to_string());
        row.push(d.zeta.im.to_string());
        row.push(d.eta.det().re.to_string());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    match &a.out {
        Some(p) => fs::write(p, out).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(out.as_bytes())?,
    }
    Ok(())
}
