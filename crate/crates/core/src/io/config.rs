//! JSON run configuration.
//!
//! Matrices are nested arrays of entries; each entry is either a real number
//! or an `[re, im]` pair. Unknown keys are rejected everywhere, and errors
//! carry the JSON path of the offending value.

use std::fmt;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeTuple, Serializer};
use serde::{Deserialize, Serialize};

use crate::diagnostics::QConfig;
use crate::error::{DhymError, Result};
use crate::flow::{BaseCurvature, FlowConfig};
use crate::geometry::{ScalarField, TorusGeometry, HERMITIAN_TOL};
use crate::harness::{normalized_perturbation, FlowTemplate, SweepConfig};
use crate::linalg::CMat;

/// A complex matrix entry, written as `[re, im]`; a bare number is accepted
/// on input as a real entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Entry(pub Complex64);

impl Serialize for Entry {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut t = s.serialize_tuple(2)?;
        t.serialize_element(&self.0.re)?;
        t.serialize_element(&self.0.im)?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for Entry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Entry;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a real number or an [re, im] pair")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Entry, E> {
                Ok(Entry(Complex64::new(v, 0.0)))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Entry, E> {
                Ok(Entry(Complex64::new(v as f64, 0.0)))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Entry, E> {
                Ok(Entry(Complex64::new(v as f64, 0.0)))
            }
            fn visit_seq<A: SeqAccess<'de>>(
                self,
                mut seq: A,
            ) -> std::result::Result<Entry, A::Error> {
                let re: f64 = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let im: f64 = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(1, &self))?;
                if seq.next_element::<f64>()?.is_some() {
                    return Err(de::Error::invalid_length(3, &self));
                }
                Ok(Entry(Complex64::new(re, im)))
            }
        }
        d.deserialize_any(V)
    }
}

/// Square complex matrix as nested rows.
pub type MatrixSpec = Vec<Vec<Entry>>;

/// One Fourier mode `amplitude · cos(m·x + phase)` with `x = (x₁..x_n, y₁..y_n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub m: Vec<i64>,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    #[serde(default)]
    pub modes: Vec<ModeSpec>,
}

/// `F̂ = constant + ∂∂̄ψ`; the constant defaults to the metric (`F̂ = ω`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseCurvatureSpec {
    #[serde(default)]
    pub constant: Option<MatrixSpec>,
    #[serde(default)]
    pub potential: PotentialSpec,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialSpec {
    #[default]
    Zero,
    /// Band-limited noise rescaled to `‖D²u₀‖∞ = target_hess_sup`.
    Noise {
        k_band: usize,
        seed: u64,
        target_hess_sup: f64,
    },
    Modes {
        modes: Vec<ModeSpec>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSpec {
    pub t_max: f64,
    pub dt_safety: f64,
    pub residual_tol: f64,
    pub sample_every: usize,
}

impl Default for TimeSpec {
    fn default() -> Self {
        TimeSpec {
            t_max: 100.0,
            dt_safety: 0.5,
            residual_tol: 1e-10,
            sample_every: 100,
        }
    }
}

/// Which field snapshots a run writes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnapshotPolicy {
    #[default]
    None,
    Final,
    AllSamples,
}

impl std::str::FromStr for SnapshotPolicy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(SnapshotPolicy::None),
            "final" => Ok(SnapshotPolicy::Final),
            "all-samples" => Ok(SnapshotPolicy::AllSamples),
            _ => Err(format!(
                "unknown snapshot policy `{s}` (none|final|all-samples)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub snapshots: SnapshotPolicy,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: PathBuf::from("out"),
            snapshots: SnapshotPolicy::None,
        }
    }
}

/// Perturbation sweep settings, used by the `sweep` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub delta_list: Vec<f64>,
    #[serde(default = "one")]
    pub seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "two")]
    pub k_band: usize,
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

/// Top-level run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dimension: usize,
    pub resolution: usize,
    /// Defaults to the identity.
    #[serde(default)]
    pub metric: Option<MatrixSpec>,
    #[serde(default)]
    pub base_curvature: BaseCurvatureSpec,
    /// Overrides the winding value of θ̂.
    #[serde(default)]
    pub hat_theta: Option<f64>,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub time: TimeSpec,
    #[serde(default)]
    pub diagnostics: QConfig,
    #[serde(default)]
    pub outputs: OutputSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

/// Reads and validates a configuration file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DhymError::io(path, e))?;
    parse_config_str(&text)
}

/// Parses and validates a configuration document.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        DhymError::Config {
            path,
            message: e.into_inner().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> DhymError {
    DhymError::Config {
        path: path.into(),
        message: message.into(),
    }
}

/// Converts a matrix spec to `CMat`, checking shape and Hermitian symmetry.
pub fn matrix_from_spec(spec: &MatrixSpec, n: usize, path: &str) -> Result<CMat> {
    if spec.len() != n || spec.iter().any(|r| r.len() != n) {
        return Err(config_err(path, format!("expected a {n}x{n} matrix")));
    }
    let rows: Vec<Vec<Complex64>> = spec
        .iter()
        .map(|r| r.iter().map(|e| e.0).collect())
        .collect();
    let m = CMat::from_rows(&rows)?;
    let scale = m.max_abs().max(1.0);
    for i in 0..n {
        for j in 0..=i {
            let (a, b) = (m[(i, j)], m[(j, i)].conj());
            if !(a.re.is_finite() && a.im.is_finite()) {
                return Err(config_err(
                    format!("{path}[{i}][{j}]"),
                    "entry is not finite",
                ));
            }
            if (a - b).norm() > HERMITIAN_TOL * scale {
                return Err(config_err(
                    format!("{path}[{i}][{j}]"),
                    format!(
                        "matrix is not Hermitian: entry ({i},{j}) = {a} but conj of ({j},{i}) = {b}"
                    ),
                ));
            }
        }
    }
    Ok(m.hermitize())
}

/// Field `Σ amplitude · cos(m·x + phase)`.
pub fn modes_field(geom: &TorusGeometry, modes: &[ModeSpec]) -> ScalarField {
    geom.field_from_fn(|x| {
        modes
            .iter()
            .map(|md| {
                let arg: f64 = md.m.iter().zip(x).map(|(&k, &xi)| k as f64 * xi).sum();
                md.amplitude * (arg + md.phase).cos()
            })
            .sum()
    })
}

impl RunConfig {
    /// Structural checks beyond what the schema enforces.
    pub fn validate(&self) -> Result<()> {
        let n = self.dimension;
        if !(1..=3).contains(&n) {
            return Err(config_err(
                "dimension",
                DhymError::InvalidDimension(n).to_string(),
            ));
        }
        let nn = self.resolution;
        if nn < 8 || !nn.is_power_of_two() {
            return Err(config_err(
                "resolution",
                DhymError::InvalidResolution(nn).to_string(),
            ));
        }
        if let Some(m) = &self.metric {
            matrix_from_spec(m, n, "metric")?;
        }
        if let Some(m) = &self.base_curvature.constant {
            matrix_from_spec(m, n, "base_curvature.constant")?;
        }
        let check_modes = |modes: &[ModeSpec], path: &str| -> Result<()> {
            for (k, md) in modes.iter().enumerate() {
                if md.m.len() != 2 * n {
                    return Err(config_err(
                        format!("{path}[{k}].m"),
                        format!("expected {} integers", 2 * n),
                    ));
                }
                if md.m.iter().any(|&c| 2 * c.unsigned_abs() as usize >= nn) {
                    return Err(config_err(
                        format!("{path}[{k}].m"),
                        format!("wave numbers must satisfy |m| < N/2 = {}", nn / 2),
                    ));
                }
                if !(md.amplitude.is_finite() && md.phase.is_finite()) {
                    return Err(config_err(
                        format!("{path}[{k}]"),
                        "non-finite amplitude or phase",
                    ));
                }
            }
            Ok(())
        };
        check_modes(
            &self.base_curvature.potential.modes,
            "base_curvature.potential.modes",
        )?;
        match &self.initial {
            InitialSpec::Zero => {}
            InitialSpec::Noise {
                k_band,
                target_hess_sup,
                ..
            } => {
                if 3 * k_band > nn {
                    return Err(config_err(
                        "initial.k_band",
                        "band exceeds dealiasing limit",
                    ));
                }
                if !(target_hess_sup.is_finite() && *target_hess_sup >= 0.0) {
                    return Err(config_err(
                        "initial.target_hess_sup",
                        "must be non-negative",
                    ));
                }
            }
            InitialSpec::Modes { modes } => check_modes(modes, "initial.modes")?,
        }
        let t = &self.time;
        if !(t.dt_safety > 0.0 && t.dt_safety <= 1.0) {
            return Err(config_err("time.dt_safety", "must lie in (0, 1]"));
        }
        if !(t.t_max > 0.0 && t.t_max.is_finite()) {
            return Err(config_err("time.t_max", "must be positive"));
        }
        if !(t.residual_tol > 0.0) {
            return Err(config_err("time.residual_tol", "must be positive"));
        }
        if t.sample_every == 0 {
            return Err(config_err("time.sample_every", "must be at least 1"));
        }
        if let Some(h) = self.hat_theta {
            if !h.is_finite() {
                return Err(config_err("hat_theta", "must be finite"));
            }
        }
        self.diagnostics
            .validate()
            .map_err(|e| config_err("diagnostics", e.to_string()))?;
        if self.diagnostics.base_point >= nn.pow(2 * n as u32) {
            return Err(config_err("diagnostics.base_point", "outside the grid"));
        }
        if let Some(s) = &self.sweep {
            if 3 * s.k_band > nn {
                return Err(config_err("sweep.k_band", "band exceeds dealiasing limit"));
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<TorusGeometry> {
        let n = self.dimension;
        let g = match &self.metric {
            Some(m) => matrix_from_spec(m, n, "metric")?,
            None => CMat::identity(n),
        };
        TorusGeometry::new(n, self.resolution, g).map_err(|e| config_err("metric", e.to_string()))
    }

    pub fn base(&self, geom: &TorusGeometry) -> Result<BaseCurvature> {
        let f0 = match &self.base_curvature.constant {
            Some(m) => matrix_from_spec(m, self.dimension, "base_curvature.constant")?,
            None => *geom.metric(),
        };
        let psi = modes_field(geom, &self.base_curvature.potential.modes);
        BaseCurvature::new(geom, f0, psi)
    }

    /// Initial potential; `seed_override` replaces the noise seed.
    pub fn initial_field(
        &self,
        geom: &TorusGeometry,
        seed_override: Option<u64>,
    ) -> Result<ScalarField> {
        match &self.initial {
            InitialSpec::Zero => Ok(geom.zeros()),
            InitialSpec::Noise {
                k_band,
                seed,
                target_hess_sup,
            } => normalized_perturbation(
                geom,
                *k_band,
                *target_hess_sup,
                seed_override.unwrap_or(*seed),
            ),
            InitialSpec::Modes { modes } => Ok(modes_field(geom, modes)),
        }
    }

    pub fn template(&self) -> FlowTemplate {
        FlowTemplate {
            dt_safety: self.time.dt_safety,
            t_max: self.time.t_max,
            residual_tol: self.time.residual_tol,
            sample_every: self.time.sample_every,
            hat_theta: self.hat_theta,
            qcfg: self.diagnostics,
        }
    }

    pub fn flow_config(&self, seed_override: Option<u64>) -> Result<FlowConfig> {
        let geom = self.geometry()?;
        let base = self.base(&geom)?;
        let u0 = self.initial_field(&geom, seed_override)?;
        self.template().instantiate(&geom, &base, u0)
    }

    pub fn sweep_config(&self) -> Result<SweepConfig> {
        let s = self
            .sweep
            .as_ref()
            .ok_or_else(|| config_err("sweep", "missing sweep section"))?;
        let geometry = self.geometry()?;
        let base = self.base(&geometry)?;
        let cfg = SweepConfig {
            geometry,
            base,
            delta_list: s.delta_list.clone(),
            seeds: s.seeds,
            base_seed: s.base_seed,
            k_band: s.k_band,
            flow: self.template(),
        };
        cfg.validate()
            .map_err(|e| config_err("sweep", e.to_string()))?;
        Ok(cfg)
    }

    /// Pretty JSON with every default spelled out.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"dimension": 1, "resolution": 32}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.time.dt_safety, 0.5);
        assert_eq!(cfg.time.residual_tol, 1e-10);
        assert_eq!(cfg.initial, InitialSpec::Zero);
        let flow = cfg.flow_config(None).unwrap();
        assert!((flow.hat_theta - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn non_hermitian_metric_is_named() {
        let text = r#"{"dimension": 2, "resolution": 16,
            "metric": [[1, [0, 0.5]], [[0, 0.4], 1]]}"#;
        let err = parse_config_str(text).unwrap_err().to_string();
        assert!(err.contains("metric"), "{err}");
        assert!(err.contains("Hermitian"), "{err}");
    }

    #[test]
    fn unknown_key_is_named() {
        let text = r#"{"dimension": 1, "resolution": 32, "time": {"integrater": "rk4"}}"#;
        let err = parse_config_str(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("integrater"), "{msg}");
        assert!(msg.contains("time"), "{msg}");
    }

    #[test]
    fn invalid_values_report_their_path() {
        for (text, key) in [
            (r#"{"dimension": 4, "resolution": 32}"#, "dimension"),
            (r#"{"dimension": 1, "resolution": 30}"#, "resolution"),
            (
                r#"{"dimension": 1, "resolution": 32, "time": {"dt_safety": 2}}"#,
                "time.dt_safety",
            ),
            (
                r#"{"dimension": 1, "resolution": 32, "initial": {"type": "noise", "k_band": 20, "seed": 1, "target_hess_sup": 0.1}}"#,
                "initial.k_band",
            ),
            (
                r#"{"dimension": 1, "resolution": 32, "base_curvature": {"potential": {"modes": [{"m": [1], "amplitude": 1}]}}}"#,
                "base_curvature.potential.modes[0].m",
            ),
            (r#"{"dimension": 1, "resolution": "x"}"#, "resolution"),
        ] {
            let msg = parse_config_str(text).unwrap_err().to_string();
            assert!(msg.contains(key), "{key}: {msg}");
        }
    }

    #[test]
    fn round_trip_through_json() {
        let text = r#"{"dimension": 2, "resolution": 16,
            "metric": [[2, [0, 0.5]], [[0, -0.5], 1]],
            "base_curvature": {"constant": [[1, 0], [0, 3]],
                "potential": {"modes": [{"m": [1, 0, 0, 2], "amplitude": 0.1, "phase": 0.3}]}},
            "hat_theta": 1.25,
            "initial": {"type": "noise", "k_band": 2, "seed": 5, "target_hess_sup": 0.01},
            "time": {"t_max": 3.5, "sample_every": 7},
            "outputs": {"dir": "runs/a", "snapshots": "all-samples"},
            "sweep": {"delta_list": [0.01, 0.1], "seeds": 3}}"#;
        let cfg = parse_config_str(text).unwrap();
        let again = parse_config_str(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.to_json(), again.to_json());
    }

    #[test]
    fn modes_field_matches_formula() {
        let geom = TorusGeometry::standard(1, 8).unwrap();
        let f = modes_field(
            &geom,
            &[ModeSpec {
                m: vec![1, -2],
                amplitude: 0.5,
                phase: 0.25,
            }],
        );
        for p in 0..geom.num_points() {
            let x = geom.coords(p);
            let want = 0.5 * (x[0] - 2.0 * x[1] + 0.25).cos();
            assert!((f.values[p] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn seed_override_changes_noise() {
        let text = r#"{"dimension": 1, "resolution": 16,
            "initial": {"type": "noise", "k_band": 2, "seed": 5, "target_hess_sup": 0.05}}"#;
        let cfg = parse_config_str(text).unwrap();
        let geom = cfg.geometry().unwrap();
        let a = cfg.initial_field(&geom, None).unwrap();
        let b = cfg.initial_field(&geom, Some(6)).unwrap();
        assert_ne!(a.values, b.values);
        assert_eq!(a.values, cfg.initial_field(&geom, Some(5)).unwrap().values);
    }
}
