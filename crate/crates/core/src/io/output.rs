//! Diagnostics CSV, field snapshots and JSON reports.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{DhymError, Result};
use crate::geometry::{ComplexField, ScalarField, TorusGeometry};

/// Writes one CSV row per record under the fixed header, with 17
/// significant digits per value.
pub fn write_diagnostics(records: &[DiagnosticsRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if records.is_empty() {
        return Err(DhymError::NothingToWrite);
    }
    let mut out = String::with_capacity(records.len() * 14 * 24);
    out.push_str(DiagnosticsRecord::CSV_HEADER);
    out.push('\n');
    for r in records {
        let row: Vec<String> = r.values().iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| DhymError::io(path, e))
}

/// Reads a diagnostics CSV written by [`write_diagnostics`].
pub fn read_diagnostics(path: impl AsRef<Path>) -> Result<Vec<[f64; 14]>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DhymError::io(path, e))?;
    let bad = |m: String| DhymError::Snapshot {
        path: path.to_path_buf(),
        message: m,
    };
    let mut lines = text.lines();
    if lines.next() != Some(DiagnosticsRecord::CSV_HEADER) {
        return Err(bad("unexpected CSV header".into()));
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("row {}: {e}", k + 1)))?;
            vals.try_into()
                .map_err(|_| bad(format!("row {}: expected 14 columns", k + 1)))
        })
        .collect()
}

/// Element type of a snapshot payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f64le")]
    F64,
    #[serde(rename = "c128le")]
    C128,
}

/// Header line of a snapshot file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotMeta {
    pub name: String,
    pub t: f64,
    pub n: usize,
    #[serde(rename = "N")]
    pub resolution: usize,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub order: String,
}

impl SnapshotMeta {
    pub fn new(name: impl Into<String>, t: f64, geom: &TorusGeometry, dtype: Dtype) -> Self {
        SnapshotMeta {
            name: name.into(),
            t,
            n: geom.n(),
            resolution: geom.resolution(),
            dtype,
            shape: vec![geom.resolution(); geom.real_dim()],
            order: "row-major".into(),
        }
    }

    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Payload of a snapshot file.
#[derive(Clone, Debug, PartialEq)]
pub enum SnapshotData {
    Real(ScalarField),
    Complex(ComplexField),
}

fn write_with_header(meta: &SnapshotMeta, bytes: &[u8], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| DhymError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = serde_json::to_string(meta).expect("snapshot header serializes");
    w.write_all(header.as_bytes())
        .and_then(|_| w.write_all(b"\n"))
        .and_then(|_| w.write_all(bytes))
        .and_then(|_| w.flush())
        .map_err(|e| DhymError::io(path, e))
}

/// Writes a real field: JSON header line, then little-endian `f64`s.
pub fn write_snapshot(
    field: &ScalarField,
    name: &str,
    t: f64,
    geom: &TorusGeometry,
    path: impl AsRef<Path>,
) -> Result<()> {
    geom.check_len(field.len())?;
    let meta = SnapshotMeta::new(name, t, geom, Dtype::F64);
    let bytes: Vec<u8> = field.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_with_header(&meta, &bytes, path.as_ref())
}

/// Writes a complex field as interleaved little-endian `(re, im)` pairs.
pub fn write_complex_snapshot(
    field: &ComplexField,
    name: &str,
    t: f64,
    geom: &TorusGeometry,
    path: impl AsRef<Path>,
) -> Result<()> {
    geom.check_len(field.len())?;
    let meta = SnapshotMeta::new(name, t, geom, Dtype::C128);
    let bytes: Vec<u8> = field
        .values
        .iter()
        .flat_map(|z| z.re.to_le_bytes().into_iter().chain(z.im.to_le_bytes()))
        .collect();
    write_with_header(&meta, &bytes, path.as_ref())
}

/// Reads a snapshot written by [`write_snapshot`] or [`write_complex_snapshot`].
pub fn read_snapshot(path: impl AsRef<Path>) -> Result<(SnapshotMeta, SnapshotData)> {
    let path = path.as_ref();
    let bad = |m: String| DhymError::Snapshot {
        path: path.to_path_buf(),
        message: m,
    };
    let file = File::open(path).map_err(|e| DhymError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = String::new();
    r.read_line(&mut header)
        .map_err(|e| DhymError::io(path, e))?;
    let meta: SnapshotMeta =
        serde_json::from_str(header.trim_end()).map_err(|e| bad(format!("header: {e}")))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| DhymError::io(path, e))?;
    let width = match meta.dtype {
        Dtype::F64 => 8,
        Dtype::C128 => 16,
    };
    if bytes.len() != meta.len() * width {
        return Err(bad(format!(
            "payload has {} bytes, header implies {}",
            bytes.len(),
            meta.len() * width
        )));
    }
    let reals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let data = match meta.dtype {
        Dtype::F64 => SnapshotData::Real(ScalarField { values: reals }),
        Dtype::C128 => SnapshotData::Complex(ComplexField {
            values: reals
                .chunks_exact(2)
                .map(|p| Complex64::new(p[0], p[1]))
                .collect(),
        }),
    };
    Ok((meta, data))
}

/// Reads a real snapshot and checks it against `geom`.
pub fn read_scalar_snapshot(
    path: impl AsRef<Path>,
    geom: &TorusGeometry,
) -> Result<(SnapshotMeta, ScalarField)> {
    let path = path.as_ref();
    let (meta, data) = read_snapshot(path)?;
    let bad = |m: String| DhymError::Snapshot {
        path: path.to_path_buf(),
        message: m,
    };
    if meta.n != geom.n() || meta.resolution != geom.resolution() {
        return Err(bad(format!(
            "snapshot grid (n = {}, N = {}) differs from configured (n = {}, N = {})",
            meta.n,
            meta.resolution,
            geom.n(),
            geom.resolution()
        )));
    }
    match data {
        SnapshotData::Real(f) => Ok((meta, f)),
        SnapshotData::Complex(_) => Err(bad("expected a real field".into())),
    }
}

/// Writes any serializable value as pretty JSON.
pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| DhymError::InvalidArgument(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| DhymError::io(path, e))
}

/// Writes one compact JSON value per line.
pub fn write_jsonl<T: Serialize>(values: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for v in values {
        text.push_str(
            &serde_json::to_string(v).map_err(|e| DhymError::InvalidArgument(e.to_string()))?,
        );
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| DhymError::io(path, e))
}
