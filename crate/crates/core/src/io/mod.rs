//! Configuration parsing and result files.

mod config;
mod output;

pub use config::{
    matrix_from_spec, modes_field, parse_config, parse_config_str, BaseCurvatureSpec, Entry,
    InitialSpec, MatrixSpec, ModeSpec, OutputSpec, PotentialSpec, RunConfig, SnapshotPolicy,
    SweepSpec, TimeSpec,
};
pub use output::{
    read_diagnostics, read_scalar_snapshot, read_snapshot, write_complex_snapshot,
    write_diagnostics, write_json, write_jsonl, write_snapshot, Dtype, SnapshotData, SnapshotMeta,
};
