//! Command-line harness: experiment specification, deterministic Monte
//! Carlo execution, and flat CSV/key=value file formats.

pub mod files;
pub mod rows;
pub mod run;

pub use files::{params_from_kv, params_to_kv, parse_kv, FileError};
pub use rows::{fmt_sig, to_csv, write_csv, Row, CSV_HEADER};
pub use run::{
    loss_curve, simulate_dqlc, simulate_uncoded, sweep, ExperimentSpec, RunError, Scheme,
    SimResult,
};
