//! Problem files, experiment commands and their CSV/JSON outputs.

pub mod commands;
pub mod problem;
pub mod record;

pub use commands::{
    cmd_bench, cmd_certificate, cmd_grid, cmd_solve, cmd_validate, BenchConfig, BenchRow, CertificateRow, GridOutput,
    GridSummary, RunOptions, Validation,
};
pub use problem::ProblemFile;
pub use record::{MethodTag, ResultRecord, Row};
