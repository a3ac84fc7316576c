//! Experiment orchestration behind the command-line driver: configuration,
//! pipeline stages, sweeps and report emission.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod report;
pub mod sweep;
pub mod table1;

pub use commands::{cmd_eval, cmd_sample, cmd_sweep, cmd_table1, exit_code, Inputs};
pub use config::{parse_frame_ranges, ExperimentConfig, MaskChoice, Mode, SampleSettings};
pub use pipeline::*;
pub use report::{blob_hash, cmd_report, fig2_csv, GAP};
pub use sweep::{grid, run_grid, sweep_seed, GridPoint, SweepResult, SweepRow, METRIC_COLUMNS};
pub use table1::{build_table1, Table1, Table1Block, Table1Row, COLUMNS, LOWER_BOUND_ROW, REAL_ROW};
