//! Experiment harness: configs, training, traversals, sweeps and reports.

pub mod config;
pub mod report;
pub mod sweep;
pub mod train;
pub mod traverse;

pub use config::{DatasetSource, Mode, RunConfig, SweepConfig};
pub use report::{build_report, load_records, write_report, Report};
pub use sweep::{run_sweep, workers_from_env, SweepSummary};
pub use train::{evaluate_model, train, EvalPoint, EvalSettings, RunRecord, RunStatus, TrainOutput};
pub use traverse::{traversal_points, traverse, PeriodReport, Traversal};
