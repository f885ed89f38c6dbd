//! Experiment orchestration: scenario presets and config files, multi-flow
//! runs, the evaluation experiments and their CSV and manifest output.

pub mod config;
pub mod experiments;
mod gradcheck;
pub mod output;
mod run;

pub use config::{presets, HarnessConfig, Scenario, TargetSpec};
pub use gradcheck::{gradcheck_csv, run_gradchecks, GradcheckRow};
pub use output::{Manifest, OutputSet};
pub use run::{run_flows, series_csv, FlowResult, FlowSender, FlowSpec, GoalSource, RunOptions, RunResult, Scheme, SeriesRow};
