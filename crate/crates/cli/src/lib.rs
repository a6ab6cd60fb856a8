//! Experiment runner around `stlb-core`: spec-driven data generation, the
//! (process × seed × fraction) training grid with resumable progress and
//! deterministic CSV/checkpoint output, saliency image export, and a
//! plain-text report.

pub mod grid;
pub mod report;
pub mod saliency_cmd;
pub mod spec;

pub use grid::{cmd_generate, cmd_run, RunOptions, RunSummary};
pub use report::cmd_report;
pub use saliency_cmd::{cmd_saliency, SaliencyArgs};
pub use spec::ExperimentSpec;
