//! Experiment runner for the rostlab toolkit.
//!
//! Experiments are named pipelines over the core library: sampling,
//! evolution, and the statistical verification suite. Each run is fully
//! determined by an [`config::ExperimentConfig`] and its seed, and produces
//! a JSON [`report::Report`] whose body is byte-stable across reruns.

pub mod config;
pub mod experiments;
pub mod report;

pub use config::ExperimentConfig;
pub use experiments::run_experiment;
pub use report::{emit_plotdata, Report};
