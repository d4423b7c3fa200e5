//! Experiment plumbing: configs, run manifests, the staged pipeline, matrix
//! sweeps, baseline tables and plot files.

pub mod baselines;
pub mod config;
pub mod manifest;
pub mod matrix;
pub mod pipeline;
pub mod plot;

pub use baselines::{run_baselines, BaselinesOutput};
pub use config::{Axis, ExperimentConfig, MatrixConfig, SplitConfig};
pub use manifest::RunManifest;
pub use matrix::{run_matrix, MatrixOutput};
pub use pipeline::{run_pipeline, PipelineOptions, PipelineOutput, Stage};
