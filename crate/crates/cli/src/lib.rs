//! Experiment runner for the `bfc-sim` binary: configuration loading,
//! experiment execution, SVG rendering and manifest writing.

pub mod config;
pub mod experiments;
pub mod manifest;
pub mod svg;
