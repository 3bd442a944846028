//! Experiment harness around `hspde-core`: configuration, presets, the
//! `run` pipeline and plot-data export.

pub mod config;
pub mod export;
pub mod pipeline;
pub mod presets;
pub mod tables;
