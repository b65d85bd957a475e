//! Batch experiment layer over the `fransim` library: run configuration,
//! experiment runners (phase scans, power sweeps, SHG tuning scans,
//! simulation and analysis of time-tag files) and their plot-ready text
//! outputs.

pub mod config;
pub mod experiments;
pub mod output;
