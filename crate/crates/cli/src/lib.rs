//! Library half of the `vidshield` binary: run configuration, subcommands and SVG charts.

pub mod commands;
pub mod config;
pub mod plot;
