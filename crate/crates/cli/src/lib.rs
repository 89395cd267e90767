//! Front end for the cart-pole pseudorehearsal experiments: the TOML run
//! configuration, result files (CSV, JSON, Markdown tables, SVG plots) and
//! the `prlab` command line.

pub mod app;
pub mod config;
pub mod emit;
pub mod plot;

pub use config::{parse_config, parse_config_str, ConfigError, RunConfig};
pub use emit::{emit_results, sig6, EmitError, PlotSelection};
