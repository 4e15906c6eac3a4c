//! Experiment runner behind the `eot` binary: reads a config, dispatches to
//! one experiment, and writes CSV tables, plot series, a JSON summary and a
//! manifest into the output directory.

pub mod config;
pub mod output;
pub mod run;

use serde::{Deserialize, Serialize};

pub use config::{Config, ConfigError};
pub use output::{emit_plot_data, OutputError, PlotSource};
pub use run::{run, CliError, RunOptions, RunOutcome, RunStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Sinkhorn at one epsilon.
    Solve,
    /// Transportation simplex.
    Exact,
    /// Epsilon schedule against the exact limit.
    Converge,
    /// Large-deviation rate of an event.
    Ldp,
    /// Off-diagonal indicator on disjoint grids.
    Example52,
    /// Multimarginal Sinkhorn, optionally against the exact LP.
    Mm,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Exact => "exact",
            Command::Converge => "converge",
            Command::Ldp => "ldp",
            Command::Example52 => "example52",
            Command::Mm => "mm",
        }
    }
}

/// Worker threads from `EOT_THREADS`; 1 when unset, empty or invalid.
pub fn threads_from_env() -> usize {
    std::env::var("EOT_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}
