//! Command-line plumbing shared by the `medfx` binary and its tests:
//! configuration, CSV input, report output and the three commands.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{estimate_table, load_table, run_estimate, run_simulate, run_validate};
pub use config::{parse_config_text, Command, RunConfig};
pub use report::Report;

use crate::error::Error;

/// Exit status for a failed run: 2 for configuration and input problems,
/// 1 for anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Csv { .. }
        | Error::Io(_)
        | Error::MissingValue { .. }
        | Error::TreatmentNotBinary { .. }
        | Error::OutcomeOutOfRange { .. }
        | Error::MediatorOutOfSupport { .. }
        | Error::InvalidSupport(_)
        | Error::InvalidBounds { .. }
        | Error::Dimension(_)
        | Error::NonFinite(_)
        | Error::InvalidSpec(_)
        | Error::MediatorCount { .. }
        | Error::CellCapExceeded { .. } => 2,
        _ => 1,
    }
}
