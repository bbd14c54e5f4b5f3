//! Library half of the `sbc` binary: problem-file parsing and the
//! subcommand drivers, separated from argument handling so integration
//! tests can drive them directly.

pub mod commands;
pub mod problem_file;
