//! File formats and subcommands of the `shockgat` tool.

pub mod commands;
pub mod formats;
