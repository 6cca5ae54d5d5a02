//! Library side of the `gnes` command-line tool: configuration, commands and
//! output writers.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
