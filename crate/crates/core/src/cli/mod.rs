//! Command-line front end: experiment configuration, output writers and the
//! subcommands.

pub mod commands;
pub mod config;
pub mod output;
