//! Command-line driver: configuration files, checkpoints, and subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;

use std::ffi::OsString;

use clap::Parser;

pub use commands::{execute, Cli, Command};

/// Parses `args` (including the program name) and runs the command.
/// Usage errors exit 2, runtime failures 1.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
