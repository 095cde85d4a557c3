//! Command-line front end: `run`, `sweep`, `report`, `validate-data` and
//! `oracle`.

mod args;
mod commands;
mod resolve;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

pub use args::{Cli, Command, ConfigArgs, Preset};
pub use resolve::{apply_set, config_hash, preset, resolve};

/// Exit code for success.
pub const EXIT_OK: i32 = 0;
/// Exit code for usage and configuration errors (and failed oracle checks).
pub const EXIT_USAGE: i32 = 1;
/// Exit code for data, I/O and format errors.
pub const EXIT_DATA: i32 = 2;

/// Invalid command-line input that clap itself cannot detect.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Maps an error to its exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<caafp_core::Error>() {
            return match e {
                caafp_core::Error::Config(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

/// Parses `args` (including the program name) and runs the command,
/// writing normal output to `out` and diagnostics to `err`.
pub fn run_cli_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => commands::run(a, out).map(|_| true),
        Command::Sweep(a) => commands::sweep(a, out).map(|_| true),
        Command::Report(a) => commands::report_cmd(a, out).map(|_| true),
        Command::ValidateData(a) => commands::validate_data(a, out).map(|_| true),
        Command::Oracle(a) => commands::oracle(a, out),
    };
    match outcome {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_USAGE,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            exit_code(&e)
        }
    }
}

/// Runs with the process's stdout and stderr.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_cli_with(
        args,
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    )
}
