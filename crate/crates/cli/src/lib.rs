//! Command-line front end: argument validation, file formats and task
//! orchestration for the `svigl` binary.

pub mod args;
pub mod error;
pub mod io;
pub mod run;

pub use args::{parse_args, ParseFailure, RunConfig};
pub use error::{CliError, CliResult, FormatError};
pub use run::execute;

/// Parses `argv`, runs the task and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let config = match parse_args(argv) {
        Ok(c) => c,
        Err(ParseFailure::Clap(e)) => {
            let _ = e.print();
            return e.exit_code();
        }
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    match execute(&config) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
