//! `kcl` command-line driver.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use kcl_core::KclError;

use args::Cli;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KCL_LOG", "warn"))
        .format_timestamp(None)
        .init();

    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kcl: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &KclError) -> u8 {
    if e.is_io() {
        2
    } else {
        1
    }
}
