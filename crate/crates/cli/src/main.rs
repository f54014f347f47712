//! `toga` command-line driver.
//!
//! Exit codes: 0 success, 1 I/O or format problems, 2 usage errors, 3 numeric
//! divergence.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use toga::Error;

use crate::args::{Cli, Command};

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::UnknownArm(_) | Error::Sampling(_) => 2,
        Error::Divergence { .. } | Error::NonFinite(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenSynthetic(a) => commands::gen_synthetic(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Export(a) => commands::export(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if let Error::UnknownArm(_) = err {
                eprintln!("valid arms: {}", toga::trainer::Arm::catalog());
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
