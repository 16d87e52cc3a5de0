use std::process::ExitCode;

use clap::Parser;
use log::LevelFilter;

mod cli;
mod commands;
mod config;
mod logging;

fn main() -> ExitCode {
    let args = cli::Cli::parse();
    let level = match (args.quiet, args.verbose) {
        (true, _) => LevelFilter::Warn,
        (false, 0) => LevelFilter::Info,
        (false, 1) => LevelFilter::Debug,
        _ => LevelFilter::Trace,
    };
    let cmd = &args.command;
    // checked before the logger creates --out
    let result = cmd
        .inputs()
        .into_iter()
        .try_for_each(|(input, nested)| commands::check_output(input, cmd.out(), nested))
        .and_then(|()| logging::init(cmd.out(), level))
        .and_then(|()| commands::run(cmd));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if log::log_enabled!(log::Level::Error) {
                log::error!("{e:#}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::FAILURE
        }
    }
}
