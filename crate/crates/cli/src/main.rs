//! Command-line front end for the `powerdse` library: simulate single runs
//! and Monte-Carlo batches, calibrate the Euclidean detector threshold, and
//! render trace CSVs as SVG figures.
//!
//! Exit codes: 0 on success, 2 for configuration problems (bad flags,
//! malformed or missing config files, invalid overrides), 3 for numerical
//! failures inside a simulation, 1 for everything else (I/O).

mod args;
mod commands;
mod output;
mod plot;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use powerdse::Error;

#[derive(Debug, Parser)]
#[command(
    name = "powerdse",
    version,
    about = "Dynamic state estimation for a synchronous machine under measurement attacks",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one scenario run; writes trace.csv, metrics.json, and the
    /// effective config into the output directory.
    Run(args::RunArgs),
    /// Repeat a scenario across the Monte-Carlo seed schedule and write an
    /// aggregate summary with confidence intervals.
    Batch(args::BatchArgs),
    /// Derive the Euclidean alarm threshold from attack-free runs and write
    /// a detector config file.
    Calibrate(args::CalibrateArgs),
    /// Render a trace CSV produced by `run` as an SVG figure, one panel per
    /// channel.
    Plot(args::PlotArgs),
    /// List the built-in scenario presets.
    ListPresets,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => commands::run(a),
        Command::Batch(a) => commands::batch(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Plot(a) => commands::plot(a),
        Command::ListPresets => commands::list_presets(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Map library errors onto the documented process exit codes.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Numerical { .. } | Error::Singular { .. } => 3,
        Error::Io(_) => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_documented_mapping() {
        assert_eq!(exit_code(&Error::config("x")), 2);
        assert_eq!(exit_code(&Error::numerical("x")), 3);
        assert_eq!(exit_code(&Error::singular("x")), 3);
        let io = Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, "x"));
        assert_eq!(exit_code(&io), 1);
    }

    #[test]
    fn the_grammar_parses_every_subcommand() {
        for argv in [
            vec!["powerdse", "run", "--preset", "scenario1"],
            vec!["powerdse", "batch", "--preset", "scenario1", "--runs", "3"],
            vec!["powerdse", "calibrate", "--preset", "scenario1", "--out", "d.toml"],
            vec!["powerdse", "plot", "--trace", "t.csv", "--channels", "delta,g"],
            vec!["powerdse", "list-presets"],
        ] {
            Cli::try_parse_from(&argv)
                .unwrap_or_else(|e| panic!("{argv:?} should parse: {e}"));
        }
    }

    #[test]
    fn flags_accept_comma_separated_lists() {
        let cli = Cli::try_parse_from([
            "powerdse", "run", "--preset", "scenario1", "--filters", "ekf,sckf",
        ])
        .unwrap();
        match cli.command {
            Command::Run(a) => assert_eq!(a.select.filters, ["ekf", "sckf"]),
            other => panic!("unexpected command {other:?}"),
        }
    }
}
