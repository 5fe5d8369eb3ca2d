//! Command-line front end: argument parsing, layered configuration, run
//! directories and the five user commands.

pub mod args;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod rundir;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

pub use args::{Cli, Command};
pub use error::{CliError, CliResult, ExitKind};

use args::ReplayArgs;
use rundir::RunManifest;

pub fn dispatch(command: &Command, argv: &[String], stdout: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Train(a) => commands::train(a, argv, stdout),
        Command::Generate(a) => commands::generate(a, argv, stdout),
        Command::Evaluate(a) => commands::evaluate(a, argv, stdout),
        Command::Gradcheck(a) => commands::gradcheck(a, argv, stdout),
        Command::Inspect(a) => commands::inspect(a, argv, stdout),
        Command::Replay(a) => replay(a, stdout),
    }
}

/// `argv` with its `--out` value replaced (or appended).
fn with_out(argv: &[String], out: &std::path::Path) -> Vec<String> {
    let out = out.to_string_lossy().into_owned();
    let mut next = Vec::with_capacity(argv.len() + 2);
    let mut replaced = false;
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
            next.extend(["--out".to_string(), out.clone()]);
            replaced = true;
        } else if a.starts_with("--out=") {
            next.push(format!("--out={out}"));
            replaced = true;
        } else {
            next.push(a.clone());
        }
    }
    if !replaced {
        next.extend(["--out".to_string(), out]);
    }
    next
}

/// Runs a recorded command again with the manifest's resolved settings in
/// place of its config file, into a new output directory. Data sources must
/// still hash to the recorded value.
fn replay(args: &ReplayArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let manifest = RunManifest::read(&args.manifest)?;
    let argv = with_out(&manifest.argv, &args.out);
    let cli = Cli::try_parse_from(&argv)
        .map_err(|e| CliError::data(format!("{}: recorded command line: {e}", args.manifest.display())))?;
    let mut command = cli.command;
    let layer = Some(manifest.config.clone());
    match &mut command {
        Command::Train(a) => {
            a.config.layer = layer;
            a.config.expect_dataset = manifest.dataset_hash.clone();
        }
        Command::Evaluate(a) => {
            a.config.layer = layer;
            a.config.expect_dataset = manifest.dataset_hash.clone();
        }
        Command::Generate(a) => a.config.layer = layer,
        Command::Inspect(a) => a.config.layer = layer,
        Command::Gradcheck(_) => {}
        Command::Replay(_) => return Err(CliError::usage("a manifest cannot record a replay")),
    }
    dispatch(&command, &argv, stdout)
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("RALSTM_LOG")
        .format_timestamp(None)
        .try_init();
}

/// Parses, runs and maps the outcome to an exit status.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<String> = args
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitKind::Usage as i32 } else { 0 };
        }
    };
    init_logging(cli.verbose, cli.quiet);
    match dispatch(&cli.command, &argv, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = stdout.flush();
            eprintln!("error: {e}");
            e.code()
        }
    }
}
