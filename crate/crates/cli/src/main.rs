mod args;
mod commands;
mod config;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::{CommandFactory, Parser};

use args::Cli;

/// Invalid flags or flag combinations; exit code 2. Anything else that goes
/// wrong is an I/O or data error; exit code 3.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Result of a subcommand that ran to completion.
pub enum Verdict {
    Ok,
    ThresholdFailed,
}

fn parse(argv: Vec<OsString>) -> Result<Cli, ExitCode> {
    let clap_exit = |e: clap::Error| {
        let _ = e.print();
        ExitCode::from(e.exit_code() as u8)
    };
    let argv = match config::config_path(&argv) {
        Some(path) => {
            let pairs = config::read_pairs(&path).map_err(report)?;
            let cmd = Cli::command();
            let names: Vec<&str> = cmd.get_subcommands().map(|c| c.get_name()).collect();
            config::inject(&argv, &names, &pairs)
        }
        None => argv,
    };
    Cli::try_parse_from(&argv).map_err(clap_exit)
}

fn report(e: anyhow::Error) -> ExitCode {
    eprintln!("error: {e:#}");
    if e.downcast_ref::<UsageError>().is_some() {
        ExitCode::from(2)
    } else {
        ExitCode::from(3)
    }
}

fn main() -> ExitCode {
    let cli = match parse(std::env::args_os().collect()) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return report(UsageError("--threads must be at least 1".into()).into());
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return report(anyhow::anyhow!("thread pool: {e}"));
        }
    }
    match commands::run(&cli) {
        Ok(Verdict::Ok) => ExitCode::SUCCESS,
        Ok(Verdict::ThresholdFailed) => ExitCode::from(1),
        Err(e) => report(e),
    }
}
