//! Argument parsing and dispatch for the `sarnn` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use sarnn_core::autodiff::OpKind;

use crate::commands::{self, Options};
use crate::error::Error;

#[derive(Debug, Parser)]
#[command(name = "sarnn", version, about = "Train and evaluate LSTM forecasters under four BPTT regimes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the configured dataset and store it with a manifest.
    Generate(Options),
    /// Train one seed and write checkpoint, history and manifest.
    Train(Options),
    /// Forecast the test cases from a checkpoint and write metric reports.
    Evaluate {
        #[command(flatten)]
        opts: Options,
        /// Checkpoint to evaluate (defaults to <output_dir>/checkpoint.json).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Check analytical gradients and the regime identities.
    Gradcheck {
        #[command(flatten)]
        opts: Options,
        #[arg(long, hide = true, value_name = "OP")]
        inject_fault: Option<String>,
    },
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<(), Error> {
    match command {
        Command::Generate(o) => commands::generate(&o, out).map(drop),
        Command::Train(o) => commands::train(&o, out).map(drop),
        Command::Evaluate { opts, checkpoint } => {
            let path = match checkpoint {
                Some(p) => p,
                None if opts.config.is_some() || opts.preset.is_some() => {
                    let cfg = crate::config::RunConfig::load(opts.config.as_deref(), opts.preset.as_deref())?;
                    cfg.output_dir.join("checkpoint.json")
                }
                None => return Err(Error::Usage("evaluate needs --checkpoint or a config naming the run directory".into())),
            };
            commands::evaluate(&opts, &path, out).map(drop)
        }
        Command::Gradcheck { opts, inject_fault } => {
            let fault = match inject_fault {
                Some(name) => Some(OpKind::from_name(&name).ok_or_else(|| Error::Usage(format!("unknown primitive {name:?}")))?),
                None => None,
            };
            commands::gradcheck(&opts, fault, out).map(drop)
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Normal output goes to `out`, errors to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
