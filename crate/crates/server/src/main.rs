mod cli;
mod service;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_ASSERTION: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "verbot", version, about = "Typed robot commands for a simulated arm")]
struct Args {
    /// Directory holding store.xml (poses, tasks, lists). In-memory if unset.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Scene file (XML). Empty default workcell if unset.
    #[arg(long, global = true)]
    scene: Option<PathBuf>,
    /// Append a JSON line per submission and event.
    #[arg(long, global = true)]
    log: Option<PathBuf>,
    /// Simulation tick in milliseconds.
    #[arg(long, global = true, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..=1000))]
    tick_ms: u64,
    /// Alias file (`surface canonical` per line) added to the built-in aliases.
    #[arg(long, global = true)]
    aliases: Option<PathBuf>,
    #[command(subcommand)]
    command: Mode,
}

#[derive(Debug, Subcommand)]
enum Mode {
    /// Interactive session on stdin; `exit` quits.
    Repl,
    /// Run a transcript as fast as possible and print a report.
    Replay {
        transcript: PathBuf,
        /// Expected final poses; mismatches exit with code 2.
        #[arg(long = "assert")]
        assert_file: Option<PathBuf>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Host the WebSocket protocol and the operator console.
    Serve {
        #[arg(long, default_value_t = 8490)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory with a built console bundle to serve at `/`.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let setup = match cli::Setup::from_args(
        args.store.as_deref(),
        args.scene.as_deref(),
        args.log.as_deref(),
        args.aliases.as_deref(),
        args.tick_ms,
    ) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("verbot: {e:#}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    let result = match args.command {
        Mode::Repl => cli::repl(setup),
        Mode::Replay { transcript, assert_file, json } => {
            cli::replay(setup, &transcript, assert_file.as_deref(), json)
        }
        Mode::Serve { port, host, ui } => service::run(setup, &host, port, ui),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("verbot: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
