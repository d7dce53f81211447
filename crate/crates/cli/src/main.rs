//! `ftn`: run scenarios and reproduce the delay, throughput and fault tables.

mod report;
mod scenario;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ftn_core::engine::run;
use ftn_core::protocol::Protocol;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: schema, validation or domain errors. Exit code 2.
    #[error("{0}")]
    Invalid(String),
    /// I/O and other failures after the input was accepted. Exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ftn", version, about = "Fault-tolerant hierarchical network simulator")]
struct Cli {
    /// Write the command's primary output here instead of standard output.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Suppress informational messages on standard error.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Ftn,
    Conventional,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Ftn => Protocol::Ftn,
            ProtocolArg::Conventional => Protocol::Conventional,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario file; the trace CSV is the primary output.
    Run {
        #[arg(long, value_name = "FILE")]
        scenario: PathBuf,
        /// Override the file's protocol.
        #[arg(long, value_enum)]
        protocol: Option<ProtocolArg>,
        /// Also write the run summary as JSON.
        #[arg(long, value_name = "PATH")]
        summary: Option<PathBuf>,
    },
    /// Reproduce table 4 (fault-free delay), 5 (throughput) or 6 (fault latency).
    Tables {
        #[arg(value_parser = ["4", "5", "6"])]
        which: String,
    },
    /// Buffer sizing from Poisson traffic and a fault schedule.
    Buffer {
        #[arg(long, default_value_t = 50.0, allow_negative_numbers = true)]
        lambda: f64,
        #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
        t: f64,
        #[arg(long, default_value_t = 100)]
        n: u64,
        #[arg(long, default_value_t = 8)]
        devices: u64,
        /// Consecutive `<duration_ms>:<faulty_devices>` intervals.
        #[arg(long, default_value = "200:1,200:4,200:2,200:3,200:4")]
        schedule: String,
        /// Safety factor.
        #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
        y: f64,
        #[arg(long, default_value_t = 500.0, allow_negative_numbers = true)]
        packet_bits: f64,
    },
    /// CSV series for figure 4 (delay/latency), 6 (throughput) or 7 (fault latency).
    PlotData {
        #[arg(value_parser = ["4", "6", "7"])]
        figure: String,
    },
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn emit(out: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_file(p, contents),
        None => std::io::stdout()
            .lock()
            .write_all(contents.as_bytes())
            .map_err(|e| CliError::Runtime(format!("stdout: {e}"))),
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let out = cli.out.as_deref();
    match cli.command {
        Command::Run {
            scenario,
            protocol,
            summary,
        } => {
            let mut loaded = scenario::load(&scenario)?;
            if let Some(p) = protocol {
                loaded.scenario.protocol = p.into();
            }
            let result = run(&loaded.scenario).map_err(|e| CliError::Invalid(e.to_string()))?;
            let s = report::summarize(loaded.scenario.protocol, &result);
            let json = serde_json::to_string_pretty(&s).map_err(|e| CliError::Runtime(e.to_string()))? + "\n";
            let trace = result.trace.to_csv();
            match out.map(Path::to_path_buf).or(loaded.trace) {
                Some(p) => write_file(&p, &trace)?,
                None => emit(None, &trace)?,
            }
            if let Some(p) = summary.or(loaded.summary) {
                write_file(&p, &json)?;
            }
            if !cli.quiet {
                for m in &s.messages {
                    let latency = m.latency_ms.map_or("-".to_owned(), |l| format!("{l} ms"));
                    eprintln!("message {} to {}: {} latency {latency}", m.id, m.destination, m.status);
                }
                let a = &s.aggregate;
                eprintln!(
                    "{} injected, {} delivered, {} nacked, {} lost, {} in flight{}",
                    a.injected,
                    a.delivered,
                    a.nacked,
                    a.lost,
                    a.in_flight,
                    if s.truncated { " (horizon reached)" } else { "" }
                );
            }
            Ok(())
        }
        Command::Tables { which } => {
            let text = match which.as_str() {
                "4" => report::table4()?,
                "5" => report::table5(),
                _ => report::table6()?,
            };
            emit(out, &text)
        }
        Command::Buffer {
            lambda,
            t,
            n,
            devices,
            schedule,
            y,
            packet_bits,
        } => {
            let text = report::buffer(&report::BufferArgs {
                lambda,
                t,
                n,
                devices,
                schedule,
                y,
                packet_bits,
            })?;
            emit(out, &text)
        }
        Command::PlotData { figure } => {
            let text = match figure.as_str() {
                "4" => report::plot4()?,
                "6" => report::plot6(),
                _ => report::plot7()?,
            };
            emit(out, &text)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
