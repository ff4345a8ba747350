//! `ballchain` command line: batch studies, magnet sizing, reconfiguration
//! runs, session replay and the teleoperation server.
//!
//! Exit codes: 0 success, 1 runtime or solver failure, 2 usage or
//! validation error.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

mod commands;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ballchain", version, about = "Magnetic ball-chain catheter simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

/// Scenario selection and output shared by most subcommands.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario document (JSON)
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Bundled scenario name (pv-rings, bench-sweep, rotating-field) or a path
    #[arg(long, value_name = "NAME|PATH", conflicts_with = "config")]
    pub scenario: Option<String>,
    /// Output file; standard output when absent. A run record is written next to it as <OUT>.run.json
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Seed for every random choice in the run (overrides the scenario)
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one equilibrium and write the shape with diagnostics as JSON
    Solve {
        #[command(flatten)]
        common: Common,
        /// In-plane field angle at the insertion point (degrees from the insertion direction)
        #[arg(long)]
        angle: Option<f64>,
        /// Number of exposed balls
        #[arg(long)]
        balls: Option<usize>,
        /// Replace the scenario field with a uniform field of this magnitude (mT)
        #[arg(long = "field-mt")]
        field_mt: Option<f64>,
        /// Elastic sleeve on or off
        #[arg(long, value_enum)]
        sleeve: Option<OnOff>,
    },
    /// Workspace sweep with the first unit; tip traces as CSV
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Field angles in degrees, comma separated (default: scenario study or 0..180 by 5)
        #[arg(long, value_delimiter = ',')]
        angle: Vec<f64>,
        /// Chain lengths, comma separated (default: scenario study or 4,9,16)
        #[arg(long, value_delimiter = ',')]
        balls: Vec<usize>,
        #[arg(long, value_enum)]
        sleeve: Option<OnOff>,
    },
    /// Tip alignment study in a rotating uniform field; CSV table
    Align {
        #[command(flatten)]
        common: Common,
        /// Field angles in degrees, comma separated (default 0..180 by 22.5)
        #[arg(long, value_delimiter = ',')]
        angle: Vec<f64>,
        /// Chain lengths, comma separated (default 1..16)
        #[arg(long, value_delimiter = ',')]
        balls: Vec<usize>,
        /// Field magnitude (mT); defaults to the scenario's uniform field
        #[arg(long = "field-mt")]
        field_mt: Option<f64>,
        #[arg(long, value_enum)]
        sleeve: Option<OnOff>,
    },
    /// Size the actuation magnet from a force measurement; JSON report
    Design {
        /// Sizing problem (JSON, explicit units); bench values when absent
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        /// Accepted for uniformity; sizing uses no randomness
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run closed-loop reconfiguration of the first unit; CSV log
    Reconfig {
        #[command(flatten)]
        common: Common,
        /// Initial angle between the dipole and its neutral direction (degrees)
        #[arg(long, default_value_t = 90.0)]
        angle: f64,
    },
    /// Serve the teleoperation WebSocket, health endpoint and UI
    Serve {
        #[command(flatten)]
        common: Common,
        /// Listen address
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Directory with the UI bundle, served at /
        #[arg(long = "static-dir", value_name = "DIR")]
        static_dir: Option<PathBuf>,
    },
    /// Replay a command log and write the session log (JSON lines)
    Replay {
        #[command(flatten)]
        common: Common,
        /// Command log (JSON lines of {tick, command})
        #[arg(long, value_name = "PATH")]
        commands: PathBuf,
        /// Ticks to simulate; defaults to the last logged tick
        #[arg(long)]
        ticks: Option<u64>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<ballchain::Error> for CliError {
    fn from(e: ballchain::Error) -> Self {
        use ballchain::Error as E;
        match e {
            E::Validation(_) | E::Config(_) | E::InvalidArgument(_) | E::Json(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Reproducibility record of one invocation.
#[derive(Debug, Serialize)]
pub struct RunArtifact {
    pub command: Vec<String>,
    pub version: &'static str,
    pub seed: Option<u64>,
    /// Resolved inputs after defaults and overrides.
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
    pub started_at: String,
    pub finished_at: String,
}

/// What a subcommand produced.
pub(crate) struct Outcome {
    pub primary: Vec<u8>,
    pub config: serde_json::Value,
    pub summary: serde_json::Value,
    pub seed: Option<u64>,
    /// Extra files written by the command itself.
    pub extra_outputs: Vec<String>,
}

fn artifact_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

fn out_of(cmd: &Command) -> Option<&Path> {
    match cmd {
        Command::Design { out, .. } => out.as_deref(),
        Command::Solve { common, .. }
        | Command::Sweep { common, .. }
        | Command::Align { common, .. }
        | Command::Reconfig { common, .. }
        | Command::Replay { common, .. } => common.out.as_deref(),
        // serve writes its logs into --out as a directory
        Command::Serve { .. } => None,
    }
}

/// Parse `args` (including the program name) and run. Primary output goes
/// to `stdout` unless `--out` is given; messages go to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { stderr.write_all(text.as_bytes()) } else { stdout.write_all(text.as_bytes()) };
            return code;
        }
    };
    let started_at = chrono::Utc::now().to_rfc3339();
    let result = commands::dispatch(&cli.command, stderr);
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return e.exit_code();
        }
    };
    let out = out_of(&cli.command);
    let mut outputs = outcome.extra_outputs.clone();
    let written = match out {
        Some(path) => std::fs::write(path, &outcome.primary).map(|_| outputs.insert(0, path.display().to_string())),
        None => stdout.write_all(&outcome.primary),
    };
    if let Err(e) = written {
        let _ = writeln!(stderr, "error: cannot write output: {e}");
        return EXIT_RUNTIME;
    }
    let artifact = RunArtifact {
        command: args.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        version: env!("CARGO_PKG_VERSION"),
        seed: outcome.seed,
        config: outcome.config,
        outputs,
        summary: outcome.summary,
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
    };
    let text = serde_json::to_string_pretty(&artifact).expect("artifact serializes");
    let stored = match out {
        Some(path) => std::fs::write(artifact_path(path), text + "\n"),
        None => writeln!(stderr, "{text}"),
    };
    if let Err(e) = stored {
        let _ = writeln!(stderr, "error: cannot write run record: {e}");
        return EXIT_RUNTIME;
    }
    EXIT_OK
}
