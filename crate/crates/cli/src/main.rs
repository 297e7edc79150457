//! Command-line driver: simulate, train, predict, evaluate, and sweep.
//!
//! Every command is a pure function of (config file, input files, seed):
//! identical inputs produce byte-identical output files. Progress and timing
//! go to stderr; on failure a machine-readable JSON error lands on stderr and
//! the exit code identifies the error class.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(
    name = "treehawkes",
    version,
    about = "Spatio-temporal point-process modeling with a learned soft-tree partition"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory (default: the config's out_dir, then ".").
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic event catalog by thinning.
    Simulate,
    /// Train a model on the configured dataset; writes checkpoint and trace.
    Train,
    /// Forecast expected event counts over one horizon window.
    PredictCounts {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Canonical t,x,y history CSV; defaults to the configured dataset.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Forecast window length; defaults to the config's grid horizon.
        #[arg(long)]
        horizon: Option<f64>,
        /// Forecast start; defaults to the end of the history.
        #[arg(long)]
        t_start: Option<f64>,
    },
    /// Predict the next event's expected time and location.
    PredictNext {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Canonical t,x,y history CSV; defaults to the configured dataset.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score a model (or train one first) on the configured dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the configured experiment sweep.
    Sweep,
}

fn exit_code_for(err: &treehawkes::Error) -> u8 {
    use treehawkes::Error as E;
    match err {
        E::Config(_) => 2,
        E::Io { .. } => 3,
        E::Checkpoint(_) => 4,
        E::Parse { .. } | E::Precondition(_) => 5,
        E::NonFinite { .. } => 6,
        E::UnsupportedKind(_) => 7,
        E::Internal(_) => 70,
    }
}

fn error_kind(err: &treehawkes::Error) -> &'static str {
    use treehawkes::Error as E;
    match err {
        E::Config(_) => "config",
        E::Io { .. } => "io",
        E::Checkpoint(_) => "checkpoint",
        E::Parse { .. } => "parse",
        E::Precondition(_) => "precondition",
        E::NonFinite { .. } => "non-finite",
        E::UnsupportedKind(_) => "unsupported-kind",
        E::Internal(_) => "internal",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{{\"error\":{{\"code\":2,\"kind\":\"config\",\"message\":\"{e}\"}}}}");
            return ExitCode::from(2);
        }
    }

    let result = commands::run(&cli);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code_for(&err);
            let payload = serde_json::json!({
                "error": {
                    "code": code,
                    "kind": error_kind(&err),
                    "message": err.to_string(),
                }
            });
            eprintln!("{payload}");
            ExitCode::from(code)
        }
    }
}
