//! Library side of the `proptrack` binary: argument definitions, config
//! loading and the subcommands.

pub mod commands;
pub mod config;
pub mod table;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

pub use config::{Config, Format};

/// Why a command failed, which decides the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config keys or parameter values. Exit code 1.
    Usage(anyhow::Error),
    /// Input that does not parse or cannot be processed. Exit code 2.
    Data(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }

    /// Prefixes the message with `path` unless it already names a file.
    pub fn in_file(self, path: &std::path::Path) -> Self {
        let wrap = |e: anyhow::Error| match e.downcast_ref::<proptrack::Error>() {
            Some(proptrack::Error::Parse { path: Some(_), .. } | proptrack::Error::Io { .. }) => e,
            _ => e.context(path.display().to_string()),
        };
        match self {
            Failure::Usage(e) => Failure::Usage(wrap(e)),
            Failure::Data(e) => Failure::Data(wrap(e)),
        }
    }

    /// One-line message built from the error chain. A cause whose text is
    /// already part of the message (a wrapped io error, say) is skipped.
    pub fn message(&self) -> String {
        let mut msg = String::new();
        for cause in self.error().chain() {
            let text = cause.to_string();
            let text = text.trim_end();
            if msg.contains(text) {
                continue;
            }
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(text);
        }
        msg
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) => e,
        }
    }
}

impl From<proptrack::Error> for Failure {
    fn from(e: proptrack::Error) -> Self {
        match e {
            proptrack::Error::InvalidParam { .. } => Failure::Usage(e.into()),
            _ => Failure::Data(e.into()),
        }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

pub(crate) trait UsageContext<T> {
    fn usage(self) -> CmdResult<T>;
}

impl<T> UsageContext<T> for anyhow::Result<T> {
    fn usage(self) -> CmdResult<T> {
        self.map_err(Failure::Usage)
    }
}

#[derive(Debug, Parser)]
#[command(name = "proptrack", version, about = "Multi-object tracking with Kalman proposals and appearance embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by commands that read the run configuration.
#[derive(Debug, Clone, clap::Args)]
pub struct ConfigArgs {
    /// TOML config file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set beta=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track detections and write hypotheses plus a timing record.
    Track {
        /// Detection file. Repeat to track several sequences.
        #[arg(long, value_name = "FILE")]
        dets: Vec<PathBuf>,
        /// Embedding sidecar, one per --dets. Not needed when beta = 0.
        #[arg(long, value_name = "FILE")]
        embs: Vec<PathBuf>,
        /// Hypothesis output, one per --dets.
        #[arg(long, value_name = "FILE")]
        out: Vec<PathBuf>,
        /// Timing JSON output, one per --dets.
        #[arg(long, value_name = "FILE")]
        timing: Vec<PathBuf>,
        /// Overrides the `format` config key.
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Worker threads for independent sequences.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score hypotheses against ground truth with CLEAR-MOT and IDF1.
    Eval {
        /// Ground truth file. Repeat for several sequences.
        #[arg(long, value_name = "FILE")]
        gt: Vec<PathBuf>,
        /// Hypothesis file, paired with --gt in order.
        #[arg(long, value_name = "FILE")]
        hyp: Vec<PathBuf>,
        /// Overrides the `format` config key.
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Overrides the `iou_threshold` config key.
        #[arg(long, value_name = "IOU")]
        iou_threshold: Option<f64>,
        /// JSON report output.
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
        /// Worker threads for independent sequences.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate a synthetic scene: gt.txt, det.txt, emb.jsonl, labeled.jsonl.
    Simulate {
        /// Scenario TOML; defaults are used when omitted.
        #[arg(long, value_name = "FILE")]
        scenario_config: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the generated files; created if missing.
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Sample a batch, mine batch-hard triplets and report the loss.
    Mine {
        /// Identity-labeled embeddings, e.g. labeled.jsonl from `simulate`.
        #[arg(long, value_name = "FILE")]
        labeled_embs: Option<PathBuf>,
        /// JSON report output.
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Time the tracking stages on synthetic scenes of growing size.
    Bench {
        /// Track counts to sweep. Repeatable.
        #[arg(long, value_name = "N", default_values_t = [8, 16, 32, 64, 128])]
        tracks: Vec<usize>,
        /// Embedding dimension.
        #[arg(long, value_name = "D", default_value_t = 128)]
        dim: usize,
        /// Frames per synthetic scene.
        #[arg(long, value_name = "F", default_value_t = 50)]
        frames: u64,
        /// Tracking runs per point; median and p95 are taken over these.
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        /// Scene seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON output.
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

/// The clap command with the config key reference attached to `--help`.
pub fn command() -> clap::Command {
    let keys = config::keys_help();
    let mut cmd = Cli::command().after_help(keys.clone());
    for name in ["track", "eval", "mine", "bench"] {
        cmd = cmd.mut_subcommand(name, |s| s.after_help(keys.clone()));
    }
    cmd
}

/// Parses `args` and runs the command. Help and version requests are
/// returned as `Ok` after printing.
pub fn run<I, T>(args: I) -> CmdResult
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return Ok(());
            }
            let msg = e.render().to_string();
            let msg = msg.trim_start_matches("error: ").trim_end();
            return Err(Failure::Usage(anyhow::anyhow!("{msg}")));
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| Failure::Usage(e.into()))?;
    commands::dispatch(cli.command)
}
