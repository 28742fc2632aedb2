//! `esmhc` command-line runner.
//!
//! Exit codes: 0 on success, 2 for usage and configuration errors, 3 for data
//! and I/O errors. Every failure prints one `esmhc: ...` line to stderr.

use std::fmt;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

mod commands;
pub mod config;

pub use config::{Overrides, RunConfig, SynthSettings};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const THREADS_ENV: &str = "ESMHC_THREADS";

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn io(e: std::io::Error) -> Self {
        Self::data(format!("i/o error: {e}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<esmhc_core::Error> for CliError {
    fn from(e: esmhc_core::Error) -> Self {
        match e {
            esmhc_core::Error::Config(_) => Self::config(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "esmhc",
    version,
    about = "Spectrum-aware hyper-connected networks for hyperspectral classification",
    arg_required_else_help = true
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    cube: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    labels: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Number of residual streams, FULL included.
    #[arg(long, global = true)]
    expansion: Option<usize>,
    #[arg(long, global = true)]
    topk_frac: Option<f64>,
    #[arg(long, global = true)]
    hidden: Option<usize>,
    #[arg(long, global = true)]
    layers: Option<usize>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            cube: self.cube.clone(),
            labels: self.labels.clone(),
            out: self.out.clone(),
            seed: self.seed,
            epochs: self.epochs,
            expansion: self.expansion,
            topk_frac: self.topk_frac,
            hidden: self.hidden,
            layers: self.layers,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic cube and label map.
    Synth,
    /// Print the band-to-stream assignment.
    SplitBands {
        /// Text file of wavelengths in nm; the cube's own list otherwise.
        #[arg(long, value_name = "PATH")]
        wavelengths: Option<PathBuf>,
    },
    /// Train, checkpoint, and export matrices at the scheduled epochs.
    Train,
    /// Score a checkpoint on the held-out pixels and write the class map.
    Eval {
        /// Checkpoint directory; the output directory by default.
        #[arg(long, value_name = "DIR")]
        model: Option<PathBuf>,
    },
    /// Export heatmaps and selection masks of a checkpoint.
    ExportH {
        #[arg(long, value_name = "DIR")]
        model: Option<PathBuf>,
    },
    /// Class-association and asymmetry tables of a checkpoint.
    Associate {
        #[arg(long, value_name = "DIR")]
        model: Option<PathBuf>,
    },
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            CliError::config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))
        })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = RunConfig::resolve(cli.common.config.as_deref(), &cli.common.overrides())?;
    let pool = thread_pool()?;
    pool.install(|| match cli.command {
        Command::Synth => commands::synth(&config),
        Command::SplitBands { wavelengths } => {
            commands::split_bands(&config, wavelengths.as_deref())
        }
        Command::Train => commands::train(&config),
        Command::Eval { model } => commands::eval(&config, model.as_deref()),
        Command::ExportH { model } => commands::export_h(&config, model.as_deref()),
        Command::Associate { model } => commands::associate(&config, model.as_deref()),
    })
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    eprint!("{e}");
                    EXIT_CONFIG
                }
                _ => {
                    let text = e.render().to_string();
                    let first = text.lines().next().unwrap_or("invalid arguments");
                    eprintln!("esmhc: {}", one_line(first.trim_start_matches("error: ")));
                    EXIT_CONFIG
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("esmhc: {}", one_line(&e.message));
            e.code
        }
    }
}
