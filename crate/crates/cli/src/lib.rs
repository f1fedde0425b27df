//! Command-line driver: config loading, flag overrides and the commands.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod config;

pub use config::{Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error(transparent)]
    Runtime(#[from] echomamba::Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "echomamba", version, about = "Sequential recommender with spectral filtering and selective state spaces")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration. Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Skip the spectral filter layer.
    #[arg(long, global = true)]
    pub no_filter: bool,
    /// Forward scan only.
    #[arg(long, global = true)]
    pub unidirectional: bool,
    /// Use b̄ = Δ·B instead of the exact input discretization.
    #[arg(long, global = true)]
    pub euler_discretization: bool,
    /// Exclude items already in the input window from ranking.
    #[arg(long, global = true)]
    pub mask_seen: bool,
    /// Floating-point width, 32 or 64.
    #[arg(long, global = true)]
    pub precision: Option<u32>,
}

impl GlobalArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            no_filter: self.no_filter,
            unidirectional: self.unidirectional,
            euler: self.euler_discretization,
            mask_seen: self.mask_seen,
            precision: self.precision,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Validation,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, filter and split the dataset; print its statistics.
    Ingest,
    /// Train, writing the log and checkpoint named in the config.
    Train {
        /// Continue from the configured checkpoint if it exists.
        #[arg(long)]
        resume: bool,
    },
    /// Rank held-out items and print the metrics as JSON.
    Eval {
        /// Score with freshly initialized weights instead of a checkpoint.
        #[arg(long)]
        untrained: bool,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Time training, inference and the scan; report sizes.
    Bench {
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// Only the scan length-doubling measurement.
        #[arg(long)]
        scan_only: bool,
    },
    /// Finite-difference check of every differentiable operation (64-bit).
    Gradcheck,
    /// Write the planted-cycle dataset as `user,item,timestamp` CSV.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
}

/// Loads the config named by the flags (or defaults) and applies overrides.
/// Loads the config named by the flags (or defaults) and applies
/// overrides. Problems in the file and in the resolved values are reported
/// together.
pub fn effective_config(global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let (base, mut errors) = match &global.config {
        Some(path) => RunConfig::load_lenient(path)?,
        None => (RunConfig::default(), Vec::new()),
    };
    match base.resolve(&global.overrides()) {
        Ok(cfg) if errors.is_empty() => Ok(cfg),
        Ok(_) => Err(CliError::Validation(errors)),
        Err(CliError::Validation(more)) => {
            errors.extend(more);
            Err(CliError::Validation(errors))
        }
        Err(e) => Err(e),
    }
}

pub fn dispatch(cli: &Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    if let Command::Gradcheck = cli.command {
        return commands::gradcheck(out);
    }
    let cfg = effective_config(&cli.global)?;
    match &cli.command {
        Command::Ingest => commands::ingest(&cfg, out).map(drop),
        Command::Train { resume } => commands::train(&cfg, *resume, out).map(drop),
        Command::Eval { untrained, split, k } => commands::eval(&cfg, *untrained, (*split).into(), *k, out).map(drop),
        Command::Bench { runs, scan_only } => commands::bench(&cfg, *runs, *scan_only, out),
        Command::Synth { out: path } => commands::synth(&cfg, path),
        Command::Gradcheck => unreachable!(),
    }
}

impl From<SplitArg> for echomamba::data::Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Validation => echomamba::data::Split::Validation,
            SplitArg::Test => echomamba::data::Split::Test,
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match dispatch(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
