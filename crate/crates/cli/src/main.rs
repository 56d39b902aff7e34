//! `mtnet`: phantom generation, training, cross-validation, inference,
//! evaluation and gradient verification from one binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
//! `MTNET_THREADS` caps the worker pool.

/// `println!` that ignores a closed stdout (e.g. output piped into `head`).
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mtnet_core::networks::ModelConfig;
use mtnet_core::{ClassLabel, Error, ErrorCategory};

use crate::commands::TrainArgs;
use crate::config::RunConfig;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "mtnet", version, about = "Multi-task MRI-to-PET CBF synthesis and cerebrovascular classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic phantom dataset (MVOL volumes and manifest.json).
    PhantomGen {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Subjects per class, in HC,MMD,ICSD,Stroke order.
        #[arg(long, default_value = "4,4,1,1", value_parser = parse_subjects)]
        subjects: [usize; ClassLabel::COUNT],
        /// Volume dims m,n,p.
        #[arg(long, default_value = "32,32,16", value_parser = parse_dims)]
        dims: [usize; 3],
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one model on a subject-grouped train/validation split.
    Train(TrainFlags),
    /// Subject-grouped k-fold cross-validation with per-fold reports.
    Crossval {
        #[command(flatten)]
        flags: TrainFlags,
        /// Folds trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Predict a CBF volume from an 8-channel MRI volume.
    Synthesize {
        #[arg(long)]
        checkpoint: PathBuf,
        /// 8-channel MVOL input.
        #[arg(long)]
        input: PathBuf,
        /// Output MVOL path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the four class probabilities and the predicted label.
    Classify {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Evaluate a checkpoint on every scan of a manifest and write a report.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Finite-difference gradient checks; prints a pass/fail table.
    Gradcheck {
        /// all, ops, model, or an op name prefix such as conv3d.
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct ConfigFlags {
    /// JSON run configuration (sections model, train, data, eval).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. train.lr=1e-3; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Full-size network.
    Full,
    /// Reduced widths for CPU-scale runs.
    Desk,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigFlags,
    /// Base model widths before the config file and overrides apply.
    #[arg(long, value_enum, default_value = "full")]
    preset: Preset,
    /// Overrides train.seed and data.folds.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Single worker thread and fixed reduction order.
    #[arg(long)]
    deterministic: bool,
}

fn parse_list<const N: usize>(s: &str) -> Result<[usize; N], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|v: Vec<usize>| format!("expected {N} comma-separated values, got {}", v.len()))
}

fn parse_subjects(s: &str) -> Result<[usize; ClassLabel::COUNT], String> {
    parse_list(s)
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    parse_list(s)
}

impl TrainFlags {
    fn resolve(&self) -> mtnet_core::Result<RunConfig> {
        let model = match self.preset {
            Preset::Full => ModelConfig::default(),
            Preset::Desk => ModelConfig::desk(ModelConfig::default().input_dims),
        };
        let mut cfg = RunConfig::resolve(
            RunConfig {
                model,
                ..Default::default()
            },
            self.config.config.as_deref(),
            &self.config.overrides,
        )?;
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
            cfg.data.folds.seed = seed;
        }
        if self.deterministic {
            cfg.train.deterministic = true;
        }
        Ok(cfg)
    }

    fn args(&self) -> mtnet_core::Result<TrainArgs<'_>> {
        Ok(TrainArgs {
            manifest: &self.manifest,
            out: &self.out,
            cfg: self.resolve()?,
        })
    }
}

fn init_threads() -> mtnet_core::Result<()> {
    let Ok(raw) = std::env::var("MTNET_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("MTNET_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))
}

/// Ok(true) when every check passed; gradcheck failures are reported as numeric.
fn run(cli: Cli) -> mtnet_core::Result<bool> {
    init_threads()?;
    match cli.command {
        Command::PhantomGen {
            out,
            subjects,
            dims,
            seed,
        } => commands::phantom_gen(&out, subjects, dims, seed)?,
        Command::Train(flags) => commands::train_cmd(flags.args()?)?,
        Command::Crossval { flags, jobs } => commands::crossval_cmd(flags.args()?, jobs)?,
        Command::Synthesize { checkpoint, input, out } => commands::synthesize(&checkpoint, &input, &out)?,
        Command::Classify { checkpoint, input } => commands::classify(&checkpoint, &input)?,
        Command::Evaluate {
            checkpoint,
            manifest,
            out,
            config,
        } => {
            let cfg = RunConfig::resolve(RunConfig::default(), config.config.as_deref(), &config.overrides)?;
            commands::evaluate(&checkpoint, &manifest, &out, cfg)?
        }
        Command::Gradcheck { scope, seed } => return Ok(commands::gradcheck(&scope, seed)? == 0),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient checks above tolerance");
            ExitCode::from(EXIT_NUMERIC)
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e.category() {
                ErrorCategory::Usage => {
                    eprintln!("hint: run with --help for usage");
                    EXIT_USAGE
                }
                ErrorCategory::Data => EXIT_DATA,
                ErrorCategory::Numeric => EXIT_NUMERIC,
            };
            ExitCode::from(code)
        }
    }
}
