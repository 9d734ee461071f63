//! Batch front end over the `tfformer` library: `curate`, `train`,
//! `enhance`, `eval` and `gradcheck`.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error,
//! 3 verification failure.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tfformer::data::DataError;
use tfformer::gradcheck::GradcheckError;
use tfformer::metrics::MetricError;
use tfformer::model::ModelError;
use tfformer::tensor::fault::FaultOp;
use tfformer::train::TrainError;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid config field `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Verification(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => EXIT_USAGE,
            CliError::Data(_) | CliError::Io(_) => EXIT_DATA,
            CliError::Verification(_) => EXIT_VERIFY,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config { field, msg } => CliError::Config { field, msg },
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config { field, msg } => CliError::Config { field, msg },
            TrainError::Model(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<GradcheckError> for CliError {
    fn from(e: GradcheckError) -> Self {
        match e {
            GradcheckError::Model(m) => m.into(),
            GradcheckError::Train(t) => t.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tfformer", version, about = "Low-light enhancement: curation, training, inference and checks")]
pub struct Cli {
    /// Plain-text `key = value` config file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cut a paired corpus into patches, filter them and write a manifest.
    Curate(CurateArgs),
    /// Train on curated pairs or a synthetic pair set.
    Train(TrainArgs),
    /// Enhance one image or every image in a directory.
    Enhance(EnhanceArgs),
    /// Score enhanced low-light images against their references.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients block by block.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    /// Corpus directory with `low/` and `ref/`.
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Train on generated pairs instead of `train_dir`.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub lr: Option<String>,
    /// Paired training directory.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Paired validation directory.
    #[arg(long, value_name = "DIR")]
    pub val: Option<PathBuf>,
    /// Continue from the checkpoint and optimizer state in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Image file or directory of images.
    pub input: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Also write the pre-refinement reconstruction under `rec/`.
    #[arg(long)]
    pub rec: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Paired test directory with `low/` and `ref/`.
    pub dir: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Score each reference against itself instead of running a model.
    #[arg(long)]
    pub identity: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Check only these blocks; repeatable.
    #[arg(long)]
    pub only: Vec<String>,
    #[arg(long, hide = true, value_name = "OP")]
    pub inject_fault: Option<String>,
}

fn split_override(s: &str) -> Result<(String, String), CliError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn push<T: ToString>(list: &mut Vec<(String, String)>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        list.push((key.to_string(), v.to_string()));
    }
}

fn show(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

/// Resolves the run config: defaults, then the config file, then flags.
pub fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let mut o = Vec::new();
    push(&mut o, "seed", &cli.seed);
    push(&mut o, "out", &show(&cli.out));
    for s in &cli.set {
        o.push(split_override(s)?);
    }
    match &cli.command {
        Command::Curate(a) => {
            push(&mut o, "corpus", &show(&a.corpus));
            push(&mut o, "curate_patch", &a.patch);
            push(&mut o, "curate_stride", &a.stride);
        }
        Command::Train(a) => {
            push(&mut o, "steps", &a.steps);
            push(&mut o, "patch", &a.patch);
            push(&mut o, "batch_size", &a.batch);
            push(&mut o, "lr", &a.lr);
            push(&mut o, "train_dir", &show(&a.data));
            push(&mut o, "val_dir", &show(&a.val));
        }
        Command::Enhance(a) => push(&mut o, "checkpoint", &show(&a.checkpoint)),
        Command::Eval(a) => push(&mut o, "checkpoint", &show(&a.checkpoint)),
        Command::Gradcheck(_) => {}
    }
    cfg.apply_overrides(&o)?;
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Curate(_) => {
            cfg.echo("curate")?;
            println!("{}", commands::curate(&cfg)?);
            Ok(EXIT_OK)
        }
        Command::Train(a) => {
            cfg.echo("train")?;
            println!("{}", commands::train(&cfg, a.synthetic, a.resume)?);
            Ok(EXIT_OK)
        }
        Command::Enhance(a) => {
            cfg.echo("enhance")?;
            let summary = commands::enhance(&cfg, &a.input, a.rec)?;
            println!("{summary}");
            Ok(if summary.failed.is_empty() { EXIT_OK } else { EXIT_DATA })
        }
        Command::Eval(a) => {
            cfg.echo("eval")?;
            let summary = commands::eval(&cfg, &a.dir, a.identity)?;
            print!("{}", summary.table.to_tsv());
            println!("{summary}");
            Ok(if summary.failed.is_empty() { EXIT_OK } else { EXIT_DATA })
        }
        Command::Gradcheck(a) => {
            let fault = a
                .inject_fault
                .as_deref()
                .map(|f| f.parse::<FaultOp>().map_err(|e| CliError::Usage(format!("--inject-fault: {e}"))))
                .transpose()?;
            cfg.echo("gradcheck")?;
            let report = commands::gradcheck(&cfg, &a.only, fault)?;
            print!("{}", report.to_text());
            Ok(if report.passed() { EXIT_OK } else { EXIT_VERIFY })
        }
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
