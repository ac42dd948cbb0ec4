//! `agra`: generate a corpus, train an ensemble, explain it and score the
//! explanations.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 integrity (checksum, version
//! or malformed file), 5 numerical failure, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod manifest;
mod plot;

#[derive(Debug, Parser)]
#[command(name = "agra", version, about = "Ground-truth benchmark for gradient attribution methods")]
struct Cli {
    /// TOML file with [corpus], [train], [attribution], [explain] and
    /// [eval] sections; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a scored corpus of perturbed signals.
    Gen(GenArgs),
    /// Train an ensemble of regressors on a corpus.
    Train(TrainArgs),
    /// Compute attributions for one split.
    Explain(ExplainArgs),
    /// Score attributions against the ideal gradients.
    Eval(EvalArgs),
    /// AGRA metrics as a function of the number of averaged models.
    Curve(CurveArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (or a `.json` file path).
    #[arg(long)]
    pub out: PathBuf,
    /// Number of examples.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub train_frac: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Number of models.
    #[arg(long)]
    pub models: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    pub models: PathBuf,
    /// grad, gradxinput, smoothgrad or intgrad.
    #[arg(long, default_value = "grad")]
    pub method: String,
    /// Average the method over every model instead of using model 0.
    #[arg(long)]
    pub agra: bool,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Attribution batch file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Attribution batch file from `explain`.
    #[arg(long, conflicts_with_all = ["models", "method", "agra"])]
    pub attributions: Option<PathBuf>,
    /// Checkpoint directory, to compute attributions on the fly.
    #[arg(long, required_unless_present = "attributions")]
    pub models: Option<PathBuf>,
    /// A method name, or `all` for every single-model and averaged row.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub agra: bool,
    /// Report directory.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub models: PathBuf,
    /// Largest ensemble size (default: every model).
    #[arg(long)]
    pub max_n: Option<usize>,
    /// CSV path; an SVG plot is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

/// Invalid flag values or configuration.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Every attribution failed to converge.
#[derive(Debug)]
pub struct NumericalError(pub String);

impl std::fmt::Display for NumericalError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if cause.is::<NumericalError>() {
            return 5;
        }
        if let Some(e) = cause.downcast_ref::<agra::Error>() {
            return match e {
                e if e.is_integrity() => 4,
                e if e.is_numerical() => 5,
                agra::Error::Parse(_) => 4,
                agra::Error::Io { .. } => 3,
                agra::Error::InvalidConfig(_) | agra::Error::EmptySplit(_) => 2,
                _ => 1,
            };
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            anyhow::bail!(UsageError("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let cfg = config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Gen(a) => commands::gen(&a, cfg),
        Command::Train(a) => commands::train(&a, cfg),
        Command::Explain(a) => commands::explain(&a, cfg),
        Command::Eval(a) => commands::eval(&a, cfg),
        Command::Curve(a) => commands::curve(&a, cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_class() {
        let code = |e: agra::Error| exit_code(&anyhow::Error::new(e));
        assert_eq!(code(agra::Error::Checksum { expected: "a".into(), actual: "b".into() }), 4);
        assert_eq!(code(agra::Error::Divergence { epoch: 1, reason: "nan".into() }), 5);
        assert_eq!(code(agra::Error::InvalidConfig("x".into())), 2);
        assert_eq!(code(agra::Error::io("/nope", std::io::Error::from(std::io::ErrorKind::NotFound))), 3);
        assert_eq!(exit_code(&anyhow::Error::new(UsageError("bad".into()))), 2);
        let wrapped = anyhow::Error::new(agra::Error::NonFinite("l2".into())).context("explaining");
        assert_eq!(exit_code(&wrapped), 5);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
