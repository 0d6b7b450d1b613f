use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cvi", version, about = "Copula variational inference with regular vines")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a copula variational posterior to a model.
    Fit(FitArgs),
    /// Draw samples from a fitted posterior.
    Sample(SampleArgs),
    /// Select a vine structure and pair-copula families from samples.
    Select(SelectArgs),
    /// Estimate the ELBO of a posterior under a model.
    Elbo(ElboArgs),
    /// Compare analytic gradients with finite differences.
    CheckGrad(CheckGradArgs),
    /// Reproduce the four-panel two-dimensional Gaussian demonstration.
    #[command(name = "demo-figure1")]
    DemoFigure1(DemoArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Built-in model name (`figure1`) or a model spec JSON file.
    #[arg(long)]
    pub model: String,
    /// Vine JSON file, `auto` or `independence`.
    #[arg(long, default_value = "auto")]
    pub vine: String,
    /// Samples used by `--vine auto` to select the structure.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Candidate families for `--vine auto`.
    #[arg(long, default_value = "all16")]
    pub families: String,
    /// Number of vine trees kept by `--vine auto`.
    #[arg(long)]
    pub truncation: Option<usize>,
    /// Optimizer configuration JSON; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-phase trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Posterior JSON.
    #[arg(long)]
    pub dist: PathBuf,
    #[arg(short = 'n', long = "n", default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the copula uniforms.
    #[arg(long)]
    pub with_uniforms: bool,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long, default_value = "all16")]
    pub families: String,
    #[arg(long)]
    pub truncation: Option<usize>,
    /// Selection options JSON.
    #[arg(long)]
    pub options: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ElboArgs {
    #[arg(long)]
    pub dist: PathBuf,
    #[arg(long)]
    pub model: String,
    #[arg(short = 'm', long = "m", default_value_t = 100_000)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckTarget {
    Model,
    Reparam,
    All,
}

#[derive(Debug, Args)]
pub struct CheckGradArgs {
    #[arg(long)]
    pub dist: PathBuf,
    #[arg(long)]
    pub model: String,
    #[arg(long, value_enum, default_value_t = CheckTarget::All)]
    pub check: CheckTarget,
    #[arg(short = 'm', long = "m", default_value_t = 4096)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest admissible relative error.
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Correlation of the target.
    #[arg(long, default_value_t = 0.8)]
    pub rho: f64,
    /// Grid points per axis.
    #[arg(long, default_value_t = 121)]
    pub grid: usize,
    /// The grid covers `[-range, range]` on both axes.
    #[arg(long, default_value_t = 4.0)]
    pub range: f64,
    /// Optimizer configuration JSON; the phase budget is fixed at four.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}
