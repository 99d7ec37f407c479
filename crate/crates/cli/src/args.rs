use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pfcr_core::baselines::ScreenRule;
use pfcr_core::BasisSpec;

/// Likelihood-based dimension reduction for regression.
#[derive(Debug, Parser)]
#[command(name = "pfcr", version, about)]
pub struct Cli {
    /// Worker threads for fitting and simulation (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a reduction and write a model file.
    Fit(FitArgs),
    /// Sequential likelihood-ratio tests for the dimension.
    SelectDim(SelectArgs),
    /// Forward-mean predictions from a model file.
    Predict(PredictArgs),
    /// Compare reductions and coefficient estimators.
    Compare(CompareArgs),
    /// Simulate data or run the bias–variance study.
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Per-predictor heteroscedasticity diagnostic for X_j given Y.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Response column name or 0-based index (default: last column).
    #[arg(long)]
    pub response: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitKind {
    Extended,
    Pfc,
    Pc,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Response basis: poly:k or slices:h.
    #[arg(long, default_value = "poly:3")]
    pub basis: BasisSpec,
    /// Fit this dimension instead of selecting it.
    #[arg(long, conflicts_with = "alpha")]
    pub d: Option<usize>,
    /// Level of the sequential dimension tests (default 0.05).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum, default_value_t = FitKind::Extended)]
    pub kind: FitKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random starts added to the eigenvector seeds.
    #[arg(long, default_value_t = 10)]
    pub random_starts: usize,
    /// Model file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "poly:3")]
    pub basis: BasisSpec,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub random_starts: usize,
    /// Trail CSV (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model file written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Query CSV; a response column adds residuals and reduced coordinates.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub response: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Input CSV; omit to simulate from `--preset`.
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub response: Option<String>,
    /// Simulation preset with known truth (an inverse preset or half-aligned).
    #[arg(long)]
    pub preset: Option<String>,
    /// Sample size per simulated replication.
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    /// Comma-separated: pc, spca, spc, pfc, extended, ols, projected, pls.
    #[arg(long, default_value = "pc,extended")]
    pub methods: String,
    /// Comma-separated: angle, r2, coef_mse, pred_mse.
    #[arg(long, default_value = "angle,r2,coef_mse,pred_mse")]
    pub metric: String,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    /// PLS Krylov dimension (default: d).
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long, default_value = "thr:0.1")]
    pub screen: ScreenRule,
    /// Response basis (default: the preset's, else poly:3).
    #[arg(long)]
    pub basis: Option<BasisSpec>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SimulateCommand {
    /// Y = βᵀX + ε with X ~ N(0, Σ).
    Forward(SimArgs),
    /// X | y from the structured inverse model.
    Inverse(SimArgs),
    /// Coefficient error of projected OLS across fitted dimensions.
    BiasVariance(BiasVarianceArgs),
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub preset: String,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BiasVarianceArgs {
    #[arg(long, default_value = "low-rank")]
    pub preset: String,
    /// Comma-separated sample sizes.
    #[arg(long, default_value = "40,100")]
    pub n: String,
    /// Comma-separated fitted dimensions (default: 1..=p).
    #[arg(long)]
    pub d_fit: Option<String>,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
