use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "BREAKDOWN_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "breakdown", version, about = "Breakdown frontiers for treatment-effect conclusions")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Directory receiving the output files.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = ".")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate breakdown frontiers.
    Frontier(FrontierArgs),
    /// Estimate frontiers and lower confidence bands.
    Band(BandArgs),
    /// Monte Carlo coverage study on the simulation design.
    Mc(McArgs),
    /// Choose the bootstrap step size by the smoothed bootstrap.
    SelectEpsilon(SelectArgs),
    /// Leave-one-covariate-out propensity gaps.
    Diagnose(DiagnoseArgs),
    /// Draw a dataset from the simulation design.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "y")]
    pub outcome: String,
    #[arg(long, default_value = "x")]
    pub treatment: String,
    /// Covariate columns; each distinct tuple is a cell.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Quantile cut points applied to every covariate, e.g. `0.5`.
    #[arg(long, value_delimiter = ',')]
    pub coarsen: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClaimKind {
    Dte,
    Ate,
    JointAnd,
    JointOr,
}

#[derive(Debug, Clone, Args)]
pub struct ClaimArgs {
    #[arg(long, value_enum, default_value = "dte")]
    pub claim: ClaimKind,
    /// DTE threshold.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub z: f64,
    /// DTE probability levels; one frontier per value.
    #[arg(long = "p", value_delimiter = ',', default_value = "0.5")]
    pub p_lower: Vec<f64>,
    /// ATE thresholds; one frontier per value.
    #[arg(long, value_delimiter = ',', default_value = "0", allow_negative_numbers = true)]
    pub mu: Vec<f64>,
    /// Members of a joint claim, `;`-separated: `dte:<z>:<p>` or `ate:<mu>`.
    #[arg(long)]
    pub claims: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Equally spaced c-grid points.
    #[arg(long, default_value_t = 50)]
    pub grid_points: usize,
    /// Grid end as a fraction of the smallest propensity.
    #[arg(long, default_value_t = 0.9)]
    pub grid_frac: f64,
    /// Explicit c-grid; overrides the two options above.
    #[arg(long, value_delimiter = ',')]
    pub grid_values: Vec<f64>,
    /// Midpoint-rule cells for the rank-invariant term.
    #[arg(long, default_value_t = 2000)]
    pub u_cells: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Delta,
    Smoothed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SigmaArg {
    Constant,
    MinArea,
}

#[derive(Debug, Clone, Args)]
pub struct FrontierArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub claim: ClaimArgs,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BandArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub claim: ClaimArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Bootstrap replications.
    #[arg(long = "b", default_value_t = 1000)]
    pub b: usize,
    /// Step size as a multiple of N^(-1/2).
    #[arg(long, conflicts_with_all = ["epsilon", "select_epsilon"])]
    pub epsilon_ratio: Option<f64>,
    /// Step size in absolute terms.
    #[arg(long, conflicts_with = "select_epsilon")]
    pub epsilon: Option<f64>,
    /// Choose the step size by the smoothed bootstrap first.
    #[arg(long)]
    pub select_epsilon: bool,
    /// Candidate ratios for `--select-epsilon`.
    #[arg(long, value_delimiter = ',', requires = "select_epsilon")]
    pub ratios: Vec<f64>,
    #[arg(long, default_value_t = 500, requires = "select_epsilon")]
    pub b_outer: usize,
    #[arg(long, default_value_t = 200, requires = "select_epsilon")]
    pub b_inner: usize,
    #[arg(long, value_enum, default_value = "delta")]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value = "min-area")]
    pub sigma: SigmaArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fail instead of redrawing resamples that lose an arm in some cell.
    #[arg(long)]
    pub no_redraw: bool,
    /// Soft max/min and spline sharpness of the smoothed frontier.
    #[arg(long, default_value_t = 200.0)]
    pub kappa: f64,
    /// Norm exponent of the smoothed frontier's soft infimum.
    #[arg(long, default_value_t = 64.0)]
    pub p_norm: f64,
}

#[derive(Debug, Clone, Args)]
pub struct DgpArgs {
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub pi: f64,
    #[arg(long, default_value_t = 0.5)]
    pub p_treat: f64,
}

#[derive(Debug, Clone, Args)]
pub struct McArgs {
    #[command(flatten)]
    pub dgp: DgpArgs,
    #[arg(long = "n", default_value_t = 500)]
    pub n: usize,
    /// Simulated datasets.
    #[arg(long = "s", default_value_t = 200)]
    pub s: usize,
    #[arg(long = "b", default_value_t = 200)]
    pub b: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,4,6,8,10")]
    pub ratios: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,0.9")]
    pub p_lowers: Vec<f64>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub z: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 50)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 0.45)]
    pub grid_upper: f64,
    #[arg(long, value_enum, default_value = "min-area")]
    pub sigma: SigmaArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub claim: ClaimArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,4,6,8,10")]
    pub ratios: Vec<f64>,
    #[arg(long, default_value_t = 500)]
    pub b_outer: usize,
    #[arg(long, default_value_t = 200)]
    pub b_inner: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "min-area")]
    pub sigma: SigmaArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub dgp: DgpArgs,
    #[arg(long = "n", default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// File name inside the output directory.
    #[arg(long, default_value = "sample.csv")]
    pub file: String,
}
