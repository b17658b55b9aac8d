use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "hardy-beta",
    version,
    about = "Numerical toolkit for weighted Hardy spaces"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Absolute tolerance for residuals and PSD verdicts
    #[arg(long, global = true, env = "HARDY_BETA_TOL", default_value_t = 1e-8)]
    pub tol: f64,
    /// Relative rank threshold for gramian inversion and Cholesky truncation
    #[arg(long, global = true, default_value_t = 1e-10)]
    pub rank_tol: f64,
    /// Highest colligation index built
    #[arg(long, global = true, default_value_t = 12)]
    pub k_max: usize,
    /// Length of the stored weight table
    #[arg(short = 'n', long, global = true, default_value_t = 256)]
    pub trunc: usize,
    /// Seed for randomized suites
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    /// Worker threads (defaults to all cores)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Write the result here instead of stdout
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

/// Weight selection; falls back to the operator file, then to β = 1.
#[derive(Args, Debug, Clone, Default)]
pub struct WeightArgs {
    /// β_α(k) = k!Γ(α)/Γ(α+k)
    #[arg(long, conflicts_with_all = ["beta", "betas"])]
    pub alpha: Option<f64>,
    /// 1 for the constant weight, n for β_n
    #[arg(long, conflicts_with = "betas")]
    pub beta: Option<f64>,
    /// Explicit β_0, β_1, ... (comma separated)
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub betas: Option<Vec<f64>>,
}

/// Operator source: a JSON file with "A" and "C" or "T", or a scalar T.
#[derive(Args, Debug, Clone, Default)]
pub struct OperatorArgs {
    /// Operator JSON file
    pub input: Option<PathBuf>,
    /// Scalar T as `re` or `re,im`
    #[arg(long, allow_hyphen_values = true, conflicts_with = "input")]
    pub t: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Weight table, reciprocal coefficients and Wiener verdict
    Weights {
        #[command(flatten)]
        weight: WeightArgs,
    },
    /// Classify an output pair (C, A)
    Analyze {
        #[command(flatten)]
        op: OperatorArgs,
        /// Index at which the stability limits are checked (at least k-max)
        #[arg(long, default_value_t = 64)]
        depth: usize,
        #[command(flatten)]
        weight: WeightArgs,
    },
    /// Characteristic function family of T
    Charfn {
        #[command(flatten)]
        op: OperatorArgs,
        /// Taylor order of the exported coefficients
        #[arg(long)]
        order: Option<usize>,
        #[command(flatten)]
        weight: WeightArgs,
    },
    /// Cholesky-built colligation family
    Colligate {
        #[command(flatten)]
        op: OperatorArgs,
        /// Also export Taylor coefficients to this order
        #[arg(long)]
        order: Option<usize>,
        #[command(flatten)]
        weight: WeightArgs,
    },
    /// Reproducing kernel values on a grid
    Kernels {
        #[command(flatten)]
        op: OperatorArgs,
        #[arg(long, value_enum, default_value_t = KindArg::Mperp)]
        kind: KindArg,
        /// Index k for skm and gap
        #[arg(long, default_value_t = 0)]
        k: usize,
        /// `default` or `r1,r2,...x<angles>`
        #[arg(long, default_value = "default")]
        grid: String,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[command(flatten)]
        weight: WeightArgs,
    },
    /// Simulate the time-varying system of the colligation family
    Simulate {
        #[command(flatten)]
        op: OperatorArgs,
        #[arg(long, default_value_t = 16)]
        steps: usize,
        /// Initial state as a JSON vector (default e_0)
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        /// JSON file with per-step input vectors (default zero)
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[command(flatten)]
        weight: WeightArgs,
    },
    /// Run the acceptance suite
    Verify {
        /// `all` or a comma separated list of criterion numbers
        #[arg(long, default_value = "all")]
        suite: String,
        /// Random trials per criterion
        #[arg(long)]
        trials: Option<usize>,
        /// Include wall-clock seconds in the report
        #[arg(long)]
        timings: bool,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum KindArg {
    Beta,
    Mperp,
    M,
    Skm,
    Gap,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}
