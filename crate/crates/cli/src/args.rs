use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "zmdp",
    version,
    about = "Partition-function planning and learning on tabular MDPs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a built-in environment as an MDP spec file.
    Env(EnvArgs),
    /// Solve for Z on a deterministic MDP; write log Z, the policy and values.
    Plan(PlanArgs),
    /// Averaged or variational Z on a stochastic MDP.
    PlanStochastic(PlanStochasticArgs),
    /// Learn Z(s, a) from simulated episodes.
    Learn(LearnArgs),
    /// Value iteration or Q-learning.
    Baseline(BaselineArgs),
    /// Brute-force Z by trajectory enumeration.
    Oracle(OracleArgs),
    /// Run a command over a parameter grid and aggregate the results.
    Sweep(SweepArgs),
}

/// `auto` or an explicit value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MuArg {
    Auto,
    Value(f64),
}

impl FromStr for MuArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(MuArg::Auto);
        }
        s.parse::<f64>()
            .map(MuArg::Value)
            .map_err(|_| format!("expected `auto` or a number, got `{s}`"))
    }
}

/// `key=value` environment parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyValue(pub String, pub f64);

impl FromStr for KeyValue {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got `{s}`"))?;
        let v = v
            .parse::<f64>()
            .map_err(|_| format!("`{k}` needs a numeric value, got `{v}`"))?;
        Ok(KeyValue(k.to_string(), v))
    }
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct Source {
    /// MDP spec file (JSON).
    #[arg(long)]
    pub mdp: Option<PathBuf>,
    /// Built-in environment: tree, chain, coin, fork, random.
    #[arg(long)]
    pub env: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    #[command(flatten)]
    pub source: Source,
    /// Environment parameter, repeatable (e.g. `--param n=5`).
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<KeyValue>,
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EnvArgs {
    /// Environment name; omit with `--list`.
    #[arg(long, required_unless_present = "list")]
    pub env: Option<String>,
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<KeyValue>,
    /// Print the catalog with parameter defaults instead.
    #[arg(long)]
    pub list: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ZArgs {
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Chemical potential; `auto` is -log(d) - 0.1.
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    pub mu: MuArg,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ValueArg {
    /// Central difference of log Z in beta.
    Fd,
    /// Policy evaluation of the induced policy.
    Analytic,
    None,
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub z: ZArgs,
    /// Solver from the registry: power or linear.
    #[arg(long, default_value = "power")]
    pub solver: String,
    #[arg(long, value_enum, default_value_t = ValueArg::Analytic)]
    pub value: ValueArg,
    #[arg(long, default_value_t = 1e-4)]
    pub fd_step: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Averaged,
    Variational,
}

#[derive(Debug, Clone, Args)]
pub struct PlanStochasticArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub z: ZArgs,
    #[arg(long, value_enum, default_value_t = VariantArg::Variational)]
    pub variant: VariantArg,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExploreArg {
    Proportional,
    Epsilon,
}

impl ExploreArg {
    pub fn name(self) -> &'static str {
        match self {
            ExploreArg::Proportional => "proportional",
            ExploreArg::Epsilon => "epsilon",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 20_000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0.5)]
    pub alpha0: f64,
    #[arg(long, default_value_t = 500.0)]
    pub alpha_decay: f64,
    #[arg(long, value_enum, default_value_t = ExploreArg::Proportional)]
    pub explore: ExploreArg,
    #[arg(long, default_value_t = 1.0)]
    pub epsilon_start: f64,
    #[arg(long, default_value_t = 0.05)]
    pub epsilon_end: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    pub mu: MuArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub eval_every: usize,
    /// Start state name; the first non-terminal state by default.
    #[arg(long)]
    pub start: Option<String>,
    /// Step cap per episode.
    #[arg(long, default_value_t = 10_000)]
    pub max_steps: usize,
}

#[derive(Debug, Clone, Args)]
pub struct LearnArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Fill the curve's error column against a planned Z(s, a) table.
    #[arg(long)]
    pub ref_planner: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgoArg {
    Vi,
    Qlearn,
}

impl AlgoArg {
    pub fn name(self) -> &'static str {
        match self {
            AlgoArg::Vi => "vi",
            AlgoArg::Qlearn => "qlearn",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, value_enum)]
    pub algo: AlgoArg,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
    /// Value-iteration tolerance.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
    /// Also write the Boltzmann policy over Q at this inverse temperature.
    #[arg(long)]
    pub boltzmann_beta: Option<f64>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Start state name.
    #[arg(long)]
    pub state: String,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    pub mu: MuArg,
    #[arg(long)]
    pub len_cap: usize,
    /// Weight trajectories by their likelihood (stochastic MDPs).
    #[arg(long)]
    pub likelihood: bool,
    /// Limit on expanded prefixes.
    #[arg(long, default_value_t = zmdp_core::oracle::DEFAULT_NODE_BUDGET)]
    pub budget: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Sweep configuration (JSON).
    pub config: PathBuf,
    /// Overrides the configuration's `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
