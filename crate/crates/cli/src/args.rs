use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;

use persuasion::abstraction::{Aggregation, Scoring, SelectionOptions};
use persuasion::mdp::{IterationLimits, DEFAULT_GAMMA, DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE};
use persuasion::simulation::Population;

fn parse_gamma(s: &str) -> Result<f64, String> {
    let g: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..1.0).contains(&g) {
        Ok(g)
    } else {
        Err(format!("gamma must be in [0, 1), got {g}"))
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a positive number, got {v}"))
    }
}

fn parse_level(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("level must be in (0, 1), got {v}"))
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct InputArgs {
    /// Sessions CSV.
    #[arg(long)]
    pub sessions: PathBuf,
    /// Profiles CSV with characteristics and involvement.
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Drop rejected rows instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct OutArgs {
    /// Directory for reports and artifacts.
    #[arg(long, env = "PERSUASION_OUT_DIR", default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SolverArgs {
    /// Discount factor.
    #[arg(long, default_value_t = DEFAULT_GAMMA, value_parser = parse_gamma)]
    pub gamma: f64,
    /// Sup-norm stopping tolerance for value iteration.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE, value_parser = parse_positive)]
    pub tolerance: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERATIONS)]
    pub max_iterations: usize,
}

impl SolverArgs {
    pub fn limits(&self) -> IterationLimits {
        IterationLimits {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringArg {
    Conditional,
    Marginal,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationArg {
    Mean,
    Max,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SelectArgs {
    /// Number of state features to select.
    #[arg(short, long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = ScoringArg::Conditional)]
    pub scoring: ScoringArg,
    #[arg(long, value_enum, default_value_t = AggregationArg::Mean)]
    pub aggregation: AggregationArg,
    /// Candidate answer columns (default: all eight).
    #[arg(long, value_delimiter = ',')]
    pub candidates: Vec<String>,
}

impl SelectArgs {
    pub fn options(&self, solver: &SolverArgs) -> SelectionOptions {
        SelectionOptions {
            k: self.k,
            gamma: solver.gamma,
            scoring: match self.scoring {
                ScoringArg::Conditional => Scoring::Conditional,
                ScoringArg::Marginal => Scoring::Marginal,
            },
            aggregation: match self.aggregation {
                AggregationArg::Mean => Aggregation::Mean,
                AggregationArg::Max => Aggregation::Max,
            },
            limits: solver.limits(),
        }
    }

    pub fn candidates(&self, answer_names: &[String]) -> Vec<String> {
        if self.candidates.is_empty() {
            answer_names.to_vec()
        } else {
            self.candidates.clone()
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub select: SelectArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorArg {
    OverallMean,
    PerAction,
    PerActionState,
    /// Characteristic state from pre-characteristics only.
    CharstatePre,
    /// Characteristic state from all characteristics including involvement.
    CharstateAll,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisArg {
    /// Mean reward per state.
    StateRewards,
    /// Reward-prediction L1 error per predictor.
    Reward,
    /// Next-state likelihood per approach.
    NextState,
    /// Similarity-weighting config search.
    Similarity,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CiArg {
    StudentT,
    Bootstrap,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingArg {
    Pooled,
    PerUser,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Use this feature set instead of selecting one.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[command(flatten)]
    pub select: SelectArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [AnalysisArg::StateRewards, AnalysisArg::Reward, AnalysisArg::NextState])]
    pub analyses: Vec<AnalysisArg>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [
        PredictorArg::OverallMean,
        PredictorArg::PerAction,
        PredictorArg::PerActionState,
        PredictorArg::CharstatePre,
        PredictorArg::CharstateAll,
    ])]
    pub predictors: Vec<PredictorArg>,
    /// Number of characteristics per characteristic state.
    #[arg(long, default_value_t = 3)]
    pub char_k: usize,
    /// TOML grid of `[[config]]` tables (default: built-in 40-config grid).
    #[arg(long)]
    pub similarity_grid: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CiArg::StudentT)]
    pub ci: CiArg,
    #[arg(long, default_value_t = persuasion::evaluation::DEFAULT_BOOTSTRAP_RESAMPLES)]
    pub resamples: usize,
    #[arg(long, default_value_t = persuasion::evaluation::DEFAULT_LEVEL, value_parser = parse_level)]
    pub level: f64,
    #[arg(long, value_enum, default_value_t = GroupingArg::Pooled)]
    pub grouping: GroupingArg,
    /// Seed for bootstrap resampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyArg {
    Optimal,
    Worst,
    Uniform,
}

impl PolicyArg {
    pub fn name(self) -> &'static str {
        match self {
            PolicyArg::Optimal => "optimal",
            PolicyArg::Worst => "worst",
            PolicyArg::Uniform => "uniform",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationArg {
    Uniform,
    Session1All,
    Session1LowReward,
}

impl From<PopulationArg> for Population {
    fn from(p: PopulationArg) -> Self {
        match p {
            PopulationArg::Uniform => Population::Uniform,
            PopulationArg::Session1All => Population::Session1All,
            PopulationArg::Session1LowReward => Population::Session1LowReward,
        }
    }
}

fn parse_horizon(s: &str) -> Result<usize, String> {
    let h: usize = s.parse().map_err(|e| format!("{e}"))?;
    if h >= 1 {
        Ok(h)
    } else {
        Err("horizon must be at least 1".into())
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateArgs {
    /// Directory holding `feature_set.json` and `model.json` (default: the output directory).
    #[arg(long)]
    pub fit_dir: Option<PathBuf>,
    /// Sessions CSV, needed for the session-1 populations.
    #[arg(long)]
    pub sessions: Option<PathBuf>,
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    #[arg(long)]
    pub lenient: bool,
    #[arg(long, default_value_t = 100, value_parser = parse_horizon)]
    pub horizon: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [PolicyArg::Optimal, PolicyArg::Worst, PolicyArg::Uniform])]
    pub policies: Vec<PolicyArg>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [PopulationArg::Uniform])]
    pub populations: Vec<PopulationArg>,
    /// Minimum transition probability shown in the graph (default: 1/|S|).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also run the agent-level Monte Carlo check with this many agents.
    #[arg(long)]
    pub agents: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE, value_parser = parse_positive)]
    pub tolerance: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERATIONS)]
    pub max_iterations: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SynthArgs {
    /// Number of binary state features.
    #[arg(long, default_value_t = 3)]
    pub state_bits: usize,
    #[arg(long, default_value_t = 5)]
    pub actions: usize,
    #[arg(long, default_value_t = 671)]
    pub users: usize,
    #[arg(long, default_value_t = 5)]
    pub sessions_per_user: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// TOML structure spec; replaces the structure flags below.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Informative bit as `BIT:GAP`, repeatable.
    #[arg(long = "informative")]
    pub informative: Vec<String>,
    #[arg(long)]
    pub base_spread: Option<f64>,
    #[arg(long)]
    pub min_q_gap: Option<f64>,
    #[arg(long)]
    pub reward_noise: Option<f64>,
    #[arg(long)]
    pub characteristics: Option<usize>,
    #[arg(long)]
    pub involvement_coverage: Option<f64>,
    /// Characteristic response as `NAME:EFFECT`.
    #[arg(long)]
    pub response: Option<String>,
    #[command(flatten)]
    pub out: OutArgs,
}
