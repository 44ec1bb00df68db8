use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use matchdiag_core::infer::{Centering, Decision, Mode};
use matchdiag_core::matching::MatcherKind;
use matchdiag_core::metric::MetricForm;
use matchdiag_core::outcome::OutcomeSide;
use matchdiag_core::simulate::ClustererKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "matchdiag", version, about = "Clustering-based diagnostics for matched observational studies")]
pub struct Cli {
    /// Worker threads for restarts and replications (results do not depend on it).
    #[arg(long, global = true, env = "MATCHDIAG_JOBS")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Test the randomization assumption on a matched sample.
    Test(TestArgs),
    /// Residual sensitivity value and Γ-curve of the randomization test.
    Rsv(RsvArgs),
    /// Build matched pairs from an unmatched cohort.
    Match(MatchArgs),
    /// Monte Carlo study of matching quality and the randomization test.
    Simulate(SimulateArgs),
    /// McNemar outcome analysis with Γ-bounds next to the assumption test.
    Outcome(OutcomeArgs),
    /// Re-run the command recorded in a JSON report.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricArg {
    None,
    Diag,
    Full,
    Dform,
}

impl MetricArg {
    pub fn form(self) -> MetricForm {
        match self {
            MetricArg::None => MetricForm::Euclidean,
            MetricArg::Diag => MetricForm::Diagonal,
            MetricArg::Full => MetricForm::Full,
            MetricArg::Dform => MetricForm::Dform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionArg {
    Pvalue,
    Quantile,
}

impl DecisionArg {
    pub fn decision(self) -> Decision {
        match self {
            DecisionArg::Pvalue => Decision::PValue,
            DecisionArg::Quantile => Decision::Quantile,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenteringArg {
    /// Reflect about the null mean I/(K+1).
    Centered,
    /// Reflect about I/2 for every K.
    #[value(name = "paper")]
    #[serde(rename = "paper")]
    Midpoint,
}

impl CenteringArg {
    pub fn centering(self) -> Centering {
        match self {
            CenteringArg::Centered => Centering::Centered,
            CenteringArg::Midpoint => Centering::Midpoint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Exact,
    Asymptotic,
}

impl ModeArg {
    pub fn mode(self) -> Mode {
        match self {
            ModeArg::Exact => Mode::Exact,
            ModeArg::Asymptotic => Mode::Asymptotic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatcherArg {
    Maha,
    Pscore,
    Opt,
    Nn,
}

impl MatcherArg {
    pub fn kind(self) -> MatcherKind {
        match self {
            MatcherArg::Maha => MatcherKind::Maha,
            MatcherArg::Pscore => MatcherKind::Pscore,
            MatcherArg::Opt => MatcherKind::Opt,
            MatcherArg::Nn => MatcherKind::Nn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClustererArg {
    Vanilla,
    Metric,
    Both,
}

impl ClustererArg {
    pub fn kind(self) -> ClustererKind {
        match self {
            ClustererArg::Vanilla => ClustererKind::Vanilla,
            ClustererArg::Metric => ClustererKind::Metric,
            ClustererArg::Both => ClustererKind::Both,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideArg {
    Greater,
    Less,
}

impl SideArg {
    pub fn side(self) -> OutcomeSide {
        match self {
            SideArg::Greater => OutcomeSide::Greater,
            SideArg::Less => OutcomeSide::Less,
        }
    }
}

/// Where the JSON report goes; a text summary is printed otherwise.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct OutputArgs {
    /// Print the JSON report to stdout instead of the text summary.
    #[arg(long)]
    pub json: bool,
    /// Also write the JSON report to this file.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DiagnosticArgs {
    /// Matched-set CSV with `set_id`, `treated` and covariate columns.
    #[arg(short, long, value_name = "CSV", required_unless_present = "debug")]
    pub input: Option<PathBuf>,
    /// Covariate columns: names or `*` globs, comma separated (default: all).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    #[arg(long, value_enum, default_value_t = MetricArg::Diag)]
    pub metric: MetricArg,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Master seed (random when omitted; always printed).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value_t = DecisionArg::Pvalue)]
    pub decision: DecisionArg,
    #[arg(long, value_enum, default_value_t = CenteringArg::Centered)]
    pub two_sided_centering: CenteringArg,
    /// p-value flavour for the decision and the RSV.
    #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
    pub mode: ModeArg,
    /// Cluster raw covariates instead of standardized ones.
    #[arg(long)]
    pub no_standardize: bool,
    /// Enables debugging flags such as `--t-override`.
    #[arg(long)]
    pub debug: bool,
    /// Use this statistic instead of clustering (requires `--debug`).
    #[arg(long, requires = "debug")]
    pub t_override: Option<u64>,
    /// Number of matched sets when `--t-override` runs without an input file.
    #[arg(long, requires = "t_override")]
    pub num_sets: Option<u64>,
    #[arg(long, requires = "t_override", default_value_t = 1)]
    pub controls_per_set: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TestArgs {
    #[command(flatten)]
    pub diag: DiagnosticArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RsvArgs {
    #[command(flatten)]
    pub diag: DiagnosticArgs,
    /// Γ grid for the curve as `start:stop:step`.
    #[arg(long, default_value = "1:2:0.01")]
    pub gamma_grid: String,
    /// Write the Γ-curve as CSV (`gamma,p_exact,p_asymptotic`).
    #[arg(long, value_name = "CSV")]
    pub curve_out: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MatchArgs {
    /// Cohort CSV with `treated` and covariate columns.
    #[arg(short, long, value_name = "CSV")]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    #[arg(long, value_enum, default_value_t = MatcherArg::Opt)]
    pub matcher: MatcherArg,
    /// Propensity caliper in SDs of the estimated score.
    #[arg(long, default_value_t = 0.2)]
    pub caliper: f64,
    /// Rank-based Mahalanobis distance.
    #[arg(long)]
    pub robust: bool,
    /// Match controls to treated units when treated outnumber controls.
    #[arg(long)]
    pub swap_roles: bool,
    /// Matched-pair CSV output.
    #[arg(long, value_name = "CSV")]
    pub out: Option<PathBuf>,
    /// Balance table CSV output.
    #[arg(long, value_name = "CSV")]
    pub balance_out: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub d: usize,
    #[arg(long, default_value_t = 0.5)]
    pub c: f64,
    #[arg(long, value_enum, default_value_t = MatcherArg::Opt)]
    pub matcher: MatcherArg,
    #[arg(long, value_enum, default_value_t = ClustererArg::Both)]
    pub clusterer: ClustererArg,
    /// Metric learned by the metric clusterer.
    #[arg(long, value_enum, default_value_t = MetricArg::Diag)]
    pub metric: MetricArg,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = CenteringArg::Centered)]
    pub two_sided_centering: CenteringArg,
    #[arg(long)]
    pub no_standardize: bool,
    /// Sweep the factorial grid instead of a single cell; needs `--out-dir`.
    #[arg(long, requires = "out_dir")]
    pub grid: bool,
    #[arg(long, value_delimiter = ',', default_value = "1000,3000,5000")]
    pub grid_n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "10,30,50")]
    pub grid_d: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.5,0.7")]
    pub grid_c: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "pscore,maha,opt")]
    pub grid_matchers: Vec<MatcherArg>,
    /// Directory for per-cell JSON and roll-up CSVs of a grid sweep.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Cell report JSON (single-cell mode).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Per-replication records as JSON lines.
    #[arg(long, value_name = "FILE")]
    pub jsonl: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OutcomeArgs {
    #[command(flatten)]
    pub diag: DiagnosticArgs,
    #[arg(long, value_delimiter = ',', default_value = "1.0,1.02,1.04,1.06,1.08,1.10,1.20")]
    pub gammas: Vec<f64>,
    #[arg(long, value_enum, default_value_t = SideArg::Greater)]
    pub side: SideArg,
    /// Use this RSV instead of the one from the assumption test.
    #[arg(long)]
    pub rsv: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// JSON report whose manifest is replayed.
    pub manifest: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
}
