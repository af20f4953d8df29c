//! `panelalts` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 bad input or failed run,
//! 3 solver node/time budget exhausted.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use panelalts::deviation::DeviationKind;
use panelalts::evaluate::{
    Algorithm, CONVERGENCE_EVAL_SAMPLES, CONVERGENCE_SEEDS, DEFAULT_EVAL_SAMPLES, ROBUSTNESS_BUDGET, ROBUSTNESS_REPS,
};
use panelalts::extensions::Variant;
use panelalts::select::{ReplacementPolicy, DEFAULT_SAMPLES};

pub mod args;
mod commands;
pub mod output;

use args::{Grid, List, RationalList, SolverSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "panelalts",
    version,
    about = "Choose alternates for sortition panels under dropout"
)]
pub struct Cli {
    /// More log output on standard error (repeatable).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit the dropout model to an outcome history.
    Fit(FitArgs),
    /// Choose an alternate set.
    Select(SelectArgs),
    /// Estimate the loss of a given alternate set.
    Evaluate(EvaluateArgs),
    /// Every algorithm at every budget on shared evaluation samples.
    Benchmark(BenchmarkArgs),
    /// Loss under perturbed dropout probabilities.
    Robustness(RobustnessArgs),
    /// Loss as a function of the number of training samples.
    Converge(ConvergeArgs),
    /// Generate a synthetic instance, its probabilities and dropout model.
    Synth(SynthArgs),
    /// Build an instance from a quota file and an agent CSV.
    Import(ImportArgs),
    /// Solve a CPLEX LP file and write a `name value` solution.
    SolveLp(SolveLpArgs),
    /// Extended problems: alternate dropouts, pre-emptive extras, joint panel selection.
    Extend(ExtendArgs),
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Instance JSON (schema, quotas, budget, panel, pool).
    #[arg(long)]
    pub instance: PathBuf,
    /// Panel dropout probabilities: JSON object from panel id to a number or "p/q".
    #[arg(long)]
    pub probs: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EngineKind {
    /// Exact combinatorial search.
    Search,
    /// Integer programs on the chosen solver.
    Ilp,
}

#[derive(Args, Debug, Clone)]
pub struct SolveArgs {
    /// Replacement policy: capped (at most one replacement per dropout) or uncapped.
    #[arg(long, default_value = "capped")]
    pub policy: ReplacementPolicy,
    /// Optimization engine [default: ilp with an external solver, search otherwise].
    #[arg(long, value_enum)]
    pub engine: Option<EngineKind>,
    /// `builtin`, or `external:<command>` where the command contains {lp} and {sol}.
    #[arg(long, default_value = "builtin")]
    pub solver: SolverSpec,
    /// Node budget for the search or built-in solver.
    #[arg(long)]
    pub node_limit: Option<u64>,
    /// Time budget in seconds for the search or built-in solver.
    #[arg(long)]
    pub time_limit: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct ReportOut {
    /// CSV report [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the full report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Also write long-format plot data as CSV.
    #[arg(long)]
    pub emit_plot_data: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Outcome CSV: id,role,<features...>,dropped.
    #[arg(long)]
    pub history: PathBuf,
    /// Instance whose schema to use; also enables --probs-out.
    #[arg(long, required_unless_present = "quotas", conflicts_with = "quotas")]
    pub instance: Option<PathBuf>,
    /// Quota JSON whose features define the schema.
    #[arg(long)]
    pub quotas: Option<PathBuf>,
    /// Model JSON [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write predicted probabilities of the instance's panel.
    #[arg(long, requires = "instance")]
    pub probs_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// erm-l1, erm-01, erm-eq, greedy, quota-based, empty or full-pool.
    #[arg(long, default_value = "erm-l1")]
    pub algo: Algorithm,
    /// Number of alternates [default: the instance's budget].
    #[arg(long)]
    pub a: Option<usize>,
    /// Training scenarios.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub s: usize,
    #[arg(long, required = true)]
    pub seed: u64,
    /// Deviation used to score the non-ERM algorithms.
    #[arg(long, default_value = "linear")]
    pub dev: DeviationKind,
    /// Allow ERM to choose fewer than a alternates.
    #[arg(long)]
    pub at_most: bool,
    #[command(flatten)]
    pub solve: SolveArgs,
    /// Result JSON [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Result JSON from `select`, or a comma list of pool ids.
    #[arg(long)]
    pub alternates: String,
    /// Budget index of the evaluation sample [default: the instance's budget].
    #[arg(long)]
    pub a: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_EVAL_SAMPLES)]
    pub eval_samples: usize,
    #[arg(long, required = true)]
    pub seed: u64,
    /// Enumerate every dropout set instead of sampling.
    #[arg(long)]
    pub exact: bool,
    #[arg(long, default_value = "linear")]
    pub dev: DeviationKind,
    #[arg(long, default_value = "capped")]
    pub policy: ReplacementPolicy,
    /// Comma list of panel ids that actually dropped out.
    #[arg(long)]
    pub realized: Option<String>,
    /// Dropout model for the calibration table [default: --probs].
    #[arg(long, requires = "realized")]
    pub model: Option<PathBuf>,
    /// Result JSON [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Budgets: lo:hi:step or a comma list.
    #[arg(long, default_value = "2:12:2")]
    pub budgets: Grid,
    /// Comma list of algorithms [default: all].
    #[arg(long)]
    pub algos: Option<List<Algorithm>>,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub s: usize,
    #[arg(long, default_value_t = DEFAULT_EVAL_SAMPLES)]
    pub eval_samples: usize,
    /// Deviation every algorithm is scored by.
    #[arg(long, default_value = "linear")]
    pub dev: DeviationKind,
    #[arg(long, required = true)]
    pub seed: u64,
    #[command(flatten)]
    pub solve: SolveArgs,
    #[command(flatten)]
    pub report: ReportOut,
}

#[derive(Args, Debug)]
pub struct RobustnessArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Prediction errors, decimals or p/q.
    #[arg(long, default_value = "0,0.05,0.1,0.15,0.2,0.25,0.3")]
    pub gammas: RationalList,
    #[arg(long, default_value_t = ROBUSTNESS_REPS)]
    pub reps: usize,
    #[arg(long, default_value_t = ROBUSTNESS_BUDGET)]
    pub a: usize,
    /// Comma list of algorithms [default: all].
    #[arg(long)]
    pub algos: Option<List<Algorithm>>,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub s: usize,
    #[arg(long, default_value_t = DEFAULT_EVAL_SAMPLES)]
    pub eval_samples: usize,
    #[arg(long, default_value = "linear")]
    pub dev: DeviationKind,
    #[arg(long, required = true)]
    pub seed: u64,
    #[command(flatten)]
    pub solve: SolveArgs,
    #[command(flatten)]
    pub report: ReportOut,
}

#[derive(Args, Debug)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Training deviations to compare.
    #[arg(long, default_value = "linear,binary")]
    pub devs: List<DeviationKind>,
    /// Training sample sizes: lo:hi:*factor, lo:hi:step or a comma list.
    #[arg(long, default_value = "8:512:*2")]
    pub s_grid: Grid,
    #[arg(long, default_value_t = CONVERGENCE_SEEDS)]
    pub seeds: usize,
    #[arg(long, default_value_t = CONVERGENCE_EVAL_SAMPLES)]
    pub eval_samples: usize,
    /// Number of alternates [default: the instance's budget].
    #[arg(long)]
    pub a: Option<usize>,
    #[arg(long, required = true)]
    pub seed: u64,
    #[command(flatten)]
    pub solve: SolveArgs,
    #[command(flatten)]
    pub report: ReportOut,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Pool size [default: 60].
    #[arg(long)]
    pub n: Option<usize>,
    /// Panel size [default: 20].
    #[arg(long)]
    pub k: Option<usize>,
    /// Budget [default: 6].
    #[arg(long)]
    pub a: Option<usize>,
    /// Values per feature [default: 2,3,2].
    #[arg(long)]
    pub values: Option<List<usize>>,
    /// Quota slack as a fraction of each target [default: 0.2].
    #[arg(long)]
    pub tightness: Option<f64>,
    /// Baseline dropout probability [default: 0.2].
    #[arg(long)]
    pub rho_base: Option<f64>,
    /// Log-spread of the per-value factors [default: 1.2].
    #[arg(long)]
    pub rho_spread: Option<f64>,
    /// Cap on any probability [default: 0.9].
    #[arg(long)]
    pub rho_max: Option<f64>,
    #[arg(long, required = true)]
    pub seed: u64,
    /// Instance JSON [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub probs_out: Option<PathBuf>,
    /// Ground-truth dropout model JSON.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Panel and pool as CSV.
    #[arg(long)]
    pub agents_out: Option<PathBuf>,
    /// Outcome history CSV drawn from the model.
    #[arg(long, requires = "history_rows")]
    pub history_out: Option<PathBuf>,
    #[arg(long, requires = "history_out")]
    pub history_rows: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ImportArgs {
    /// Quota JSON: {feature: {value: {"min": l, "max": u}}}.
    #[arg(long)]
    pub quotas: PathBuf,
    /// Agent CSV: id,role,<features...>[,dropped] with role panel or pool.
    #[arg(long)]
    pub agents: PathBuf,
    #[arg(long)]
    pub a: usize,
    /// Reject rows with missing values instead of skipping them.
    #[arg(long)]
    pub strict: bool,
    /// Instance JSON [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SolveLpArgs {
    /// CPLEX LP file.
    #[arg(long)]
    pub lp: PathBuf,
    #[arg(long, default_value = "builtin")]
    pub solver: SolverSpec,
    #[arg(long)]
    pub node_limit: Option<u64>,
    /// Seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// Solution file [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExtendArgs {
    /// Instance JSON.
    #[arg(long)]
    pub instance: PathBuf,
    /// Panel dropout probabilities (needed by alts-drop and preempt).
    #[arg(long)]
    pub probs: Option<PathBuf>,
    /// alts-drop, preempt, panel-select or panel-and-alts.
    #[arg(long)]
    pub variant: Variant,
    /// Dropout probabilities of pool members, or of every candidate for the
    /// panel variants (panel ids may instead come from --probs).
    #[arg(long)]
    pub pool_probs: Option<PathBuf>,
    /// Upper bounds on extra panelists: {feature: {value: n}}, missing values 0.
    #[arg(long)]
    pub extra_upper: Option<PathBuf>,
    /// Seats on the chosen panel [default: the instance's panel size].
    #[arg(long)]
    pub panel_size: Option<usize>,
    /// Number of alternates [default: the instance's budget].
    #[arg(long)]
    pub a: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub s: usize,
    #[arg(long, required = true)]
    pub seed: u64,
    #[arg(long, default_value = "linear")]
    pub dev: DeviationKind,
    #[command(flatten)]
    pub solve: SolveArgs,
    /// Result JSON [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Data(String),
    Core(panelalts::Error),
    /// Output was written but the solver ran out of budget.
    Budget(String),
}

impl From<panelalts::Error> for CliError {
    fn from(e: panelalts::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<panelalts::DataError> for CliError {
    fn from(e: panelalts::DataError) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Budget(_) | CliError::Core(panelalts::Error::BudgetExceeded { .. }) => EXIT_BUDGET,
            _ => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Data(m) | CliError::Budget(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

/// Parses a full argument vector, program name first.
pub fn parse_args<I, T>(argv: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(argv)
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match parse_args(argv.clone()) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    let words: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::dispatch(&cli.command, &words) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("\nFor more information, try '--help'.");
            }
            e.exit_code()
        }
    }
}
