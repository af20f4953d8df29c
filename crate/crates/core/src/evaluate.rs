//! Loss estimation and the experiment grids: budget benchmark, robustness to
//! prediction error, training sample size, and dropout calibration.
//!
//! Every grid cell derives its own random stream from the master seed (see
//! [`crate::rng`]), so cells run in parallel and merge in a fixed order.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use milp::rational::{to_f64, to_fraction_string};
use milp::Backend;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::deviation::{DeviationKind, Metric};
use crate::domain::{Agent, FeatureSchema, Instance};
use crate::dropout::{
    build_empirical_distribution, perturb_probabilities, DistributionKind, DropoutModel, DropoutProbs,
    ScenarioDistribution,
};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::select::{
    erm_alts, erm_alts_eq, evaluate_alternates, expected_deviation, greedy_alts, quota_based_alts, AlternateSet,
    Engine, OptConfig, Provenance, ReplacementPolicy, SelectionResult, DEFAULT_SAMPLES,
};
use crate::Rational;

pub const DEFAULT_EVAL_SAMPLES: usize = 300;
pub const CONVERGENCE_EVAL_SAMPLES: usize = 500;
pub const ROBUSTNESS_REPS: usize = 25;
pub const ROBUSTNESS_BUDGET: usize = 6;
pub const CONVERGENCE_SEEDS: usize = 20;

/// Stream index of the fixed evaluation sample in the sample-size study.
const CONVERGE_EVAL_INDEX: u64 = 0xff_ffff;

// ---------------------------------------------------------------------------
// Statistics.

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator) for sampled values;
    /// the weighted population deviation for exact distributions.
    pub stddev: f64,
    /// `stddev / sqrt(n)`; zero for exact distributions.
    pub stderr: f64,
    pub median: f64,
    pub n: usize,
}

impl Summary {
    /// Statistics of `values`, each repeated `count` times.
    pub fn of_counts(values: &[(f64, u64)]) -> Summary {
        let n: u64 = values.iter().map(|v| v.1).sum();
        if n == 0 {
            return Summary {
                mean: 0.0,
                stddev: 0.0,
                stderr: 0.0,
                median: 0.0,
                n: 0,
            };
        }
        let mean = values.iter().map(|&(x, m)| x * m as f64).sum::<f64>() / n as f64;
        let ss: f64 = values.iter().map(|&(x, m)| (x - mean).powi(2) * m as f64).sum();
        let stddev = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let nth = |i: u64| {
            let mut seen = 0;
            for &(x, m) in &sorted {
                seen += m;
                if i < seen {
                    return x;
                }
            }
            unreachable!("index below total count")
        };
        let median = if n % 2 == 1 {
            nth(n / 2)
        } else {
            (nth(n / 2 - 1) + nth(n / 2)) / 2.0
        };
        Summary {
            mean,
            stddev,
            stderr: stddev / (n as f64).sqrt(),
            median,
            n: n as usize,
        }
    }

    pub fn of(values: &[f64]) -> Summary {
        Summary::of_counts(&values.iter().map(|&x| (x, 1)).collect::<Vec<_>>())
    }

    /// Weighted statistics of an exact distribution.
    fn of_weights(values: &[(f64, f64)]) -> Summary {
        let mean: f64 = values.iter().map(|(x, w)| x * w).sum();
        let var: f64 = values.iter().map(|(x, w)| (x - mean).powi(2) * w).sum();
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        let median = sorted
            .iter()
            .find(|(_, w)| {
                acc += w;
                acc >= 0.5
            })
            .map_or(0.0, |v| v.0);
        Summary {
            mean,
            stddev: var.sqrt(),
            stderr: 0.0,
            median,
            n: values.len(),
        }
    }
}

/// Loss of one alternate set on one scenario distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct LossEstimate {
    pub mean: Rational,
    pub summary: Summary,
    /// Expected value of each auxiliary metric, each with its own optimal replacements.
    pub aux: Vec<(Metric, Rational)>,
    /// Per-scenario deviation and weight.
    pub raw: Vec<(Rational, Rational)>,
    pub kind: DistributionKind,
}

impl LossEstimate {
    fn summarize(raw: &[(Rational, Rational)], kind: DistributionKind) -> Summary {
        match kind {
            DistributionKind::Empirical { samples, .. } => {
                let s = Rational::from_integer((samples as i64).into());
                let counts: Vec<(f64, u64)> = raw
                    .iter()
                    .map(|(x, w)| (to_f64(x), (w * &s).to_integer().to_u64().expect("non-negative count")))
                    .collect();
                Summary::of_counts(&counts)
            }
            DistributionKind::Exact => {
                Summary::of_weights(&raw.iter().map(|(x, w)| (to_f64(x), to_f64(w))).collect::<Vec<_>>())
            }
        }
    }

    pub fn aux_mean(&self, m: Metric) -> Option<&Rational> {
        self.aux.iter().find(|a| a.0 == m).map(|a| &a.1)
    }
}

/// Loss of `alternates` on `dist`, plus the auxiliary metrics.
pub fn loss_on_distribution(
    instance: &Instance,
    alternates: &AlternateSet,
    dist: &ScenarioDistribution,
    dev: DeviationKind,
    policy: ReplacementPolicy,
) -> Result<LossEstimate> {
    let outcomes = evaluate_alternates(instance, alternates, dist, dev.metric(), policy)?;
    let mean = expected_deviation(&outcomes);
    let raw: Vec<(Rational, Rational)> = outcomes.into_iter().map(|o| (o.deviation, o.weight)).collect();
    let aux = Metric::AUX
        .iter()
        .map(|&m| {
            Ok((
                m,
                expected_deviation(&evaluate_alternates(instance, alternates, dist, m, policy)?),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LossEstimate {
        summary: LossEstimate::summarize(&raw, dist.kind),
        mean,
        aux,
        raw,
        kind: dist.kind,
    })
}

/// Loss over `eval_samples` fresh dropout draws from `rng`.
pub fn estimate_loss<R: rand::Rng>(
    alternates: &AlternateSet,
    instance: &Instance,
    probs: &DropoutProbs,
    dev: DeviationKind,
    policy: ReplacementPolicy,
    eval_samples: usize,
    rng: &mut R,
) -> Result<LossEstimate> {
    check_probs(instance, probs)?;
    let dist = build_empirical_distribution(probs, eval_samples, rng)?;
    loss_on_distribution(instance, alternates, &dist, dev, policy)
}

/// Exact expected deviation over every dropout set.
pub fn exact_loss(
    alternates: &AlternateSet,
    instance: &Instance,
    probs: &DropoutProbs,
    dev: DeviationKind,
    policy: ReplacementPolicy,
) -> Result<Rational> {
    check_probs(instance, probs)?;
    let dist = crate::dropout::enumerate_exact_distribution(probs)?;
    Ok(expected_deviation(&evaluate_alternates(
        instance,
        alternates,
        &dist,
        dev.metric(),
        policy,
    )?))
}

/// Deviation after the best replacement for one observed dropout set.
pub fn evaluate_realized(
    alternates: &AlternateSet,
    realized: &[usize],
    instance: &Instance,
    dev: DeviationKind,
    policy: ReplacementPolicy,
) -> Result<Rational> {
    let dist = ScenarioDistribution::point(realized.to_vec());
    Ok(expected_deviation(&evaluate_alternates(
        instance,
        alternates,
        &dist,
        dev.metric(),
        policy,
    )?))
}

fn check_probs(instance: &Instance, probs: &DropoutProbs) -> Result<()> {
    if probs.len() != instance.k() {
        return Err(Error::Input(format!(
            "{} probabilities for a panel of {}",
            probs.len(),
            instance.k()
        )));
    }
    Ok(())
}

/// Order-sensitive fingerprint of a scenario list.
pub fn scenario_hash(dist: &ScenarioDistribution) -> u64 {
    let mut h = DefaultHasher::new();
    for s in &dist.scenarios {
        s.dropped.hash(&mut h);
        s.weight.hash(&mut h);
    }
    h.finish()
}

// ---------------------------------------------------------------------------
// Algorithms.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    ErmL1,
    Erm01,
    ErmEq,
    Greedy,
    QuotaBased,
    Empty,
    FullPool,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::ErmL1,
        Algorithm::Erm01,
        Algorithm::ErmEq,
        Algorithm::Greedy,
        Algorithm::QuotaBased,
        Algorithm::Empty,
        Algorithm::FullPool,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ErmL1 => "erm_l1",
            Algorithm::Erm01 => "erm_01",
            Algorithm::ErmEq => "erm_eq",
            Algorithm::Greedy => "greedy",
            Algorithm::QuotaBased => "quota_based",
            Algorithm::Empty => "empty",
            Algorithm::FullPool => "full_pool",
        }
    }

    /// Ignores the dropout probabilities entirely (or uses only their mean).
    pub fn prediction_free(self) -> bool {
        matches!(
            self,
            Algorithm::ErmEq | Algorithm::QuotaBased | Algorithm::Empty | Algorithm::FullPool
        )
    }

    fn index(self) -> u64 {
        Algorithm::ALL.iter().position(|&a| a == self).expect("listed") as u64
    }
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .or(match key.as_str() {
                "erm" | "erm_linear" => Some(Algorithm::ErmL1),
                "erm_binary" => Some(Algorithm::Erm01),
                "quota" => Some(Algorithm::QuotaBased),
                "full" => Some(Algorithm::FullPool),
                _ => None,
            })
            .ok_or_else(|| {
                let names: Vec<&str> = Algorithm::ALL.iter().map(|a| a.name()).collect();
                format!("unknown algorithm `{s}` (one of {})", names.join(", "))
            })
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Settings shared by every cell of a grid.
#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub train_samples: usize,
    pub eval_samples: usize,
    /// Deviation used to score every algorithm.
    pub eval_dev: DeviationKind,
    pub policy: ReplacementPolicy,
    pub engine: Engine,
    /// Solver for Quota-Based.
    pub backend: Backend,
    /// Lets ERM variants choose fewer than `a` alternates.
    pub at_most: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            train_samples: DEFAULT_SAMPLES,
            eval_samples: DEFAULT_EVAL_SAMPLES,
            eval_dev: DeviationKind::Linear,
            policy: ReplacementPolicy::Capped,
            engine: Engine::default(),
            backend: Backend::default(),
            at_most: false,
        }
    }
}

impl SuiteConfig {
    fn to_json(&self) -> Value {
        json!({
            "train_samples": self.train_samples,
            "eval_samples": self.eval_samples,
            "eval_dev": self.eval_dev.name(),
            "policy": self.policy.name(),
            "engine": self.engine.name(),
            "at_most": self.at_most,
        })
    }
}

/// Runs one algorithm at budget `instance.budget`. ERM variants draw their
/// training scenarios from the `Train` stream for this algorithm and budget.
pub fn run_algorithm(
    algorithm: Algorithm,
    instance: &Instance,
    probs: &DropoutProbs,
    seed: u64,
    config: &SuiteConfig,
) -> Result<AlternateSet> {
    let a = instance.budget;
    let mut rng = stream(seed, Purpose::Train, algorithm.index(), a as u64);
    let opt = |dev| OptConfig {
        engine: config.engine.clone(),
        at_most: config.at_most,
        ..OptConfig::new(dev, config.policy)
    };
    Ok(match algorithm {
        Algorithm::ErmL1 => {
            erm_alts(
                instance,
                probs,
                config.train_samples,
                &mut rng,
                &opt(DeviationKind::Linear),
            )?
            .alternates
        }
        Algorithm::Erm01 => {
            erm_alts(
                instance,
                probs,
                config.train_samples,
                &mut rng,
                &opt(DeviationKind::Binary),
            )?
            .alternates
        }
        Algorithm::ErmEq => {
            erm_alts_eq(
                instance,
                probs,
                config.train_samples,
                &mut rng,
                &opt(DeviationKind::Linear),
            )?
            .alternates
        }
        Algorithm::Greedy => greedy_alts(instance, probs),
        Algorithm::QuotaBased => quota_based_alts(instance, &config.backend)?,
        Algorithm::Empty => AlternateSet::new(Vec::new()),
        Algorithm::FullPool => AlternateSet::full_pool(instance),
    })
}

/// Like [`run_algorithm`], with an objective for every algorithm. ERM variants
/// report their training objective. The others are scored on the same
/// training scenarios an ERM run would draw for them, under `eval_dev`.
pub fn select_algorithm(
    algorithm: Algorithm,
    instance: &Instance,
    probs: &DropoutProbs,
    seed: u64,
    config: &SuiteConfig,
) -> Result<SelectionResult> {
    let a = instance.budget;
    let mut rng = stream(seed, Purpose::Train, algorithm.index(), a as u64);
    let opt = |dev| OptConfig {
        engine: config.engine.clone(),
        at_most: config.at_most,
        ..OptConfig::new(dev, config.policy)
    };
    let mut out = match algorithm {
        Algorithm::ErmL1 => erm_alts(
            instance,
            probs,
            config.train_samples,
            &mut rng,
            &opt(DeviationKind::Linear),
        )?,
        Algorithm::Erm01 => erm_alts(
            instance,
            probs,
            config.train_samples,
            &mut rng,
            &opt(DeviationKind::Binary),
        )?,
        Algorithm::ErmEq => erm_alts_eq(
            instance,
            probs,
            config.train_samples,
            &mut rng,
            &opt(DeviationKind::Linear),
        )?,
        other => {
            let alternates = run_algorithm(other, instance, probs, seed, config)?;
            let dist = build_empirical_distribution(probs, config.train_samples, &mut rng)?;
            let per_scenario =
                evaluate_alternates(instance, &alternates, &dist, config.eval_dev.metric(), config.policy)?;
            SelectionResult {
                alternates,
                objective: expected_deviation(&per_scenario),
                per_scenario,
                provenance: Provenance {
                    algorithm: other.name().to_string(),
                    config: config.to_json(),
                    seed: None,
                },
                nodes: 0,
            }
        }
    };
    out.provenance.seed = Some(seed);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Reports.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportKind {
    Benchmark,
    Robustness,
    Convergence,
}

impl ReportKind {
    pub fn name(self) -> &'static str {
        match self {
            ReportKind::Benchmark => "benchmark",
            ReportKind::Robustness => "robustness",
            ReportKind::Convergence => "convergence",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellStats {
    pub summary: Summary,
    /// Exact mean when the cell is a single evaluation.
    pub mean_exact: Option<Rational>,
    pub aux: Vec<(Metric, f64)>,
    /// Values the summary was computed from: per-scenario deviations with
    /// their multiplicity, or one loss per repetition/seed with count 1.
    pub raw: Vec<(Rational, u64)>,
    /// Alternates chosen (ids); empty for cells aggregating several runs.
    pub alternates: Vec<String>,
    pub eval_hash: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub algorithm: String,
    pub budget: usize,
    pub gamma: Option<Rational>,
    pub train_samples: Option<usize>,
    pub outcome: std::result::Result<CellStats, String>,
}

impl ReportRow {
    pub fn stats(&self) -> Option<&CellStats> {
        self.outcome.as_ref().ok()
    }

    pub fn mean(&self) -> Option<f64> {
        self.stats().map(|s| s.summary.mean)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationRow {
    pub feature: String,
    pub value: String,
    pub expected: f64,
    pub actual: usize,
}

#[derive(Clone, Debug)]
pub struct EvaluationReport {
    pub kind: ReportKind,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    pub calibration: Vec<CalibrationRow>,
    pub config: Value,
}

const CSV_HEADER: [&str; 17] = [
    "algorithm",
    "budget",
    "gamma",
    "train_samples",
    "status",
    "loss_mean",
    "loss_stddev",
    "loss_stderr",
    "loss_median",
    "n",
    "dev_below",
    "max_norm_dev",
    "max_dev",
    "unrepresented",
    "seed",
    "eval_hash",
    "error",
];

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn gamma_str(g: &Option<Rational>) -> String {
    g.as_ref()
        .map(|g| milp::rational::to_decimal_string(g))
        .unwrap_or_default()
}

impl EvaluationReport {
    pub fn row(&self, algorithm: Algorithm, budget: usize) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.algorithm == algorithm.name() && r.budget == budget)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    /// One line per cell.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Input(format!("csv: {e}"));
        w.write_record(CSV_HEADER).map_err(io)?;
        for r in &self.rows {
            let mut rec = vec![
                r.algorithm.clone(),
                r.budget.to_string(),
                gamma_str(&r.gamma),
                opt_str(&r.train_samples),
            ];
            match &r.outcome {
                Ok(s) => {
                    let aux = |m: Metric| {
                        s.aux
                            .iter()
                            .find(|a| a.0 == m)
                            .map(|a| a.1.to_string())
                            .unwrap_or_default()
                    };
                    rec.extend([
                        "ok".into(),
                        s.mean_exact.as_ref().map_or(s.summary.mean, to_f64).to_string(),
                        s.summary.stddev.to_string(),
                        s.summary.stderr.to_string(),
                        s.summary.median.to_string(),
                        s.summary.n.to_string(),
                        aux(Metric::DevBelow),
                        aux(Metric::MaxNormDev),
                        aux(Metric::MaxDev),
                        aux(Metric::Unrepresented),
                        self.seed.to_string(),
                        format!("{:016x}", s.eval_hash),
                        String::new(),
                    ]);
                }
                Err(e) => {
                    rec.push("failed".into());
                    rec.extend(std::iter::repeat_n(String::new(), 9));
                    rec.extend([self.seed.to_string(), String::new(), e.clone()]);
                }
            }
            w.write_record(&rec).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Input(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Value {
        json!({
            "kind": self.kind.name(),
            "seed": self.seed,
            "config": self.config,
            "rows": self.rows.iter().map(|r| {
                let mut v = json!({
                    "algorithm": r.algorithm,
                    "budget": r.budget,
                    "gamma": r.gamma.as_ref().map(to_fraction_string),
                    "train_samples": r.train_samples,
                });
                match &r.outcome {
                    Ok(s) => {
                        v["status"] = json!("ok");
                        v["mean"] = json!(s.summary.mean);
                        v["mean_exact"] = json!(s.mean_exact.as_ref().map(to_fraction_string));
                        v["stddev"] = json!(s.summary.stddev);
                        v["stderr"] = json!(s.summary.stderr);
                        v["median"] = json!(s.summary.median);
                        v["n"] = json!(s.summary.n);
                        v["aux"] = Value::Object(s.aux.iter().map(|(m, x)| (m.name().to_string(), json!(x))).collect());
                        v["alternates"] = json!(s.alternates);
                        v["eval_hash"] = json!(format!("{:016x}", s.eval_hash));
                        v["raw"] = json!(s.raw.iter().map(|(x, m)| json!([to_fraction_string(x), m])).collect::<Vec<_>>());
                    }
                    Err(e) => {
                        v["status"] = json!("failed");
                        v["error"] = json!(e);
                    }
                }
                v
            }).collect::<Vec<_>>(),
            "calibration": self.calibration.iter().map(|c| json!({
                "feature": c.feature, "value": c.value, "expected": c.expected, "actual": c.actual,
            })).collect::<Vec<_>>(),
        })
    }

    /// Long format: one line per (x, algorithm) point of the matching figure.
    pub fn plot_data_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Input(format!("csv: {e}"));
        let x_name = match self.kind {
            ReportKind::Benchmark => "a",
            ReportKind::Robustness => "gamma",
            ReportKind::Convergence => "s",
        };
        w.write_record(["figure", "x_name", "x", "series", "metric", "value", "stderr"])
            .map_err(io)?;
        for r in &self.rows {
            let Ok(s) = &r.outcome else { continue };
            let x = match self.kind {
                ReportKind::Benchmark => r.budget.to_string(),
                ReportKind::Robustness => gamma_str(&r.gamma),
                ReportKind::Convergence => opt_str(&r.train_samples),
            };
            w.write_record([
                self.kind.name(),
                x_name,
                &x,
                &r.algorithm,
                "loss",
                &s.summary.mean.to_string(),
                &s.summary.stderr.to_string(),
            ])
            .map_err(io)?;
            for (m, v) in &s.aux {
                w.write_record([self.kind.name(), x_name, &x, &r.algorithm, m.name(), &v.to_string(), ""])
                    .map_err(io)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Input(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn single_cell(instance: &Instance, alternates: &AlternateSet, est: LossEstimate, eval_hash: u64) -> CellStats {
    let samples = match est.kind {
        DistributionKind::Empirical { samples, .. } => Rational::from_integer((samples as i64).into()),
        DistributionKind::Exact => Rational::from_integer(1.into()),
    };
    CellStats {
        summary: est.summary,
        mean_exact: Some(est.mean),
        aux: est.aux.iter().map(|(m, x)| (*m, to_f64(x))).collect(),
        raw: est
            .raw
            .iter()
            .map(|(x, w)| (x.clone(), (w * &samples).to_integer().to_u64().unwrap_or(0)))
            .collect(),
        alternates: alternates.ids(instance),
        eval_hash,
    }
}

/// Aggregates one loss per repetition (or seed).
fn aggregate(losses: &[LossEstimate], eval_hash: u64) -> CellStats {
    let vals: Vec<f64> = losses.iter().map(|l| to_f64(&l.mean)).collect();
    let n = losses.len().max(1) as f64;
    let aux = Metric::AUX
        .iter()
        .map(|&m| {
            (
                m,
                losses.iter().filter_map(|l| l.aux_mean(m)).map(to_f64).sum::<f64>() / n,
            )
        })
        .collect();
    CellStats {
        summary: Summary::of(&vals),
        mean_exact: None,
        aux,
        raw: losses.iter().map(|l| (l.mean.clone(), 1)).collect(),
        alternates: Vec::new(),
        eval_hash,
    }
}

fn check_budgets(instance: &Instance, budgets: &[usize]) -> Result<()> {
    if let Some(a) = budgets.iter().find(|&&a| a > instance.n()) {
        return Err(Error::Input(format!("budget {a} exceeds pool size {}", instance.n())));
    }
    Ok(())
}

/// The shared evaluation sample for grid cell `index` (the budget, in the
/// benchmark).
pub fn eval_distribution(probs: &DropoutProbs, samples: usize, seed: u64, index: u64) -> Result<ScenarioDistribution> {
    Ok(build_empirical_distribution(probs, samples, &mut stream(seed, Purpose::Eval, index, 0))?.with_seed(seed))
}

/// Every algorithm at every budget, scored on one shared evaluation sample per budget.
pub fn benchmark_suite(
    instance: &Instance,
    probs: &DropoutProbs,
    budgets: &[usize],
    algorithms: &[Algorithm],
    config: &SuiteConfig,
    seed: u64,
) -> Result<EvaluationReport> {
    check_probs(instance, probs)?;
    check_budgets(instance, budgets)?;
    let evals: Vec<ScenarioDistribution> = budgets
        .iter()
        .map(|&a| eval_distribution(probs, config.eval_samples, seed, a as u64))
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, Algorithm)> = (0..budgets.len())
        .flat_map(|b| algorithms.iter().map(move |&alg| (b, alg)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(b, alg)| {
            let inst = instance.with_budget(budgets[b]);
            let outcome = run_algorithm(alg, &inst, probs, seed, config)
                .and_then(|set| {
                    let est = loss_on_distribution(&inst, &set, &evals[b], config.eval_dev, config.policy)?;
                    Ok(single_cell(&inst, &set, est, scenario_hash(&evals[b])))
                })
                .map_err(|e| e.to_string());
            ReportRow {
                algorithm: alg.name().into(),
                budget: budgets[b],
                gamma: None,
                train_samples: None,
                outcome,
            }
        })
        .collect();
    Ok(EvaluationReport {
        kind: ReportKind::Benchmark,
        seed,
        rows,
        calibration: Vec::new(),
        config: json!({"suite": config.to_json(), "budgets": budgets}),
    })
}

/// For each gamma and repetition, selects under perturbed probabilities and
/// scores under the true ones. Prediction-free algorithms are run once.
#[allow(clippy::too_many_arguments)]
pub fn robustness_sweep(
    instance: &Instance,
    probs: &DropoutProbs,
    gammas: &[Rational],
    reps: usize,
    budget: usize,
    algorithms: &[Algorithm],
    config: &SuiteConfig,
    seed: u64,
) -> Result<EvaluationReport> {
    check_probs(instance, probs)?;
    check_budgets(instance, &[budget])?;
    if reps == 0 {
        return Err(Error::Input("at least one repetition is needed".into()));
    }
    if let Some(g) = gammas
        .iter()
        .find(|g| **g < Rational::zero() || **g > Rational::from_integer(1.into()))
    {
        return Err(Error::Input(format!("gamma {g} is outside [0, 1]")));
    }
    let inst = instance.with_budget(budget);
    let eval = eval_distribution(probs, config.eval_samples, seed, budget as u64)?;
    let hash = scenario_hash(&eval);
    let score = |p: &DropoutProbs, alg: Algorithm| -> Result<LossEstimate> {
        let set = run_algorithm(alg, &inst, p, seed, config)?;
        loss_on_distribution(&inst, &set, &eval, config.eval_dev, config.policy)
    };

    let flat: Vec<(Algorithm, std::result::Result<LossEstimate, String>)> = algorithms
        .par_iter()
        .filter(|a| a.prediction_free())
        .map(|&alg| (alg, score(probs, alg).map_err(|e| e.to_string())))
        .collect();

    let perturbed: Vec<Vec<DropoutProbs>> = gammas
        .iter()
        .enumerate()
        .map(|(gi, g)| {
            (0..reps)
                .map(|r| perturb_probabilities(probs, g, &mut stream(seed, Purpose::Perturb, gi as u64, r as u64)))
                .collect()
        })
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, Algorithm, usize)> = (0..gammas.len())
        .flat_map(|gi| {
            algorithms
                .iter()
                .filter(|a| !a.prediction_free())
                .flat_map(move |&alg| (0..reps).map(move |r| (gi, alg, r)))
        })
        .collect();
    let runs: Vec<std::result::Result<LossEstimate, String>> = cells
        .par_iter()
        .map(|&(gi, alg, r)| score(&perturbed[gi][r], alg).map_err(|e| e.to_string()))
        .collect();

    let mut rows = Vec::new();
    for (gi, g) in gammas.iter().enumerate() {
        for &alg in algorithms {
            let outcome = if alg.prediction_free() {
                let (_, res) = flat.iter().find(|f| f.0 == alg).expect("computed above");
                res.clone().map(|est| aggregate(&vec![est; reps], hash))
            } else {
                let mine: std::result::Result<Vec<LossEstimate>, String> = cells
                    .iter()
                    .zip(&runs)
                    .filter(|((cg, ca, _), _)| *cg == gi && *ca == alg)
                    .map(|(_, r)| r.clone())
                    .collect();
                mine.map(|ests| aggregate(&ests, hash))
            };
            rows.push(ReportRow {
                algorithm: alg.name().into(),
                budget,
                gamma: Some(g.clone()),
                train_samples: None,
                outcome,
            });
        }
    }
    Ok(EvaluationReport {
        kind: ReportKind::Robustness,
        seed,
        rows,
        calibration: Vec::new(),
        config: json!({
            "suite": config.to_json(),
            "gammas": gammas.iter().map(to_fraction_string).collect::<Vec<_>>(),
            "reps": reps,
            "budget": budget,
        }),
    })
}

/// ERM loss against training sample size, over `seeds` training seeds, all
/// scored on one fixed evaluation sample.
pub fn convergence_study(
    instance: &Instance,
    probs: &DropoutProbs,
    devs: &[DeviationKind],
    s_grid: &[usize],
    seeds: usize,
    config: &SuiteConfig,
    seed: u64,
) -> Result<EvaluationReport> {
    check_probs(instance, probs)?;
    if s_grid.is_empty() || s_grid.contains(&0) {
        return Err(Error::Input(
            "the sample-size grid must be non-empty and positive".into(),
        ));
    }
    if seeds == 0 {
        return Err(Error::Input("at least one training seed is needed".into()));
    }
    let eval = eval_distribution(probs, config.eval_samples, seed, CONVERGE_EVAL_INDEX)?;
    let hash = scenario_hash(&eval);
    let cells: Vec<(DeviationKind, usize, usize)> = devs
        .iter()
        .flat_map(|&d| (0..s_grid.len()).flat_map(move |si| (0..seeds).map(move |r| (d, si, r))))
        .collect();
    let runs: Vec<std::result::Result<LossEstimate, String>> = cells
        .par_iter()
        .map(|&(dev, si, r)| {
            let mut rng = stream(seed, Purpose::Converge, si as u64, r as u64);
            let opt = OptConfig {
                engine: config.engine.clone(),
                ..OptConfig::new(dev, config.policy)
            };
            erm_alts(instance, probs, s_grid[si], &mut rng, &opt)
                .and_then(|res| loss_on_distribution(instance, &res.alternates, &eval, dev, config.policy))
                .map_err(|e| e.to_string())
        })
        .collect();
    let mut rows = Vec::new();
    for &dev in devs {
        for (si, &s) in s_grid.iter().enumerate() {
            let mine: std::result::Result<Vec<LossEstimate>, String> = cells
                .iter()
                .zip(&runs)
                .filter(|((d, i, _), _)| *d == dev && *i == si)
                .map(|(_, r)| r.clone())
                .collect();
            rows.push(ReportRow {
                algorithm: format!("erm_alts_{}", dev.name()),
                budget: instance.budget,
                gamma: None,
                train_samples: Some(s),
                outcome: mine.map(|ests| aggregate(&ests, hash)),
            });
        }
    }
    Ok(EvaluationReport {
        kind: ReportKind::Convergence,
        seed,
        rows,
        calibration: Vec::new(),
        config: json!({
            "suite": config.to_json(),
            "devs": devs.iter().map(|d| d.name()).collect::<Vec<_>>(),
            "s_grid": s_grid,
            "seeds": seeds,
        }),
    })
}

/// Expected against actual dropouts per feature-value.
pub fn calibration_report(
    model: &DropoutModel,
    panel: &[Agent],
    schema: &FeatureSchema,
    realized: &[usize],
) -> Result<Vec<CalibrationRow>> {
    let (probs, _) = model.predict_panel(panel, schema)?;
    calibration_from_probs(&probs, panel, schema, realized)
}

/// Same as [`calibration_report`] from explicit probabilities.
pub fn calibration_from_probs(
    probs: &DropoutProbs,
    panel: &[Agent],
    schema: &FeatureSchema,
    realized: &[usize],
) -> Result<Vec<CalibrationRow>> {
    if probs.len() != panel.len() {
        return Err(Error::Input("probabilities must align with the panel".into()));
    }
    if let Some(i) = realized.iter().find(|&&i| i >= panel.len()) {
        return Err(Error::Input(format!("dropped index {i} is not on the panel")));
    }
    let mut rows: Vec<CalibrationRow> = (0..schema.num_fv())
        .map(|j| {
            let (f, v) = schema.fv_label(j);
            CalibrationRow {
                feature: f.into(),
                value: v.into(),
                expected: 0.0,
                actual: 0,
            }
        })
        .collect();
    for (i, a) in panel.iter().enumerate() {
        for j in a.fvs(schema) {
            rows[j].expected += probs.as_f64()[i];
            rows[j].actual += usize::from(realized.contains(&i));
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests;
