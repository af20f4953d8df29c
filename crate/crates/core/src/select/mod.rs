//! Choosing alternates: the replacement step, empirical risk minimization over
//! sampled dropout scenarios, the two baselines and a brute-force oracle.

mod brute;
mod engine;
mod heuristics;
pub(crate) mod ilp;
pub(crate) mod search;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use milp::rational::to_fraction_string;
use milp::Backend;
use num_traits::Zero;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::deviation::{DeviationKind, Metric};
use crate::domain::Instance;
use crate::dropout::{build_empirical_distribution, equalize_probabilities, DropoutProbs, ScenarioDistribution};
use crate::error::{Error, Result};
use crate::Rational;

pub use brute::{brute_force_opt, BRUTE_MAX_SCENARIOS, BRUTE_MAX_SETS};
pub use heuristics::{greedy_alts, quota_based_alts};

use search::Context;

/// Default number of sampled scenarios.
pub const DEFAULT_SAMPLES: usize = 300;

/// Whether a replacement set may outgrow the dropout set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplacementPolicy {
    /// `|R| <= |D|`.
    #[default]
    Capped,
    /// Any subset of the alternates.
    Uncapped,
}

impl ReplacementPolicy {
    pub fn name(self) -> &'static str {
        match self {
            ReplacementPolicy::Capped => "capped",
            ReplacementPolicy::Uncapped => "uncapped",
        }
    }

    pub(crate) fn cap(self, dropped: usize) -> Option<usize> {
        match self {
            ReplacementPolicy::Capped => Some(dropped),
            ReplacementPolicy::Uncapped => None,
        }
    }
}

impl FromStr for ReplacementPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "capped" => Ok(ReplacementPolicy::Capped),
            "uncapped" => Ok(ReplacementPolicy::Uncapped),
            _ => Err(format!("unknown replacement policy `{s}` (capped|uncapped)")),
        }
    }
}

impl fmt::Display for ReplacementPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How the optimization problems get solved.
#[derive(Clone, Debug)]
pub enum Engine {
    /// Exact combinatorial search over pool types.
    Search {
        node_limit: Option<u64>,
        time_limit: Option<Duration>,
    },
    /// The integer programs, on the given backend.
    Ilp(Backend),
}

impl Default for Engine {
    fn default() -> Self {
        Engine::Search {
            node_limit: None,
            time_limit: None,
        }
    }
}

impl Engine {
    pub fn name(&self) -> &'static str {
        match self {
            Engine::Search { .. } => "search",
            Engine::Ilp(Backend::Builtin(_)) => "ilp-builtin",
            Engine::Ilp(Backend::External(_)) => "ilp-external",
        }
    }

    pub(crate) fn backend(&self) -> Backend {
        match self {
            Engine::Ilp(b) => b.clone(),
            Engine::Search { node_limit, time_limit } => Backend::Builtin(milp::SolverConfig {
                node_limit: *node_limit,
                time_limit: *time_limit,
                incumbent: None,
            }),
        }
    }
}

/// Pool indices, ascending, without duplicates.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct AlternateSet {
    members: Vec<usize>,
}

impl AlternateSet {
    pub fn new(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        Self { members }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Member ids, sorted.
    pub fn ids(&self, instance: &Instance) -> Vec<String> {
        let mut ids: Vec<String> = self.members.iter().map(|&i| instance.pool[i].id.clone()).collect();
        ids.sort();
        ids
    }

    /// Resolves pool ids. Unknown or repeated ids are errors.
    pub fn from_ids<S: AsRef<str>>(instance: &Instance, ids: &[S]) -> Result<Self> {
        let index = instance.pool_index();
        let mut members = Vec::with_capacity(ids.len());
        for id in ids {
            let id = id.as_ref();
            members.push(
                *index
                    .get(id)
                    .ok_or_else(|| Error::Input(format!("`{id}` is not in the pool")))?,
            );
        }
        let set = Self::new(members);
        if set.len() != ids.len() {
            return Err(Error::Input("alternate ids repeat".into()));
        }
        Ok(set)
    }

    pub fn full_pool(instance: &Instance) -> Self {
        Self::new((0..instance.n()).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Replacement {
    /// Pool indices, ascending.
    pub members: Vec<usize>,
    pub deviation: Rational,
}

/// The minimal-deviation replacement set drawn from `alternates` once the
/// panel indices `dropped` leave.
pub fn best_replacement(
    instance: &Instance,
    alternates: &AlternateSet,
    dropped: &[usize],
    metric: Metric,
    policy: ReplacementPolicy,
    engine: &Engine,
) -> Result<Replacement> {
    check_dropped(instance, dropped)?;
    let ctx = Context::new(instance, metric);
    let cap = policy.cap(dropped.len());
    match engine {
        Engine::Search { .. } if ctx.scale.is_some() => {
            let dist = ScenarioDistribution::point(dropped.to_vec());
            let ev = search::evaluate_fixed(&ctx, alternates.members(), &dist, policy);
            let deviation = search::weighted_objective(&ctx, &dist, &ev.scores);
            Ok(Replacement {
                members: ev.replacements.into_iter().next().unwrap_or_default(),
                deviation,
            })
        }
        _ => {
            let (members, deviation) =
                ilp::best_replacement_ilp(&ctx, alternates.members(), dropped, cap, &engine.backend())?;
            Ok(Replacement { members, deviation })
        }
    }
}

fn check_dropped(instance: &Instance, dropped: &[usize]) -> Result<()> {
    if let Some(&d) = dropped.iter().find(|&&d| d >= instance.k()) {
        return Err(Error::Input(format!("dropped index {d} is outside the panel")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioOutcome {
    pub dropped: Vec<usize>,
    pub weight: Rational,
    pub replacement: Vec<usize>,
    pub deviation: Rational,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub algorithm: String,
    pub config: Value,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub alternates: AlternateSet,
    /// Expected deviation over the distribution optimized against.
    pub objective: Rational,
    pub per_scenario: Vec<ScenarioOutcome>,
    pub provenance: Provenance,
    /// Search or solver nodes used.
    pub nodes: u64,
}

impl SelectionResult {
    pub fn to_json(&self, instance: &Instance) -> Value {
        let ids = |v: &[usize], pool: bool| -> Vec<String> {
            let mut out: Vec<String> = v
                .iter()
                .map(|&i| {
                    if pool {
                        instance.pool[i].id.clone()
                    } else {
                        instance.panel[i].id.clone()
                    }
                })
                .collect();
            out.sort();
            out
        };
        json!({
            "algorithm": self.provenance.algorithm,
            "alternates": self.alternates.ids(instance),
            "objective": to_fraction_string(&self.objective),
            "objective_decimal": milp::rational::to_f64(&self.objective),
            "nodes": self.nodes,
            "provenance": {"algorithm": self.provenance.algorithm, "config": self.provenance.config, "seed": self.provenance.seed},
            "per_scenario": self.per_scenario.iter().map(|s| json!({
                "dropped": ids(&s.dropped, false),
                "weight": to_fraction_string(&s.weight),
                "replacement": ids(&s.replacement, true),
                "deviation": to_fraction_string(&s.deviation),
            })).collect::<Vec<_>>(),
        })
    }
}

/// Settings shared by the optimizing selectors.
#[derive(Clone, Debug, Default)]
pub struct OptConfig {
    pub dev: DeviationKind,
    pub policy: ReplacementPolicy,
    pub engine: Engine,
    /// Allow fewer than `a` alternates.
    pub at_most: bool,
}

impl OptConfig {
    pub fn new(dev: DeviationKind, policy: ReplacementPolicy) -> Self {
        Self {
            dev,
            policy,
            ..Self::default()
        }
    }

    fn to_json(&self) -> Value {
        json!({
            "dev": self.dev.name(),
            "policy": self.policy.name(),
            "engine": self.engine.name(),
            "at_most": self.at_most,
        })
    }
}

/// Per-scenario optimal replacements and deviations of a fixed alternate set.
pub fn evaluate_alternates(
    instance: &Instance,
    alternates: &AlternateSet,
    dist: &ScenarioDistribution,
    metric: Metric,
    policy: ReplacementPolicy,
) -> Result<Vec<ScenarioOutcome>> {
    let ctx = Context::new(instance, metric);
    per_scenario(&ctx, alternates.members(), dist, policy, &Backend::default())
}

fn per_scenario(
    ctx: &Context,
    alternates: &[usize],
    dist: &ScenarioDistribution,
    policy: ReplacementPolicy,
    backend: &Backend,
) -> Result<Vec<ScenarioOutcome>> {
    for s in &dist.scenarios {
        check_dropped(ctx.inst, &s.dropped)?;
    }
    let scale = ctx.scale;
    let pairs: Vec<(Vec<usize>, Rational)> = match scale {
        Some(scale) => {
            let ev = search::evaluate_fixed(ctx, alternates, dist, policy);
            ev.replacements
                .into_iter()
                .zip(ev.scores)
                .map(|(r, s)| (r, Metric::unscale(s, scale)))
                .collect()
        }
        None => dist
            .scenarios
            .iter()
            .map(|s| ilp::best_replacement_ilp(ctx, alternates, &s.dropped, policy.cap(s.dropped.len()), backend))
            .collect::<Result<_>>()?,
    };
    Ok(dist
        .scenarios
        .iter()
        .zip(pairs)
        .map(|(s, (replacement, deviation))| ScenarioOutcome {
            dropped: s.dropped.clone(),
            weight: s.weight.clone(),
            replacement,
            deviation,
        })
        .collect())
}

pub fn expected_deviation(outcomes: &[ScenarioOutcome]) -> Rational {
    outcomes
        .iter()
        .fold(Rational::zero(), |acc, s| acc + &s.weight * &s.deviation)
}

/// Alternates minimizing expected deviation over `dist`.
pub fn opt_alts(instance: &Instance, dist: &ScenarioDistribution, config: &OptConfig) -> Result<SelectionResult> {
    if instance.budget > instance.n() {
        return Err(Error::Input(format!(
            "budget {} exceeds pool size {}",
            instance.budget,
            instance.n()
        )));
    }
    for s in &dist.scenarios {
        check_dropped(instance, &s.dropped)?;
    }
    let ctx = Context::new(instance, config.dev.metric());
    let (classes, denom) = search::classes(&ctx, dist, config.policy);
    let provenance = Provenance {
        algorithm: "opt".into(),
        config: config.to_json(),
        seed: None,
    };
    let backend = config.engine.backend();
    let (members, nodes) = match &config.engine {
        Engine::Search { node_limit, time_limit } if ctx.scale.is_some() => {
            let start = heuristics::frequency_greedy(&ctx, dist);
            let start_counts = ctx.type_counts(&start);
            match engine::solve(&ctx, &classes, start_counts, config.at_most, *node_limit, *time_limit) {
                Ok(out) => (ctx.members_from_counts(&out.counts), out.nodes),
                Err((counts, _)) => {
                    let members = ctx.members_from_counts(&counts);
                    let outcomes = per_scenario(&ctx, &members, dist, config.policy, &backend)?;
                    return Err(Error::BudgetExceeded {
                        incumbent: Some(AlternateSet::new(members).ids(instance)),
                        objective: Some(expected_deviation(&outcomes)),
                    });
                }
            }
        }
        Engine::Search { .. } => {
            log::warn!("upper quotas too irregular for exact search; solving the integer program instead");
            (ilp::opt_ilp(&ctx, &classes, &denom, config.at_most, &backend)?, 0)
        }
        Engine::Ilp(b) => (ilp::opt_ilp(&ctx, &classes, &denom, config.at_most, b)?, 0),
    };
    let per = per_scenario(&ctx, &members, dist, config.policy, &backend)?;
    Ok(SelectionResult {
        alternates: AlternateSet::new(members),
        objective: expected_deviation(&per),
        per_scenario: per,
        provenance,
        nodes,
    })
}

/// Samples `s` dropout scenarios from `probs` and optimizes against them.
pub fn erm_alts<R: Rng>(
    instance: &Instance,
    probs: &DropoutProbs,
    s: usize,
    rng: &mut R,
    config: &OptConfig,
) -> Result<SelectionResult> {
    if probs.len() != instance.k() {
        return Err(Error::Input(format!(
            "{} probabilities for a panel of {}",
            probs.len(),
            instance.k()
        )));
    }
    let dist = build_empirical_distribution(probs, s, rng)?;
    let mut out = opt_alts(instance, &dist, config)?;
    out.provenance.algorithm = format!("erm_alts_{}", config.dev.name());
    if let Value::Object(m) = &mut out.provenance.config {
        m.insert("samples".into(), json!(s));
    }
    Ok(out)
}

/// `erm_alts` after replacing every probability by their mean.
pub fn erm_alts_eq<R: Rng>(
    instance: &Instance,
    probs: &DropoutProbs,
    s: usize,
    rng: &mut R,
    config: &OptConfig,
) -> Result<SelectionResult> {
    let eq = equalize_probabilities(probs)?;
    let mut out = erm_alts(instance, &eq, s, rng, config)?;
    out.provenance.algorithm = format!("erm_alts_eq_{}", config.dev.name());
    if let Value::Object(m) = &mut out.provenance.config {
        m.insert(
            "equalized_probability".into(),
            json!(eq.exact().first().map(to_fraction_string)),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
