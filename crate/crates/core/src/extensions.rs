//! Variants of the selection problem: alternates who may drop out themselves,
//! extra panelists added up front, choosing a robust panel, and choosing a
//! panel and alternates together.
//!
//! Each variant has two engines. `Engine::Search` enumerates candidate sets
//! (guarded by [`EXT_MAX_CANDIDATES`]) and scores each with the exact
//! replacement search; `Engine::Ilp` builds the integer program. Solutions
//! from either engine are re-scored scenario by scenario before returning.

use std::collections::{BTreeMap, HashMap};

use milp::rational::{int, ratio, to_fraction_string};
use milp::{Backend, Cmp, Model, Solution, Status, VarId};
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::Rng;
use serde_json::{json, Value};

use crate::deviation::{counts_of, Metric};
use crate::domain::{Agent, FeatureSchema, Instance, Quotas};
use crate::dropout::{sample_dropout_set, DropoutProbs, ScenarioDistribution};
use crate::error::{Error, Result};
use crate::select::search::{replacement_among, Context, Scorer};
use crate::select::{Engine, OptConfig, Provenance, ReplacementPolicy};
use crate::Rational;

/// Largest number of candidate sets the enumeration engine will score.
pub const EXT_MAX_CANDIDATES: u128 = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    AltsDrop,
    Preempt,
    PanelSelect,
    PanelAndAlts,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::AltsDrop => "alts_drop",
            Variant::Preempt => "preempt",
            Variant::PanelSelect => "panel_select",
            Variant::PanelAndAlts => "panel_and_alts",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.replace('-', "_").as_str() {
            "alts_drop" => Ok(Variant::AltsDrop),
            "preempt" => Ok(Variant::Preempt),
            "panel_select" => Ok(Variant::PanelSelect),
            "panel_and_alts" => Ok(Variant::PanelAndAlts),
            _ => Err(format!(
                "unknown variant `{s}` (alts-drop|preempt|panel-select|panel-and-alts)"
            )),
        }
    }
}

/// One world: panel dropouts and pool dropouts drawn together.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairedScenario {
    pub panel: Vec<usize>,
    pub pool: Vec<usize>,
    pub weight: Rational,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedDistribution {
    pub scenarios: Vec<PairedScenario>,
}

impl PairedDistribution {
    /// Collapses repeated pairs; weight = multiplicity / number of draws.
    pub fn from_draws(draws: Vec<(Vec<usize>, Vec<usize>)>) -> Self {
        let s = draws.len() as i64;
        let mut tally: BTreeMap<(Vec<usize>, Vec<usize>), i64> = BTreeMap::new();
        for (mut d, mut e) in draws {
            d.sort_unstable();
            e.sort_unstable();
            *tally.entry((d, e)).or_default() += 1;
        }
        Self {
            scenarios: tally
                .into_iter()
                .map(|((panel, pool), m)| PairedScenario {
                    panel,
                    pool,
                    weight: ratio(m, s),
                })
                .collect(),
        }
    }

    /// Independent panel and pool dropouts.
    pub fn product(panel: &ScenarioDistribution, pool: &ScenarioDistribution) -> Self {
        let mut scenarios = Vec::with_capacity(panel.len() * pool.len());
        for a in &panel.scenarios {
            for b in &pool.scenarios {
                scenarios.push(PairedScenario {
                    panel: a.dropped.clone(),
                    pool: b.dropped.clone(),
                    weight: &a.weight * &b.weight,
                });
            }
        }
        Self { scenarios }
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }
}

/// `s` paired draws. Panel sets come from `panel_rng` exactly as `erm_alts`
/// would draw them; pool sets use their own generator.
pub fn sample_paired<R: Rng, S: Rng>(
    panel_probs: &DropoutProbs,
    pool_probs: &DropoutProbs,
    s: usize,
    panel_rng: &mut R,
    pool_rng: &mut S,
) -> Result<PairedDistribution> {
    if s == 0 {
        return Err(Error::Input("sample count must be at least 1".into()));
    }
    Ok(PairedDistribution::from_draws(
        (0..s)
            .map(|_| {
                (
                    sample_dropout_set(panel_probs, panel_rng),
                    sample_dropout_set(pool_probs, pool_rng),
                )
            })
            .collect(),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtOutcome {
    /// Dropped panelists: panel indices, or pool indices for the
    /// panel-choosing variants.
    pub panel_dropped: Vec<usize>,
    /// Dropped pool members (pool indices).
    pub pool_dropped: Vec<usize>,
    pub weight: Rational,
    /// Pool indices added to the panel in this scenario.
    pub replacement: Vec<usize>,
    pub deviation: Rational,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtensionResult {
    pub variant: Variant,
    /// Chosen panel (pool indices) for the panel-choosing variants.
    pub panel: Option<Vec<usize>>,
    /// Chosen alternates or extra panelists (pool indices).
    pub alternates: Vec<usize>,
    pub objective: Rational,
    pub per_scenario: Vec<ExtOutcome>,
    pub provenance: Provenance,
    pub candidates: u64,
}

impl ExtensionResult {
    /// `panel_agents` resolves `panel_dropped`; pool indices resolve against `pool`.
    pub fn to_json(&self, panel_agents: &[Agent], pool: &[Agent]) -> Value {
        let ids = |v: &[usize], agents: &[Agent]| -> Vec<String> {
            let mut out: Vec<String> = v.iter().map(|&i| agents[i].id.clone()).collect();
            out.sort();
            out
        };
        json!({
            "algorithm": self.provenance.algorithm,
            "variant": self.variant.name(),
            "panel": self.panel.as_ref().map(|p| ids(p, pool)),
            "alternates": ids(&self.alternates, pool),
            "objective": to_fraction_string(&self.objective),
            "objective_decimal": milp::rational::to_f64(&self.objective),
            "provenance": {"algorithm": self.provenance.algorithm, "config": self.provenance.config, "seed": self.provenance.seed},
            "per_scenario": self.per_scenario.iter().map(|s| json!({
                "panel_dropped": ids(&s.panel_dropped, panel_agents),
                "pool_dropped": ids(&s.pool_dropped, pool),
                "weight": to_fraction_string(&s.weight),
                "replacement": ids(&s.replacement, pool),
                "deviation": to_fraction_string(&s.deviation),
            })).collect::<Vec<_>>(),
        })
    }
}

/// Inputs of the panel-choosing variants. `pool` is everyone available;
/// `initial` optionally constrains the chosen panel before dropouts.
#[derive(Clone, Debug)]
pub struct PanelProblem {
    pub schema: FeatureSchema,
    pub quotas: Quotas,
    pub pool: Vec<Agent>,
    pub panel_size: usize,
    pub initial: Option<Quotas>,
}

impl PanelProblem {
    pub fn new(schema: FeatureSchema, quotas: Quotas, pool: Vec<Agent>, panel_size: usize) -> Self {
        Self {
            schema,
            quotas,
            pool,
            panel_size,
            initial: None,
        }
    }

    fn check(&self, extra: usize) -> Result<()> {
        if self.quotas.len() != self.schema.num_fv() {
            return Err(Error::Input("quotas do not match the schema".into()));
        }
        if let Some(q) = &self.initial {
            if q.len() != self.schema.num_fv() {
                return Err(Error::Input("initial quotas do not match the schema".into()));
            }
        }
        if self.pool.len() < self.panel_size + extra {
            return Err(Error::Input(format!(
                "pool of {} cannot supply a panel of {} plus {extra} alternates",
                self.pool.len(),
                self.panel_size
            )));
        }
        Ok(())
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Calls `f` on every `r`-subset of `items`, in lexicographic order.
fn for_each_combination(items: &[usize], r: usize, mut f: impl FnMut(&[usize])) {
    let n = items.len();
    if r > n {
        return;
    }
    let mut idx: Vec<usize> = (0..r).collect();
    let mut set: Vec<usize> = vec![0; r];
    loop {
        for (s, &i) in set.iter_mut().zip(&idx) {
            *s = items[i];
        }
        f(&set);
        let mut i = r;
        while i > 0 && idx[i - 1] == n - r + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..r {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn sorted_by_id(agents: &[Agent]) -> Vec<usize> {
    let mut v: Vec<usize> = (0..agents.len()).collect();
    v.sort_by(|&x, &y| agents[x].id.cmp(&agents[y].id));
    v
}

fn guard(candidates: u128) -> Result<()> {
    if candidates > EXT_MAX_CANDIDATES {
        return Err(Error::TooLarge(format!(
            "{candidates} candidate sets exceed the enumeration limit of {EXT_MAX_CANDIDATES}; use the ILP engine"
        )));
    }
    Ok(())
}

fn int_weights<'w>(weights: impl Iterator<Item = &'w Rational> + Clone) -> Vec<BigInt> {
    let denom = weights.clone().fold(BigInt::one(), |acc, w| acc.lcm(w.denom()));
    weights.map(|w| w.numer() * (&denom / w.denom())).collect()
}

struct ScoreTable {
    metric: Metric,
    scale: i128,
    thr: Vec<i64>,
}

impl ScoreTable {
    fn new(metric: Metric, quotas: &Quotas) -> Result<Self> {
        let scale = metric
            .scale(quotas)
            .ok_or_else(|| Error::TooLarge("the lcm of the upper quotas is too large for exact scoring".into()))?;
        Ok(Self {
            metric,
            scale,
            thr: (0..quotas.len()).map(|j| metric.threshold(quotas, j)).collect(),
        })
    }

    fn scorer<'q>(&'q self, quotas: &'q Quotas) -> Scorer<'q> {
        Scorer {
            metric: self.metric,
            quotas,
            scale: self.scale,
            thr: &self.thr,
        }
    }
}

fn dev_metric(config: &OptConfig) -> Metric {
    config.dev.metric()
}

fn cap_of(policy: ReplacementPolicy, dropped: usize) -> usize {
    policy.cap(dropped).unwrap_or(usize::MAX)
}

fn sub_counts(
    base: &mut [i64],
    agents: impl IntoIterator<Item = usize>,
    pool: &[Agent],
    schema: &FeatureSchema,
    sign: i64,
) {
    for i in agents {
        for j in pool[i].fvs(schema) {
            base[j] += sign;
        }
    }
}

/// Adds deviation rows for one scenario: `count_j = base_j + terms_j`.
#[allow(clippy::too_many_arguments)]
fn add_deviation(
    m: &mut Model,
    tag: &str,
    base: &[i64],
    terms: Vec<Vec<(VarId, Rational)>>,
    quotas: &Quotas,
    binary: bool,
    big_m: i64,
    weight: &Rational,
    objective: &mut Vec<(VarId, Rational)>,
) -> Result<()> {
    let mut flag = Vec::new();
    for (j, t) in terms.into_iter().enumerate() {
        let (l, u, b) = (quotas.lower[j], quotas.upper[j], base[j]);
        if t.is_empty() && b >= l && b <= u {
            continue;
        }
        let z = m.continuous(format!("z_{tag}_{j}"))?;
        let mut below = t.clone();
        below.push((z, int(1)));
        m.add_constraint(format!("below_{tag}_{j}"), below, Cmp::Ge, int(l - b))?;
        let mut above: Vec<_> = t.into_iter().map(|(v, c)| (v, -c)).collect();
        above.push((z, int(1)));
        m.add_constraint(format!("above_{tag}_{j}"), above, Cmp::Ge, int(b - u))?;
        if binary {
            flag.push((z, int(1)));
        } else {
            objective.push((z, weight / int(u)));
        }
    }
    if binary {
        let d = m.binary(format!("d_{tag}"))?;
        flag.push((d, int(-big_m)));
        m.add_constraint(format!("flag_{tag}"), flag, Cmp::Le, int(0))?;
        objective.push((d, weight.clone()));
    }
    Ok(())
}

fn solve_model(m: &Model, backend: &Backend) -> Result<Solution> {
    let sol = backend.solve(m)?;
    match sol.status {
        Status::Optimal => Ok(sol),
        Status::Infeasible => Err(Error::Infeasible("the program has no feasible solution".into())),
        Status::BudgetExceeded => Err(Error::BudgetExceeded {
            incumbent: None,
            objective: sol.objective,
        }),
    }
}

fn on(sol: &Solution, v: VarId) -> bool {
    sol.value(v) >= &ratio(1, 2)
}

fn binary_dev(metric: Metric) -> Result<bool> {
    match metric {
        Metric::Linear => Ok(false),
        Metric::Binary => Ok(true),
        other => Err(Error::Input(format!("cannot optimize for `{}`", other.name()))),
    }
}

fn total(outcomes: &[ExtOutcome]) -> Rational {
    outcomes
        .iter()
        .fold(Rational::zero(), |acc, s| acc + &s.weight * &s.deviation)
}

// ---------------------------------------------------------------------------
// Alternates who may drop out.

/// Per-scenario outcome of alternates `alternates`: replacements come from
/// the alternates who did not drop out.
pub fn evaluate_alts_drop(
    instance: &Instance,
    alternates: &[usize],
    dist: &PairedDistribution,
    metric: Metric,
    policy: ReplacementPolicy,
) -> Result<Vec<ExtOutcome>> {
    let ctx = Context::new(instance, metric);
    let table = ScoreTable::new(metric, &instance.quotas)?;
    let scorer = table.scorer(&instance.quotas);
    let mut alts: Vec<usize> = alternates.to_vec();
    alts.sort_by(|&x, &y| instance.pool[x].id.cmp(&instance.pool[y].id));
    dist.scenarios
        .iter()
        .map(|s| {
            check_indices(&s.panel, instance.k(), "panel")?;
            let base = ctx.base_counts(&s.panel);
            let avail: Vec<(usize, &Agent)> = alts
                .iter()
                .filter(|i| s.pool.binary_search(i).is_err())
                .map(|&i| (i, &instance.pool[i]))
                .collect();
            let (score, replacement) =
                replacement_among(&scorer, &instance.schema, &base, &avail, cap_of(policy, s.panel.len()));
            Ok(ExtOutcome {
                panel_dropped: s.panel.clone(),
                pool_dropped: s.pool.clone(),
                weight: s.weight.clone(),
                replacement,
                deviation: Metric::unscale(score, table.scale),
            })
        })
        .collect()
}

fn check_indices(v: &[usize], len: usize, what: &str) -> Result<()> {
    match v.iter().find(|&&i| i >= len) {
        Some(i) => Err(Error::Input(format!("{what} index {i} out of range"))),
        None => Ok(()),
    }
}

/// Alternates minimizing expected deviation when alternates may drop out too.
pub fn opt_alts_drop(instance: &Instance, dist: &PairedDistribution, config: &OptConfig) -> Result<ExtensionResult> {
    let (n, a) = (instance.n(), instance.budget);
    if a > n {
        return Err(Error::Input(format!("budget {a} exceeds pool size {n}")));
    }
    for s in &dist.scenarios {
        check_indices(&s.panel, instance.k(), "panel")?;
        check_indices(&s.pool, n, "pool")?;
    }
    let metric = dev_metric(config);
    let (members, candidates) = match &config.engine {
        Engine::Search { .. } => {
            let sizes: Vec<usize> = if config.at_most { (0..=a).collect() } else { vec![a] };
            guard(sizes.iter().map(|&r| binomial(n, r)).sum())?;
            let weights = int_weights(dist.scenarios.iter().map(|s| &s.weight));
            let order = sorted_by_id(&instance.pool);
            let mut best: Option<(BigInt, Vec<usize>)> = None;
            let mut count = 0u64;
            let ctx = Context::new(instance, metric);
            let table = ScoreTable::new(metric, &instance.quotas)?;
            let scorer = table.scorer(&instance.quotas);
            let bases: Vec<Vec<i64>> = dist.scenarios.iter().map(|s| ctx.base_counts(&s.panel)).collect();
            for r in sizes {
                for_each_combination(&order, r, |set| {
                    count += 1;
                    let mut acc = BigInt::zero();
                    for (si, s) in dist.scenarios.iter().enumerate() {
                        let avail: Vec<(usize, &Agent)> = set
                            .iter()
                            .filter(|i| s.pool.binary_search(i).is_err())
                            .map(|&i| (i, &instance.pool[i]))
                            .collect();
                        let (score, _) = replacement_among(
                            &scorer,
                            &instance.schema,
                            &bases[si],
                            &avail,
                            cap_of(config.policy, s.panel.len()),
                        );
                        acc += &weights[si] * BigInt::from(score);
                        if best.as_ref().is_some_and(|(b, _)| acc >= *b) {
                            return;
                        }
                    }
                    if best.as_ref().is_none_or(|(b, _)| acc < *b) {
                        best = Some((acc, set.to_vec()));
                    }
                });
            }
            (best.map(|b| b.1).unwrap_or_default(), count)
        }
        Engine::Ilp(backend) => (alts_drop_ilp(instance, dist, metric, config, backend)?, 0),
    };
    let per = evaluate_alts_drop(instance, &members, dist, metric, config.policy)?;
    let mut alternates = members;
    alternates.sort_unstable();
    Ok(ExtensionResult {
        variant: Variant::AltsDrop,
        panel: None,
        alternates,
        objective: total(&per),
        per_scenario: per,
        provenance: provenance("opt_alts_drop", config, json!({})),
        candidates,
    })
}

fn provenance(algorithm: &str, config: &OptConfig, extra: Value) -> Provenance {
    let mut c = json!({
        "dev": config.dev.name(),
        "policy": config.policy.name(),
        "engine": config.engine.name(),
        "at_most": config.at_most,
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut c, extra) {
        m.extend(e);
    }
    Provenance {
        algorithm: algorithm.into(),
        config: c,
        seed: None,
    }
}

fn alts_drop_ilp(
    instance: &Instance,
    dist: &PairedDistribution,
    metric: Metric,
    config: &OptConfig,
    backend: &Backend,
) -> Result<Vec<usize>> {
    let binary = binary_dev(metric)?;
    let ctx = Context::new(instance, metric);
    let n = instance.n();
    let nfv = instance.schema.num_fv();
    let mut m = Model::new();
    let xs: Vec<VarId> = (0..n).map(|i| m.binary(format!("x_{i}"))).collect::<Result<_, _>>()?;
    let size_cmp = if config.at_most { Cmp::Le } else { Cmp::Eq };
    m.add_constraint(
        "size",
        xs.iter().map(|&x| (x, int(1))).collect(),
        size_cmp,
        int(instance.budget as i64),
    )?;
    let big_m = ((instance.k() + instance.budget) * nfv) as i64;
    let mut objective = Vec::new();
    for (s, sc) in dist.scenarios.iter().enumerate() {
        let base = ctx.base_counts(&sc.panel);
        let mut terms: Vec<Vec<(VarId, Rational)>> = vec![Vec::new(); nfv];
        let mut ys = Vec::new();
        for t in ctx.useful_types(&base) {
            for &i in &ctx.types[t].members {
                // Dropped alternates cannot serve.
                if sc.pool.binary_search(&i).is_ok() {
                    continue;
                }
                let y = m.binary(format!("y_{i}_{s}"))?;
                m.add_constraint(
                    format!("pick_{i}_{s}"),
                    vec![(y, int(1)), (xs[i], int(-1))],
                    Cmp::Le,
                    int(0),
                )?;
                for &j in &ctx.types[t].fvs {
                    terms[j].push((y, int(1)));
                }
                ys.push(y);
            }
        }
        if let Some(cap) = config.policy.cap(sc.panel.len()) {
            if !ys.is_empty() {
                m.add_constraint(
                    format!("cap_{s}"),
                    ys.iter().map(|&y| (y, int(1))).collect(),
                    Cmp::Le,
                    int(cap as i64),
                )?;
            }
        }
        add_deviation(
            &mut m,
            &s.to_string(),
            &base,
            terms,
            &instance.quotas,
            binary,
            big_m,
            &sc.weight,
            &mut objective,
        )?;
    }
    m.set_objective(objective)?;
    let sol = solve_model(&m, backend)?;
    Ok((0..n).filter(|&i| on(&sol, xs[i])).collect())
}

/// Samples paired scenarios and optimizes against them.
#[allow(clippy::too_many_arguments)]
pub fn erm_alts_with_alt_dropouts<R: Rng, S: Rng>(
    instance: &Instance,
    panel_probs: &DropoutProbs,
    pool_probs: &DropoutProbs,
    s: usize,
    panel_rng: &mut R,
    pool_rng: &mut S,
    config: &OptConfig,
) -> Result<ExtensionResult> {
    if panel_probs.len() != instance.k() || pool_probs.len() != instance.n() {
        return Err(Error::Input(
            "probabilities must align with the panel and the pool".into(),
        ));
    }
    let dist = sample_paired(panel_probs, pool_probs, s, panel_rng, pool_rng)?;
    let mut out = opt_alts_drop(instance, &dist, config)?;
    out.provenance.algorithm = "erm_alts_drop".into();
    set_samples(&mut out.provenance, s);
    Ok(out)
}

fn set_samples(p: &mut Provenance, s: usize) {
    if let Value::Object(m) = &mut p.config {
        m.insert("samples".into(), json!(s));
    }
}

// ---------------------------------------------------------------------------
// Extra panelists chosen up front.

/// Per-scenario outcome of adding `extra` to every surviving panel.
pub fn evaluate_preempt(
    instance: &Instance,
    extra: &[usize],
    dist: &ScenarioDistribution,
    metric: Metric,
) -> Result<Vec<ExtOutcome>> {
    let ctx = Context::new(instance, metric);
    let mut sorted = extra.to_vec();
    sorted.sort_unstable();
    dist.scenarios
        .iter()
        .map(|s| {
            check_indices(&s.dropped, instance.k(), "panel")?;
            let mut c = ctx.base_counts(&s.dropped);
            sub_counts(&mut c, sorted.iter().copied(), &instance.pool, &instance.schema, 1);
            Ok(ExtOutcome {
                panel_dropped: s.dropped.clone(),
                pool_dropped: Vec::new(),
                weight: s.weight.clone(),
                replacement: sorted.clone(),
                deviation: metric.value(&c, &instance.quotas),
            })
        })
        .collect()
}

/// At most `a` extra panelists obeying `extra_upper`, minimizing expected
/// deviation of the surviving panel plus the extras.
pub fn opt_preempt(
    instance: &Instance,
    dist: &ScenarioDistribution,
    extra_upper: &[i64],
    config: &OptConfig,
) -> Result<ExtensionResult> {
    let nfv = instance.schema.num_fv();
    if extra_upper.len() != nfv || extra_upper.iter().any(|&u| u < 0) {
        return Err(Error::Input(format!(
            "extra upper quotas must give {nfv} non-negative bounds"
        )));
    }
    for s in &dist.scenarios {
        check_indices(&s.dropped, instance.k(), "panel")?;
    }
    let metric = dev_metric(config);
    let ctx = Context::new(instance, metric);
    let a = instance.budget.min(instance.n());
    let (members, candidates) = match &config.engine {
        Engine::Search { .. } => {
            let table = ScoreTable::new(metric, &instance.quotas)?;
            let weights = int_weights(dist.scenarios.iter().map(|s| &s.weight));
            let bases: Vec<Vec<i64>> = dist.scenarios.iter().map(|s| ctx.base_counts(&s.dropped)).collect();
            let mut walk = PreemptWalk {
                ctx: &ctx,
                table: &table,
                weights: &weights,
                bases: &bases,
                extra_upper,
                counts: vec![0; ctx.types.len()],
                added: vec![0; nfv],
                best: None,
                visited: 0,
            };
            walk.visit(0, a)?;
            let counts = walk.best.map(|b| b.1).unwrap_or_default();
            (ctx.members_from_counts(&counts), walk.visited)
        }
        Engine::Ilp(backend) => (preempt_ilp(instance, dist, extra_upper, metric, backend)?, 0),
    };
    let per = evaluate_preempt(instance, &members, dist, metric)?;
    Ok(ExtensionResult {
        variant: Variant::Preempt,
        panel: None,
        alternates: members,
        objective: total(&per),
        per_scenario: per,
        provenance: provenance("opt_preempt", config, json!({"extra_upper": extra_upper})),
        candidates,
    })
}

/// Enumerates type-count vectors of the extras.
struct PreemptWalk<'w, 'a> {
    ctx: &'w Context<'a>,
    table: &'w ScoreTable,
    weights: &'w [BigInt],
    bases: &'w [Vec<i64>],
    extra_upper: &'w [i64],
    counts: Vec<usize>,
    added: Vec<i64>,
    best: Option<(BigInt, Vec<usize>)>,
    visited: u64,
}

impl PreemptWalk<'_, '_> {
    fn visit(&mut self, t: usize, left: usize) -> Result<()> {
        if t == self.ctx.types.len() {
            self.visited += 1;
            guard(u128::from(self.visited))?;
            let q = &self.ctx.inst.quotas;
            let mut acc = BigInt::zero();
            for (b, w) in self.bases.iter().zip(self.weights) {
                let c: Vec<i64> = b.iter().zip(&self.added).map(|(x, y)| x + y).collect();
                acc += w * BigInt::from(self.table.metric.score(&c, q, self.table.scale));
                if self.best.as_ref().is_some_and(|(v, _)| acc >= *v) {
                    return Ok(());
                }
            }
            if self.best.as_ref().is_none_or(|(v, _)| acc < *v) {
                self.best = Some((acc, self.counts.clone()));
            }
            return Ok(());
        }
        let fvs = self.ctx.types[t].fvs.clone();
        let room = fvs
            .iter()
            .map(|&j| (self.extra_upper[j] - self.added[j]).max(0) as usize)
            .min()
            .unwrap_or(0);
        let hi = self.ctx.types[t].members.len().min(left).min(room);
        for c in 0..=hi {
            self.counts[t] = c;
            for &j in &fvs {
                self.added[j] += c as i64;
            }
            let r = self.visit(t + 1, left - c);
            for &j in &fvs {
                self.added[j] -= c as i64;
            }
            r?;
        }
        self.counts[t] = 0;
        Ok(())
    }
}

fn preempt_ilp(
    instance: &Instance,
    dist: &ScenarioDistribution,
    extra_upper: &[i64],
    metric: Metric,
    backend: &Backend,
) -> Result<Vec<usize>> {
    let binary = binary_dev(metric)?;
    let ctx = Context::new(instance, metric);
    let n = instance.n();
    let nfv = instance.schema.num_fv();
    let mut m = Model::new();
    let xs: Vec<VarId> = (0..n).map(|i| m.binary(format!("x_{i}"))).collect::<Result<_, _>>()?;
    m.add_constraint(
        "size",
        xs.iter().map(|&x| (x, int(1))).collect(),
        Cmp::Le,
        int(instance.budget as i64),
    )?;
    let mut by_fv: Vec<Vec<(VarId, Rational)>> = vec![Vec::new(); nfv];
    for (i, a) in instance.pool.iter().enumerate() {
        for j in a.fvs(&instance.schema) {
            by_fv[j].push((xs[i], int(1)));
        }
    }
    for (j, t) in by_fv.iter().enumerate() {
        if !t.is_empty() {
            m.add_constraint(format!("extra_{j}"), t.clone(), Cmp::Le, int(extra_upper[j]))?;
        }
    }
    let big_m = ((instance.k() + instance.budget) * nfv) as i64;
    let mut objective = Vec::new();
    for (s, sc) in dist.scenarios.iter().enumerate() {
        let base = ctx.base_counts(&sc.dropped);
        add_deviation(
            &mut m,
            &s.to_string(),
            &base,
            by_fv.clone(),
            &instance.quotas,
            binary,
            big_m,
            &sc.weight,
            &mut objective,
        )?;
    }
    m.set_objective(objective)?;
    let sol = solve_model(&m, backend)?;
    Ok((0..n).filter(|&i| on(&sol, xs[i])).collect())
}

pub fn erm_preempt<R: Rng>(
    instance: &Instance,
    probs: &DropoutProbs,
    s: usize,
    extra_upper: &[i64],
    rng: &mut R,
    config: &OptConfig,
) -> Result<ExtensionResult> {
    if probs.len() != instance.k() {
        return Err(Error::Input("probabilities must align with the panel".into()));
    }
    let dist = crate::dropout::build_empirical_distribution(probs, s, rng)?;
    let mut out = opt_preempt(instance, &dist, extra_upper, config)?;
    out.provenance.algorithm = "erm_preempt".into();
    set_samples(&mut out.provenance, s);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Choosing the panel.

fn meets(counts: &[i64], q: &Quotas) -> bool {
    counts
        .iter()
        .enumerate()
        .all(|(j, &c)| c >= q.lower[j] && c <= q.upper[j])
}

/// Per-scenario outcome of panel `panel` (pool indices) with no alternates.
pub fn evaluate_panel(
    problem: &PanelProblem,
    panel: &[usize],
    dist: &ScenarioDistribution,
    metric: Metric,
) -> Result<Vec<ExtOutcome>> {
    evaluate_panel_and_alts(problem, panel, &[], dist, metric, ReplacementPolicy::Capped)
}

/// Per-scenario outcome of panel `panel` and alternates `alternates` (both
/// pool indices) when `dist` drops pool members.
pub fn evaluate_panel_and_alts(
    problem: &PanelProblem,
    panel: &[usize],
    alternates: &[usize],
    dist: &ScenarioDistribution,
    metric: Metric,
    policy: ReplacementPolicy,
) -> Result<Vec<ExtOutcome>> {
    let table = ScoreTable::new(metric, &problem.quotas)?;
    let scorer = table.scorer(&problem.quotas);
    let full = counts_of(panel.iter().map(|&i| &problem.pool[i]), &problem.schema);
    let mut alts = alternates.to_vec();
    alts.sort_by(|&x, &y| problem.pool[x].id.cmp(&problem.pool[y].id));
    let mut memo: HashMap<(Vec<usize>, Vec<usize>), (i128, Vec<usize>)> = HashMap::new();
    dist.scenarios
        .iter()
        .map(|s| {
            check_indices(&s.dropped, problem.pool.len(), "pool")?;
            let gone: Vec<usize> = panel
                .iter()
                .copied()
                .filter(|i| s.dropped.binary_search(i).is_ok())
                .collect();
            let avail_keys: Vec<usize> = alts
                .iter()
                .copied()
                .filter(|i| s.dropped.binary_search(i).is_err())
                .collect();
            let (score, replacement) = memo
                .entry((gone.clone(), avail_keys.clone()))
                .or_insert_with(|| {
                    let mut base = full.clone();
                    sub_counts(&mut base, gone.iter().copied(), &problem.pool, &problem.schema, -1);
                    let avail: Vec<(usize, &Agent)> = avail_keys.iter().map(|&i| (i, &problem.pool[i])).collect();
                    replacement_among(&scorer, &problem.schema, &base, &avail, cap_of(policy, gone.len()))
                })
                .clone();
            let mut gone = gone;
            gone.sort_unstable();
            Ok(ExtOutcome {
                panel_dropped: gone,
                pool_dropped: s.dropped.clone(),
                weight: s.weight.clone(),
                replacement,
                deviation: Metric::unscale(score, table.scale),
            })
        })
        .collect()
}

/// A panel of `panel_size` minimizing expected deviation after pool dropouts.
pub fn opt_panel_select(
    problem: &PanelProblem,
    dist: &ScenarioDistribution,
    config: &OptConfig,
) -> Result<ExtensionResult> {
    let mut out = opt_panel_and_alts(problem, 0, dist, config)?;
    out.variant = Variant::PanelSelect;
    out.provenance.algorithm = "opt_panel_select".into();
    Ok(out)
}

/// A panel of `panel_size` and `a` disjoint alternates chosen together.
pub fn opt_panel_and_alts(
    problem: &PanelProblem,
    a: usize,
    dist: &ScenarioDistribution,
    config: &OptConfig,
) -> Result<ExtensionResult> {
    problem.check(a)?;
    for s in &dist.scenarios {
        check_indices(&s.dropped, problem.pool.len(), "pool")?;
    }
    let metric = dev_metric(config);
    let n = problem.pool.len();
    let k = problem.panel_size;
    let (panel, alternates, candidates) = match &config.engine {
        Engine::Search { .. } => {
            guard(binomial(n, k).saturating_mul(binomial(n - k, a)))?;
            let table = ScoreTable::new(metric, &problem.quotas)?;
            let scorer = table.scorer(&problem.quotas);
            let weights = int_weights(dist.scenarios.iter().map(|s| &s.weight));
            let order = sorted_by_id(&problem.pool);
            let mut best: Option<(BigInt, Vec<usize>, Vec<usize>)> = None;
            let mut count = 0u64;
            for_each_combination(&order, k, |w| {
                let full = counts_of(w.iter().map(|&i| &problem.pool[i]), &problem.schema);
                if let Some(q) = &problem.initial {
                    if !meets(&full, q) {
                        return;
                    }
                }
                let rest: Vec<usize> = order.iter().copied().filter(|i| !w.contains(i)).collect();
                for_each_combination(&rest, a, |x| {
                    count += 1;
                    let mut acc = BigInt::zero();
                    for (si, s) in dist.scenarios.iter().enumerate() {
                        let gone: Vec<usize> = w
                            .iter()
                            .copied()
                            .filter(|i| s.dropped.binary_search(i).is_ok())
                            .collect();
                        let mut base = full.clone();
                        sub_counts(&mut base, gone.iter().copied(), &problem.pool, &problem.schema, -1);
                        let score = if x.is_empty() {
                            scorer.metric.score(&base, &problem.quotas, table.scale)
                        } else {
                            let avail: Vec<(usize, &Agent)> = x
                                .iter()
                                .filter(|i| s.dropped.binary_search(i).is_err())
                                .map(|&i| (i, &problem.pool[i]))
                                .collect();
                            replacement_among(
                                &scorer,
                                &problem.schema,
                                &base,
                                &avail,
                                cap_of(config.policy, gone.len()),
                            )
                            .0
                        };
                        acc += &weights[si] * BigInt::from(score);
                        if best.as_ref().is_some_and(|(b, _, _)| acc >= *b) {
                            return;
                        }
                    }
                    if best.as_ref().is_none_or(|(b, _, _)| acc < *b) {
                        best = Some((acc, w.to_vec(), x.to_vec()));
                    }
                });
            });
            let (_, w, x) = best.ok_or_else(|| Error::Infeasible("no panel meets the initial quotas".into()))?;
            (w, x, count)
        }
        Engine::Ilp(backend) => {
            let (w, x) = panel_ilp(problem, a, dist, metric, config.policy, backend)?;
            (w, x, 0)
        }
    };
    let mut panel = panel;
    panel.sort_unstable();
    let mut alternates = alternates;
    alternates.sort_unstable();
    let per = evaluate_panel_and_alts(problem, &panel, &alternates, dist, metric, config.policy)?;
    Ok(ExtensionResult {
        variant: Variant::PanelAndAlts,
        panel: Some(panel),
        alternates,
        objective: total(&per),
        per_scenario: per,
        provenance: provenance(
            "opt_panel_and_alts",
            config,
            json!({"panel_size": k, "alternates": a, "initial_quotas": problem.initial.is_some()}),
        ),
        candidates,
    })
}

fn panel_ilp(
    problem: &PanelProblem,
    a: usize,
    dist: &ScenarioDistribution,
    metric: Metric,
    policy: ReplacementPolicy,
    backend: &Backend,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let binary = binary_dev(metric)?;
    let n = problem.pool.len();
    let nfv = problem.schema.num_fv();
    let k = problem.panel_size;
    let fvs: Vec<Vec<usize>> = problem.pool.iter().map(|p| p.fvs(&problem.schema).collect()).collect();
    let mut m = Model::new();
    let ws: Vec<VarId> = (0..n).map(|i| m.binary(format!("w_{i}"))).collect::<Result<_, _>>()?;
    m.add_constraint(
        "panel",
        ws.iter().map(|&w| (w, int(1))).collect(),
        Cmp::Eq,
        int(k as i64),
    )?;
    let xs: Vec<VarId> = if a > 0 {
        let xs: Vec<VarId> = (0..n).map(|i| m.binary(format!("x_{i}"))).collect::<Result<_, _>>()?;
        m.add_constraint(
            "size",
            xs.iter().map(|&x| (x, int(1))).collect(),
            Cmp::Eq,
            int(a as i64),
        )?;
        for i in 0..n {
            m.add_constraint(
                format!("apart_{i}"),
                vec![(xs[i], int(1)), (ws[i], int(1))],
                Cmp::Le,
                int(1),
            )?;
        }
        xs
    } else {
        Vec::new()
    };
    if let Some(q) = &problem.initial {
        for j in 0..nfv {
            let t: Vec<_> = (0..n)
                .filter(|&i| fvs[i].contains(&j))
                .map(|i| (ws[i], int(1)))
                .collect();
            m.add_constraint(format!("init_lo_{j}"), t.clone(), Cmp::Ge, int(q.lower[j]))?;
            m.add_constraint(format!("init_hi_{j}"), t, Cmp::Le, int(q.upper[j]))?;
        }
    }
    let big_m = (k * nfv) as i64;
    let zero = vec![0i64; nfv];
    let mut objective = Vec::new();
    for (s, sc) in dist.scenarios.iter().enumerate() {
        let dropped = |i: usize| sc.dropped.binary_search(&i).is_ok();
        let mut terms: Vec<Vec<(VarId, Rational)>> = vec![Vec::new(); nfv];
        for i in (0..n).filter(|&i| !dropped(i)) {
            for &j in &fvs[i] {
                terms[j].push((ws[i], int(1)));
            }
        }
        if a > 0 {
            let mut ys = Vec::new();
            for i in (0..n).filter(|&i| !dropped(i)) {
                let y = m.binary(format!("y_{i}_{s}"))?;
                m.add_constraint(
                    format!("pick_{i}_{s}"),
                    vec![(y, int(1)), (xs[i], int(-1))],
                    Cmp::Le,
                    int(0),
                )?;
                for &j in &fvs[i] {
                    terms[j].push((y, int(1)));
                }
                ys.push(y);
            }
            if policy == ReplacementPolicy::Capped && !ys.is_empty() {
                // At most as many replacements as chosen panelists who dropped.
                let mut t: Vec<_> = ys.iter().map(|&y| (y, int(1))).collect();
                t.extend(sc.dropped.iter().map(|&i| (ws[i], int(-1))));
                m.add_constraint(format!("cap_{s}"), t, Cmp::Le, int(0))?;
            }
        }
        add_deviation(
            &mut m,
            &s.to_string(),
            &zero,
            terms,
            &problem.quotas,
            binary,
            big_m,
            &sc.weight,
            &mut objective,
        )?;
    }
    m.set_objective(objective)?;
    let sol = solve_model(&m, backend)?;
    let w = (0..n).filter(|&i| on(&sol, ws[i])).collect();
    let x = xs
        .iter()
        .enumerate()
        .filter(|(_, &x)| on(&sol, x))
        .map(|(i, _)| i)
        .collect();
    Ok((w, x))
}

fn check_pool_probs(problem: &PanelProblem, probs: &DropoutProbs) -> Result<()> {
    if probs.len() != problem.pool.len() {
        return Err(Error::Input("probabilities must align with the pool".into()));
    }
    Ok(())
}

pub fn erm_panel_select<R: Rng>(
    problem: &PanelProblem,
    pool_probs: &DropoutProbs,
    s: usize,
    rng: &mut R,
    config: &OptConfig,
) -> Result<ExtensionResult> {
    check_pool_probs(problem, pool_probs)?;
    let dist = crate::dropout::build_empirical_distribution(pool_probs, s, rng)?;
    let mut out = opt_panel_select(problem, &dist, config)?;
    out.provenance.algorithm = "erm_panel_select".into();
    set_samples(&mut out.provenance, s);
    Ok(out)
}

pub fn erm_panel_and_alts<R: Rng>(
    problem: &PanelProblem,
    a: usize,
    pool_probs: &DropoutProbs,
    s: usize,
    rng: &mut R,
    config: &OptConfig,
) -> Result<ExtensionResult> {
    check_pool_probs(problem, pool_probs)?;
    let dist = crate::dropout::build_empirical_distribution(pool_probs, s, rng)?;
    let mut out = opt_panel_and_alts(problem, a, &dist, config)?;
    out.provenance.algorithm = "erm_panel_and_alts".into();
    set_samples(&mut out.provenance, s);
    Ok(out)
}

/// Turns an instance into the panel-choosing input: everyone is in the pool.
pub fn whole_pool_problem(instance: &Instance) -> PanelProblem {
    let mut pool = instance.panel.clone();
    pool.extend(instance.pool.iter().cloned());
    PanelProblem::new(instance.schema.clone(), instance.quotas.clone(), pool, instance.k())
}

/// Which variant to run and the inputs it needs beyond an instance.
#[derive(Clone, Debug)]
pub struct ExtensionConfig {
    pub variant: Variant,
    /// Upper bounds on the extra panelists, per flattened feature-value.
    pub extra_upper: Option<Vec<i64>>,
    /// Seats on the chosen panel; defaults to the instance's panel size.
    pub panel_size: Option<usize>,
    /// Dropout probabilities of pool members (of panel then pool for the
    /// panel-choosing variants, where everyone is a candidate).
    pub pool_probs: Option<DropoutProbs>,
}

impl ExtensionConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            extra_upper: None,
            panel_size: None,
            pool_probs: None,
        }
    }

    fn candidates(&self, instance: &Instance) -> usize {
        match self.variant {
            Variant::AltsDrop | Variant::Preempt => instance.n(),
            Variant::PanelSelect | Variant::PanelAndAlts => instance.k() + instance.n(),
        }
    }

    pub fn validate(&self, instance: &Instance) -> Result<()> {
        match self.variant {
            Variant::Preempt => match &self.extra_upper {
                None => return Err(Error::Input("the preempt variant needs extra upper quotas".into())),
                Some(u) if u.len() != instance.schema.num_fv() => {
                    return Err(Error::Input("extra upper quotas must cover every feature-value".into()))
                }
                Some(_) => {}
            },
            _ => {
                let want = self.candidates(instance);
                match &self.pool_probs {
                    None => {
                        return Err(Error::Input(format!(
                            "the {} variant needs pool probabilities",
                            self.variant.name()
                        )))
                    }
                    Some(p) if p.len() != want => {
                        return Err(Error::Input(format!(
                            "{} pool probabilities given, {want} expected",
                            p.len()
                        )))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    /// Samples `s` scenarios from streams derived from `seed` and solves.
    /// Returns the result and the agent lists its indices refer to.
    pub fn run(
        &self,
        instance: &Instance,
        panel_probs: &DropoutProbs,
        s: usize,
        seed: u64,
        config: &OptConfig,
    ) -> Result<(ExtensionResult, Vec<Agent>, Vec<Agent>)> {
        use crate::rng::{stream, Purpose};
        self.validate(instance)?;
        let tag = 0x10 + self.variant as u64;
        let a = instance.budget as u64;
        let mut train = stream(seed, Purpose::Train, tag, a);
        let mut out = match self.variant {
            Variant::AltsDrop => {
                let pool = self.pool_probs.as_ref().expect("validated");
                let mut drops = stream(seed, Purpose::PoolDrop, tag, a);
                erm_alts_with_alt_dropouts(instance, panel_probs, pool, s, &mut train, &mut drops, config)?
            }
            Variant::Preempt => {
                let upper = self.extra_upper.as_ref().expect("validated");
                erm_preempt(instance, panel_probs, s, upper, &mut train, config)?
            }
            Variant::PanelSelect | Variant::PanelAndAlts => {
                let mut problem = whole_pool_problem(instance);
                problem.panel_size = self.panel_size.unwrap_or(instance.k());
                let probs = self.pool_probs.as_ref().expect("validated");
                let mut drops = stream(seed, Purpose::PoolDrop, tag, a);
                let r = if self.variant == Variant::PanelSelect {
                    erm_panel_select(&problem, probs, s, &mut drops, config)?
                } else {
                    erm_panel_and_alts(&problem, instance.budget, probs, s, &mut drops, config)?
                };
                let mut r = r;
                r.provenance.seed = Some(seed);
                return Ok((r, problem.pool.clone(), problem.pool));
            }
        };
        out.provenance.seed = Some(seed);
        Ok((out, instance.panel.clone(), instance.pool.clone()))
    }
}
