//! Exact replacement search over pool types.
//!
//! Pool members with the same feature vector are interchangeable, so a
//! replacement set is a multiset of types. The search only adds a copy of a
//! type when it touches a feature-value still below its threshold: a
//! smallest optimal replacement set has that property in every insertion
//! order, since a member touching only satisfied feature-values can be dropped
//! without raising any metric.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Zero};

use crate::deviation::{counts_of, Metric};
use crate::domain::{Agent, FeatureSchema, Instance, Quotas};
use crate::dropout::ScenarioDistribution;

use super::ReplacementPolicy;

#[derive(Clone, Debug)]
pub(crate) struct PoolType {
    pub fvs: Vec<usize>,
    /// Pool indices, ordered by id.
    pub members: Vec<usize>,
}

/// Per-instance tables shared by every search.
pub(crate) struct Context<'a> {
    pub inst: &'a Instance,
    pub metric: Metric,
    /// `None` when the lcm of the upper quotas is too large for exact search.
    pub scale: Option<i128>,
    pub thr: Vec<i64>,
    pub types: Vec<PoolType>,
    pub type_of: Vec<usize>,
    pub panel_fvs: Vec<Vec<usize>>,
    pub panel_counts: Vec<i64>,
}

impl<'a> Context<'a> {
    pub fn new(inst: &'a Instance, metric: Metric) -> Self {
        let scale = metric.scale(&inst.quotas);
        let schema = &inst.schema;
        let mut by_vec: BTreeMap<&[usize], Vec<usize>> = BTreeMap::new();
        for (i, a) in inst.pool.iter().enumerate() {
            by_vec.entry(&a.values).or_default().push(i);
        }
        let mut types = Vec::with_capacity(by_vec.len());
        let mut type_of = vec![0; inst.pool.len()];
        for (values, mut members) in by_vec {
            members.sort_by(|&x, &y| inst.pool[x].id.cmp(&inst.pool[y].id));
            for &m in &members {
                type_of[m] = types.len();
            }
            let fvs = values.iter().enumerate().map(|(f, &v)| schema.fv_index(f, v)).collect();
            types.push(PoolType { fvs, members });
        }
        Self {
            inst,
            metric,
            scale,
            thr: (0..schema.num_fv())
                .map(|j| metric.threshold(&inst.quotas, j))
                .collect(),
            types,
            type_of,
            panel_fvs: inst.panel.iter().map(|a| a.fvs(schema).collect()).collect(),
            panel_counts: counts_of(inst.panel.iter(), schema),
        }
    }

    pub fn base_counts(&self, dropped: &[usize]) -> Vec<i64> {
        let mut c = self.panel_counts.clone();
        for &d in dropped {
            for &j in &self.panel_fvs[d] {
                c[j] -= 1;
            }
        }
        c
    }

    /// Number of members of each type in `alternates`.
    pub fn type_counts(&self, alternates: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.types.len()];
        for &i in alternates {
            c[self.type_of[i]] += 1;
        }
        c
    }

    /// The first `count[t]` members of each type.
    pub fn members_from_counts(&self, counts: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(t, &c)| self.types[t].members[..c].iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    /// Concrete replacement members: the first `r[t]` members of `alternates`
    /// of each type, in id order.
    pub fn pick_from(&self, alternates: &[usize], r: &[usize]) -> Vec<usize> {
        let mut left = r.to_vec();
        let mut sorted = alternates.to_vec();
        sorted.sort_by(|&x, &y| self.inst.pool[x].id.cmp(&self.inst.pool[y].id));
        let mut out = Vec::new();
        for i in sorted {
            let t = self.type_of[i];
            if left[t] > 0 {
                left[t] -= 1;
                out.push(i);
            }
        }
        out.sort_unstable();
        out
    }

    /// Types that can ever help from `base`: they touch a feature-value below
    /// its threshold. Counts only grow during a search.
    pub fn useful_types(&self, base: &[i64]) -> Vec<usize> {
        (0..self.types.len())
            .filter(|&t| self.types[t].fvs.iter().any(|&j| base[j] < self.thr[j]))
            .collect()
    }
}

/// Scenarios that share base counts and replacement cap.
pub(crate) struct Class {
    pub base: Vec<i64>,
    pub cap: usize,
    /// Integer weight: the scenario probability times the common denominator.
    pub weight: BigInt,
    pub scenarios: Vec<usize>,
    pub useful: Vec<usize>,
}

/// Groups the scenarios of `dist`. Returns the classes and the common
/// denominator of their weights.
pub(crate) fn classes(ctx: &Context, dist: &ScenarioDistribution, policy: ReplacementPolicy) -> (Vec<Class>, BigInt) {
    let denom = dist
        .scenarios
        .iter()
        .fold(BigInt::one(), |acc, s| acc.lcm(s.weight.denom()));
    let mut index: HashMap<(Vec<i64>, usize), usize> = HashMap::new();
    let mut out: Vec<Class> = Vec::new();
    for (si, s) in dist.scenarios.iter().enumerate() {
        let base = ctx.base_counts(&s.dropped);
        let cap = match policy {
            ReplacementPolicy::Capped => s.dropped.len(),
            ReplacementPolicy::Uncapped => usize::MAX,
        };
        let w = s.weight.numer() * (&denom / s.weight.denom());
        match index.get(&(base.clone(), cap)) {
            Some(&c) => {
                out[c].weight += w;
                out[c].scenarios.push(si);
            }
            None => {
                index.insert((base.clone(), cap), out.len());
                let useful = ctx.useful_types(&base);
                out.push(Class {
                    base,
                    cap,
                    weight: w,
                    scenarios: vec![si],
                    useful,
                });
            }
        }
    }
    (out, denom)
}

/// Availability limits for one search, indexed like `Class::useful`.
pub(crate) struct Limits<'b> {
    pub avail: &'b [usize],
    /// Types drawing on a shared budget, and that budget.
    pub free: Option<(&'b [bool], usize)>,
    pub cap: usize,
}

/// Minimal scaled score reachable from `base` and the per-type counts (over
/// `useful`) that attain it. Ties resolve to the first set found, searching
/// smaller type indices first.
pub(crate) fn best_replacement_counts(
    ctx: &Context,
    base: &[i64],
    useful: &[usize],
    limits: &Limits,
) -> (i128, Vec<usize>) {
    let scorer = Scorer {
        metric: ctx.metric,
        quotas: &ctx.inst.quotas,
        scale: ctx.scale.expect("scale checked by caller"),
        thr: &ctx.thr,
    };
    search_counts(&scorer, &ctx.types, base, useful, limits)
}

pub(crate) struct Scorer<'q> {
    pub metric: Metric,
    pub quotas: &'q Quotas,
    pub scale: i128,
    pub thr: &'q [i64],
}

impl Scorer<'_> {
    fn score(&self, counts: &[i64]) -> i128 {
        self.metric.score(counts, self.quotas, self.scale)
    }
}

pub(crate) fn search_counts(
    scorer: &Scorer,
    types: &[PoolType],
    base: &[i64],
    useful: &[usize],
    limits: &Limits,
) -> (i128, Vec<usize>) {
    let mut s = Dfs {
        scorer,
        types,
        useful,
        limits,
        counts: base.to_vec(),
        r: vec![0; useful.len()],
        best: i128::MAX,
        best_r: vec![0; useful.len()],
        floor: 0,
        done: false,
    };
    let group = limits.free.map_or(usize::MAX, |(_, g)| g);
    s.floor = s.relaxed_bound(0, limits.cap, group);
    s.run(0, limits.cap, group);
    (s.best, s.best_r)
}

/// Best replacement drawn from `agents` (given as `(key, agent)` in preference
/// order). Returns the scaled score and the chosen keys.
pub(crate) fn replacement_among(
    scorer: &Scorer,
    schema: &FeatureSchema,
    base: &[i64],
    agents: &[(usize, &Agent)],
    cap: usize,
) -> (i128, Vec<usize>) {
    let mut by_vec: BTreeMap<&[usize], Vec<usize>> = BTreeMap::new();
    for &(key, a) in agents {
        by_vec.entry(&a.values).or_default().push(key);
    }
    let types: Vec<PoolType> = by_vec
        .into_iter()
        .map(|(values, members)| PoolType {
            fvs: values.iter().enumerate().map(|(f, &v)| schema.fv_index(f, v)).collect(),
            members,
        })
        .collect();
    let useful: Vec<usize> = (0..types.len())
        .filter(|&t| types[t].fvs.iter().any(|&j| base[j] < scorer.thr[j]))
        .collect();
    let avail: Vec<usize> = useful.iter().map(|&t| types[t].members.len()).collect();
    let limits = Limits {
        avail: &avail,
        free: None,
        cap,
    };
    let (score, r) = search_counts(scorer, &types, base, &useful, &limits);
    let mut keys: Vec<usize> = useful
        .iter()
        .zip(&r)
        .flat_map(|(&t, &c)| types[t].members[..c].iter().copied())
        .collect();
    keys.sort_unstable();
    (score, keys)
}

struct Dfs<'c, 'q, 'b> {
    scorer: &'c Scorer<'q>,
    types: &'c [PoolType],
    useful: &'c [usize],
    limits: &'c Limits<'b>,
    counts: Vec<i64>,
    r: Vec<usize>,
    best: i128,
    best_r: Vec<usize>,
    floor: i128,
    done: bool,
}

impl Dfs<'_, '_, '_> {
    fn is_free(&self, k: usize) -> bool {
        self.limits.free.is_some_and(|(f, _)| f[k])
    }

    /// Score of the best completion if every feature-value below threshold
    /// could be raised independently.
    fn relaxed_bound(&self, start: usize, cap: usize, group: usize) -> i128 {
        let thr = self.scorer.thr;
        let mut fixed = vec![0usize; thr.len()];
        let mut free = vec![0usize; thr.len()];
        for k in start..self.useful.len() {
            let left = self.limits.avail[k] - self.r[k];
            if left == 0 {
                continue;
            }
            let dest = if self.is_free(k) { &mut free } else { &mut fixed };
            for &j in &self.types[self.useful[k]].fvs {
                dest[j] += left;
            }
        }
        let relaxed: Vec<i64> = self
            .counts
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                if c >= thr[j] {
                    c
                } else {
                    let add = (fixed[j] + free[j].min(group)).min(cap);
                    thr[j].min(c + add as i64)
                }
            })
            .collect();
        self.scorer.score(&relaxed)
    }

    fn run(&mut self, start: usize, cap: usize, group: usize) {
        let score = self.scorer.score(&self.counts);
        if score < self.best {
            self.best = score;
            self.best_r.clone_from(&self.r);
            if score <= self.floor {
                self.done = true;
                return;
            }
        }
        if cap == 0 || self.relaxed_bound(start, cap, group) >= self.best {
            return;
        }
        for k in start..self.useful.len() {
            if self.r[k] >= self.limits.avail[k] {
                continue;
            }
            let free = self.is_free(k);
            if free && group == 0 {
                continue;
            }
            let fvs = &self.types[self.useful[k]].fvs;
            if !fvs.iter().any(|&j| self.counts[j] < self.scorer.thr[j]) {
                continue;
            }
            for &j in fvs {
                self.counts[j] += 1;
            }
            self.r[k] += 1;
            self.run(k, cap - 1, if free { group - 1 } else { group });
            self.r[k] -= 1;
            for &j in fvs {
                self.counts[j] -= 1;
            }
            if self.done {
                return;
            }
        }
    }
}

/// Per-scenario optimal replacement for a fixed alternate set.
pub(crate) struct Evaluated {
    /// Replacement members (pool indices) per scenario of the distribution.
    pub replacements: Vec<Vec<usize>>,
    /// Scaled score per scenario.
    pub scores: Vec<i128>,
}

pub(crate) fn evaluate_fixed(
    ctx: &Context,
    alternates: &[usize],
    dist: &ScenarioDistribution,
    policy: ReplacementPolicy,
) -> Evaluated {
    let counts = ctx.type_counts(alternates);
    let (classes, _) = classes(ctx, dist, policy);
    let mut replacements = vec![Vec::new(); dist.len()];
    let mut scores = vec![0; dist.len()];
    for class in &classes {
        let avail: Vec<usize> = class.useful.iter().map(|&t| counts[t]).collect();
        let limits = Limits {
            avail: &avail,
            free: None,
            cap: class.cap,
        };
        let (score, r) = best_replacement_counts(ctx, &class.base, &class.useful, &limits);
        let mut full = vec![0; ctx.types.len()];
        for (k, &t) in class.useful.iter().enumerate() {
            full[t] = r[k];
        }
        let members = ctx.pick_from(alternates, &full);
        for &si in &class.scenarios {
            replacements[si] = members.clone();
            scores[si] = score;
        }
    }
    Evaluated { replacements, scores }
}

/// `sum weight * score / scale` exactly.
pub(crate) fn weighted_objective(ctx: &Context, dist: &ScenarioDistribution, scores: &[i128]) -> crate::Rational {
    let mut acc = crate::Rational::zero();
    for (s, &score) in dist.scenarios.iter().zip(scores) {
        if score != 0 {
            acc += &s.weight * Metric::unscale(score, ctx.scale.expect("scale checked by caller"));
        }
    }
    acc
}
