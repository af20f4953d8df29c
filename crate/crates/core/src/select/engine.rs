//! Branch and bound over how many members of each pool type to take.
//!
//! A node fixes the counts of the first `m` types and leaves `rem` slots for
//! the rest. Its bound lets every scenario pick its own replacements from the
//! fixed counts plus up to `rem` members of the free types; with `rem = 0` the
//! bound is the exact objective.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_traits::Zero;

use super::search::{best_replacement_counts, Class, Context, Limits};

pub(crate) struct Outcome {
    pub counts: Vec<usize>,
    pub nodes: u64,
}

pub(crate) struct Bnb<'c, 'a> {
    ctx: &'c Context<'a>,
    classes: &'c [Class],
    at_most: bool,
    node_limit: Option<u64>,
    deadline: Option<Instant>,
    suffix: Vec<usize>,
    memo: Vec<HashMap<Vec<u32>, i128>>,
    best: BigInt,
    best_counts: Vec<usize>,
    nodes: u64,
    exhausted: bool,
}

const MEMO_CAP: usize = 1 << 20;

impl<'c, 'a> Bnb<'c, 'a> {
    pub fn new(
        ctx: &'c Context<'a>,
        classes: &'c [Class],
        at_most: bool,
        node_limit: Option<u64>,
        time_limit: Option<Duration>,
    ) -> Self {
        let t = ctx.types.len();
        let mut suffix = vec![0; t + 1];
        for i in (0..t).rev() {
            suffix[i] = suffix[i + 1] + ctx.types[i].members.len();
        }
        Self {
            ctx,
            classes,
            at_most,
            node_limit,
            deadline: time_limit.map(|d| Instant::now() + d),
            suffix,
            memo: (0..classes.len()).map(|_| HashMap::new()).collect(),
            best: BigInt::zero(),
            best_counts: Vec::new(),
            nodes: 0,
            exhausted: false,
        }
    }

    /// Weighted bound for the node, stopping early once it reaches `stop`.
    fn bound(&mut self, fixed: &[usize], rem: usize, stop: Option<&BigInt>) -> BigInt {
        let mut total = BigInt::zero();
        let m = fixed.len();
        for (ci, class) in self.classes.iter().enumerate() {
            let mut avail = Vec::with_capacity(class.useful.len());
            let mut free = Vec::with_capacity(class.useful.len());
            for &t in &class.useful {
                if t < m {
                    avail.push(fixed[t]);
                    free.push(false);
                } else {
                    avail.push(self.ctx.types[t].members.len().min(rem));
                    free.push(true);
                }
            }
            let group = if free.iter().any(|&f| f) { rem } else { 0 };
            let mut key: Vec<u32> = avail
                .iter()
                .zip(&free)
                .map(|(&a, &f)| (a as u32) << 1 | u32::from(f))
                .collect();
            key.push(group as u32);
            let score = match self.memo[ci].get(&key) {
                Some(&s) => s,
                None => {
                    let limits = Limits {
                        avail: &avail,
                        free: Some((&free, group)),
                        cap: class.cap,
                    };
                    let (s, _) = best_replacement_counts(self.ctx, &class.base, &class.useful, &limits);
                    if self.memo[ci].len() >= MEMO_CAP {
                        self.memo[ci].clear();
                    }
                    self.memo[ci].insert(key, s);
                    s
                }
            };
            if score != 0 {
                total += &class.weight * BigInt::from(score);
                if stop.is_some_and(|s| total >= *s) {
                    break;
                }
            }
        }
        total
    }

    fn visit(&mut self, fixed: &mut Vec<usize>, rem: usize) {
        if self.exhausted || self.best.is_zero() {
            return;
        }
        self.nodes += 1;
        if self.node_limit.is_some_and(|l| self.nodes > l)
            || (self.nodes % 64 == 0 && self.deadline.is_some_and(|d| Instant::now() > d))
        {
            self.exhausted = true;
            return;
        }
        let t = self.ctx.types.len();
        let m = fixed.len();
        if m == t || rem == 0 {
            let mut full = fixed.clone();
            full.resize(t, 0);
            let best = self.best.clone();
            let value = self.bound(&full, 0, Some(&best));
            if value < self.best {
                self.best = value;
                self.best_counts = full;
            }
            return;
        }
        let best = self.best.clone();
        if self.bound(fixed, rem, Some(&best)) >= self.best {
            return;
        }
        let hi = self.ctx.types[m].members.len().min(rem);
        // Without `at_most` the later types must be able to absorb the rest.
        let lo = if self.at_most {
            0
        } else {
            rem.saturating_sub(self.suffix[m + 1])
        };
        for c in (lo..=hi).rev() {
            fixed.push(c);
            self.visit(fixed, rem - c);
            fixed.pop();
            if self.exhausted {
                return;
            }
        }
    }
}

/// Best type counts, starting from the incumbent `start`. When a limit runs
/// out, returns the incumbent and the node count instead.
pub(crate) fn solve(
    ctx: &Context,
    classes: &[Class],
    start: Vec<usize>,
    at_most: bool,
    node_limit: Option<u64>,
    time_limit: Option<Duration>,
) -> std::result::Result<Outcome, (Vec<usize>, u64)> {
    let mut bnb = Bnb::new(ctx, classes, at_most, node_limit, time_limit);
    let a: usize = start.iter().sum();
    bnb.best = bnb.bound(&start, 0, None);
    bnb.best_counts = start;
    let mut fixed = Vec::with_capacity(ctx.types.len());
    bnb.visit(&mut fixed, a);
    if bnb.exhausted {
        return Err((bnb.best_counts, bnb.nodes));
    }
    Ok(Outcome {
        counts: bnb.best_counts,
        nodes: bnb.nodes,
    })
}
