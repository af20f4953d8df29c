//! Greedy and Quota-Based baselines.

use milp::Backend;

use crate::deviation::Metric;
use crate::domain::Instance;
use crate::dropout::{DropoutProbs, ScenarioDistribution};
use crate::error::{Error, Result};
use crate::Rational;

use super::search::Context;
use super::{ilp, AlternateSet};

/// For panelists in decreasing order of dropout probability, the closest
/// unchosen pool member by Hamming distance. Ties go to the smaller id on both
/// sides. With `a > k` the panel order wraps around.
pub fn greedy_alts(instance: &Instance, probs: &DropoutProbs) -> AlternateSet {
    AlternateSet::new(greedy_by(instance, probs.exact()))
}

fn greedy_by(instance: &Instance, rho: &[Rational]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..instance.k()).collect();
    order.sort_by(|&x, &y| {
        rho[y]
            .cmp(&rho[x])
            .then_with(|| instance.panel[x].id.cmp(&instance.panel[y].id))
    });
    let mut pool: Vec<usize> = (0..instance.n()).collect();
    pool.sort_by(|&x, &y| instance.pool[x].id.cmp(&instance.pool[y].id));
    let a = instance.budget.min(instance.n());
    let mut taken = vec![false; instance.n()];
    let mut out = Vec::with_capacity(a);
    for step in 0..a {
        let pick = match order.get(step % order.len().max(1)) {
            Some(&p) => {
                let target = &instance.panel[p];
                pool.iter()
                    .copied()
                    .filter(|&i| !taken[i])
                    .min_by_key(|&i| instance.pool[i].hamming(target))
                    .expect("pool has an unchosen member")
            }
            None => pool
                .iter()
                .copied()
                .find(|&i| !taken[i])
                .expect("pool has an unchosen member"),
        };
        taken[pick] = true;
        out.push(pick);
    }
    out
}

/// Greedy on the marginal dropout frequencies of `dist`, as a starting point
/// for the exact search.
pub(crate) fn frequency_greedy(ctx: &Context, dist: &ScenarioDistribution) -> Vec<usize> {
    let mut freq = vec![Rational::from_integer(0.into()); ctx.inst.k()];
    for s in &dist.scenarios {
        for &d in &s.dropped {
            freq[d] += &s.weight;
        }
    }
    greedy_by(ctx.inst, &freq)
}

/// Any `a` pool members meeting the quotas scaled down to the budget.
pub fn quota_based_alts(instance: &Instance, backend: &Backend) -> Result<AlternateSet> {
    if instance.n() < instance.budget {
        return Err(Error::Input(format!(
            "budget {} exceeds pool size {}",
            instance.budget,
            instance.n()
        )));
    }
    let ctx = Context::new(instance, Metric::Linear);
    let (members, rounds) = ilp::quota_based(&ctx, backend)?;
    if rounds > 0 {
        log::info!("scaled quotas loosened {rounds} time(s) before a feasible set existed");
    }
    Ok(AlternateSet::new(members))
}
