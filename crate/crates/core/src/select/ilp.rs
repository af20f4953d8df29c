//! Integer programs for the replacement step and for choosing alternates.

use milp::rational::{int, ratio};
use milp::{Backend, Cmp, Model, Solution, Status, VarId};
use num_bigint::BigInt;
use num_traits::Zero;

use crate::deviation::Metric;
use crate::error::{Error, Result};
use crate::Rational;

use super::search::{Class, Context};

fn half() -> Rational {
    ratio(1, 2)
}

fn is_on(sol: &Solution, v: VarId) -> bool {
    sol.value(v) >= &half()
}

fn budget_error(ids: Option<Vec<String>>, objective: Option<Rational>) -> Error {
    Error::BudgetExceeded {
        incumbent: ids,
        objective,
    }
}

/// Minimal-deviation replacement from `alternates` after `dropped` leave.
/// Returns the chosen pool indices and the exact metric value.
pub(crate) fn best_replacement_ilp(
    ctx: &Context,
    alternates: &[usize],
    dropped: &[usize],
    cap: Option<usize>,
    backend: &Backend,
) -> Result<(Vec<usize>, Rational)> {
    let inst = ctx.inst;
    let q = &inst.quotas;
    let nfv = inst.schema.num_fv();
    let base = ctx.base_counts(dropped);
    let mut m = Model::new();
    let ys: Vec<VarId> = alternates
        .iter()
        .map(|&i| m.binary(format!("y_{i}")))
        .collect::<Result<_, _>>()?;
    if let Some(cap) = cap {
        m.add_constraint(
            "cap",
            ys.iter().map(|&y| (y, int(1))).collect(),
            Cmp::Le,
            int(cap as i64),
        )?;
    }
    // count_j = base_j + sum of y over alternates with j
    let count_terms = |j: usize| -> Vec<(VarId, Rational)> {
        alternates
            .iter()
            .zip(&ys)
            .filter(|(&i, _)| inst.pool[i].fvs(&inst.schema).any(|f| f == j))
            .map(|(_, &y)| (y, int(1)))
            .collect()
    };
    let metric = ctx.metric;
    let mut objective = Vec::new();
    let epigraph = match metric {
        Metric::MaxNormDev | Metric::MaxDev => Some(m.continuous("t")?),
        _ => None,
    };
    let mut zs = Vec::new();
    for j in 0..nfv {
        let (l, u) = (q.lower[j], q.upper[j]);
        let b = base[j];
        if metric == Metric::Unrepresented {
            let e = m.binary(format!("e_{j}"))?;
            let mut t = count_terms(j);
            t.push((e, int(1)));
            m.add_constraint(format!("cover_{j}"), t, Cmp::Ge, int(1 - b))?;
            objective.push((e, int(1)));
            continue;
        }
        let z = m.continuous(format!("z_{j}"))?;
        zs.push(z);
        let mut below = count_terms(j);
        below.push((z, int(1)));
        m.add_constraint(format!("below_{j}"), below, Cmp::Ge, int(l - b))?;
        if metric != Metric::DevBelow {
            let mut above: Vec<_> = count_terms(j).into_iter().map(|(v, c)| (v, -c)).collect();
            above.push((z, int(1)));
            m.add_constraint(format!("above_{j}"), above, Cmp::Ge, int(b - u))?;
        }
        match metric {
            Metric::Linear | Metric::DevBelow => objective.push((z, ratio(1, u))),
            Metric::MaxNormDev => {
                let t = epigraph.expect("epigraph variable");
                m.add_constraint(format!("epi_{j}"), vec![(t, int(u)), (z, int(-1))], Cmp::Ge, int(0))?;
            }
            Metric::MaxDev => {
                let t = epigraph.expect("epigraph variable");
                m.add_constraint(format!("epi_{j}"), vec![(t, int(1)), (z, int(-1))], Cmp::Ge, int(0))?;
            }
            _ => {}
        }
    }
    match metric {
        Metric::Binary => {
            let d = m.binary("d")?;
            let big_m = ((inst.k() + alternates.len()) * nfv) as i64;
            let mut t: Vec<_> = zs.iter().map(|&z| (z, int(1))).collect();
            t.push((d, int(-big_m)));
            m.add_constraint("flag", t, Cmp::Le, int(0))?;
            objective.push((d, int(1)));
        }
        Metric::MaxNormDev | Metric::MaxDev => objective.push((epigraph.expect("epigraph variable"), int(1))),
        _ => {}
    }
    m.set_objective(objective)?;
    let sol = backend.solve(&m)?;
    let chosen = |sol: &Solution| -> Vec<usize> {
        let mut r: Vec<usize> = alternates
            .iter()
            .zip(&ys)
            .filter(|(_, &y)| is_on(sol, y))
            .map(|(&i, _)| i)
            .collect();
        r.sort_unstable();
        r
    };
    match sol.status {
        Status::Optimal => {
            let r = chosen(&sol);
            let value = exact_value(ctx, &base, &r);
            Ok((r, value))
        }
        Status::Infeasible => Err(Error::Infeasible("replacement program has no solution".into())),
        Status::BudgetExceeded => {
            let ids =
                (!sol.assignment.is_empty()).then(|| chosen(&sol).iter().map(|&i| inst.pool[i].id.clone()).collect());
            Err(budget_error(ids, sol.objective))
        }
    }
}

/// Metric value of `base` plus the members `r`, recomputed exactly.
pub(crate) fn exact_value(ctx: &Context, base: &[i64], r: &[usize]) -> Rational {
    let mut c = base.to_vec();
    for &i in r {
        for j in ctx.inst.pool[i].fvs(&ctx.inst.schema) {
            c[j] += 1;
        }
    }
    ctx.metric.value(&c, &ctx.inst.quotas)
}

/// The joint program choosing `a` alternates and a replacement per scenario
/// class. Returns the chosen pool indices.
pub(crate) fn opt_ilp(
    ctx: &Context,
    classes: &[Class],
    denom: &BigInt,
    at_most: bool,
    backend: &Backend,
) -> Result<Vec<usize>> {
    let inst = ctx.inst;
    let q = &inst.quotas;
    let nfv = inst.schema.num_fv();
    let binary = match ctx.metric {
        Metric::Linear => false,
        Metric::Binary => true,
        other => {
            return Err(Error::Input(format!(
                "alternates cannot be optimized for `{}`",
                other.name()
            )))
        }
    };
    let mut m = Model::new();
    let xs: Vec<VarId> = (0..inst.n())
        .map(|i| m.binary(format!("x_{i}")))
        .collect::<Result<_, _>>()?;
    m.add_constraint(
        "size",
        xs.iter().map(|&x| (x, int(1))).collect(),
        if at_most { Cmp::Le } else { Cmp::Eq },
        int(inst.budget as i64),
    )?;
    let big_m = ((inst.k() + inst.budget) * nfv) as i64;
    let mut objective = Vec::new();
    for (c, class) in classes.iter().enumerate() {
        let weight = Rational::new(class.weight.clone(), denom.clone());
        // Only members of useful types can lower the deviation.
        let mut ys: Vec<(usize, VarId)> = Vec::new();
        for &t in &class.useful {
            for &i in &ctx.types[t].members {
                let y = m.binary(format!("y_{i}_{c}"))?;
                m.add_constraint(
                    format!("pick_{i}_{c}"),
                    vec![(y, int(1)), (xs[i], int(-1))],
                    Cmp::Le,
                    int(0),
                )?;
                ys.push((i, y));
            }
        }
        ys.sort_unstable_by_key(|&(i, _)| i);
        if class.cap != usize::MAX {
            m.add_constraint(
                format!("cap_{c}"),
                ys.iter().map(|&(_, y)| (y, int(1))).collect(),
                Cmp::Le,
                int(class.cap as i64),
            )?;
        }
        let d = if binary {
            Some(m.binary(format!("d_{c}"))?)
        } else {
            None
        };
        let mut flag = Vec::new();
        for j in 0..nfv {
            let terms: Vec<(VarId, Rational)> = ys
                .iter()
                .filter(|(i, _)| ctx.types[ctx.type_of[*i]].fvs.contains(&j))
                .map(|&(_, y)| (y, int(1)))
                .collect();
            let b = class.base[j];
            let (l, u) = (q.lower[j], q.upper[j]);
            if terms.is_empty() && b >= l && b <= u {
                continue;
            }
            let z = m.continuous(format!("z_{c}_{j}"))?;
            let mut below = terms.clone();
            below.push((z, int(1)));
            m.add_constraint(format!("below_{c}_{j}"), below, Cmp::Ge, int(l - b))?;
            let mut above: Vec<_> = terms.into_iter().map(|(v, k)| (v, -k)).collect();
            above.push((z, int(1)));
            m.add_constraint(format!("above_{c}_{j}"), above, Cmp::Ge, int(b - u))?;
            if binary {
                flag.push((z, int(1)));
            } else {
                objective.push((z, &weight / int(u)));
            }
        }
        if let Some(d) = d {
            flag.push((d, int(-big_m)));
            m.add_constraint(format!("flag_{c}"), flag, Cmp::Le, int(0))?;
            objective.push((d, weight));
        }
    }
    m.set_objective(objective)?;
    let sol = backend.solve(&m)?;
    let chosen = |sol: &Solution| -> Vec<usize> { (0..inst.n()).filter(|&i| is_on(sol, xs[i])).collect() };
    match sol.status {
        Status::Optimal => Ok(chosen(&sol)),
        Status::Infeasible => Err(Error::Infeasible("selection program has no solution".into())),
        Status::BudgetExceeded => {
            let ids =
                (!sol.assignment.is_empty()).then(|| chosen(&sol).iter().map(|&i| inst.pool[i].id.clone()).collect());
            Err(budget_error(ids, sol.objective))
        }
    }
}

/// Any `a` pool members meeting the quotas scaled by `a / k`, loosening every
/// bound by one until the program is feasible.
pub(crate) fn quota_based(ctx: &Context, backend: &Backend) -> Result<(Vec<usize>, usize)> {
    let inst = ctx.inst;
    let (a, k) = (inst.budget as i64, inst.k().max(1) as i64);
    let q = &inst.quotas;
    let mut lower: Vec<i64> = q.lower.iter().map(|&l| l * a / k).collect();
    let mut upper: Vec<i64> = q.upper.iter().map(|&u| (u * a + k - 1) / k).collect();
    let mut rounds = 0;
    loop {
        let mut m = Model::new();
        let xs: Vec<VarId> = (0..inst.n())
            .map(|i| m.binary(format!("x_{i}")))
            .collect::<Result<_, _>>()?;
        m.add_constraint("size", xs.iter().map(|&x| (x, int(1))).collect(), Cmp::Eq, int(a))?;
        for j in 0..inst.schema.num_fv() {
            let terms: Vec<_> = (0..inst.n())
                .filter(|&i| inst.pool[i].fvs(&inst.schema).any(|f| f == j))
                .map(|i| (xs[i], int(1)))
                .collect();
            if lower[j] > 0 {
                m.add_constraint(format!("lo_{j}"), terms.clone(), Cmp::Ge, int(lower[j]))?;
            }
            if upper[j] < a {
                m.add_constraint(format!("hi_{j}"), terms, Cmp::Le, int(upper[j]))?;
            }
        }
        m.set_objective(Vec::new())?;
        let sol = backend.solve(&m)?;
        match sol.status {
            Status::Optimal => return Ok(((0..inst.n()).filter(|&i| is_on(&sol, xs[i])).collect(), rounds)),
            Status::BudgetExceeded => return Err(budget_error(None, None)),
            Status::Infeasible => {
                if lower.iter().all(|l| l.is_zero()) && upper.iter().all(|&u| u >= a) {
                    return Err(Error::Infeasible("no pool subset of the budget size exists".into()));
                }
                for l in &mut lower {
                    *l = (*l - 1).max(0);
                }
                for u in &mut upper {
                    *u += 1;
                }
                rounds += 1;
            }
        }
    }
}
