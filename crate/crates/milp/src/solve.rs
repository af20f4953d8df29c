//! Best-bound branch and bound over exact LP relaxations.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::SolveError;
use crate::model::{Model, VarId};
use crate::rational::Rational;
use crate::simplex::{solve_relaxation, LpOutcome};

#[derive(Clone, Debug, Default)]
pub struct SolverConfig {
    /// Maximum number of LP relaxations to solve.
    pub node_limit: Option<u64>,
    pub time_limit: Option<Duration>,
    /// Known feasible assignment, indexed by variable id. Used to prune.
    pub incumbent: Option<Vec<Rational>>,
}

impl SolverConfig {
    pub fn with_incumbent(mut self, values: Vec<Rational>) -> Self {
        self.incumbent = Some(values);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    /// A limit was hit; the assignment (if any) is the best incumbent found.
    BudgetExceeded,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub status: Status,
    /// One value per variable, indexed by [`VarId`]; empty when no feasible
    /// point is known.
    pub assignment: Vec<Rational>,
    pub objective: Option<Rational>,
    pub node_count: u64,
    pub wall_time: Duration,
}

impl Solution {
    pub fn value(&self, var: VarId) -> &Rational {
        &self.assignment[var.0]
    }

    pub fn value_by_name<'a>(&'a self, model: &Model, name: &str) -> Option<&'a Rational> {
        model.var_id(name).and_then(|v| self.assignment.get(v.0))
    }

    pub fn is_set(&self, var: VarId) -> bool {
        self.assignment.get(var.0).is_some_and(|v| v.is_one())
    }

    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &Solution) -> bool {
        self.status == other.status
            && self.assignment == other.assignment
            && self.objective == other.objective
            && self.node_count == other.node_count
    }
}

struct Node {
    bound: Rational,
    id: u64,
    lower: Vec<Rational>,
    upper: Vec<Option<Rational>>,
    values: Vec<Rational>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smallest bound first, then oldest node.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.cmp(&self.bound).then_with(|| other.id.cmp(&self.id))
    }
}

/// Solves `model` to proven optimality unless a budget in `config` runs out.
///
/// Branching picks the most fractional integral variable (ties by
/// declaration order), down branch first; open nodes are explored best bound
/// first with ties in creation order. The returned assignment is re-checked
/// against every bound and constraint before it is handed back.
pub fn solve(model: &Model, config: &SolverConfig) -> Result<Solution, SolveError> {
    let start = Instant::now();
    let n = model.num_vars();

    let mut best: Option<(Rational, Vec<Rational>)> = None;
    if let Some(inc) = &config.incumbent {
        if let Some(v) = model.first_violation(inc) {
            return Err(SolveError::BadIncumbent(v.to_string()));
        }
        best = Some((model.objective_value(inc), inc.clone()));
    }

    let root_lower = vec![Rational::zero(); n];
    let root_upper: Vec<Option<Rational>> = model.vars().iter().map(|v| v.upper_bound()).collect();

    let mut node_count = 0u64;
    let mut next_id = 0u64;
    let mut open = BinaryHeap::new();
    let mut budget_hit = false;

    let over_budget = |count: u64| {
        config.node_limit.is_some_and(|lim| count >= lim) || config.time_limit.is_some_and(|lim| start.elapsed() >= lim)
    };

    node_count += 1;
    match solve_relaxation(model, &root_lower, &root_upper) {
        LpOutcome::Infeasible => {
            return Ok(finish(Status::Infeasible, None, node_count, start));
        }
        LpOutcome::Unbounded => return Err(SolveError::Unbounded),
        LpOutcome::Optimal { values, objective } => {
            open.push(Node {
                bound: objective,
                id: next_id,
                lower: root_lower,
                upper: root_upper,
                values,
            });
            next_id += 1;
        }
    }

    while let Some(node) = open.pop() {
        if let Some((inc, _)) = &best {
            if node.bound >= *inc {
                // Best-first order: every remaining node is at least as bad.
                open.clear();
                break;
            }
        }
        let Some(branch_var) = most_fractional(model, &node.values) else {
            best = Some((node.bound.clone(), node.values));
            continue;
        };
        if over_budget(node_count) {
            budget_hit = true;
            break;
        }
        let value = &node.values[branch_var];
        let floor = value.floor();
        let ceil = value.ceil();

        let mut down_upper = node.upper.clone();
        down_upper[branch_var] = Some(floor);
        let mut up_lower = node.lower.clone();
        up_lower[branch_var] = ceil;

        for (lower, upper) in [(node.lower.clone(), down_upper), (up_lower, node.upper.clone())] {
            node_count += 1;
            match solve_relaxation(model, &lower, &upper) {
                LpOutcome::Infeasible => {}
                LpOutcome::Unbounded => return Err(SolveError::Unbounded),
                LpOutcome::Optimal { values, objective } => {
                    if best.as_ref().is_some_and(|(inc, _)| objective >= *inc) {
                        continue;
                    }
                    open.push(Node {
                        bound: objective,
                        id: next_id,
                        lower,
                        upper,
                        values,
                    });
                    next_id += 1;
                }
            }
        }
    }

    let status = if budget_hit {
        Status::BudgetExceeded
    } else if best.is_some() {
        Status::Optimal
    } else {
        Status::Infeasible
    };
    let solution = finish(status, best, node_count, start);
    if !solution.assignment.is_empty() {
        if let Some(v) = model.first_violation(&solution.assignment) {
            return Err(SolveError::SelfCheck(v.to_string()));
        }
    }
    Ok(solution)
}

fn finish(status: Status, best: Option<(Rational, Vec<Rational>)>, node_count: u64, start: Instant) -> Solution {
    let (objective, assignment) = match best {
        Some((obj, values)) => (Some(obj), values),
        None => (None, Vec::new()),
    };
    Solution {
        status,
        assignment,
        objective,
        node_count,
        wall_time: start.elapsed(),
    }
}

fn most_fractional(model: &Model, values: &[Rational]) -> Option<usize> {
    let half = BigRational::new(1.into(), 2.into());
    let mut best: Option<(usize, Rational)> = None;
    for (j, var) in model.vars().iter().enumerate() {
        if !var.kind.is_integral() || values[j].is_integer() {
            continue;
        }
        let frac = &values[j] - values[j].floor();
        let distance = (&frac - &half).abs();
        match &best {
            Some((_, d)) if distance >= *d => {}
            _ => best = Some((j, distance)),
        }
    }
    best.map(|(j, _)| j)
}
