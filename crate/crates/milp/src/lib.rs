//! Small exact mixed 0/1 linear programming: model building, a rational
//! branch-and-bound solver, CPLEX LP export/import and an adapter for
//! external solvers.

pub mod error;
pub mod external;
pub mod lpformat;
pub mod model;
pub mod rational;
mod simplex;
pub mod solution;
pub mod solve;

pub use error::{ImportError, LpParseError, ModelError, SolveError};
pub use external::{Backend, ExternalSolver};
pub use lpformat::{export_lp, is_lp_name, parse_lp};
pub use model::{Cmp, Constraint, Model, VarId, VarKind, Variable, Violation};
pub use rational::Rational;
pub use solution::{import_solution, write_solution, Imported};
pub use solve::{solve, Solution, SolverConfig, Status};

/// Solves the LP relaxation only (integrality dropped). Exposed for bounding
/// and diagnostics.
pub fn solve_relaxation(model: &Model) -> Result<Option<(Vec<Rational>, Rational)>, SolveError> {
    let lower = vec![rational::int(0); model.num_vars()];
    let upper: Vec<_> = model.vars().iter().map(|v| v.upper_bound()).collect();
    match simplex::solve_relaxation(model, &lower, &upper) {
        simplex::LpOutcome::Optimal { values, objective } => Ok(Some((values, objective))),
        simplex::LpOutcome::Infeasible => Ok(None),
        simplex::LpOutcome::Unbounded => Err(SolveError::Unbounded),
    }
}
