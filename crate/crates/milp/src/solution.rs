//! Plain `name value` solution files.
//!
//! One assignment per line. Blank lines and lines starting with `#` or `\`
//! are ignored, except for an optional `# status: <word>` directive
//! (`optimal`, `infeasible` or `time_limit`) that external solver wrappers
//! use to report outcomes without an assignment.

use std::fmt::Write as _;
use std::time::Duration;

use num_traits::{Signed, Zero};

use crate::error::ImportError;
use crate::model::{Cmp, Model, VarKind};
use crate::rational::{int, parse_decimal, ratio, to_decimal_string, Rational};
use crate::simplex::{solve_relaxation, LpOutcome};
use crate::solve::{Solution, Status};

/// Absolute tolerance applied to values read from floating-point solvers.
pub const IMPORT_TOLERANCE: (i64, i64) = (1, 1_000_000);

#[derive(Clone, Debug)]
pub struct Imported {
    pub solution: Solution,
    pub warnings: Vec<String>,
}

pub fn write_solution(model: &Model, solution: &Solution) -> String {
    let mut out = String::new();
    let status = match solution.status {
        Status::Optimal => "optimal",
        Status::Infeasible => "infeasible",
        Status::BudgetExceeded => "time_limit",
    };
    let _ = writeln!(out, "# status: {status}");
    if let Some(obj) = &solution.objective {
        let _ = writeln!(out, "# objective: {}", to_decimal_string(obj));
    }
    for (var, value) in model.vars().iter().zip(&solution.assignment) {
        let _ = writeln!(out, "{} {}", var.name, to_decimal_string(value));
    }
    out
}

/// Reads a solution for `model`.
///
/// Values of integral variables within the import tolerance of an integer are
/// snapped to it. Continuous variables are then recomputed exactly by
/// re-solving the LP with every integral variable fixed, so the returned
/// objective is exact. If that fails, the first constraint violated by more
/// than the tolerance is reported. Missing values default to zero with a
/// warning.
pub fn import_solution(model: &Model, text: &str) -> Result<Imported, ImportError> {
    let mut warnings = Vec::new();
    let mut status = None;
    let mut raw: Vec<Option<Rational>> = vec![None; model.num_vars()];
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') || trimmed.starts_with('\\') {
            let body = trimmed.trim_start_matches(['#', '\\']).trim();
            if let Some(word) = body.strip_prefix("status:") {
                status = Some(word.trim().to_ascii_lowercase());
            }
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let (Some(name), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(ImportError::Malformed {
                line: line_no,
                text: trimmed.to_string(),
            });
        };
        let value = parse_decimal(value).ok_or_else(|| ImportError::Malformed {
            line: line_no,
            text: trimmed.to_string(),
        })?;
        let id = model.var_id(name).ok_or_else(|| ImportError::UnknownVariable {
            line: line_no,
            name: name.to_string(),
        })?;
        raw[id.0] = Some(value);
    }

    let reported = match status.as_deref() {
        None | Some("optimal") => Status::Optimal,
        Some("infeasible") => Status::Infeasible,
        Some("time_limit") | Some("budget_exceeded") => Status::BudgetExceeded,
        Some(other) => {
            return Err(ImportError::Malformed {
                line: 0,
                text: format!("status: {other}"),
            });
        }
    };
    let any_value = raw.iter().any(Option::is_some);
    if reported == Status::Infeasible || (reported == Status::BudgetExceeded && !any_value) {
        return Ok(Imported {
            solution: empty(reported),
            warnings,
        });
    }

    let tol = ratio(IMPORT_TOLERANCE.0, IMPORT_TOLERANCE.1);
    let mut values = Vec::with_capacity(raw.len());
    for (var, value) in model.vars().iter().zip(raw) {
        let mut v = value.unwrap_or_else(|| {
            warnings.push(format!("no value for `{}`; using 0", var.name));
            Rational::zero()
        });
        if var.kind.is_integral() {
            let rounded = v.round();
            if (&v - &rounded).abs() > tol {
                return Err(ImportError::Infeasible(format!("`{}` is not integral", var.name)));
            }
            v = rounded;
        }
        if v.is_negative() {
            if -&v > tol {
                return Err(ImportError::Infeasible(format!("lower bound of `{}`", var.name)));
            }
            v = Rational::zero();
        }
        if let Some(ub) = var.upper_bound() {
            if v > ub {
                if &v - &ub > tol {
                    return Err(ImportError::Infeasible(format!("upper bound of `{}`", var.name)));
                }
                v = ub;
            }
        }
        values.push(v);
    }
    let loose_violation = |values: &[Rational]| {
        model.constraints().iter().find_map(|c| {
            let lhs = c.lhs(values);
            let gap = match c.cmp {
                Cmp::Le => &lhs - &c.rhs,
                Cmp::Ge => &c.rhs - &lhs,
                Cmp::Eq => (&lhs - &c.rhs).abs(),
            };
            (gap > tol).then(|| c.name.clone())
        })
    };

    if model.vars().iter().any(|v| v.kind == VarKind::Continuous) {
        let lower: Vec<Rational> = model
            .vars()
            .iter()
            .zip(&values)
            .map(|(var, v)| if var.kind.is_integral() { v.clone() } else { int(0) })
            .collect();
        let upper: Vec<Option<Rational>> = model
            .vars()
            .iter()
            .zip(&values)
            .map(|(var, v)| {
                if var.kind.is_integral() {
                    Some(v.clone())
                } else {
                    var.upper_bound()
                }
            })
            .collect();
        match solve_relaxation(model, &lower, &upper) {
            LpOutcome::Optimal { values: exact, .. } => values = exact,
            _ => {
                let name = loose_violation(&values)
                    .or_else(|| model.first_violation(&values).map(|v| v.to_string()))
                    .unwrap_or_else(|| "no exact completion of the continuous variables".into());
                return Err(ImportError::Infeasible(name));
            }
        }
    } else if let Some(name) = loose_violation(&values) {
        return Err(ImportError::Infeasible(name));
    }
    if let Some(v) = model.first_violation(&values) {
        return Err(ImportError::Infeasible(v.to_string()));
    }
    let objective = model.objective_value(&values);
    let solution = Solution {
        status: reported,
        assignment: values,
        objective: Some(objective),
        node_count: 0,
        wall_time: Duration::ZERO,
    };
    Ok(Imported { solution, warnings })
}

fn empty(status: Status) -> Solution {
    Solution {
        status,
        assignment: Vec::new(),
        objective: None,
        node_count: 0,
        wall_time: Duration::ZERO,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        let mut m = Model::new();
        let x = m.binary("x").unwrap();
        let y = m.binary("y").unwrap();
        let d = m.continuous("d").unwrap();
        m.set_objective(vec![(x, int(1)), (d, int(1))]).unwrap();
        m.add_constraint("cap", vec![(x, int(1)), (y, int(1))], Cmp::Le, int(1))
            .unwrap();
        m.add_constraint("dev", vec![(d, int(3)), (y, int(-1))], Cmp::Ge, int(0))
            .unwrap();
        m
    }

    #[test]
    fn feasible_assignment() {
        let m = model();
        let got = import_solution(&m, "x 0\ny 1\nd 0.3333333333\n").unwrap();
        assert_eq!(got.solution.status, Status::Optimal);
        assert_eq!(got.solution.assignment, vec![int(0), int(1), ratio(1, 3)]);
        assert_eq!(got.solution.objective, Some(ratio(1, 3)));
        assert!(got.warnings.is_empty());
    }

    #[test]
    fn violated_constraint_is_named() {
        let m = model();
        let err = import_solution(&m, "x 1\ny 1\nd 1\n").unwrap_err();
        assert_eq!(err, ImportError::Infeasible("cap".into()));
    }

    #[test]
    fn whitespace_and_comments() {
        let m = model();
        let plain = import_solution(&m, "x 0\ny 1\nd 0.5\n").unwrap();
        let noisy = import_solution(&m, "# header\n\n   x    0  \n\\ note\n\ty\t1\n d 0.5\n\n").unwrap();
        assert_eq!(plain.solution.assignment, noisy.solution.assignment);
    }

    #[test]
    fn unknown_and_missing() {
        let m = model();
        assert!(matches!(
            import_solution(&m, "q 1\n"),
            Err(ImportError::UnknownVariable { line: 1, .. })
        ));
        let got = import_solution(&m, "y 1\n").unwrap();
        assert_eq!(got.warnings.len(), 2);
        assert_eq!(got.solution.assignment[0], int(0));
    }

    #[test]
    fn near_integral_values_snap() {
        let m = model();
        let got = import_solution(&m, "x 1e-9\ny 0.9999999\nd 0.34\n").unwrap();
        assert_eq!(got.solution.assignment[1], int(1));
    }

    #[test]
    fn status_directive() {
        let m = model();
        let got = import_solution(&m, "# status: infeasible\n").unwrap();
        assert_eq!(got.solution.status, Status::Infeasible);
    }

    #[test]
    fn written_solution_reads_back() {
        let m = model();
        let sol = import_solution(&m, "x 0\ny 1\nd 1\n").unwrap().solution;
        let text = write_solution(&m, &sol);
        let back = import_solution(&m, &text).unwrap().solution;
        assert_eq!(back.assignment, sol.assignment);
    }
}
