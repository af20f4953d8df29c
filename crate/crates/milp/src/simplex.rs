//! Dense bounded-variable primal simplex over exact rationals.
//!
//! Two phases with artificial variables. Entering variables follow Dantzig's
//! rule until a run of degenerate pivots, then Bland's rule for the rest of
//! the solve, which guarantees termination. Ties are always broken by the
//! lowest column index so the pivot sequence is reproducible.

use num_traits::{One, Signed, Zero};

use crate::model::{Cmp, Model};
use crate::rational::Rational;

const DEGENERATE_RUN_BEFORE_BLAND: usize = 25;

#[derive(Debug, Clone)]
pub(crate) enum LpOutcome {
    Optimal { values: Vec<Rational>, objective: Rational },
    Infeasible,
    Unbounded,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum State {
    Basic,
    AtLower,
    AtUpper,
}

struct Tableau {
    rows: Vec<Vec<Rational>>,
    /// Current value of the basic variable in each row (shifted space).
    beta: Vec<Rational>,
    basis: Vec<usize>,
    state: Vec<State>,
    /// Width of each column's box; `None` is unbounded above.
    range: Vec<Option<Rational>>,
    reduced: Vec<Rational>,
    bland: bool,
    degenerate_run: usize,
}

/// Solves the LP relaxation of `model` with per-variable bounds
/// `lower[j] <= x_j <= upper[j]` replacing the declared ones.
pub(crate) fn solve_relaxation(model: &Model, lower: &[Rational], upper: &[Option<Rational>]) -> LpOutcome {
    let n = model.num_vars();
    let cons = model.constraints();
    let m = cons.len();

    let mut range: Vec<Option<Rational>> = Vec::with_capacity(n + 2 * m);
    for j in 0..n {
        match &upper[j] {
            Some(ub) => {
                let width = ub - &lower[j];
                if width.is_negative() {
                    return LpOutcome::Infeasible;
                }
                range.push(Some(width));
            }
            None => range.push(None),
        }
    }

    // Structural rows with the lower-bound shift folded into the rhs.
    let mut dense: Vec<Vec<Rational>> = Vec::with_capacity(m);
    let mut rhs: Vec<Rational> = Vec::with_capacity(m);
    let mut slack_sign: Vec<Rational> = Vec::with_capacity(m);
    for c in cons {
        let mut row = vec![Rational::zero(); n];
        let mut b = c.rhs.clone();
        for (v, coeff) in &c.terms {
            row[v.0] += coeff;
            if !lower[v.0].is_zero() {
                b -= coeff * &lower[v.0];
            }
        }
        let sign = match c.cmp {
            Cmp::Le | Cmp::Eq => Rational::one(),
            Cmp::Ge => -Rational::one(),
        };
        dense.push(row);
        rhs.push(b);
        slack_sign.push(sign);
    }
    for c in cons {
        range.push(if c.cmp == Cmp::Eq { Some(Rational::zero()) } else { None });
    }

    // Flip rows with negative rhs and decide which rows need artificials.
    let mut needs_artificial = vec![false; m];
    for i in 0..m {
        if rhs[i].is_negative() {
            for x in dense[i].iter_mut() {
                *x = -x.clone();
            }
            rhs[i] = -rhs[i].clone();
            slack_sign[i] = -slack_sign[i].clone();
        }
        let slack_usable = slack_sign[i].is_positive() && cons[i].cmp != Cmp::Eq;
        needs_artificial[i] = !slack_usable;
    }
    let artificials: Vec<usize> = (0..m).filter(|&i| needs_artificial[i]).collect();
    let total = n + m + artificials.len();
    for _ in &artificials {
        range.push(None);
    }

    let mut rows: Vec<Vec<Rational>> = Vec::with_capacity(m);
    let mut basis = vec![0usize; m];
    let mut art_col = n + m;
    for i in 0..m {
        let mut row = std::mem::take(&mut dense[i]);
        row.resize(total, Rational::zero());
        row[n + i] = slack_sign[i].clone();
        if needs_artificial[i] {
            row[art_col] = Rational::one();
            basis[i] = art_col;
            art_col += 1;
        } else {
            basis[i] = n + i;
        }
        rows.push(row);
    }

    let mut state = vec![State::AtLower; total];
    for &b in &basis {
        state[b] = State::Basic;
    }

    let mut tab = Tableau {
        rows,
        beta: rhs,
        basis,
        state,
        range,
        reduced: vec![Rational::zero(); total],
        bland: false,
        degenerate_run: 0,
    };

    if !artificials.is_empty() {
        let mut cost = vec![Rational::zero(); total];
        for c in cost.iter_mut().skip(n + m) {
            *c = Rational::one();
        }
        tab.price(&cost);
        if tab.run().is_err() {
            // Phase one is bounded below by zero; cannot happen.
            unreachable!("phase one reported unbounded");
        }
        let infeasibility = tab
            .basis
            .iter()
            .zip(&tab.beta)
            .filter(|(b, _)| **b >= n + m)
            .fold(Rational::zero(), |acc, (_, v)| acc + v);
        if infeasibility.is_positive() {
            return LpOutcome::Infeasible;
        }
        for j in n + m..total {
            tab.range[j] = Some(Rational::zero());
            if tab.state[j] == State::AtUpper {
                tab.state[j] = State::AtLower;
            }
        }
    }

    let mut cost = vec![Rational::zero(); total];
    for (v, c) in model.objective() {
        cost[v.0] += c;
    }
    tab.price(&cost);
    tab.bland = false;
    tab.degenerate_run = 0;
    if tab.run().is_err() {
        return LpOutcome::Unbounded;
    }

    let mut shifted = vec![Rational::zero(); total];
    for j in 0..total {
        if tab.state[j] == State::AtUpper {
            shifted[j] = tab.range[j].clone().expect("at upper implies bounded");
        }
    }
    for (i, &b) in tab.basis.iter().enumerate() {
        shifted[b] = tab.beta[i].clone();
    }
    let values: Vec<Rational> = (0..n).map(|j| &lower[j] + &shifted[j]).collect();
    let objective = model.objective_value(&values);
    LpOutcome::Optimal { values, objective }
}

struct Unbounded;

impl Tableau {
    /// Recomputes reduced costs `c_j - c_B^T T_j` for the current basis.
    fn price(&mut self, cost: &[Rational]) {
        let mut reduced = cost.to_vec();
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = &cost[b];
            if cb.is_zero() {
                continue;
            }
            for (j, a) in self.rows[i].iter().enumerate() {
                if !a.is_zero() {
                    reduced[j] -= cb * a;
                }
            }
        }
        self.reduced = reduced;
    }

    fn is_fixed(&self, j: usize) -> bool {
        matches!(&self.range[j], Some(r) if r.is_zero())
    }

    fn choose_entering(&self) -> Option<usize> {
        let mut best: Option<(usize, &Rational)> = None;
        for (j, d) in self.reduced.iter().enumerate() {
            let improving = match self.state[j] {
                State::Basic => false,
                State::AtLower => d.is_negative(),
                State::AtUpper => d.is_positive(),
            };
            if !improving || self.is_fixed(j) {
                continue;
            }
            if self.bland {
                return Some(j);
            }
            match best {
                Some((_, bd)) if d.abs() <= bd.abs() => {}
                _ => best = Some((j, d)),
            }
        }
        best.map(|(j, _)| j)
    }

    fn run(&mut self) -> Result<(), Unbounded> {
        while let Some(q) = self.choose_entering() {
            self.step(q)?;
        }
        Ok(())
    }

    fn step(&mut self, q: usize) -> Result<(), Unbounded> {
        let increasing = self.state[q] == State::AtLower;
        // Leaving candidate: (theta, row, leaves_at_upper).
        let mut best: Option<(Rational, usize, bool)> = None;
        for i in 0..self.rows.len() {
            let alpha = &self.rows[i][q];
            if alpha.is_zero() {
                continue;
            }
            // Basic variable moves by -alpha per unit increase of x_q.
            let rate = if increasing { -alpha.clone() } else { alpha.clone() };
            let b = self.basis[i];
            let limit = if rate.is_negative() {
                Some((&self.beta[i] / -rate, false))
            } else {
                self.range[b].as_ref().map(|ub| ((ub - &self.beta[i]) / rate, true))
            };
            if let Some((theta, at_upper)) = limit {
                let better = match &best {
                    None => true,
                    Some((bt, bi, _)) => theta < *bt || (theta == *bt && self.basis[i] < self.basis[*bi]),
                };
                if better {
                    best = Some((theta, i, at_upper));
                }
            }
        }

        let flip = match (&self.range[q], &best) {
            (Some(width), Some((theta, _, _))) => width < theta,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => return Err(Unbounded),
        };

        if flip {
            let width = self.range[q].clone().expect("flip requires a finite range");
            self.shift_basics(q, &width, increasing);
            self.state[q] = if increasing { State::AtUpper } else { State::AtLower };
            self.note_progress(&width);
            return Ok(());
        }

        let (theta, r, at_upper) = best.expect("pivot row exists");
        self.shift_basics(q, &theta, increasing);
        let entering_value = if increasing {
            theta.clone()
        } else {
            self.range[q].clone().expect("decreasing from upper implies bounded") - &theta
        };
        let leaving = self.basis[r];
        self.state[leaving] = if at_upper { State::AtUpper } else { State::AtLower };
        self.pivot(r, q);
        self.beta[r] = entering_value;
        self.basis[r] = q;
        self.state[q] = State::Basic;
        self.note_progress(&theta);
        Ok(())
    }

    fn note_progress(&mut self, theta: &Rational) {
        if theta.is_zero() {
            self.degenerate_run += 1;
            if self.degenerate_run >= DEGENERATE_RUN_BEFORE_BLAND {
                self.bland = true;
            }
        } else {
            self.degenerate_run = 0;
        }
    }

    fn shift_basics(&mut self, q: usize, theta: &Rational, increasing: bool) {
        if theta.is_zero() {
            return;
        }
        for i in 0..self.rows.len() {
            let alpha = &self.rows[i][q];
            if alpha.is_zero() {
                continue;
            }
            let delta = alpha * theta;
            if increasing {
                self.beta[i] -= delta;
            } else {
                self.beta[i] += delta;
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let piv = self.rows[r][q].clone();
        if !piv.is_one() {
            for x in self.rows[r].iter_mut() {
                if !x.is_zero() {
                    *x /= &piv;
                }
            }
        }
        let pivot_row = std::mem::take(&mut self.rows[r]);
        let nz: Vec<usize> = (0..pivot_row.len()).filter(|&j| !pivot_row[j].is_zero()).collect();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let factor = row[q].clone();
            if factor.is_zero() {
                continue;
            }
            for &j in &nz {
                row[j] -= &factor * &pivot_row[j];
            }
        }
        let factor = self.reduced[q].clone();
        if !factor.is_zero() {
            for &j in &nz {
                self.reduced[j] -= &factor * &pivot_row[j];
            }
        }
        self.rows[r] = pivot_row;
    }
}
