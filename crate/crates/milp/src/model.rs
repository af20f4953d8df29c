//! Minimization models over binary, bounded-integer and non-negative
//! continuous variables with exact rational coefficients.

use std::collections::HashMap;
use std::fmt;

use num_traits::{Signed, Zero};

use crate::error::ModelError;
use crate::rational::Rational;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    Binary,
    /// Non-negative integer. Used for aggregated copies of interchangeable
    /// binaries; needs an upper bound to be exported in a `General` section.
    Integer,
    Continuous,
}

impl VarKind {
    pub fn is_integral(self) -> bool {
        !matches!(self, VarKind::Continuous)
    }
}

#[derive(Clone, Debug)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    /// Lower bounds are always zero. Binaries carry an implicit upper bound of 1.
    pub upper: Option<Rational>,
}

impl Variable {
    pub fn upper_bound(&self) -> Option<Rational> {
        match self.kind {
            VarKind::Binary => Some(Rational::from_integer(1.into())),
            _ => self.upper.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Eq,
    Ge,
}

impl Cmp {
    pub fn holds(self, lhs: &Rational, rhs: &Rational) -> bool {
        match self {
            Cmp::Le => lhs <= rhs,
            Cmp::Eq => lhs == rhs,
            Cmp::Ge => lhs >= rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Cmp::Le => "<=",
            Cmp::Eq => "=",
            Cmp::Ge => ">=",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, Rational)>,
    pub cmp: Cmp,
    pub rhs: Rational,
}

impl Constraint {
    pub fn lhs(&self, values: &[Rational]) -> Rational {
        self.terms
            .iter()
            .fold(Rational::zero(), |acc, (v, c)| acc + c * &values[v.0])
    }

    pub fn is_satisfied(&self, values: &[Rational]) -> bool {
        self.cmp.holds(&self.lhs(values), &self.rhs)
    }
}

/// A minimization model. Variables are declared before use, so every
/// constraint refers to declared variables by construction.
#[derive(Clone, Debug, Default)]
pub struct Model {
    vars: Vec<Variable>,
    by_name: HashMap<String, VarId>,
    objective: Vec<(VarId, Rational)>,
    constraints: Vec<Constraint>,
    constraint_names: HashMap<String, usize>,
}

impl Model {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        kind: VarKind,
        upper: Option<Rational>,
    ) -> Result<VarId, ModelError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(ModelError::DuplicateVariable(name));
        }
        if let Some(ub) = &upper {
            if ub.is_negative() {
                return Err(ModelError::NegativeUpperBound(name));
            }
        }
        let id = VarId(self.vars.len());
        self.by_name.insert(name.clone(), id);
        self.vars.push(Variable { name, kind, upper });
        Ok(id)
    }

    pub fn binary(&mut self, name: impl Into<String>) -> Result<VarId, ModelError> {
        self.add_var(name, VarKind::Binary, None)
    }

    pub fn continuous(&mut self, name: impl Into<String>) -> Result<VarId, ModelError> {
        self.add_var(name, VarKind::Continuous, None)
    }

    /// Sets the objective. Repeated variables are summed.
    pub fn set_objective(&mut self, terms: Vec<(VarId, Rational)>) -> Result<(), ModelError> {
        self.objective = self.normalize_terms(terms, "objective")?;
        Ok(())
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(VarId, Rational)>,
        cmp: Cmp,
        rhs: Rational,
    ) -> Result<usize, ModelError> {
        let name = name.into();
        if self.constraint_names.contains_key(&name) {
            return Err(ModelError::DuplicateConstraint(name));
        }
        let terms = self.normalize_terms(terms, &name)?;
        let idx = self.constraints.len();
        self.constraint_names.insert(name.clone(), idx);
        self.constraints.push(Constraint { name, terms, cmp, rhs });
        Ok(idx)
    }

    fn normalize_terms(
        &self,
        terms: Vec<(VarId, Rational)>,
        context: &str,
    ) -> Result<Vec<(VarId, Rational)>, ModelError> {
        let mut merged: Vec<(VarId, Rational)> = Vec::with_capacity(terms.len());
        let mut slot: HashMap<VarId, usize> = HashMap::new();
        for (var, coeff) in terms {
            if var.0 >= self.vars.len() {
                return Err(ModelError::UnknownVariable {
                    context: context.to_string(),
                    index: var.0,
                });
            }
            match slot.get(&var) {
                Some(&i) => merged[i].1 += coeff,
                None => {
                    slot.insert(var, merged.len());
                    merged.push((var, coeff));
                }
            }
        }
        merged.retain(|(_, c)| !c.is_zero());
        Ok(merged)
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn var(&self, id: VarId) -> &Variable {
        &self.vars[id.0]
    }

    pub fn var_id(&self, name: &str) -> Option<VarId> {
        self.by_name.get(name).copied()
    }

    pub fn objective(&self) -> &[(VarId, Rational)] {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn objective_value(&self, values: &[Rational]) -> Rational {
        self.objective
            .iter()
            .fold(Rational::zero(), |acc, (v, c)| acc + c * &values[v.0])
    }

    /// First violated bound, integrality requirement or constraint, if any.
    pub fn first_violation(&self, values: &[Rational]) -> Option<Violation> {
        if values.len() != self.vars.len() {
            return Some(Violation::Arity {
                expected: self.vars.len(),
                got: values.len(),
            });
        }
        for (var, value) in self.vars.iter().zip(values) {
            if value.is_negative() {
                return Some(Violation::Bound(var.name.clone()));
            }
            if let Some(ub) = var.upper_bound() {
                if value > &ub {
                    return Some(Violation::Bound(var.name.clone()));
                }
            }
            if var.kind.is_integral() && !value.is_integer() {
                return Some(Violation::Integrality(var.name.clone()));
            }
        }
        self.constraints
            .iter()
            .find(|c| !c.is_satisfied(values))
            .map(|c| Violation::Constraint(c.name.clone()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Arity { expected: usize, got: usize },
    Bound(String),
    Integrality(String),
    Constraint(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Arity { expected, got } => {
                write!(f, "assignment has {got} values, model has {expected} variables")
            }
            Violation::Bound(v) => write!(f, "variable `{v}` is outside its bounds"),
            Violation::Integrality(v) => write!(f, "variable `{v}` is not integral"),
            Violation::Constraint(c) => write!(f, "constraint `{c}` is violated"),
        }
    }
}
