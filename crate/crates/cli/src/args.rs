//! Value parsers for grid and list flags.

use std::str::FromStr;

use milp::rational::{parse_decimal, parse_fraction};
use milp::{Backend, Rational};

/// Integer grid: `lo:hi:step`, `lo:hi:*factor` or `a,b,c`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid(pub Vec<usize>);

impl FromStr for Grid {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.contains(':') {
            let parts: Vec<&str> = s.split(':').collect();
            let [lo, hi, step] = parts[..] else {
                return Err(format!("range `{s}` must look like lo:hi:step"));
            };
            let num = |x: &str| {
                x.trim()
                    .parse::<usize>()
                    .map_err(|_| format!("`{x}` is not a non-negative integer"))
            };
            let (lo, hi) = (num(lo)?, num(hi)?);
            if lo > hi {
                return Err(format!("range `{s}` is empty"));
            }
            let mut out = Vec::new();
            if let Some(factor) = step.trim().strip_prefix('*') {
                let factor = num(factor)?;
                if factor < 2 || lo == 0 {
                    return Err(format!("geometric range `{s}` needs lo >= 1 and factor >= 2"));
                }
                let mut x = lo;
                while x <= hi {
                    out.push(x);
                    x = x.saturating_mul(factor);
                }
            } else {
                let step = num(step)?;
                if step == 0 {
                    return Err(format!("range `{s}` has a zero step"));
                }
                out.extend((lo..=hi).step_by(step));
            }
            Ok(Grid(out))
        } else {
            let out = s
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse::<usize>()
                        .map_err(|_| format!("`{x}` is not a non-negative integer"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Grid(out))
        }
    }
}

/// Comma list of exact rationals, each a decimal or `p/q`.
#[derive(Clone, Debug, PartialEq)]
pub struct RationalList(pub Vec<Rational>);

impl FromStr for RationalList {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|x| {
                let x = x.trim();
                parse_fraction(x)
                    .or_else(|| parse_decimal(x))
                    .ok_or_else(|| format!("`{x}` is not a number"))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(RationalList)
    }
}

/// Comma list of anything with `FromStr`.
#[derive(Clone, Debug, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: std::fmt::Display,
{
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|x| x.trim().parse().map_err(|e| format!("`{}`: {e}", x.trim())))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

/// `builtin` or `external:<template>`; the template may be quoted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SolverSpec {
    Builtin,
    External(String),
}

impl FromStr for SolverSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("solver `{s}` must be `builtin` or `external:<command with {{lp}} and {{sol}}>`");
        if s == "builtin" {
            return Ok(SolverSpec::Builtin);
        }
        let template = s.strip_prefix("external:").ok_or_else(bad)?.trim();
        let template = ['"', '\'']
            .iter()
            .find_map(|&q| template.strip_prefix(q).and_then(|t| t.strip_suffix(q)))
            .unwrap_or(template);
        match Backend::parse(&format!("external:{template}")) {
            Some(Backend::External(_)) => Ok(SolverSpec::External(template.to_string())),
            _ => Err(bad()),
        }
    }
}
