//! Dropout probabilities: the multiplicative feature model and its fit,
//! Bernoulli scenario sampling, exact and empirical scenario distributions,
//! and probability perturbation.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use milp::rational::{from_f64_decimal, int, parse_decimal, parse_fraction, to_f64, to_fraction_string};
use milp::Rational;
use nalgebra::{DMatrix, DVector};
use num_traits::{One, Signed, Zero};
use rand::Rng;
use serde_json::{json, Value};

use crate::domain::{Agent, FeatureSchema, OutcomeRow};
use crate::error::{DataError, Error, Result};

/// Predicted probabilities are kept inside `[CLAMP, 1 - CLAMP]`.
pub const CLAMP: f64 = 1e-9;
/// Exact enumeration refuses panels larger than this.
pub const MAX_EXACT_PANEL: usize = 20;

const GRADIENT_TOLERANCE: f64 = 1e-8;
const MAX_ITERATIONS: usize = 200;

/// Per-panelist dropout probabilities, aligned with panel order.
///
/// Values are exact rationals; a float copy drives sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutProbs {
    exact: Vec<Rational>,
    approx: Vec<f64>,
}

impl DropoutProbs {
    pub fn new(exact: Vec<Rational>) -> Result<Self> {
        if let Some(i) = exact.iter().position(|p| p.is_negative() || *p > Rational::one()) {
            return Err(Error::Input(format!(
                "probability {} at position {i} is outside [0, 1]",
                exact[i]
            )));
        }
        let approx = exact.iter().map(to_f64).collect();
        Ok(Self { exact, approx })
    }

    /// Converts through the shortest decimal form, so `0.3` becomes exactly 3/10.
    pub fn from_f64(values: &[f64]) -> Result<Self> {
        let exact = values
            .iter()
            .map(|&x| from_f64_decimal(x).ok_or_else(|| Error::Input(format!("probability {x} is not finite"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(exact)
    }

    pub fn uniform(k: usize, p: Rational) -> Result<Self> {
        Self::new(vec![p; k])
    }

    pub fn len(&self) -> usize {
        self.exact.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exact.is_empty()
    }

    pub fn get(&self, i: usize) -> &Rational {
        &self.exact[i]
    }

    pub fn exact(&self) -> &[Rational] {
        &self.exact
    }

    pub fn as_f64(&self) -> &[f64] {
        &self.approx
    }

    pub fn sum(&self) -> Rational {
        self.exact.iter().fold(Rational::zero(), |acc, p| acc + p)
    }

    /// Largest absolute difference between entries.
    pub fn sup_distance(&self, other: &DropoutProbs) -> Rational {
        self.exact
            .iter()
            .zip(&other.exact)
            .map(|(a, b)| (a - b).abs())
            .max()
            .unwrap_or_else(Rational::zero)
    }

    /// `{panel id: probability}`; probabilities written as `"p/q"` strings.
    pub fn to_json(&self, panel: &[Agent]) -> Value {
        let map: serde_json::Map<String, Value> = panel
            .iter()
            .zip(&self.exact)
            .map(|(a, p)| (a.id.clone(), Value::String(to_fraction_string(p))))
            .collect();
        Value::Object(map)
    }

    /// Reads `{panel id: number or "p/q"}`. Every panelist must be present.
    pub fn from_json(text: &str, panel: &[Agent]) -> Result<Self> {
        let map: IndexMap<String, Value> = serde_json::from_str(text).map_err(|e| DataError::Json(e.to_string()))?;
        let mut exact = Vec::with_capacity(panel.len());
        for a in panel {
            let v = map
                .get(&a.id)
                .ok_or_else(|| DataError::Json(format!("no probability for panelist `{}`", a.id)))?;
            exact.push(json_rational(v).ok_or_else(|| DataError::Json(format!("bad probability for `{}`", a.id)))?);
        }
        if let Some(extra) = map.keys().find(|id| !panel.iter().any(|a| &&a.id == id)) {
            return Err(DataError::Json(format!("`{extra}` is not a panelist")).into());
        }
        Self::new(exact)
    }
}

pub(crate) fn json_rational(v: &Value) -> Option<Rational> {
    match v {
        Value::Number(n) => parse_decimal(&n.to_string()),
        Value::String(s) => parse_fraction(s).or_else(|| parse_decimal(s)),
        _ => None,
    }
}

/// Includes each panelist independently with its probability. One uniform
/// draw is consumed per panelist, in panel order.
pub fn sample_dropout_set<R: Rng>(probs: &DropoutProbs, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, &p) in probs.approx.iter().enumerate() {
        let u: f64 = rng.gen();
        if u < p {
            out.push(i);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    /// Dropped panel indices, ascending.
    pub dropped: Vec<usize>,
    pub weight: Rational,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistributionKind {
    Exact,
    Empirical { samples: usize, seed: Option<u64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioDistribution {
    pub scenarios: Vec<Scenario>,
    pub kind: DistributionKind,
}

impl ScenarioDistribution {
    /// Collapses repeated draws; weight = multiplicity / number of draws.
    /// Scenarios come out ordered by their sorted index lists.
    pub fn from_draws(draws: Vec<Vec<usize>>) -> Self {
        let s = draws.len();
        let mut tally: BTreeMap<Vec<usize>, i64> = BTreeMap::new();
        for mut d in draws {
            d.sort_unstable();
            *tally.entry(d).or_default() += 1;
        }
        let scenarios = tally
            .into_iter()
            .map(|(dropped, m)| Scenario {
                dropped,
                weight: Rational::new(m.into(), (s as i64).into()),
            })
            .collect();
        Self {
            scenarios,
            kind: DistributionKind::Empirical { samples: s, seed: None },
        }
    }

    /// A one-scenario distribution.
    pub fn point(dropped: Vec<usize>) -> Self {
        let mut dropped = dropped;
        dropped.sort_unstable();
        Self {
            scenarios: vec![Scenario {
                dropped,
                weight: int(1),
            }],
            kind: DistributionKind::Exact,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        if let DistributionKind::Empirical { seed: s, .. } = &mut self.kind {
            *s = Some(seed);
        }
        self
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn total_weight(&self) -> Rational {
        self.scenarios.iter().fold(Rational::zero(), |acc, s| acc + &s.weight)
    }

    /// Total-variation distance to another distribution over the same panel.
    pub fn total_variation(&self, other: &ScenarioDistribution) -> Rational {
        let mut diff: BTreeMap<&[usize], Rational> = BTreeMap::new();
        for s in &self.scenarios {
            *diff.entry(&s.dropped).or_insert_with(Rational::zero) += &s.weight;
        }
        for s in &other.scenarios {
            *diff.entry(&s.dropped).or_insert_with(Rational::zero) -= &s.weight;
        }
        diff.values().fold(Rational::zero(), |acc, d| acc + d.abs()) / int(2)
    }

    pub fn to_json(&self, panel: &[Agent]) -> Value {
        let scenarios: Vec<Value> = self
            .scenarios
            .iter()
            .map(|s| {
                let mut ids: Vec<&str> = s.dropped.iter().map(|&i| panel[i].id.as_str()).collect();
                ids.sort_unstable();
                json!({"dropped": ids, "weight": to_fraction_string(&s.weight)})
            })
            .collect();
        match self.kind {
            DistributionKind::Exact => json!({"kind": "exact", "scenarios": scenarios}),
            DistributionKind::Empirical { samples, seed } => {
                json!({"kind": "empirical", "samples": samples, "seed": seed, "scenarios": scenarios})
            }
        }
    }

    pub fn from_json(text: &str, panel: &[Agent]) -> Result<Self> {
        let bad = |m: &str| Error::from(DataError::Json(m.to_string()));
        let v: Value = serde_json::from_str(text).map_err(|e| DataError::Json(e.to_string()))?;
        let index: std::collections::HashMap<&str, usize> =
            panel.iter().enumerate().map(|(i, a)| (a.id.as_str(), i)).collect();
        let kind = match v["kind"].as_str() {
            Some("exact") => DistributionKind::Exact,
            Some("empirical") => DistributionKind::Empirical {
                samples: v["samples"]
                    .as_u64()
                    .ok_or_else(|| bad("empirical distribution needs `samples`"))? as usize,
                seed: v["seed"].as_u64(),
            },
            _ => return Err(bad("`kind` must be exact or empirical")),
        };
        let mut merged: BTreeMap<Vec<usize>, Rational> = BTreeMap::new();
        for s in v["scenarios"].as_array().ok_or_else(|| bad("missing `scenarios`"))? {
            let mut dropped = Vec::new();
            for id in s["dropped"]
                .as_array()
                .ok_or_else(|| bad("scenario without `dropped`"))?
            {
                let id = id.as_str().ok_or_else(|| bad("panel ids must be strings"))?;
                dropped.push(*index.get(id).ok_or_else(|| bad(&format!("`{id}` is not a panelist")))?);
            }
            dropped.sort_unstable();
            dropped.dedup();
            let w = json_rational(&s["weight"]).ok_or_else(|| bad("bad scenario weight"))?;
            if !w.is_positive() {
                return Err(bad("scenario weights must be positive"));
            }
            *merged.entry(dropped).or_insert_with(Rational::zero) += w;
        }
        let dist = Self {
            scenarios: merged
                .into_iter()
                .map(|(dropped, weight)| Scenario { dropped, weight })
                .collect(),
            kind,
        };
        if dist.total_weight() != Rational::one() {
            return Err(bad("scenario weights must sum to 1"));
        }
        Ok(dist)
    }
}

/// `s` independent draws, duplicates collapsed.
pub fn build_empirical_distribution<R: Rng>(
    probs: &DropoutProbs,
    s: usize,
    rng: &mut R,
) -> Result<ScenarioDistribution> {
    if s == 0 {
        return Err(Error::Input("sample count must be at least 1".into()));
    }
    Ok(ScenarioDistribution::from_draws(
        (0..s).map(|_| sample_dropout_set(probs, rng)).collect(),
    ))
}

/// Every dropout set with positive probability, with exact product weights.
pub fn enumerate_exact_distribution(probs: &DropoutProbs) -> Result<ScenarioDistribution> {
    let k = probs.len();
    if k > MAX_EXACT_PANEL {
        return Err(Error::TooLarge(format!(
            "exact enumeration needs 2^{k} scenarios; use a sampled distribution for panels over {MAX_EXACT_PANEL}"
        )));
    }
    let mut scenarios = Vec::new();
    for mask in 0u32..(1u32 << k) {
        let mut w = Rational::one();
        for (i, p) in probs.exact.iter().enumerate() {
            if mask >> i & 1 == 1 {
                w *= p;
            } else {
                w *= Rational::one() - p;
            }
            if w.is_zero() {
                break;
            }
        }
        if !w.is_zero() {
            let dropped = (0..k).filter(|i| mask >> i & 1 == 1).collect();
            scenarios.push(Scenario { dropped, weight: w });
        }
    }
    scenarios.sort_by(|a, b| a.dropped.cmp(&b.dropped));
    Ok(ScenarioDistribution {
        scenarios,
        kind: DistributionKind::Exact,
    })
}

/// Each entry redrawn uniformly from `[max(0, p - gamma), min(1, p + gamma)]`.
pub fn perturb_probabilities<R: Rng>(probs: &DropoutProbs, gamma: &Rational, rng: &mut R) -> Result<DropoutProbs> {
    if gamma.is_negative() || *gamma > Rational::one() {
        return Err(Error::Input(format!("gamma {gamma} is outside [0, 1]")));
    }
    let mut out = Vec::with_capacity(probs.len());
    for p in &probs.exact {
        let lo = (p - gamma).max(Rational::zero());
        let hi = (p + gamma).min(Rational::one());
        // Always consume one draw so streams stay aligned across gammas.
        let u: f64 = rng.gen();
        if lo == hi {
            out.push(lo);
            continue;
        }
        let x = to_f64(&lo) + u * (to_f64(&hi) - to_f64(&lo));
        let x = from_f64_decimal(x).unwrap_or_else(|| lo.clone());
        out.push(x.max(lo).min(hi));
    }
    DropoutProbs::new(out)
}

/// Every entry replaced by the exact mean.
pub fn equalize_probabilities(probs: &DropoutProbs) -> Result<DropoutProbs> {
    if probs.is_empty() {
        return Err(Error::Input("cannot equalize an empty probability vector".into()));
    }
    let mean = probs.sum() / int(probs.len() as i64);
    DropoutProbs::uniform(probs.len(), mean)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Degeneracy {
    AllDropped,
    NoneDropped,
}

/// `rho = beta0 * prod_f beta[f, f(i)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutModel {
    pub beta0: f64,
    /// Per flattened feature-value; `None` for values absent from training.
    pub beta: Vec<Option<f64>>,
    pub degenerate: Option<Degeneracy>,
    /// Log-likelihood after each accepted iterate, starting with the initial point.
    pub log_likelihood: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub rho: f64,
    /// Some feature-value had no fitted parameter and counted as neutral.
    pub unseen: bool,
    /// The raw product fell outside the clamp range.
    pub clamped: bool,
}

impl DropoutModel {
    pub fn predict(&self, agent: &Agent, schema: &FeatureSchema) -> Prediction {
        let mut rho = self.beta0;
        let mut unseen = false;
        for j in agent.fvs(schema) {
            match self.beta[j] {
                Some(b) => rho *= b,
                None => unseen = true,
            }
        }
        let clamped = !(CLAMP..=1.0 - CLAMP).contains(&rho);
        Prediction {
            rho: rho.clamp(CLAMP, 1.0 - CLAMP),
            unseen,
            clamped,
        }
    }

    /// Probabilities for a whole panel plus the per-agent predictions.
    pub fn predict_panel(&self, panel: &[Agent], schema: &FeatureSchema) -> Result<(DropoutProbs, Vec<Prediction>)> {
        let preds: Vec<Prediction> = panel.iter().map(|a| self.predict(a, schema)).collect();
        let rho: Vec<f64> = preds.iter().map(|p| p.rho).collect();
        Ok((DropoutProbs::from_f64(&rho)?, preds))
    }

    pub fn to_json(&self, schema: &FeatureSchema) -> Value {
        let mut beta = serde_json::Map::new();
        for (fi, f) in schema.features().iter().enumerate() {
            let mut vals = serde_json::Map::new();
            for (vi, v) in f.values.iter().enumerate() {
                if let Some(b) = self.beta[schema.fv_index(fi, vi)] {
                    vals.insert(v.clone(), json!(b));
                }
            }
            beta.insert(f.name.clone(), Value::Object(vals));
        }
        let mut out = json!({"beta0": self.beta0, "beta": beta});
        if let Some(d) = self.degenerate {
            out["degenerate"] = json!(match d {
                Degeneracy::AllDropped => "all_dropped",
                Degeneracy::NoneDropped => "none_dropped",
            });
        }
        out
    }

    pub fn from_json(text: &str, schema: &FeatureSchema) -> Result<Self> {
        let bad = |m: String| Error::from(DataError::Json(m));
        let v: Value = serde_json::from_str(text).map_err(|e| DataError::Json(e.to_string()))?;
        let beta0 = v["beta0"].as_f64().ok_or_else(|| bad("missing `beta0`".into()))?;
        let mut beta = vec![None; schema.num_fv()];
        let obj = v["beta"].as_object().ok_or_else(|| bad("missing `beta`".into()))?;
        for (fname, vals) in obj {
            let f = schema
                .feature_index(fname)
                .ok_or_else(|| bad(format!("unknown feature `{fname}`")))?;
            for (vname, b) in vals
                .as_object()
                .ok_or_else(|| bad(format!("`{fname}` must map values")))?
            {
                let vi = schema
                    .value_index(f, vname)
                    .ok_or_else(|| bad(format!("unknown value `{fname}={vname}`")))?;
                let b = b
                    .as_f64()
                    .filter(|b| *b > 0.0)
                    .ok_or_else(|| bad(format!("bad beta for `{fname}={vname}`")))?;
                beta[schema.fv_index(f, vi)] = Some(b);
            }
        }
        let degenerate = match v["degenerate"].as_str() {
            Some("all_dropped") => Some(Degeneracy::AllDropped),
            Some("none_dropped") => Some(Degeneracy::NoneDropped),
            _ => None,
        };
        if beta0 <= 0.0 {
            return Err(bad("`beta0` must be positive".into()));
        }
        Ok(Self {
            beta0,
            beta,
            degenerate,
            log_likelihood: Vec::new(),
        })
    }
}

/// Maximum-likelihood fit of the multiplicative model.
///
/// Works in log space with one reference value per feature (the most frequent
/// one) fixed at zero, by damped Newton steps. Afterwards each feature's
/// parameters are recentred so their count-weighted geometric mean is 1, the
/// scale moving into `beta0`.
pub fn fit_dropout_model(rows: &[OutcomeRow], schema: &FeatureSchema) -> Result<DropoutModel> {
    if rows.is_empty() {
        return Err(Error::Input("no outcome rows to fit".into()));
    }
    let nfv = schema.num_fv();
    let mut fv_rows = vec![0usize; nfv];
    // Aggregate identical feature vectors: (rows, dropped).
    let mut types: BTreeMap<Vec<usize>, (f64, f64)> = BTreeMap::new();
    for r in rows {
        if !r.agent.conforms(schema) {
            return Err(Error::Input(format!(
                "agent `{}` does not match the schema",
                r.agent.id
            )));
        }
        for j in r.agent.fvs(schema) {
            fv_rows[j] += 1;
        }
        let e = types.entry(r.agent.values.clone()).or_default();
        e.0 += 1.0;
        if r.dropped {
            e.1 += 1.0;
        }
    }
    let seen: Vec<bool> = fv_rows.iter().map(|&n| n > 0).collect();
    let dropped = rows.iter().filter(|r| r.dropped).count();
    let neutral: Vec<Option<f64>> = seen.iter().map(|&s| s.then_some(1.0)).collect();
    if dropped == 0 || dropped == rows.len() {
        let (beta0, d) = if dropped == 0 {
            (CLAMP, Degeneracy::NoneDropped)
        } else {
            (1.0 - CLAMP, Degeneracy::AllDropped)
        };
        log::warn!("all training rows share one outcome; returning the boundary model");
        return Ok(DropoutModel {
            beta0,
            beta: neutral,
            degenerate: Some(d),
            log_likelihood: Vec::new(),
        });
    }

    // Parameter 0 is log beta0; then one per seen non-reference value.
    let mut param_of = vec![None; nfv];
    let mut nparams = 1;
    for f in 0..schema.num_features() {
        let range = schema.fv_range(f);
        let reference = range
            .clone()
            .filter(|&j| seen[j])
            .max_by_key(|&j| (fv_rows[j], std::cmp::Reverse(j)));
        for j in range {
            if seen[j] && Some(j) != reference {
                param_of[j] = Some(nparams);
                nparams += 1;
            }
        }
    }
    let design: Vec<(Vec<usize>, f64, f64)> = types
        .iter()
        .map(|(values, &(n, y))| {
            let mut cols = vec![0];
            for (f, &v) in values.iter().enumerate() {
                if let Some(p) = param_of[schema.fv_index(f, v)] {
                    cols.push(p);
                }
            }
            (cols, n, y)
        })
        .collect();

    let log_rho = |theta: &DVector<f64>, cols: &[usize]| cols.iter().map(|&c| theta[c]).sum::<f64>();
    let loglik = |theta: &DVector<f64>| -> Option<f64> {
        let mut ll = 0.0;
        for (cols, n, y) in &design {
            let lr = log_rho(theta, cols);
            if lr >= 0.0 {
                return None;
            }
            ll += y * lr + (n - y) * (-lr.exp()).ln_1p();
        }
        Some(ll)
    };

    let mut theta = DVector::zeros(nparams);
    theta[0] = (dropped as f64 / rows.len() as f64).ln();
    let mut ll = loglik(&theta).expect("initial point is interior");
    let mut trace = vec![ll];
    for _ in 0..MAX_ITERATIONS {
        let mut grad = DVector::zeros(nparams);
        let mut neg_hess = DMatrix::zeros(nparams, nparams);
        for (cols, n, y) in &design {
            let rho = log_rho(&theta, cols).exp();
            let g = y - (n - y) * rho / (1.0 - rho);
            let h = (n - y) * rho / ((1.0 - rho) * (1.0 - rho));
            for &a in cols {
                grad[a] += g;
                for &b in cols {
                    neg_hess[(a, b)] += h;
                }
            }
        }
        if grad.norm() <= GRADIENT_TOLERANCE {
            break;
        }
        let step = newton_direction(&neg_hess, &grad);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = &theta + &step * t;
            if let Some(cand_ll) = loglik(&candidate) {
                if cand_ll >= ll {
                    accepted = Some((candidate, cand_ll));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((next, next_ll)) = accepted else { break };
        let moved = (&next - &theta).norm();
        theta = next;
        ll = next_ll;
        trace.push(ll);
        if moved == 0.0 {
            break;
        }
    }

    let mut beta0_log = theta[0];
    let mut beta_log: Vec<Option<f64>> = (0..nfv)
        .map(|j| seen[j].then(|| param_of[j].map_or(0.0, |p| theta[p])))
        .collect();
    for f in 0..schema.num_features() {
        let range = schema.fv_range(f);
        let total: f64 = range.clone().map(|j| fv_rows[j] as f64).sum();
        let mean: f64 = range
            .clone()
            .filter_map(|j| beta_log[j].map(|b| b * fv_rows[j] as f64))
            .sum::<f64>()
            / total;
        for j in range {
            if let Some(b) = &mut beta_log[j] {
                *b -= mean;
            }
        }
        beta0_log += mean;
    }
    Ok(DropoutModel {
        beta0: beta0_log.exp(),
        beta: beta_log.into_iter().map(|b| b.map(f64::exp)).collect(),
        degenerate: None,
        log_likelihood: trace,
    })
}

/// Solves `H d = g` for positive semidefinite `H`, adding a growing ridge when
/// the Cholesky factorization fails.
fn newton_direction(neg_hess: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let scale = neg_hess.diagonal().amax().max(1e-12);
    let mut ridge = 0.0;
    loop {
        let m = neg_hess + DMatrix::identity(grad.len(), grad.len()) * ridge;
        if let Some(ch) = m.cholesky() {
            return ch.solve(grad);
        }
        ridge = if ridge == 0.0 { scale * 1e-10 } else { ridge * 10.0 };
        if ridge > scale * 1e6 {
            return grad.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use milp::rational::ratio;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn probs(v: &[(i64, i64)]) -> DropoutProbs {
        DropoutProbs::new(v.iter().map(|&(a, b)| ratio(a, b)).collect()).unwrap()
    }

    #[test]
    fn decimal_conversion_is_exact() {
        let p = DropoutProbs::from_f64(&[0.3, 0.25]).unwrap();
        assert_eq!(p.get(0), &ratio(3, 10));
        assert!(DropoutProbs::from_f64(&[1.5]).is_err());
    }

    #[test]
    fn sampling_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zero = probs(&[(0, 1); 5]);
        let one = probs(&[(1, 1); 5]);
        for _ in 0..100 {
            assert!(sample_dropout_set(&zero, &mut rng).is_empty());
            assert_eq!(sample_dropout_set(&one, &mut rng), vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn sampling_frequency() {
        let p = DropoutProbs::from_f64(&[0.3, 0.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let hits = (0..n).filter(|_| sample_dropout_set(&p, &mut rng) == vec![0]).count();
        let se = (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - 0.3).abs() <= 3.0 * se);
    }

    #[test]
    fn empirical_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = build_empirical_distribution(&probs(&[(0, 1); 4]), 300, &mut rng).unwrap();
        assert_eq!(
            d.scenarios,
            vec![Scenario {
                dropped: vec![],
                weight: int(1)
            }]
        );

        let half = probs(&[(1, 2), (1, 2)]);
        let d = build_empirical_distribution(&half, 10_000, &mut rng).unwrap();
        assert_eq!(d.len(), 4);
        for s in &d.scenarios {
            assert!((to_f64(&s.weight) - 0.25).abs() <= 0.03);
        }
        assert_eq!(d.total_weight(), int(1));

        let a = build_empirical_distribution(&half, 50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = build_empirical_distribution(&half, 50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(build_empirical_distribution(&half, 0, &mut rng).is_err());
    }

    #[test]
    fn exact_examples() {
        let d = enumerate_exact_distribution(&probs(&[(1, 2)])).unwrap();
        assert_eq!(
            d.scenarios,
            vec![
                Scenario {
                    dropped: vec![],
                    weight: ratio(1, 2)
                },
                Scenario {
                    dropped: vec![0],
                    weight: ratio(1, 2)
                }
            ]
        );
        let d = enumerate_exact_distribution(&probs(&[(1, 1), (0, 1)])).unwrap();
        assert_eq!(
            d.scenarios,
            vec![Scenario {
                dropped: vec![0],
                weight: int(1)
            }]
        );
        let d = enumerate_exact_distribution(&probs(&[(1, 3), (2, 7), (5, 11)])).unwrap();
        assert_eq!(d.total_weight(), int(1));
        assert!(enumerate_exact_distribution(&DropoutProbs::uniform(21, ratio(1, 2)).unwrap()).is_err());
    }

    #[test]
    fn perturb_and_equalize() {
        let p = DropoutProbs::from_f64(&[0.0, 0.5, 1.0, 0.13]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(perturb_probabilities(&p, &int(0), &mut rng).unwrap(), p);
        let gamma = ratio(1, 5);
        for _ in 0..1000 {
            let q = perturb_probabilities(&p, &gamma, &mut rng).unwrap();
            assert!(q.sup_distance(&p) <= gamma);
            assert!(*q.get(0) <= gamma);
        }
        let e = equalize_probabilities(&DropoutProbs::from_f64(&[0.2, 0.4]).unwrap()).unwrap();
        assert_eq!(e.exact(), &[ratio(3, 10), ratio(3, 10)]);
        let flat = DropoutProbs::uniform(3, ratio(1, 7)).unwrap();
        assert_eq!(equalize_probabilities(&flat).unwrap(), flat);
        let skew = DropoutProbs::from_f64(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let e = equalize_probabilities(&skew).unwrap();
        assert_eq!(e.get(2), &ratio(1, 4));
        assert_eq!(e.sum(), skew.sum());
    }

    #[test]
    fn json_round_trips() {
        let panel: Vec<Agent> = (0..3).map(|i| Agent::new(format!("p{i}"), vec![0])).collect();
        let p = probs(&[(1, 3), (0, 1), (1, 2)]);
        assert_eq!(
            DropoutProbs::from_json(&p.to_json(&panel).to_string(), &panel).unwrap(),
            p
        );
        let numeric = DropoutProbs::from_json(r#"{"p0": 0.3, "p1": 0, "p2": "1/2"}"#, &panel).unwrap();
        assert_eq!(numeric.get(0), &ratio(3, 10));
        assert!(DropoutProbs::from_json(r#"{"p0": 0.3}"#, &panel).is_err());

        let d = enumerate_exact_distribution(&p).unwrap();
        assert_eq!(
            ScenarioDistribution::from_json(&d.to_json(&panel).to_string(), &panel).unwrap(),
            d
        );
    }

    fn schema1(values: usize) -> FeatureSchema {
        let vals: Vec<String> = (0..values).map(|v| format!("v{v}")).collect();
        FeatureSchema::new(vec![crate::domain::Feature {
            name: "f".into(),
            values: vals,
        }])
        .unwrap()
    }

    #[test]
    fn fit_bernoulli_mean() {
        let s = schema1(1);
        let rows: Vec<OutcomeRow> = (0..10)
            .map(|i| OutcomeRow {
                agent: Agent::new(i.to_string(), vec![0]),
                dropped: i < 5,
            })
            .collect();
        let m = fit_dropout_model(&rows, &s).unwrap();
        assert!((m.predict(&rows[0].agent, &s).rho - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fit_degenerate() {
        let s = schema1(2);
        let rows: Vec<OutcomeRow> = (0..6)
            .map(|i| OutcomeRow {
                agent: Agent::new(i.to_string(), vec![i % 2]),
                dropped: false,
            })
            .collect();
        let m = fit_dropout_model(&rows, &s).unwrap();
        assert_eq!(m.degenerate, Some(Degeneracy::NoneDropped));
        assert_eq!(m.predict(&rows[0].agent, &s).rho, CLAMP);
        assert!(fit_dropout_model(&[], &s).is_err());
    }

    #[test]
    fn fit_saturated_reproduces_group_rates() {
        let s = schema1(4);
        let rates = [(3, 10), (1, 4), (7, 8), (0, 5)];
        let mut rows = Vec::new();
        for (v, &(d, n)) in rates.iter().enumerate() {
            for i in 0..n {
                rows.push(OutcomeRow {
                    agent: Agent::new(format!("{v}-{i}"), vec![v]),
                    dropped: i < d,
                });
            }
        }
        let m = fit_dropout_model(&rows, &s).unwrap();
        for (v, &(d, n)) in rates.iter().enumerate() {
            let rho = m.predict(&Agent::new("x", vec![v]), &s).rho;
            let want = (d as f64 / n as f64).clamp(CLAMP, 1.0 - CLAMP);
            assert!((rho - want).abs() < 1e-6, "value {v}: {rho} vs {want}");
        }
        assert!(m.log_likelihood.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn predict_examples() {
        let s = schema1(2);
        let m = DropoutModel {
            beta0: 0.2,
            beta: vec![Some(1.0), Some(1.0)],
            degenerate: None,
            log_likelihood: vec![],
        };
        assert!((m.predict(&Agent::new("a", vec![0]), &s).rho - 0.2).abs() < 1e-15);
        let m = DropoutModel {
            beta0: 0.5,
            beta: vec![Some(0.5), None],
            degenerate: None,
            log_likelihood: vec![],
        };
        assert!((m.predict(&Agent::new("a", vec![0]), &s).rho - 0.25).abs() < 1e-15);
        assert!(m.predict(&Agent::new("a", vec![1]), &s).unseen);
        let m = DropoutModel {
            beta0: 0.9,
            beta: vec![Some(3.0), None],
            degenerate: None,
            log_likelihood: vec![],
        };
        let p = m.predict(&Agent::new("a", vec![0]), &s);
        assert!(p.clamped);
        assert_eq!(p.rho, 1.0 - CLAMP);
    }

    #[test]
    fn model_json_round_trip() {
        let s = schema1(3);
        let m = DropoutModel {
            beta0: 0.25,
            beta: vec![Some(1.5), None, Some(0.5)],
            degenerate: None,
            log_likelihood: vec![],
        };
        assert_eq!(DropoutModel::from_json(&m.to_json(&s).to_string(), &s).unwrap(), m);
    }
}
