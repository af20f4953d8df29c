//! Exhaustive oracle: every alternate set, every replacement subset.

use std::collections::HashMap;

use num_traits::Zero;

use crate::deviation::{counts_of, DeviationKind};
use crate::domain::Instance;
use crate::dropout::ScenarioDistribution;
use crate::error::{Error, Result};
use crate::Rational;

use super::{AlternateSet, Provenance, ReplacementPolicy, ScenarioOutcome, SelectionResult};

pub const BRUTE_MAX_SETS: u128 = 100_000;
pub const BRUTE_MAX_SCENARIOS: usize = 1_000;

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Best replacement by trying every subset of `alternates` within the cap.
/// Returns the first minimal subset in mask order.
fn brute_replacement(
    instance: &Instance,
    base: &[i64],
    alternates: &[usize],
    cap: Option<usize>,
    dev: DeviationKind,
) -> (Vec<usize>, Rational) {
    let mut best: Option<(Vec<usize>, Rational)> = None;
    for mask in 0u32..(1 << alternates.len()) {
        if cap.is_some_and(|c| mask.count_ones() as usize > c) {
            continue;
        }
        let chosen: Vec<usize> = (0..alternates.len())
            .filter(|b| mask >> b & 1 == 1)
            .map(|b| alternates[b])
            .collect();
        let extra = counts_of(chosen.iter().map(|&i| &instance.pool[i]), &instance.schema);
        let counts: Vec<i64> = base.iter().zip(&extra).map(|(b, e)| b + e).collect();
        let value = dev.metric().value(&counts, &instance.quotas);
        if best.as_ref().is_none_or(|(_, v)| value < *v) {
            best = Some((chosen, value));
        }
    }
    best.expect("the empty set is always a candidate")
}

/// Exact minimizer of expected deviation over all `a`-subsets of the pool.
/// Ties go to the lexicographically first sorted id list.
pub fn brute_force_opt(
    instance: &Instance,
    dist: &ScenarioDistribution,
    dev: DeviationKind,
    policy: ReplacementPolicy,
) -> Result<SelectionResult> {
    let (n, a) = (instance.n(), instance.budget);
    if a > n {
        return Err(Error::Input(format!("budget {a} exceeds pool size {n}")));
    }
    let sets = binomial(n, a);
    if sets > BRUTE_MAX_SETS || dist.len() > BRUTE_MAX_SCENARIOS || a > 20 {
        return Err(Error::TooLarge(format!(
            "brute force would examine {sets} sets over {} scenarios (limits {BRUTE_MAX_SETS} and {BRUTE_MAX_SCENARIOS})",
            dist.len()
        )));
    }
    let panel_counts = counts_of(instance.panel.iter(), &instance.schema);
    let bases: Vec<Vec<i64>> = dist
        .scenarios
        .iter()
        .map(|s| {
            let gone = counts_of(s.dropped.iter().map(|&d| &instance.panel[d]), &instance.schema);
            panel_counts.iter().zip(&gone).map(|(c, g)| c - g).collect()
        })
        .collect();
    let cap = |s: usize| match policy {
        ReplacementPolicy::Capped => Some(dist.scenarios[s].dropped.len()),
        ReplacementPolicy::Uncapped => None,
    };
    let mut pool: Vec<usize> = (0..n).collect();
    pool.sort_by(|&x, &y| instance.pool[x].id.cmp(&instance.pool[y].id));

    let mut best: Option<(Vec<usize>, Rational)> = None;
    let mut idx: Vec<usize> = (0..a).collect();
    loop {
        let set: Vec<usize> = idx.iter().map(|&i| pool[i]).collect();
        let mut memo: HashMap<(&[i64], Option<usize>), Rational> = HashMap::new();
        let mut total = Rational::zero();
        for (si, s) in dist.scenarios.iter().enumerate() {
            let v = memo
                .entry((&bases[si], cap(si)))
                .or_insert_with(|| brute_replacement(instance, &bases[si], &set, cap(si), dev).1)
                .clone();
            total += &s.weight * v;
        }
        if best.as_ref().is_none_or(|(_, v)| total < *v) {
            best = Some((set, total));
        }
        // Next combination in lexicographic order.
        let mut i = a;
        while i > 0 && idx[i - 1] == n - a + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for j in i..a {
            idx[j] = idx[j - 1] + 1;
        }
    }
    let (set, objective) = best.expect("at least one set");
    let per_scenario = dist
        .scenarios
        .iter()
        .enumerate()
        .map(|(si, s)| {
            let (mut replacement, deviation) = brute_replacement(instance, &bases[si], &set, cap(si), dev);
            replacement.sort_unstable();
            ScenarioOutcome {
                dropped: s.dropped.clone(),
                weight: s.weight.clone(),
                replacement,
                deviation,
            }
        })
        .collect();
    Ok(SelectionResult {
        alternates: AlternateSet::new(set),
        objective,
        per_scenario,
        provenance: Provenance {
            algorithm: "brute_force".into(),
            config: serde_json::json!({"dev": dev.name(), "policy": policy.name()}),
            seed: None,
        },
        nodes: sets as u64,
    })
}
