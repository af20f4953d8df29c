//! Quota deviation of a final panel, and the auxiliary panel metrics.
//!
//! Everything is computed from a per-feature-value count vector. Metrics whose
//! definition divides by `u` are also available as exact integers scaled by
//! `lcm(u)`, which is what the replacement search works with.

use std::fmt;
use std::str::FromStr;

use milp::rational::{int, ratio};
use milp::Rational;
use num_integer::Integer;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::domain::{Agent, FeatureSchema, Quotas};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviationKind {
    Binary,
    #[default]
    Linear,
}

impl DeviationKind {
    pub fn metric(self) -> Metric {
        match self {
            DeviationKind::Binary => Metric::Binary,
            DeviationKind::Linear => Metric::Linear,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DeviationKind::Binary => "binary",
            DeviationKind::Linear => "linear",
        }
    }
}

impl FromStr for DeviationKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "binary" | "01" | "0/1" => Ok(DeviationKind::Binary),
            "linear" | "l1" => Ok(DeviationKind::Linear),
            other => Err(format!("unknown deviation `{other}` (expected binary or linear)")),
        }
    }
}

impl fmt::Display for DeviationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Any per-panel objective the replacement step can minimize.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Linear,
    Binary,
    DevBelow,
    MaxNormDev,
    MaxDev,
    Unrepresented,
}

impl Metric {
    pub const AUX: [Metric; 4] = [
        Metric::DevBelow,
        Metric::MaxNormDev,
        Metric::MaxDev,
        Metric::Unrepresented,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Linear => "linear",
            Metric::Binary => "binary",
            Metric::DevBelow => "dev_below",
            Metric::MaxNormDev => "max_norm_dev",
            Metric::MaxDev => "max_dev",
            Metric::Unrepresented => "unrepresented",
        }
    }

    /// Multiplier turning this metric into an integer for the given quotas.
    /// `None` when `lcm(u)` is too large for exact integer scoring.
    pub fn scale(self, quotas: &Quotas) -> Option<i128> {
        match self {
            Metric::Linear | Metric::DevBelow | Metric::MaxNormDev => {
                let mut acc: i128 = 1;
                for &u in &quotas.upper {
                    acc = acc.checked_mul(i128::from(u) / acc.gcd(&i128::from(u)))?;
                    if acc > MAX_SCALE {
                        return None;
                    }
                }
                Some(acc)
            }
            Metric::Binary | Metric::MaxDev | Metric::Unrepresented => Some(1),
        }
    }

    /// Count below which adding a member with this feature-value can help.
    pub fn threshold(self, quotas: &Quotas, fv: usize) -> i64 {
        match self {
            Metric::Unrepresented => 1,
            _ => quotas.lower[fv],
        }
    }

    /// `value(counts) * scale`, exactly.
    pub fn score(self, counts: &[i64], quotas: &Quotas, scale: i128) -> i128 {
        let (l, u) = (&quotas.lower, &quotas.upper);
        let w = |j: usize| scale / i128::from(u[j]);
        match self {
            Metric::Linear => counts
                .iter()
                .enumerate()
                .map(|(j, &c)| i128::from(excess(c, l[j], u[j])) * w(j))
                .sum(),
            Metric::Binary => i128::from(counts.iter().enumerate().any(|(j, &c)| c < l[j] || c > u[j])),
            Metric::DevBelow => counts
                .iter()
                .enumerate()
                .map(|(j, &c)| i128::from((l[j] - c).max(0)) * w(j))
                .sum(),
            Metric::MaxNormDev => counts
                .iter()
                .enumerate()
                .map(|(j, &c)| i128::from(excess(c, l[j], u[j])) * w(j))
                .max()
                .unwrap_or(0),
            Metric::MaxDev => counts
                .iter()
                .enumerate()
                .map(|(j, &c)| i128::from(excess(c, l[j], u[j])))
                .max()
                .unwrap_or(0),
            Metric::Unrepresented => counts.iter().filter(|&&c| c == 0).count() as i128,
        }
    }

    pub fn value(self, counts: &[i64], quotas: &Quotas) -> Rational {
        match self {
            Metric::Linear => dev_linear_counts(counts, quotas),
            Metric::Binary => int(i64::from(dev_binary_counts(counts, quotas))),
            m => aux_metrics_counts(counts, quotas).get(m),
        }
    }

    /// Turns a scaled score back into the metric value.
    pub fn unscale(score: i128, scale: i128) -> Rational {
        Rational::new(score.into(), scale.into())
    }
}

impl FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [
            Metric::Linear,
            Metric::Binary,
            Metric::DevBelow,
            Metric::MaxNormDev,
            Metric::MaxDev,
            Metric::Unrepresented,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

/// Largest `lcm(u)` used for integer scoring; leaves headroom for sums.
pub const MAX_SCALE: i128 = 1 << 96;

fn excess(c: i64, l: i64, u: i64) -> i64 {
    (l - c).max(c - u).max(0)
}

/// Number of agents with each flattened feature-value.
pub fn feature_value_counts(agents: &[Agent], schema: &FeatureSchema) -> Vec<i64> {
    counts_of(agents.iter(), schema)
}

pub fn counts_of<'a>(agents: impl IntoIterator<Item = &'a Agent>, schema: &FeatureSchema) -> Vec<i64> {
    let mut counts = vec![0; schema.num_fv()];
    for a in agents {
        for j in a.fvs(schema) {
            counts[j] += 1;
        }
    }
    counts
}

pub fn dev_binary_counts(counts: &[i64], quotas: &Quotas) -> u8 {
    u8::from(
        counts
            .iter()
            .enumerate()
            .any(|(j, &c)| c < quotas.lower[j] || c > quotas.upper[j]),
    )
}

pub fn dev_linear_counts(counts: &[i64], quotas: &Quotas) -> Rational {
    counts
        .iter()
        .enumerate()
        .map(|(j, &c)| ratio(excess(c, quotas.lower[j], quotas.upper[j]), quotas.upper[j]))
        .fold(Rational::zero(), |acc, x| acc + x)
}

pub fn dev_binary(agents: &[Agent], schema: &FeatureSchema, quotas: &Quotas) -> u8 {
    dev_binary_counts(&feature_value_counts(agents, schema), quotas)
}

pub fn dev_linear(agents: &[Agent], schema: &FeatureSchema, quotas: &Quotas) -> Rational {
    dev_linear_counts(&feature_value_counts(agents, schema), quotas)
}

pub fn deviation_counts(kind: DeviationKind, counts: &[i64], quotas: &Quotas) -> Rational {
    match kind {
        DeviationKind::Binary => int(i64::from(dev_binary_counts(counts, quotas))),
        DeviationKind::Linear => dev_linear_counts(counts, quotas),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetricVector {
    pub dev_below: Rational,
    pub max_norm_dev: Rational,
    pub max_dev: i64,
    pub unrepresented: i64,
}

impl MetricVector {
    pub fn get(&self, m: Metric) -> Rational {
        match m {
            Metric::DevBelow => self.dev_below.clone(),
            Metric::MaxNormDev => self.max_norm_dev.clone(),
            Metric::MaxDev => int(self.max_dev),
            Metric::Unrepresented => int(self.unrepresented),
            Metric::Linear | Metric::Binary => panic!("{} is not an auxiliary metric", m.name()),
        }
    }
}

pub fn aux_metrics_counts(counts: &[i64], quotas: &Quotas) -> MetricVector {
    let (l, u) = (&quotas.lower, &quotas.upper);
    let mut dev_below = Rational::zero();
    let mut max_norm_dev = Rational::zero();
    let mut max_dev = 0;
    let mut unrepresented = 0;
    for (j, &c) in counts.iter().enumerate() {
        let e = excess(c, l[j], u[j]);
        dev_below += ratio((l[j] - c).max(0), u[j]);
        let norm = ratio(e, u[j]);
        if norm > max_norm_dev {
            max_norm_dev = norm;
        }
        max_dev = max_dev.max(e);
        if c == 0 {
            unrepresented += 1;
        }
    }
    MetricVector {
        dev_below,
        max_norm_dev,
        max_dev,
        unrepresented,
    }
}

pub fn aux_metrics(agents: &[Agent], schema: &FeatureSchema, quotas: &Quotas) -> MetricVector {
    aux_metrics_counts(&feature_value_counts(agents, schema), quotas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn xy() -> FeatureSchema {
        FeatureSchema::from_pairs(&[("g", &["x", "y"][..])]).unwrap()
    }

    #[test]
    fn counts_conserve() {
        let s = FeatureSchema::from_pairs(&[("a", &["p", "q"][..]), ("b", &["r", "s", "t"][..])]).unwrap();
        assert_eq!(feature_value_counts(&[], &s), vec![0; 5]);
        let agents = vec![
            Agent::new("1", vec![0, 2]),
            Agent::new("2", vec![0, 0]),
            Agent::new("3", vec![1, 2]),
        ];
        let c = feature_value_counts(&agents, &s);
        assert_eq!(c, vec![2, 1, 1, 0, 2]);
        assert_eq!(c[..2].iter().sum::<i64>(), 3);
        assert_eq!(c[2..].iter().sum::<i64>(), 3);
    }

    #[test]
    fn linear_hand_value() {
        let q = Quotas::new(vec![2, 2], vec![2, 2]);
        let agents: Vec<Agent> = [0, 1, 1, 1]
            .iter()
            .enumerate()
            .map(|(i, &v)| Agent::new(i.to_string(), vec![v]))
            .collect();
        assert_eq!(dev_linear(&agents, &xy(), &q), int(1));
        assert_eq!(dev_binary(&agents, &xy(), &q), 1);
    }

    #[test]
    fn one_over_upper() {
        let q = Quotas::new(vec![1, 1], vec![2, 2]);
        let agents: Vec<Agent> = (0..3).map(|i| Agent::new(i.to_string(), vec![0])).collect();
        // x: 3 > 2 by 1; y: 0 < 1 by 1.
        assert_eq!(dev_linear(&agents, &xy(), &q), int(1));
        assert_eq!(dev_binary(&agents[..1], &xy(), &q), 1);
        let ok = vec![Agent::new("a", vec![0]), Agent::new("b", vec![1])];
        assert_eq!(dev_linear(&ok, &xy(), &q), int(0));
        assert_eq!(dev_binary(&ok, &xy(), &q), 0);
    }

    #[test]
    fn aux_examples() {
        let q = Quotas::new(vec![1, 1], vec![1, 1]);
        let both = vec![Agent::new("a", vec![0]), Agent::new("b", vec![1])];
        let m = aux_metrics(&both, &xy(), &q);
        assert_eq!(
            m,
            MetricVector {
                dev_below: int(0),
                max_norm_dev: int(0),
                max_dev: 0,
                unrepresented: 0
            }
        );

        let over = vec![
            Agent::new("a", vec![0]),
            Agent::new("b", vec![1]),
            Agent::new("c", vec![1]),
        ];
        let m = aux_metrics(&over, &xy(), &q);
        assert_eq!(m.dev_below, int(0));
        assert!(dev_linear(&over, &xy(), &q) > int(0));

        let missing = vec![Agent::new("a", vec![0])];
        let m = aux_metrics(&missing, &xy(), &q);
        assert_eq!((m.unrepresented, m.max_dev, m.max_norm_dev), (1, 1, int(1)));
    }

    fn scaled(m: Metric, counts: &[i64], q: &Quotas) -> Rational {
        let scale = m.scale(q).unwrap();
        Metric::unscale(m.score(counts, q, scale), scale)
    }

    #[test]
    fn huge_lcm_is_refused() {
        let upper: Vec<i64> = (1..=120).collect();
        let q = Quotas::new(vec![0; 120], upper);
        assert_eq!(Metric::Linear.scale(&q), None);
        assert_eq!(Metric::MaxDev.scale(&q), Some(1));
    }

    #[test]
    fn scaled_scores_match_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let n = rng.gen_range(1..6);
            let lower: Vec<i64> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let upper: Vec<i64> = lower.iter().map(|&l| (l + rng.gen_range(0..3)).max(1)).collect();
            let q = Quotas::new(lower, upper);
            let counts: Vec<i64> = (0..n).map(|_| rng.gen_range(0..7)).collect();
            let aux = aux_metrics_counts(&counts, &q);
            assert_eq!(scaled(Metric::Linear, &counts, &q), dev_linear_counts(&counts, &q));
            assert_eq!(
                scaled(Metric::Binary, &counts, &q),
                int(i64::from(dev_binary_counts(&counts, &q)))
            );
            for m in Metric::AUX {
                assert_eq!(scaled(m, &counts, &q), aux.get(m), "{}", m.name());
            }
        }
    }
}
