//! Synthetic instances and the adversarial fixtures used by the robustness
//! checks.

use milp::rational::{from_f64_decimal, int, ratio};
use milp::Rational;
use num_traits::One;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deviation::counts_of;
use crate::domain::{validate_instance, Agent, Feature, FeatureSchema, Instance, OutcomeRow, Quotas};
use crate::dropout::{sample_dropout_set, DropoutModel, DropoutProbs};
use crate::error::{Error, Result};
use crate::rng;

const PANEL_ATTEMPTS: usize = 200;

/// Dropout profile of a synthetic population. Each feature-value gets a factor
/// `exp(spread * z)` with `z` uniform on `[-1, 1]`; probabilities are rounded
/// to three decimals and capped at `max_rho`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heterogeneity {
    pub base: f64,
    pub spread: f64,
    pub max_rho: f64,
}

impl Default for Heterogeneity {
    fn default() -> Self {
        Self {
            base: 0.15,
            spread: 1.0,
            max_rho: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub k: usize,
    pub a: usize,
    pub values_per_feature: Vec<usize>,
    /// 0 gives tight quotas; `t` widens each bound by a fraction `t` of its target.
    pub tightness: f64,
    pub dropout: Heterogeneity,
}

impl SynthConfig {
    pub fn new(n: usize, k: usize, a: usize, values_per_feature: Vec<usize>) -> Self {
        Self {
            n,
            k,
            a,
            values_per_feature,
            tightness: 0.0,
            dropout: Heterogeneity::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Synth {
    pub instance: Instance,
    /// Ground-truth model behind `probs`.
    pub model: DropoutModel,
    pub probs: DropoutProbs,
}

pub fn synth_instance(config: &SynthConfig, seed: u64) -> Result<Instance> {
    Ok(synth(config, seed)?.instance)
}

/// Deterministic for a fixed `(config, seed)`.
pub fn synth(config: &SynthConfig, seed: u64) -> Result<Synth> {
    if config.values_per_feature.is_empty() || config.values_per_feature.contains(&0) {
        return Err(Error::Input("every feature needs at least one value".into()));
    }
    if config.k == 0 || config.a > config.n {
        return Err(Error::Input("need k >= 1 and a <= n".into()));
    }
    if !(0.0..=1.0).contains(&config.tightness) {
        return Err(Error::Input("tightness must lie in [0, 1]".into()));
    }
    let mut rng: ChaCha8Rng = rng::stream(seed, rng::Purpose::Train, 0xff, 0);
    let schema = FeatureSchema::new(
        config
            .values_per_feature
            .iter()
            .enumerate()
            .map(|(f, &m)| Feature {
                name: format!("f{}", f + 1),
                values: (0..m).map(|v| format!("v{}", v + 1)).collect(),
            })
            .collect(),
    )?;

    // Skewed categorical marginals, independent across features.
    let marginals: Vec<Vec<f64>> = config
        .values_per_feature
        .iter()
        .map(|&m| {
            let w: Vec<f64> = (0..m).map(|_| 0.2 + rng.gen::<f64>()).collect();
            let total: f64 = w.iter().sum();
            w.into_iter().map(|x| x / total).collect()
        })
        .collect();
    let draw = |rng: &mut ChaCha8Rng, p: &[f64]| {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (v, &q) in p.iter().enumerate() {
            acc += q;
            if u < acc {
                return v;
            }
        }
        p.len() - 1
    };
    let population: Vec<Vec<usize>> = (0..config.n + config.k)
        .map(|_| marginals.iter().map(|p| draw(&mut rng, p)).collect())
        .collect();

    // Quotas from largest-remainder targets on the population shares.
    let counts = counts_of(
        population
            .iter()
            .map(|v| Agent::new("", v.clone()))
            .collect::<Vec<_>>()
            .iter(),
        &schema,
    );
    let total = population.len() as i64;
    let mut lower = vec![0; schema.num_fv()];
    let mut upper = vec![0; schema.num_fv()];
    for f in 0..schema.num_features() {
        let range = schema.fv_range(f);
        let shares: Vec<i64> = range.clone().map(|j| counts[j]).collect();
        let targets = largest_remainder(&shares, total, config.k as i64);
        for (j, t) in range.zip(targets) {
            let tf = t as f64;
            let l = (tf * (1.0 - config.tightness)).floor() as i64;
            let u = ((tf * (1.0 + config.tightness)).ceil() as i64).max(l).max(1);
            lower[j] = l;
            upper[j] = u;
        }
    }
    let quotas = Quotas::new(lower, upper);

    let mut panel_pick = None;
    for _ in 0..PANEL_ATTEMPTS {
        if let Some(p) = fill_panel(&population, &schema, &quotas, config.k, &mut rng) {
            panel_pick = Some(p);
            break;
        }
    }
    let Some(mut chosen) = panel_pick else {
        return Err(Error::Infeasible(format!(
            "no quota-satisfying panel of size {} found in {PANEL_ATTEMPTS} attempts",
            config.k
        )));
    };
    chosen.sort_unstable();
    let width = (config.n + config.k).to_string().len();
    let mut panel = Vec::new();
    let mut pool = Vec::new();
    let mut in_panel = vec![false; population.len()];
    for &i in &chosen {
        in_panel[i] = true;
    }
    for (i, v) in population.into_iter().enumerate() {
        if in_panel[i] {
            panel.push(Agent::new(format!("k{:0width$}", panel.len() + 1), v));
        } else {
            pool.push(Agent::new(format!("n{:0width$}", pool.len() + 1), v));
        }
    }

    let model = DropoutModel {
        beta0: config.dropout.base,
        beta: (0..schema.num_fv())
            .map(|_| Some((config.dropout.spread * (2.0 * rng.gen::<f64>() - 1.0)).exp()))
            .collect(),
        degenerate: None,
        log_likelihood: Vec::new(),
    };
    let rho: Vec<Rational> = panel
        .iter()
        .map(|a| {
            let raw = a
                .fvs(&schema)
                .fold(model.beta0, |acc, j| acc * model.beta[j].unwrap_or(1.0));
            let capped = raw.min(config.dropout.max_rho);
            from_f64_decimal((capped * 1000.0).round() / 1000.0).expect("finite")
        })
        .collect();
    let probs = DropoutProbs::new(rho)?;
    let instance = Instance {
        schema,
        panel,
        pool,
        quotas,
        budget: config.a,
    };
    let problems = validate_instance(&instance);
    if !problems.is_empty() {
        return Err(Error::Infeasible(format!(
            "generated instance is invalid: {}",
            problems[0]
        )));
    }
    Ok(Synth { instance, model, probs })
}

/// Integer targets proportional to `shares`, summing to `k`.
fn largest_remainder(shares: &[i64], total: i64, k: i64) -> Vec<i64> {
    let mut out: Vec<i64> = shares.iter().map(|&s| s * k / total).collect();
    let mut rest: Vec<(i64, usize)> = shares.iter().enumerate().map(|(i, &s)| (s * k % total, i)).collect();
    rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = k - out.iter().sum::<i64>();
    for &(_, i) in rest.iter().take(missing as usize) {
        out[i] += 1;
    }
    out
}

/// Randomized greedy fill under the upper quotas, preferring agents that cover
/// an unmet lower quota. Returns population indices or `None` on a dead end.
fn fill_panel(
    population: &[Vec<usize>],
    schema: &FeatureSchema,
    quotas: &Quotas,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<usize>> {
    let mut order: Vec<usize> = (0..population.len()).collect();
    order.shuffle(rng);
    let fvs = |i: usize| {
        population[i]
            .iter()
            .enumerate()
            .map(|(f, &v)| schema.fv_index(f, v))
            .collect::<Vec<_>>()
    };
    let mut counts = vec![0i64; schema.num_fv()];
    let mut chosen = Vec::with_capacity(k);
    let mut used = vec![false; population.len()];
    while chosen.len() < k {
        let remaining = (k - chosen.len()) as i64;
        let mut best: Option<(usize, usize)> = None;
        for &i in &order {
            if used[i] {
                continue;
            }
            let js = fvs(i);
            if js.iter().any(|&j| counts[j] + 1 > quotas.upper[j]) {
                continue;
            }
            // After adding, every feature's total shortfall must fit in the slots left.
            let ok = (0..schema.num_features()).all(|f| {
                let need: i64 = schema
                    .fv_range(f)
                    .map(|j| (quotas.lower[j] - counts[j] - i64::from(js.contains(&j))).max(0))
                    .sum();
                need <= remaining - 1
            });
            if !ok {
                continue;
            }
            let gain = js.iter().filter(|&&j| counts[j] < quotas.lower[j]).count();
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        let (i, _) = best?;
        used[i] = true;
        for j in fvs(i) {
            counts[j] += 1;
        }
        chosen.push(i);
    }
    Some(chosen)
}

/// Simulated outcome history drawn from `model` over a fresh population.
pub fn synth_history(
    schema: &FeatureSchema,
    model: &DropoutModel,
    marginals: Option<&[Vec<f64>]>,
    rows: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<OutcomeRow> {
    (0..rows)
        .map(|r| {
            let values: Vec<usize> = schema
                .features()
                .iter()
                .enumerate()
                .map(|(f, feat)| match marginals {
                    Some(m) => {
                        let u: f64 = rng.gen();
                        let mut acc = 0.0;
                        m[f].iter()
                            .position(|&p| {
                                acc += p;
                                u < acc
                            })
                            .unwrap_or(feat.values.len() - 1)
                    }
                    None => rng.gen_range(0..feat.values.len()),
                })
                .collect();
            let agent = Agent::new(format!("h{r}"), values);
            let rho = model.predict(&agent, schema).rho;
            let dropped = rng.gen::<f64>() < rho;
            OutcomeRow { agent, dropped }
        })
        .collect()
}

/// A panel with probabilities the algorithm sees (`estimated`) and the ones
/// that generate dropouts (`truth`).
#[derive(Clone, Debug)]
pub struct AdversarialFixture {
    pub instance: Instance,
    pub truth: DropoutProbs,
    pub estimated: DropoutProbs,
}

/// One binary feature; half the panel has each value, tight quotas `k/2`,
/// `k` pool agents of each value, `a = k/2`. Value-1 panelists drop with
/// probability `gamma`, value-0 never; the estimate swaps the two groups.
///
/// `k = 2 * ceil(log_{1-gamma} alpha)` so the loss gap is at least `1 - alpha`.
pub fn binary_robustness_fixture(gamma: &Rational, alpha: f64) -> Result<AdversarialFixture> {
    let g = milp::rational::to_f64(gamma);
    if !(g > 0.0 && g < 1.0) || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Input("need gamma and alpha in (0, 1)".into()));
    }
    let half = ((alpha.ln() / (1.0 - g).ln()).ceil() as usize).max(1);
    let k = 2 * half;
    let schema = FeatureSchema::from_pairs(&[("f1", &["0", "1"][..])])?;
    let panel: Vec<Agent> = (0..k)
        .map(|i| Agent::new(format!("k{}", i + 1), vec![usize::from(i >= half)]))
        .collect();
    let pool: Vec<Agent> = (0..2 * k)
        .map(|i| Agent::new(format!("n{}", i + 1), vec![usize::from(i >= k)]))
        .collect();
    let t = half as i64;
    let instance = Instance {
        schema,
        panel,
        pool,
        quotas: Quotas::new(vec![t, t], vec![t, t]),
        budget: half,
    };
    let pick = |hot: usize| {
        DropoutProbs::new(
            instance
                .panel
                .iter()
                .map(|a| if a.values[0] == hot { gamma.clone() } else { int(0) })
                .collect(),
        )
    };
    Ok(AdversarialFixture {
        truth: pick(1)?,
        estimated: pick(0)?,
        instance,
    })
}

/// Features with the given value counts; a panel of two groups of size
/// `max|V_f| - 1`. Group 1 member `i` has value `i` on every feature where that
/// exists and the last value otherwise; group 2 has the last value everywhere.
/// Rare values have quota exactly 1, the last value `k - (|V_f| - 1)`. The pool
/// clones the panel and `a = k/2`. Group 1 drops with `gamma` in truth, group 2
/// in the estimate.
pub fn linear_robustness_fixture(values_per_feature: &[usize], gamma: &Rational) -> Result<AdversarialFixture> {
    let maxv = values_per_feature.iter().copied().max().unwrap_or(0);
    if maxv < 2 || values_per_feature.contains(&0) {
        return Err(Error::Input("need some feature with at least two values".into()));
    }
    let g = maxv - 1;
    let k = 2 * g;
    let schema = FeatureSchema::new(
        values_per_feature
            .iter()
            .enumerate()
            .map(|(f, &m)| Feature {
                name: format!("f{}", f + 1),
                values: (1..=m).map(|v| v.to_string()).collect(),
            })
            .collect(),
    )?;
    let vector = |i: usize| -> Vec<usize> {
        values_per_feature
            .iter()
            .map(|&m| if i < g && i + 1 < m { i } else { m - 1 })
            .collect()
    };
    let panel: Vec<Agent> = (0..k).map(|i| Agent::new(format!("k{}", i + 1), vector(i))).collect();
    let pool: Vec<Agent> = (0..k).map(|i| Agent::new(format!("n{}", i + 1), vector(i))).collect();
    let mut lower = Vec::new();
    for &m in values_per_feature {
        lower.extend(std::iter::repeat(1).take(m - 1));
        lower.push((k - (m - 1)) as i64);
    }
    let quotas = Quotas::new(lower.clone(), lower);
    let instance = Instance {
        schema,
        panel,
        pool,
        quotas,
        budget: g,
    };
    let group = |first: bool| {
        DropoutProbs::new(
            (0..k)
                .map(|i| if (i < g) == first { gamma.clone() } else { int(0) })
                .collect(),
        )
    };
    Ok(AdversarialFixture {
        truth: group(true)?,
        estimated: group(false)?,
        instance,
    })
}

/// Settings of the committed benchmark fixture.
pub fn benchmark_fixture_config() -> SynthConfig {
    SynthConfig {
        n: 60,
        k: 20,
        a: 6,
        values_per_feature: vec![2, 3, 2],
        tightness: 0.2,
        dropout: Heterogeneity {
            base: 0.2,
            spread: 1.2,
            max_rho: 0.9,
        },
    }
}

pub const BENCHMARK_FIXTURE_SEED: u64 = 2024;

/// Uniform random instance for property tests: small pool and panel, quotas
/// wrapped around the panel's own counts so it is always valid.
pub fn random_small_instance(rng: &mut ChaCha8Rng, max_n: usize, max_k: usize, max_a: usize) -> Instance {
    let nf = rng.gen_range(1..=2);
    let values: Vec<usize> = (0..nf).map(|_| rng.gen_range(2..=3)).collect();
    let schema = FeatureSchema::new(
        values
            .iter()
            .enumerate()
            .map(|(f, &m)| Feature {
                name: format!("f{f}"),
                values: (0..m).map(|v| format!("v{v}")).collect(),
            })
            .collect(),
    )
    .expect("valid schema");
    let agent =
        |rng: &mut ChaCha8Rng, id: String| Agent::new(id, values.iter().map(|&m| rng.gen_range(0..m)).collect());
    let k = rng.gen_range(1..=max_k);
    let n = rng.gen_range(1..=max_n);
    let panel: Vec<Agent> = (0..k).map(|i| agent(rng, format!("k{i}"))).collect();
    let pool: Vec<Agent> = (0..n).map(|i| agent(rng, format!("n{i}"))).collect();
    let counts = counts_of(panel.iter(), &schema);
    let lower: Vec<i64> = counts.iter().map(|&c| (c - rng.gen_range(0..=1)).max(0)).collect();
    let upper: Vec<i64> = counts.iter().map(|&c| (c + rng.gen_range(0..=1)).max(1)).collect();
    let budget = rng.gen_range(0..=max_a.min(n));
    Instance {
        schema,
        panel,
        pool,
        quotas: Quotas::new(lower, upper),
        budget,
    }
}

/// Random probabilities with small denominators, some exactly 0 or 1.
pub fn random_probs(rng: &mut ChaCha8Rng, k: usize) -> DropoutProbs {
    DropoutProbs::new(
        (0..k)
            .map(|_| match rng.gen_range(0..8) {
                0 => int(0),
                1 => Rational::one(),
                _ => ratio(rng.gen_range(1..10), 10),
            })
            .collect(),
    )
    .expect("probabilities in range")
}

/// Draws one realized dropout set, for `evaluate_realized` demos.
pub fn realize(probs: &DropoutProbs, rng: &mut ChaCha8Rng) -> Vec<usize> {
    sample_dropout_set(probs, rng)
}
