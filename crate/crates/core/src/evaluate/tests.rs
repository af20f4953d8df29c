use milp::rational::{int, ratio};
use milp::ExternalSolver;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::deviation::counts_of;
use crate::domain::Quotas;
use crate::dropout::enumerate_exact_distribution;
use crate::synth::{random_probs, random_small_instance, synth, SynthConfig};

fn lone() -> Instance {
    let schema = FeatureSchema::from_pairs(&[("g", &["x", "y"][..])]).unwrap();
    Instance {
        schema,
        panel: vec![Agent::new("p1", vec![0])],
        pool: vec![Agent::new("a1", vec![1])],
        quotas: Quotas::new(vec![1, 0], vec![1, 1]),
        budget: 0,
    }
}

#[test]
fn summary_arithmetic() {
    let s = Summary::of_counts(&[(1.0, 2), (4.0, 1)]);
    assert_eq!(s, Summary::of(&[1.0, 1.0, 4.0]));
    assert_eq!(s.mean, 2.0);
    assert!((s.stddev - 3f64.sqrt()).abs() < 1e-12);
    assert!((s.stderr - 1.0).abs() < 1e-12);
    assert_eq!(s.median, 1.0);
    assert_eq!(Summary::of(&[1.0, 2.0, 3.0, 10.0]).median, 2.5);
    assert_eq!(Summary::of(&[7.0]).stddev, 0.0);
}

#[test]
fn nobody_drops_means_zero_loss() {
    let inst = lone();
    let probs = DropoutProbs::uniform(1, int(0)).unwrap();
    let est = estimate_loss(
        &AlternateSet::new(vec![]),
        &inst,
        &probs,
        DeviationKind::Linear,
        ReplacementPolicy::Capped,
        50,
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    assert_eq!(est.mean, int(0));
    assert_eq!(est.summary.stddev, 0.0);
    assert_eq!(est.aux_mean(Metric::DevBelow), Some(&int(0)));
}

#[test]
fn coin_flip_panelist() {
    let inst = lone();
    let probs = DropoutProbs::uniform(1, ratio(1, 2)).unwrap();
    let none = AlternateSet::new(vec![]);
    assert_eq!(
        exact_loss(&none, &inst, &probs, DeviationKind::Linear, ReplacementPolicy::Capped).unwrap(),
        ratio(1, 2)
    );
    let est = estimate_loss(
        &none,
        &inst,
        &probs,
        DeviationKind::Linear,
        ReplacementPolicy::Capped,
        300,
        &mut ChaCha8Rng::seed_from_u64(4),
    )
    .unwrap();
    assert!((est.summary.mean - 0.5).abs() <= 3.0 * est.summary.stderr);
    assert_eq!(est.summary.n, 300);
}

/// Independent expectation: every dropout set, every replacement subset.
fn oracle_loss(inst: &Instance, alts: &[usize], probs: &DropoutProbs, dev: DeviationKind) -> Rational {
    let k = inst.k();
    let full = counts_of(inst.panel.iter(), &inst.schema);
    let mut total = Rational::zero();
    for mask in 0u32..1 << k {
        let mut w = Rational::from_integer(1.into());
        for (i, p) in probs.exact().iter().enumerate() {
            w *= if mask >> i & 1 == 1 {
                p.clone()
            } else {
                Rational::from_integer(1.into()) - p
            };
        }
        let dropped: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
        let mut base = full.clone();
        for &d in &dropped {
            for j in inst.panel[d].fvs(&inst.schema) {
                base[j] -= 1;
            }
        }
        let mut best: Option<Rational> = None;
        for sub in 0u32..1 << alts.len() {
            if sub.count_ones() as usize > dropped.len() {
                continue;
            }
            let mut c = base.clone();
            for (b, &i) in alts.iter().enumerate() {
                if sub >> b & 1 == 1 {
                    for j in inst.pool[i].fvs(&inst.schema) {
                        c[j] += 1;
                    }
                }
            }
            let v = dev.metric().value(&c, &inst.quotas);
            if best.as_ref().is_none_or(|b| v < *b) {
                best = Some(v);
            }
        }
        total += w * best.unwrap();
    }
    total
}

#[test]
fn exact_enumeration_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for _ in 0..60 {
        let inst = random_small_instance(&mut rng, 6, 6, 4);
        let probs = random_probs(&mut rng, inst.k());
        let alts = AlternateSet::new((0..inst.budget).collect());
        for dev in [DeviationKind::Linear, DeviationKind::Binary] {
            let want = oracle_loss(&inst, alts.members(), &probs, dev);
            assert_eq!(
                exact_loss(&alts, &inst, &probs, dev, ReplacementPolicy::Capped).unwrap(),
                want
            );
            let dist = enumerate_exact_distribution(&probs).unwrap();
            let est = loss_on_distribution(&inst, &alts, &dist, dev, ReplacementPolicy::Capped).unwrap();
            assert_eq!(est.mean, want);
            assert!((est.summary.mean - to_f64(&want)).abs() < 1e-9);
            assert_eq!(est.summary.stderr, 0.0);
        }
    }
}

#[test]
fn realized_dropouts() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..30 {
        let inst = random_small_instance(&mut rng, 5, 5, 3);
        let alts = AlternateSet::new((0..inst.budget).collect());
        let none = AlternateSet::new(vec![]);
        for dev in [DeviationKind::Linear, DeviationKind::Binary] {
            let r =
                |a: &AlternateSet, d: &[usize]| evaluate_realized(a, d, &inst, dev, ReplacementPolicy::Capped).unwrap();
            // The random instances satisfy their quotas before dropouts.
            assert_eq!(r(&alts, &[]), int(0));
            let all: Vec<usize> = (0..inst.k()).collect();
            let empty_dev: Rational = match dev {
                DeviationKind::Linear => inst
                    .quotas
                    .lower
                    .iter()
                    .zip(&inst.quotas.upper)
                    .map(|(&l, &u)| ratio(l, u))
                    .sum(),
                DeviationKind::Binary => int(i64::from(inst.quotas.lower.iter().any(|&l| l > 0))),
            };
            assert_eq!(r(&none, &all), empty_dev);
            let point = ScenarioDistribution::point(vec![0]);
            let est = loss_on_distribution(&inst, &alts, &point, dev, ReplacementPolicy::Capped).unwrap();
            assert_eq!(r(&alts, &[0]), est.mean);
        }
    }
}

fn fixture() -> (Instance, DropoutProbs) {
    let s = synth(&SynthConfig::new(24, 8, 3, vec![2, 3]), 11).unwrap();
    (s.instance, s.probs)
}

fn quick() -> SuiteConfig {
    SuiteConfig {
        train_samples: 60,
        eval_samples: 80,
        ..SuiteConfig::default()
    }
}

#[test]
fn zero_budget_rows_equal_empty() {
    let (inst, probs) = fixture();
    let rep = benchmark_suite(&inst, &probs, &[0], &Algorithm::ALL, &quick(), 3).unwrap();
    let empty = rep.row(Algorithm::Empty, 0).unwrap().stats().unwrap().summary.clone();
    for alg in Algorithm::ALL.iter().filter(|&&a| a != Algorithm::FullPool) {
        assert_eq!(rep.row(*alg, 0).unwrap().stats().unwrap().summary, empty, "{alg}");
    }
}

#[test]
fn benchmark_is_paired_and_deterministic() {
    let (inst, probs) = fixture();
    let budgets = [1, 3, 5];
    let rep = benchmark_suite(&inst, &probs, &budgets, &Algorithm::ALL, &quick(), 9).unwrap();
    assert_eq!(rep.rows.len(), budgets.len() * Algorithm::ALL.len());
    assert_eq!(rep.failures(), 0);
    for &a in &budgets {
        let cells: Vec<&CellStats> = rep
            .rows
            .iter()
            .filter(|r| r.budget == a)
            .map(|r| r.stats().unwrap())
            .collect();
        assert!(cells.iter().all(|c| c.eval_hash == cells[0].eval_hash));
        let full = rep
            .row(Algorithm::FullPool, a)
            .unwrap()
            .stats()
            .unwrap()
            .mean_exact
            .clone()
            .unwrap();
        for c in &cells {
            assert!(full <= *c.mean_exact.as_ref().unwrap());
        }
        let erm = rep.row(Algorithm::ErmL1, a).unwrap().stats().unwrap();
        assert_eq!(erm.alternates.len(), a);
    }
    let again = benchmark_suite(&inst, &probs, &budgets, &Algorithm::ALL, &quick(), 9).unwrap();
    assert_eq!(rep.to_csv().unwrap(), again.to_csv().unwrap());
    assert_eq!(rep.to_json(), again.to_json());
}

#[test]
fn report_round_trip() {
    let (inst, probs) = fixture();
    let rep = benchmark_suite(&inst, &probs, &[2], &[Algorithm::ErmL1, Algorithm::Greedy], &quick(), 5).unwrap();
    let text = serde_json::to_string(&rep.to_json()).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    for row in v["rows"].as_array().unwrap() {
        let raw: Vec<(Rational, u64)> = row["raw"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| {
                (
                    milp::rational::parse_fraction(p[0].as_str().unwrap()).unwrap(),
                    p[1].as_u64().unwrap(),
                )
            })
            .collect();
        let n: u64 = raw.iter().map(|r| r.1).sum();
        assert_eq!(n, row["n"].as_u64().unwrap());
        let exact: Rational = raw
            .iter()
            .map(|(x, m)| x * Rational::from_integer((*m as i64).into()))
            .sum::<Rational>()
            / Rational::from_integer((n as i64).into());
        assert_eq!(to_fraction_string(&exact), row["mean_exact"].as_str().unwrap());
        let s = Summary::of_counts(&raw.iter().map(|(x, m)| (to_f64(x), *m)).collect::<Vec<_>>());
        assert!((s.mean - row["mean"].as_f64().unwrap()).abs() < 1e-12);
        assert!((s.stderr - row["stderr"].as_f64().unwrap()).abs() < 1e-12);
        assert!((s.stddev / (n as f64).sqrt() - s.stderr).abs() < 1e-12);
    }
    let csv = rep.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("algorithm,budget,gamma"));
    let plot = rep.plot_data_csv().unwrap();
    assert_eq!(plot.lines().count(), 1 + 2 * 5);
}

#[test]
fn failed_cells_are_marked() {
    let (inst, probs) = fixture();
    let cfg = SuiteConfig {
        backend: Backend::External(ExternalSolver::new("/nonexistent/solver {lp} {sol}")),
        ..quick()
    };
    let rep = benchmark_suite(
        &inst,
        &probs,
        &[2],
        &[Algorithm::QuotaBased, Algorithm::Greedy],
        &cfg,
        1,
    )
    .unwrap();
    assert!(rep.row(Algorithm::QuotaBased, 2).unwrap().outcome.is_err());
    assert!(rep.row(Algorithm::Greedy, 2).unwrap().outcome.is_ok());
    assert_eq!(rep.failures(), 1);
    assert!(rep.to_csv().unwrap().contains(",failed,"));
    assert!(benchmark_suite(&inst, &probs, &[inst.n() + 1], &Algorithm::ALL, &cfg, 1).is_err());
}

#[test]
fn robustness_at_zero_matches_benchmark() {
    let (inst, probs) = fixture();
    let algs = [
        Algorithm::ErmL1,
        Algorithm::Greedy,
        Algorithm::QuotaBased,
        Algorithm::ErmEq,
    ];
    let bench = benchmark_suite(&inst, &probs, &[3], &algs, &quick(), 17).unwrap();
    let gammas = [int(0), ratio(3, 10)];
    let rob = robustness_sweep(&inst, &probs, &gammas, 3, 3, &algs, &quick(), 17).unwrap();
    assert_eq!(rob.rows.len(), gammas.len() * algs.len());
    for alg in algs {
        let b = bench.row(alg, 3).unwrap().mean().unwrap();
        let at = |g: &Rational| {
            rob.rows
                .iter()
                .find(|r| r.algorithm == alg.name() && r.gamma.as_ref() == Some(g))
                .unwrap()
        };
        let zero = at(&gammas[0]).stats().unwrap();
        assert!((zero.summary.mean - b).abs() < 1e-12, "{alg} {} {b}", zero.summary.mean);
        assert!(zero.summary.stddev < 1e-12);
        if alg.prediction_free() {
            assert_eq!(at(&gammas[1]).stats().unwrap().summary, zero.summary);
        }
    }
    assert!(robustness_sweep(&inst, &probs, &[ratio(3, 2)], 1, 3, &algs, &quick(), 1).is_err());
    assert!(robustness_sweep(&inst, &probs, &[int(0)], 0, 3, &algs, &quick(), 1).is_err());
}

#[test]
fn convergence_rows() {
    let (inst, probs) = fixture();
    let cfg = SuiteConfig {
        eval_samples: 100,
        ..quick()
    };
    let rep = convergence_study(
        &inst,
        &probs,
        &[DeviationKind::Linear, DeviationKind::Binary],
        &[1, 16],
        3,
        &cfg,
        4,
    )
    .unwrap();
    assert_eq!(rep.rows.len(), 4);
    assert!(rep.rows.iter().all(|r| r.stats().is_some_and(|s| s.summary.n == 3)));
    let again = convergence_study(
        &inst,
        &probs,
        &[DeviationKind::Linear, DeviationKind::Binary],
        &[1, 16],
        3,
        &cfg,
        4,
    )
    .unwrap();
    assert_eq!(rep.to_csv().unwrap(), again.to_csv().unwrap());
    assert!(convergence_study(&inst, &probs, &[DeviationKind::Linear], &[], 3, &cfg, 4).is_err());
}

#[test]
fn calibration_rows() {
    let schema = FeatureSchema::from_pairs(&[("g", &["x", "y"][..]), ("h", &["u", "v", "w"][..])]).unwrap();
    let panel = vec![
        Agent::new("p1", vec![0, 2]),
        Agent::new("p2", vec![1, 2]),
        Agent::new("p3", vec![0, 0]),
    ];
    let zero = DropoutProbs::uniform(3, int(0)).unwrap();
    let rows = calibration_from_probs(&zero, &panel, &schema, &[]).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.expected == 0.0 && r.actual == 0));

    let single = calibration_from_probs(&DropoutProbs::from_f64(&[0.3]).unwrap(), &panel[..1], &schema, &[0]).unwrap();
    let x = single.iter().find(|r| r.feature == "g" && r.value == "x").unwrap();
    assert_eq!((x.expected, x.actual), (0.3, 1));

    let probs = DropoutProbs::from_f64(&[0.1, 0.4, 0.25]).unwrap();
    let rows = calibration_from_probs(&probs, &panel, &schema, &[1]).unwrap();
    for f in ["g", "h"] {
        let total: f64 = rows.iter().filter(|r| r.feature == f).map(|r| r.expected).sum();
        assert!((total - 0.75).abs() < 1e-12);
        assert_eq!(
            rows.iter().filter(|r| r.feature == f).map(|r| r.actual).sum::<usize>(),
            1
        );
    }
    assert!(calibration_from_probs(&probs, &panel, &schema, &[3]).is_err());

    let model = DropoutModel {
        beta0: 0.3,
        beta: vec![Some(1.0); 5],
        degenerate: None,
        log_likelihood: vec![],
    };
    let rows = calibration_report(&model, &panel[..1], &schema, &[0]).unwrap();
    let x = rows.iter().find(|r| r.feature == "g" && r.value == "x").unwrap();
    assert!((x.expected - 0.3).abs() < 1e-12);
    assert_eq!(x.actual, 1);
}

#[test]
fn algorithm_names_parse() {
    for a in Algorithm::ALL {
        assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        assert_eq!(a.name().replace('_', "-").parse::<Algorithm>().unwrap(), a);
    }
    assert!("nope".parse::<Algorithm>().is_err());
}
