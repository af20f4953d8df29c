use std::collections::{BTreeMap, HashMap};

use num_traits::Signed;
use panelalts::deviation::{counts_of, DeviationKind, Metric};
use panelalts::domain::{load_agents_csv, validate_instance, write_agents_csv, Instance, Quotas, Violation};
use panelalts::dropout::{
    build_empirical_distribution, enumerate_exact_distribution, fit_dropout_model, DropoutProbs, ScenarioDistribution,
};
use panelalts::select::{
    brute_force_opt, erm_alts, evaluate_alternates, expected_deviation, AlternateSet, OptConfig, ReplacementPolicy,
};
use panelalts::synth::{random_small_instance, synth, synth_history, Heterogeneity, SynthConfig};
use panelalts::Rational;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rat(n: i64, d: i64) -> Rational {
    milp::rational::ratio(n, d)
}

fn random_probs(rng: &mut ChaCha8Rng, k: usize) -> DropoutProbs {
    DropoutProbs::new((0..k).map(|_| rat(rng.gen_range(0..=10), 10)).collect()).unwrap()
}

fn random_subset(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    (0..n).filter(|_| rng.gen_bool(0.5)).collect()
}

fn loss(
    inst: &Instance,
    alts: &[usize],
    dist: &ScenarioDistribution,
    metric: Metric,
    policy: ReplacementPolicy,
) -> Rational {
    let set = AlternateSet::new(alts.to_vec());
    expected_deviation(&evaluate_alternates(inst, &set, dist, metric, policy).unwrap())
}

fn tv_distance(a: &ScenarioDistribution, b: &ScenarioDistribution) -> f64 {
    let mut mass: BTreeMap<Vec<usize>, (f64, f64)> = BTreeMap::new();
    for s in &a.scenarios {
        mass.entry(s.dropped.clone()).or_default().0 += milp::rational::to_f64(&s.weight);
    }
    for s in &b.scenarios {
        mass.entry(s.dropped.clone()).or_default().1 += milp::rational::to_f64(&s.weight);
    }
    mass.values().map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0
}

fn quotas_strategy(nfv: usize) -> impl Strategy<Value = (Vec<i64>, Vec<i64>, Vec<i64>)> {
    (
        proptest::collection::vec(0i64..6, nfv),
        proptest::collection::vec(0i64..4, nfv),
        proptest::collection::vec(1i64..4, nfv),
    )
        .prop_map(|(counts, lower, width)| {
            let upper: Vec<i64> = lower.iter().zip(&width).map(|(l, w)| (l + w).max(1)).collect();
            (counts, lower, upper)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn binary_is_indicator_of_linear((counts, lower, upper) in (1usize..8).prop_flat_map(quotas_strategy)) {
        let q = Quotas::new(lower, upper);
        let lin = Metric::Linear.value(&counts, &q);
        let bin = Metric::Binary.value(&counts, &q);
        prop_assert_eq!(bin, if lin > rat(0, 1) { rat(1, 1) } else { rat(0, 1) });
    }

    #[test]
    fn raising_a_short_count_never_hurts((counts, lower, upper) in (1usize..8).prop_flat_map(quotas_strategy), pick in any::<prop::sample::Index>()) {
        let j = pick.index(counts.len());
        let q = Quotas::new(lower, upper);
        prop_assume!(counts[j] < q.lower[j]);
        let mut more = counts.clone();
        more[j] += 1;
        prop_assert!(Metric::Linear.value(&more, &q) <= Metric::Linear.value(&counts, &q));
    }

    #[test]
    fn one_agent_moves_linear_dev_by_bounded_amount(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_small_instance(&mut rng, 4, 6, 0);
        let agent = &inst.pool[0];
        let before = counts_of(inst.panel.iter(), &inst.schema);
        let after = counts_of(inst.panel.iter().chain(std::iter::once(agent)), &inst.schema);
        let change = Metric::Linear.value(&after, &inst.quotas) - Metric::Linear.value(&before, &inst.quotas);
        let bound = agent.fvs(&inst.schema).fold(rat(0, 1), |acc, j| acc + rat(1, inst.quotas.upper[j]));
        prop_assert!(change.abs() <= bound);
    }

    #[test]
    fn panel_quota_check_agrees_with_binary_dev(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inst = random_small_instance(&mut rng, 3, 7, 0);
        let counts = counts_of(inst.panel.iter(), &inst.schema);
        for j in 0..counts.len() {
            inst.quotas.lower[j] = rng.gen_range(0..=counts[j] + 1);
            inst.quotas.upper[j] = rng.gen_range(inst.quotas.lower[j].max(1)..=counts[j] + 2);
        }
        let outside = validate_instance(&inst)
            .iter()
            .any(|v| matches!(v, Violation::PanelBelowLower { .. } | Violation::PanelAboveUpper { .. }));
        let bin = Metric::Binary.value(&counts, &inst.quotas);
        prop_assert_eq!(outside, bin == rat(1, 1));
    }

    #[test]
    fn agents_csv_round_trips(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_small_instance(&mut rng, 6, 6, 0);
        let dropped: HashMap<String, bool> = inst.panel.iter().map(|a| (a.id.clone(), rng.gen_bool(0.3))).collect();
        let text = write_agents_csv(&inst.schema, &inst.panel, &inst.pool, &dropped);
        let table = load_agents_csv(&text, &inst.schema, true).unwrap();
        prop_assert_eq!(&table.panel, &inst.panel);
        prop_assert_eq!(&table.pool, &inst.pool);
        prop_assert_eq!(table.outcomes.len(), inst.panel.len());
        for row in &table.outcomes {
            prop_assert_eq!(row.dropped, dropped[&row.agent.id]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn synthetic_instances_are_valid(
        seed in any::<u64>(),
        k in 2usize..16,
        extra in 0usize..30,
        values in proptest::collection::vec(2usize..4, 1..4),
        tightness in 0.0f64..1.0,
    ) {
        let n = k + extra;
        let cfg = SynthConfig {
            n,
            k,
            a: n.min(5),
            values_per_feature: values,
            tightness,
            dropout: Heterogeneity::default(),
        };
        if let Ok(out) = synth(&cfg, seed) {
            prop_assert!(validate_instance(&out.instance).is_empty());
            prop_assert_eq!(out.probs.len(), k);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn uncapped_never_worse_and_full_pool_is_best(seed in any::<u64>(), binary in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_small_instance(&mut rng, 7, 5, 0);
        let dist = enumerate_exact_distribution(&random_probs(&mut rng, inst.k())).unwrap();
        let metric = if binary { Metric::Binary } else { Metric::Linear };
        let alts = random_subset(&mut rng, inst.n());
        let capped = loss(&inst, &alts, &dist, metric, ReplacementPolicy::Capped);
        let uncapped = loss(&inst, &alts, &dist, metric, ReplacementPolicy::Uncapped);
        prop_assert!(uncapped <= capped);
        let everyone: Vec<usize> = (0..inst.n()).collect();
        for policy in [ReplacementPolicy::Capped, ReplacementPolicy::Uncapped] {
            prop_assert!(loss(&inst, &everyone, &dist, metric, policy) <= loss(&inst, &alts, &dist, metric, policy));
        }
    }

    #[test]
    fn more_alternates_never_hurt(seed in any::<u64>(), binary in any::<bool>(), uncapped in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_small_instance(&mut rng, 6, 4, 0);
        let dist = enumerate_exact_distribution(&random_probs(&mut rng, inst.k())).unwrap();
        let dev = if binary { DeviationKind::Binary } else { DeviationKind::Linear };
        let policy = if uncapped { ReplacementPolicy::Uncapped } else { ReplacementPolicy::Capped };
        let mut last: Option<Rational> = None;
        for a in 0..=inst.n().min(3) {
            let obj = brute_force_opt(&inst.with_budget(a), &dist, dev, policy).unwrap().objective;
            if let Some(prev) = &last {
                prop_assert!(&obj <= prev, "a = {}: {} > {}", a, obj, prev);
            }
            last = Some(obj);
        }
    }

    #[test]
    fn erm_objective_decodes_independently(seed in any::<u64>(), binary in any::<bool>(), uncapped in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_small_instance(&mut rng, 8, 6, 3);
        let probs = random_probs(&mut rng, inst.k());
        let dev = if binary { DeviationKind::Binary } else { DeviationKind::Linear };
        let policy = if uncapped { ReplacementPolicy::Uncapped } else { ReplacementPolicy::Capped };
        let res = erm_alts(&inst, &probs, 20, &mut rng, &OptConfig::new(dev, policy)).unwrap();
        prop_assert_eq!(res.alternates.len(), inst.budget);
        let mut total = rat(0, 1);
        for s in &res.per_scenario {
            prop_assert!(s.replacement.iter().all(|r| res.alternates.members().contains(r)));
            if !uncapped {
                prop_assert!(s.replacement.len() <= s.dropped.len());
            }
            let kept = inst.panel.iter().enumerate().filter(|(i, _)| !s.dropped.contains(i)).map(|(_, a)| a);
            let counts = counts_of(kept.chain(s.replacement.iter().map(|&r| &inst.pool[r])), &inst.schema);
            prop_assert_eq!(&dev.metric().value(&counts, &inst.quotas), &s.deviation);
            total += &s.weight * &s.deviation;
        }
        prop_assert_eq!(total, res.objective);
    }

    #[test]
    fn likelihood_never_decreases(seed in any::<u64>(), rows in 200usize..1500) {
        let cfg = SynthConfig::new(20, 6, 2, vec![2, 3]);
        let truth = synth(&cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let history = synth_history(&truth.instance.schema, &truth.model, None, rows, &mut rng);
        let fitted = fit_dropout_model(&history, &truth.instance.schema).unwrap();
        for w in fitted.log_likelihood.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{} then {}", w[0], w[1]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn empirical_distribution_approaches_exact(seed in any::<u64>(), k in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probs = random_probs(&mut rng, k);
        let exact = enumerate_exact_distribution(&probs).unwrap();
        let small = build_empirical_distribution(&probs, 200, &mut rng).unwrap();
        let large = build_empirical_distribution(&probs, 50_000, &mut rng).unwrap();
        let (d_small, d_large) = (tv_distance(&small, &exact), tv_distance(&large, &exact));
        prop_assert!(d_large <= 0.05, "{}", d_large);
        prop_assert!(d_large <= d_small || d_small < 0.01, "{} then {}", d_small, d_large);
    }
}
