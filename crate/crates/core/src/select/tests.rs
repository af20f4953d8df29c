use milp::rational::{int, ratio};
use milp::{Backend, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::deviation::counts_of;
use crate::domain::{Agent, FeatureSchema, Quotas};
use crate::dropout::enumerate_exact_distribution;
use crate::synth::{random_probs, random_small_instance};

fn one_feature(panel: &[usize], pool: &[usize], l: Vec<i64>, u: Vec<i64>, a: usize) -> Instance {
    let schema = FeatureSchema::from_pairs(&[("f", &["x", "y", "z"][..])]).unwrap();
    let schema = if l.len() == 2 {
        FeatureSchema::from_pairs(&[("f", &["x", "y"][..])]).unwrap()
    } else {
        schema
    };
    Instance {
        schema,
        panel: panel
            .iter()
            .enumerate()
            .map(|(i, &v)| Agent::new(format!("p{}", i + 1), vec![v]))
            .collect(),
        pool: pool
            .iter()
            .enumerate()
            .map(|(i, &v)| Agent::new(format!("a{}", i + 1), vec![v]))
            .collect(),
        quotas: Quotas::new(l, u),
        budget: a,
    }
}

/// Independent subset oracle for one replacement problem.
fn oracle(inst: &Instance, alts: &[usize], dropped: &[usize], metric: Metric, cap: Option<usize>) -> Rational {
    let mut base = counts_of(inst.panel.iter(), &inst.schema);
    for &d in dropped {
        for j in inst.panel[d].fvs(&inst.schema) {
            base[j] -= 1;
        }
    }
    let mut best: Option<Rational> = None;
    for mask in 0u32..1 << alts.len() {
        if cap.is_some_and(|c| mask.count_ones() as usize > c) {
            continue;
        }
        let mut c = base.clone();
        for (b, &i) in alts.iter().enumerate() {
            if mask >> b & 1 == 1 {
                for j in inst.pool[i].fvs(&inst.schema) {
                    c[j] += 1;
                }
            }
        }
        let v = metric.value(&c, &inst.quotas);
        if best.as_ref().is_none_or(|b| v < *b) {
            best = Some(v);
        }
    }
    best.unwrap()
}

fn engines() -> [Engine; 2] {
    [
        Engine::default(),
        Engine::Ilp(Backend::Builtin(SolverConfig::default())),
    ]
}

#[test]
fn nobody_drops() {
    let inst = one_feature(&[0, 1], &[0, 1], vec![1, 1], vec![1, 1], 2);
    for engine in engines() {
        let r = best_replacement(
            &inst,
            &AlternateSet::new(vec![0, 1]),
            &[],
            Metric::Linear,
            ReplacementPolicy::Capped,
            &engine,
        )
        .unwrap();
        assert!(r.members.is_empty());
        assert_eq!(r.deviation, int(0));
    }
}

#[test]
fn replaces_the_matching_type() {
    let inst = one_feature(&[0, 1], &[0, 1], vec![1, 1], vec![1, 1], 2);
    for engine in engines() {
        for metric in [Metric::Linear, Metric::Binary] {
            let r = best_replacement(
                &inst,
                &AlternateSet::new(vec![0, 1]),
                &[0],
                metric,
                ReplacementPolicy::Capped,
                &engine,
            )
            .unwrap();
            assert_eq!(r.members, vec![0]);
            assert_eq!(r.deviation, int(0));
        }
    }
}

#[test]
fn search_matches_subset_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..150 {
        let inst = random_small_instance(&mut rng, 8, 6, 8);
        let alts: Vec<usize> = (0..inst.n()).filter(|_| rng.gen_bool(0.7)).collect();
        let dropped: Vec<usize> = (0..inst.k()).filter(|_| rng.gen_bool(0.5)).take(4).collect();
        let set = AlternateSet::new(alts.clone());
        for metric in [
            Metric::Linear,
            Metric::Binary,
            Metric::DevBelow,
            Metric::MaxNormDev,
            Metric::MaxDev,
            Metric::Unrepresented,
        ] {
            for policy in [ReplacementPolicy::Capped, ReplacementPolicy::Uncapped] {
                let want = oracle(&inst, &alts, &dropped, metric, policy.cap(dropped.len()));
                let got = best_replacement(&inst, &set, &dropped, metric, policy, &Engine::default()).unwrap();
                assert_eq!(got.deviation, want, "{metric:?} {policy:?}");
                assert!(got.members.iter().all(|m| alts.contains(m)));
                if let Some(c) = policy.cap(dropped.len()) {
                    assert!(got.members.len() <= c);
                }
                let ilp = best_replacement(&inst, &set, &dropped, metric, policy, &engines()[1].clone()).unwrap();
                assert_eq!(ilp.deviation, want, "ilp {metric:?} {policy:?}");
            }
        }
    }
}

#[test]
fn opt_matches_brute_force_on_exact_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..40 {
        let inst = random_small_instance(&mut rng, 7, 5, 3);
        let probs = random_probs(&mut rng, inst.k());
        let dist = enumerate_exact_distribution(&probs).unwrap();
        for dev in [DeviationKind::Linear, DeviationKind::Binary] {
            for policy in [ReplacementPolicy::Capped, ReplacementPolicy::Uncapped] {
                let want = brute_force_opt(&inst, &dist, dev, policy).unwrap();
                let got = opt_alts(&inst, &dist, &OptConfig::new(dev, policy)).unwrap();
                assert_eq!(got.objective, want.objective, "case {case} {dev:?} {policy:?}");
                assert_eq!(got.alternates.len(), inst.budget);
                let recomputed: Rational = got
                    .per_scenario
                    .iter()
                    .map(|s| {
                        &s.weight
                            * oracle(
                                &inst,
                                got.alternates.members(),
                                &s.dropped,
                                dev.metric(),
                                policy.cap(s.dropped.len()),
                            )
                    })
                    .sum();
                assert_eq!(recomputed, got.objective);
            }
        }
    }
}

#[test]
fn ilp_engine_matches_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..15 {
        let inst = random_small_instance(&mut rng, 6, 4, 2);
        let probs = random_probs(&mut rng, inst.k());
        let dist = enumerate_exact_distribution(&probs).unwrap();
        for dev in [DeviationKind::Linear, DeviationKind::Binary] {
            let search = opt_alts(&inst, &dist, &OptConfig::new(dev, ReplacementPolicy::Capped)).unwrap();
            let cfg = OptConfig {
                engine: engines()[1].clone(),
                ..OptConfig::new(dev, ReplacementPolicy::Capped)
            };
            let ilp = opt_alts(&inst, &dist, &cfg).unwrap();
            assert_eq!(search.objective, ilp.objective);
        }
    }
}

#[test]
fn at_most_never_worse() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let inst = random_small_instance(&mut rng, 6, 4, 3);
        let probs = random_probs(&mut rng, inst.k());
        let dist = enumerate_exact_distribution(&probs).unwrap();
        let exact = opt_alts(&inst, &dist, &OptConfig::default()).unwrap();
        let loose = opt_alts(
            &inst,
            &dist,
            &OptConfig {
                at_most: true,
                ..OptConfig::default()
            },
        )
        .unwrap();
        assert!(loose.objective <= exact.objective);
        assert!(loose.alternates.len() <= inst.budget);
    }
}

#[test]
fn empty_budget_and_silent_panel() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inst = one_feature(&[0, 1, 2], &[0, 1, 2, 0], vec![1, 1, 1], vec![1, 1, 1], 0);
    let probs = DropoutProbs::new(vec![ratio(1, 2); 3]).unwrap();
    let r = erm_alts(&inst, &probs, 50, &mut rng, &OptConfig::default()).unwrap();
    assert!(r.alternates.is_empty());
    let direct = evaluate_alternates(
        &inst,
        &AlternateSet::default(),
        &build_dist(&probs, 50, 3),
        Metric::Linear,
        ReplacementPolicy::Capped,
    )
    .unwrap();
    assert_eq!(r.objective, expected_deviation(&direct));

    let zero = DropoutProbs::new(vec![int(0); 3]).unwrap();
    let r = erm_alts(&inst.with_budget(2), &zero, 50, &mut rng, &OptConfig::default()).unwrap();
    assert_eq!(r.objective, int(0));
    assert_eq!(r.alternates.len(), 2);
}

fn build_dist(probs: &DropoutProbs, s: usize, seed: u64) -> ScenarioDistribution {
    build_empirical_distribution(probs, s, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn equalized_run_is_identity_on_uniform_probs() {
    let inst = one_feature(&[0, 1, 2], &[0, 1, 2, 0], vec![1, 1, 1], vec![1, 1, 1], 2);
    let probs = DropoutProbs::new(vec![ratio(1, 4); 3]).unwrap();
    let a = erm_alts(
        &inst,
        &probs,
        40,
        &mut ChaCha8Rng::seed_from_u64(1),
        &OptConfig::default(),
    )
    .unwrap();
    let b = erm_alts_eq(
        &inst,
        &probs,
        40,
        &mut ChaCha8Rng::seed_from_u64(1),
        &OptConfig::default(),
    )
    .unwrap();
    assert_eq!(a.per_scenario, b.per_scenario);
    assert_eq!(a.objective, b.objective);
}

#[test]
fn greedy_takes_clones_of_likeliest_dropouts() {
    let schema = FeatureSchema::from_pairs(&[("f", &["0", "1"][..]), ("g", &["0", "1"][..])]).unwrap();
    let vecs = [vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]];
    let panel: Vec<Agent> = vecs
        .iter()
        .enumerate()
        .map(|(i, v)| Agent::new(format!("p{i}"), v.clone()))
        .collect();
    let pool: Vec<Agent> = vecs
        .iter()
        .rev()
        .enumerate()
        .map(|(i, v)| Agent::new(format!("n{i}"), v.clone()))
        .collect();
    let inst = Instance {
        schema,
        panel,
        pool,
        quotas: Quotas::new(vec![0; 4], vec![4; 4]),
        budget: 2,
    };
    let probs = DropoutProbs::new(vec![ratio(1, 10), ratio(1, 2), ratio(3, 10), ratio(1, 5)]).unwrap();
    // p1 (0,1) then p2 (1,0); their clones are n2 and n1.
    let got = greedy_alts(&inst, &probs);
    assert_eq!(got.ids(&inst), vec!["n1", "n2"]);
    assert_eq!(greedy_alts(&inst.with_budget(4), &probs).len(), 4);
}

#[test]
fn greedy_pathology_is_distance_tied() {
    // Panel 10 and 01 both likely to drop; the pool holds 11s and 00s, all at
    // distance one, so ids decide and two 11s come first.
    let schema = FeatureSchema::from_pairs(&[("f", &["0", "1"][..]), ("g", &["0", "1"][..])]).unwrap();
    let panel = vec![Agent::new("p1", vec![1, 0]), Agent::new("p2", vec![0, 1])];
    let pool = vec![
        Agent::new("n1", vec![1, 1]),
        Agent::new("n2", vec![1, 1]),
        Agent::new("n3", vec![0, 0]),
        Agent::new("n4", vec![0, 0]),
    ];
    let inst = Instance {
        schema,
        panel,
        pool,
        quotas: Quotas::new(vec![1; 4], vec![1; 4]),
        budget: 2,
    };
    let probs = DropoutProbs::new(vec![ratio(1, 2), ratio(1, 2)]).unwrap();
    let greedy = greedy_alts(&inst, &probs);
    assert_eq!(greedy.ids(&inst), vec!["n1", "n2"]);
    let dist = enumerate_exact_distribution(&probs).unwrap();
    let g = expected_deviation(
        &evaluate_alternates(&inst, &greedy, &dist, Metric::Linear, ReplacementPolicy::Capped).unwrap(),
    );
    let best = opt_alts(&inst, &dist, &OptConfig::default()).unwrap();
    assert!(best.objective < g);
}

#[test]
fn quota_based_scaling() {
    // a = k keeps the quotas.
    let inst = one_feature(&[0, 0, 1, 1], &[0, 0, 1, 1, 1], vec![2, 2], vec![2, 2], 4);
    let got = quota_based_alts(&inst, &Backend::default()).unwrap();
    assert_eq!(got.len(), 4);
    let c = counts_of(got.members().iter().map(|&i| &inst.pool[i]), &inst.schema);
    assert_eq!(c, vec![2, 2]);
    // a = 1: l' = 0, u' = 1, anything goes.
    let got = quota_based_alts(&inst.with_budget(1), &Backend::default()).unwrap();
    assert_eq!(got.len(), 1);
    // Pool lacks value y: the first pass fails, loosening succeeds.
    let inst = one_feature(&[0, 0, 1, 1], &[0, 0, 0], vec![2, 2], vec![2, 2], 2);
    assert_eq!(quota_based_alts(&inst, &Backend::default()).unwrap().len(), 2);
    assert!(quota_based_alts(&inst.with_budget(4), &Backend::default()).is_err());
}

#[test]
fn brute_force_basics() {
    let inst = one_feature(&[0, 1], &[1, 0, 1], vec![1, 1], vec![1, 1], 0);
    let dist = ScenarioDistribution::point(vec![0]);
    let r = brute_force_opt(&inst, &dist, DeviationKind::Linear, ReplacementPolicy::Capped).unwrap();
    assert!(r.alternates.is_empty());
    assert_eq!(r.objective, int(1));
    let r = brute_force_opt(
        &inst.with_budget(2),
        &ScenarioDistribution::point(vec![]),
        DeviationKind::Linear,
        ReplacementPolicy::Capped,
    )
    .unwrap();
    assert_eq!(r.objective, int(0));
    assert_eq!(r.alternates.ids(&inst), vec!["a1", "a2"]);
}

#[test]
fn brute_force_guard() {
    let pool: Vec<usize> = vec![0; 40];
    let inst = one_feature(&[0, 1], &pool, vec![1, 1], vec![1, 1], 10);
    assert!(matches!(
        brute_force_opt(
            &inst,
            &ScenarioDistribution::point(vec![]),
            DeviationKind::Linear,
            ReplacementPolicy::Capped
        ),
        Err(Error::TooLarge(_))
    ));
}

#[test]
fn node_limit_reports_incumbent() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let inst = random_small_instance(&mut rng, 8, 6, 4).with_budget(4);
    let probs = DropoutProbs::new(vec![ratio(1, 2); inst.k()]).unwrap();
    let dist = enumerate_exact_distribution(&probs).unwrap();
    let cfg = OptConfig {
        engine: Engine::Search {
            node_limit: Some(1),
            time_limit: None,
        },
        ..OptConfig::default()
    };
    match opt_alts(&inst, &dist, &cfg) {
        Err(Error::BudgetExceeded {
            incumbent: Some(ids),
            objective: Some(_),
        }) => assert_eq!(ids.len(), 4),
        Ok(r) => assert_eq!(r.objective, int(0)),
        Err(e) => panic!("unexpected {e}"),
    }
}

#[test]
fn result_json_shape() {
    let inst = one_feature(&[0, 1], &[0, 1], vec![1, 1], vec![1, 1], 1);
    let dist = ScenarioDistribution::point(vec![1]);
    let r = opt_alts(&inst, &dist, &OptConfig::default()).unwrap();
    let v = r.to_json(&inst);
    assert_eq!(v["alternates"], serde_json::json!(["a2"]));
    assert_eq!(v["objective"], "0");
    assert_eq!(v["per_scenario"][0]["replacement"], serde_json::json!(["a2"]));
}
