use milp::rational::int;
use milp::{solve, Cmp, Model, Rational, SolverConfig, Status, VarId};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(rng: &mut ChaCha8Rng) -> Model {
    let n = rng.gen_range(1..=12);
    let mut m = Model::new();
    let vars: Vec<VarId> = (0..n).map(|i| m.binary(format!("x{i}")).unwrap()).collect();
    m.set_objective(vars.iter().map(|&v| (v, int(rng.gen_range(-9..=9)))).collect())
        .unwrap();
    let anchor: Vec<i64> = (0..n).map(|_| rng.gen_range(0..=1)).collect();
    for r in 0..rng.gen_range(0..=5) {
        let coeffs: Vec<i64> = (0..n).map(|_| rng.gen_range(-5..=5)).collect();
        let at_anchor: i64 = coeffs.iter().zip(&anchor).map(|(c, a)| c * a).sum();
        // Mostly satisfiable rows, with the occasional infeasible one.
        let (cmp, rhs) = match rng.gen_range(0..10) {
            0..=5 => (Cmp::Le, at_anchor + rng.gen_range(0..=3)),
            6..=7 => (Cmp::Ge, at_anchor - rng.gen_range(0..=3)),
            8 => (Cmp::Eq, at_anchor),
            _ => (Cmp::Eq, at_anchor + 1),
        };
        let terms = vars.iter().zip(&coeffs).map(|(&v, &c)| (v, int(c))).collect();
        m.add_constraint(format!("r{r}"), terms, cmp, int(rhs)).unwrap();
    }
    m
}

fn enumerate(model: &Model) -> Option<Rational> {
    let n = model.num_vars();
    let mut best: Option<Rational> = None;
    for mask in 0u32..(1 << n) {
        let values: Vec<Rational> = (0..n).map(|j| int(((mask >> j) & 1) as i64)).collect();
        if model.first_violation(&values).is_some() {
            continue;
        }
        let obj = model.objective_value(&values);
        if best.as_ref().is_none_or(|b| obj < *b) {
            best = Some(obj);
        }
    }
    best
}

#[test]
fn matches_enumeration_on_500_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut infeasible = 0;
    for case in 0..500 {
        let model = random_model(&mut rng);
        let expected = enumerate(&model);
        let got = solve(&model, &SolverConfig::default()).unwrap();
        match expected {
            Some(obj) => {
                assert_eq!(got.status, Status::Optimal, "case {case}");
                assert_eq!(got.objective, Some(obj), "case {case}");
                assert_eq!(model.first_violation(&got.assignment), None);
            }
            None => {
                infeasible += 1;
                assert_eq!(got.status, Status::Infeasible, "case {case}");
            }
        }
    }
    assert!(infeasible > 0 && infeasible < 250);
}

#[test]
fn incumbent_does_not_change_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let model = random_model(&mut rng);
        let Some(expected) = enumerate(&model) else { continue };
        let plain = solve(&model, &SolverConfig::default()).unwrap();
        let warm = solve(
            &model,
            &SolverConfig::default().with_incumbent(plain.assignment.clone()),
        )
        .unwrap();
        assert_eq!(warm.objective, Some(expected));
        assert!(warm.node_count <= plain.node_count);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solve_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng);
        let a = solve(&model, &SolverConfig::default()).unwrap();
        let b = solve(&model, &SolverConfig::default()).unwrap();
        prop_assert!(a.same_outcome(&b));
    }

    #[test]
    fn budgeted_solutions_are_feasible(seed in any::<u64>(), limit in 1u64..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng);
        let cfg = SolverConfig { node_limit: Some(limit), ..Default::default() };
        let s = solve(&model, &cfg).unwrap();
        if !s.assignment.is_empty() {
            prop_assert_eq!(model.first_violation(&s.assignment), None);
            prop_assert_eq!(s.objective.clone(), Some(model.objective_value(&s.assignment)));
        }
        if let (Status::Optimal, Some(best)) = (s.status, enumerate(&model)) {
            prop_assert_eq!(s.objective, Some(best));
        }
    }
}
