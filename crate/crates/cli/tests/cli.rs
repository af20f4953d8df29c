use std::fs;
use std::path::Path;

use clap::error::ErrorKind;
use panelalts_cli::args::SolverSpec;
use panelalts_cli::{parse_args, run, Command, EXIT_BUDGET, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn argv(words: &[&str]) -> Vec<String> {
    std::iter::once("panelalts")
        .chain(words.iter().copied())
        .map(String::from)
        .collect()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

fn json(path: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn without_first_line(path: &str) -> String {
    let text = fs::read_to_string(path).unwrap();
    text.split_once('\n').unwrap().1.to_string()
}

/// Data rows of a CSV written by the tool.
fn csv_rows(path: &str) -> Vec<csv::StringRecord> {
    let text = fs::read_to_string(path).unwrap();
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    r.records().map(Result::unwrap).collect()
}

#[test]
fn budget_ranges_expand() {
    let cli = parse_args(argv(&[
        "benchmark",
        "--instance",
        "i.json",
        "--probs",
        "p.json",
        "--budgets",
        "2:12:2",
        "--seed",
        "7",
    ]))
    .unwrap();
    let Command::Benchmark(b) = cli.command else {
        panic!("wrong subcommand")
    };
    assert_eq!(b.budgets.0, vec![2, 4, 6, 8, 10, 12]);
    assert_eq!(b.seed, 7);
    assert_eq!(b.s, 300);
}

#[test]
fn select_needs_a_seed() {
    let words = argv(&[
        "select",
        "--instance",
        "i.json",
        "--probs",
        "p.json",
        "--algo",
        "erm-l1",
    ]);
    let err = parse_args(words.clone()).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::MissingRequiredArgument);
    assert!(err.to_string().contains("--seed"));
    assert_eq!(run(words), EXIT_USAGE);
}

#[test]
fn unknown_flags_are_usage_errors() {
    let words = argv(&[
        "select",
        "--instance",
        "i.json",
        "--probs",
        "p.json",
        "--seed",
        "1",
        "--frobnicate",
    ]);
    let err = parse_args(words.clone()).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::UnknownArgument);
    assert!(err.to_string().contains("--frobnicate"));
    assert_eq!(run(words), EXIT_USAGE);
    assert_eq!(
        run(argv(&[
            "benchmark",
            "--instance",
            "i",
            "--probs",
            "p",
            "--seed",
            "1",
            "--budgets",
            "4:2:1"
        ])),
        EXIT_USAGE
    );
    assert_eq!(run(argv(&["--help"])), EXIT_OK);
    assert_eq!(run(argv(&["--version"])), EXIT_OK);
}

#[test]
fn external_solver_flag() {
    let cli = parse_args(argv(&[
        "select",
        "--instance",
        "i.json",
        "--probs",
        "p.json",
        "--seed",
        "1",
        "--solver",
        "external:\"mysolver {lp} {sol}\"",
    ]))
    .unwrap();
    let Command::Select(s) = cli.command else {
        panic!("wrong subcommand")
    };
    assert_eq!(s.solve.solver, SolverSpec::External("mysolver {lp} {sol}".into()));
    assert_eq!(s.algo.name(), "erm_l1");
}

#[test]
fn select_writes_sorted_members_and_reproduces() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "A.json");
    let (inst, probs) = (fixture("benchmark_instance.json"), fixture("benchmark_probs.json"));
    let words = argv(&[
        "select",
        "--instance",
        &inst,
        "--probs",
        &probs,
        "--algo",
        "erm-l1",
        "--a",
        "6",
        "--s",
        "300",
        "--seed",
        "42",
        "--out",
        &out,
    ]);
    assert_eq!(run(words), EXIT_OK);
    let v = json(&out);
    let ids: Vec<&str> = v["alternates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_str().unwrap())
        .collect();
    assert_eq!(ids.len(), 6);
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
    assert!(milp::rational::parse_fraction(v["objective"].as_str().unwrap()).is_some());
    assert_eq!(v["provenance"]["seed"], 42);
    assert_eq!(v["provenance"]["version"], env!("CARGO_PKG_VERSION"));
    let first = without_first_line(&out);

    // Re-run the recorded command line.
    let recorded = v["provenance"]["command"].as_str().unwrap().to_string();
    let again: Vec<String> = recorded.split(' ').map(String::from).collect();
    fs::remove_file(&out).unwrap();
    assert_eq!(run(again), EXIT_OK);
    assert_eq!(without_first_line(&out), first);
}

#[test]
fn benchmark_report_shape_and_reruns() {
    let dir = TempDir::new().unwrap();
    let (csv1, js, plot) = (path(&dir, "r.csv"), path(&dir, "r.json"), path(&dir, "p.csv"));
    let (inst, probs) = (fixture("benchmark_instance.json"), fixture("benchmark_probs.json"));
    let words = |out: &str| {
        argv(&[
            "benchmark",
            "--instance",
            &inst,
            "--probs",
            &probs,
            "--budgets",
            "0,2",
            "--algos",
            "erm-l1,greedy,empty",
            "--s",
            "40",
            "--eval-samples",
            "50",
            "--seed",
            "7",
            "--out",
            out,
            "--json",
            &js,
            "--emit-plot-data",
            &plot,
        ])
    };
    assert_eq!(run(words(&csv1)), EXIT_OK);
    let (first_csv, first_json) = (without_first_line(&csv1), without_first_line(&js));
    assert_eq!(run(words(&csv1)), EXIT_OK);
    assert_eq!(without_first_line(&csv1), first_csv);
    assert_eq!(without_first_line(&js), first_json);
    let text = fs::read_to_string(&csv1).unwrap();
    assert!(text.starts_with("# generated_at: "));
    assert!(text.lines().nth(1).unwrap().starts_with("# provenance: "));

    let rows = csv_rows(&csv1);
    assert_eq!(rows.len(), 6);
    let cells: Vec<(&str, &str)> = rows.iter().map(|r| (&r[0], &r[1])).collect();
    assert_eq!(
        cells,
        [
            ("erm_l1", "0"),
            ("greedy", "0"),
            ("empty", "0"),
            ("erm_l1", "2"),
            ("greedy", "2"),
            ("empty", "2")
        ]
    );
    assert!(rows.iter().all(|r| &r[4] == "ok"));
    // At budget zero every algorithm is the empty set.
    assert_eq!(rows[0][5], rows[2][5]);
    assert_eq!(rows[1][5], rows[2][5]);

    let report = json(&js);
    assert_eq!(report["kind"], "benchmark");
    assert_eq!(report["rows"].as_array().unwrap().len(), 6);
    assert!(csv_rows(&plot).len() > 6);
}

#[test]
fn evaluate_reuses_the_benchmark_sample() {
    let dir = TempDir::new().unwrap();
    let (a, e, report) = (path(&dir, "A.json"), path(&dir, "E.json"), path(&dir, "r.csv"));
    let (inst, probs) = (fixture("benchmark_instance.json"), fixture("benchmark_probs.json"));
    let common = ["--instance", inst.as_str(), "--probs", probs.as_str(), "--seed", "11"];
    let with = |extra: &[&str]| {
        let mut w: Vec<&str> = Vec::new();
        w.extend_from_slice(&extra[..1]);
        w.extend_from_slice(&common);
        w.extend_from_slice(&extra[1..]);
        argv(&w)
    };
    assert_eq!(
        run(with(&[
            "select", "--algo", "erm-l1", "--a", "4", "--s", "60", "--out", &a
        ])),
        EXIT_OK
    );
    assert_eq!(
        run(with(&[
            "evaluate",
            "--alternates",
            &a,
            "--eval-samples",
            "80",
            "--out",
            &e
        ])),
        EXIT_OK
    );
    assert_eq!(
        run(with(&[
            "benchmark",
            "--budgets",
            "4",
            "--algos",
            "erm-l1",
            "--s",
            "60",
            "--eval-samples",
            "80",
            "--out",
            &report
        ])),
        EXIT_OK
    );
    let v = json(&e);
    let rows = csv_rows(&report);
    let mean: f64 = rows[0][5].parse().unwrap();
    assert!((v["loss"]["mean_decimal"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert_eq!(v["distribution"]["eval_hash"], rows[0][15]);

    // A comma list of ids works too, and realized dropouts add calibration.
    let ids: Vec<String> = json(&a)["alternates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_str().unwrap().to_string())
        .collect();
    let list = ids.join(",");
    let e2 = path(&dir, "E2.json");
    assert_eq!(
        run(with(&[
            "evaluate",
            "--alternates",
            &list,
            "--eval-samples",
            "80",
            "--realized",
            "k01,k02",
            "--out",
            &e2
        ])),
        EXIT_OK
    );
    let v2 = json(&e2);
    assert_eq!(v2["loss"], v["loss"]);
    assert_eq!(v2["realized"]["dropped"], serde_json::json!(["k01", "k02"]));
    assert!(!v2["calibration"].as_array().unwrap().is_empty());
}

#[test]
fn exit_codes_for_bad_data_and_budgets() {
    let dir = TempDir::new().unwrap();
    let (inst, probs) = (fixture("benchmark_instance.json"), fixture("benchmark_probs.json"));
    let broken = path(&dir, "broken.json");
    fs::write(&broken, "{\"schema\": ").unwrap();
    assert_eq!(
        run(argv(&[
            "select",
            "--instance",
            &broken,
            "--probs",
            &probs,
            "--seed",
            "1"
        ])),
        EXIT_DATA
    );
    let missing = path(&dir, "nothing.json");
    assert_eq!(
        run(argv(&[
            "select",
            "--instance",
            &missing,
            "--probs",
            &probs,
            "--seed",
            "1"
        ])),
        EXIT_DATA
    );
    let few = path(&dir, "few.json");
    fs::write(&few, "{\"k01\": 0.5}").unwrap();
    assert_eq!(
        run(argv(&["select", "--instance", &inst, "--probs", &few, "--seed", "1"])),
        EXIT_DATA
    );
    assert_eq!(
        run(argv(&[
            "select",
            "--instance",
            &inst,
            "--probs",
            &probs,
            "--seed",
            "1",
            "--a",
            "999"
        ])),
        EXIT_DATA
    );

    let out = path(&dir, "A.json");
    let code = run(argv(&[
        "select",
        "--instance",
        &inst,
        "--probs",
        &probs,
        "--seed",
        "1",
        "--node-limit",
        "1",
        "--out",
        &out,
    ]));
    assert_eq!(code, EXIT_BUDGET);
    assert_eq!(json(&out)["status"], "budget_exceeded");
}

#[test]
fn synth_import_fit_round_trip() {
    let dir = TempDir::new().unwrap();
    let p = |n: &str| path(&dir, n);
    assert_eq!(
        run(argv(&[
            "synth",
            "--seed",
            "5",
            "--n",
            "20",
            "--k",
            "8",
            "--a",
            "3",
            "--out",
            &p("inst.json"),
            "--probs-out",
            &p("probs.json"),
            "--model-out",
            &p("model.json"),
            "--agents-out",
            &p("agents.csv"),
            "--history-out",
            &p("hist.csv"),
            "--history-rows",
            "3000",
        ])),
        EXIT_OK
    );
    let inst = json(&p("inst.json"));
    fs::write(p("quotas.json"), inst["quotas"].to_string()).unwrap();
    assert_eq!(
        run(argv(&[
            "import",
            "--quotas",
            &p("quotas.json"),
            "--agents",
            &p("agents.csv"),
            "--a",
            "3",
            "--out",
            &p("imp.json")
        ])),
        EXIT_OK
    );
    let imported = json(&p("imp.json"));
    for key in ["schema", "quotas", "budget", "panel", "pool"] {
        assert_eq!(imported[key], inst[key], "{key}");
    }

    assert_eq!(
        run(argv(&[
            "fit",
            "--history",
            &p("hist.csv"),
            "--instance",
            &p("inst.json"),
            "--out",
            &p("fit.json"),
            "--probs-out",
            &p("fitp.json"),
        ])),
        EXIT_OK
    );
    assert_eq!(json(&p("fit.json"))["rows"], 3000);
    // Fitted probabilities load as probabilities for the same panel.
    assert_eq!(
        run(argv(&[
            "select",
            "--instance",
            &p("inst.json"),
            "--probs",
            &p("fitp.json"),
            "--seed",
            "2",
            "--s",
            "30"
        ])),
        EXIT_OK
    );

    // Synthesis is deterministic in the seed.
    let again = p("inst2.json");
    assert_eq!(
        run(argv(&[
            "synth", "--seed", "5", "--n", "20", "--k", "8", "--a", "3", "--out", &again
        ])),
        EXIT_OK
    );
    assert_eq!(json(&again)["panel"], inst["panel"]);
}

#[test]
fn solve_lp_writes_a_readable_solution() {
    let dir = TempDir::new().unwrap();
    let lp = path(&dir, "m.lp");
    let sol = path(&dir, "m.sol");
    fs::write(
        &lp,
        "Minimize\n obj: - 3 x - 2 y - z\nSubject To\n c1: x + y + z <= 2\n c2: x - y >= 0\nBinary\n x y z\nEnd\n",
    )
    .unwrap();
    assert_eq!(run(argv(&["solve-lp", "--lp", &lp, "--out", &sol])), EXIT_OK);
    let model = milp::parse_lp(&fs::read_to_string(&lp).unwrap()).unwrap();
    let back = milp::import_solution(&model, &fs::read_to_string(&sol).unwrap()).unwrap();
    assert_eq!(back.solution.objective, Some(milp::rational::int(-5)));

    let bad = path(&dir, "bad.lp");
    fs::write(&bad, "Minimize\n obj: x +\n").unwrap();
    assert_eq!(run(argv(&["solve-lp", "--lp", &bad])), EXIT_DATA);
}

#[test]
fn extend_checks_variant_inputs() {
    let dir = TempDir::new().unwrap();
    let (inst, probs) = (fixture("benchmark_instance.json"), fixture("benchmark_probs.json"));
    assert_eq!(
        run(argv(&[
            "extend",
            "--instance",
            &inst,
            "--probs",
            &probs,
            "--variant",
            "preempt",
            "--seed",
            "1"
        ])),
        EXIT_USAGE
    );
    assert_eq!(
        run(argv(&[
            "extend",
            "--instance",
            &inst,
            "--variant",
            "alts-drop",
            "--seed",
            "1"
        ])),
        EXIT_USAGE
    );
    assert_eq!(
        run(argv(&[
            "extend",
            "--instance",
            &inst,
            "--variant",
            "sideways",
            "--seed",
            "1"
        ])),
        EXIT_USAGE
    );

    let instance = json(&inst);
    let pool: serde_json::Map<String, Value> = instance["pool"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| (a["id"].as_str().unwrap().to_string(), Value::from(0)))
        .collect();
    let pool_path = path(&dir, "pool.json");
    fs::write(&pool_path, Value::Object(pool).to_string()).unwrap();
    let out = path(&dir, "ext.json");
    assert_eq!(
        run(argv(&[
            "extend",
            "--instance",
            &inst,
            "--probs",
            &probs,
            "--variant",
            "alts-drop",
            "--pool-probs",
            &pool_path,
            "--a",
            "2",
            "--s",
            "30",
            "--seed",
            "1",
            "--out",
            &out,
        ])),
        EXIT_OK
    );
    let v = json(&out);
    assert_eq!(v["variant"], "alts_drop");
    assert_eq!(v["alternates"].as_array().unwrap().len(), 2);
    assert_eq!(v["provenance"]["seed"], 1);
}
