use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use log::{info, warn};
use milp::rational::{to_f64, to_fraction_string};
use milp::{Backend, ExternalSolver, SolverConfig, Status};
use panelalts::domain::{load_agents_csv, load_quotas, validate_instance, write_agents_csv, Instance};
use panelalts::dropout::{enumerate_exact_distribution, fit_dropout_model, DropoutModel, DropoutProbs};
use panelalts::evaluate::{
    benchmark_suite, calibration_from_probs, calibration_report, convergence_study, eval_distribution,
    loss_on_distribution, robustness_sweep, scenario_hash, select_algorithm, Algorithm, EvaluationReport, SuiteConfig,
};
use panelalts::extensions::{ExtensionConfig, Variant};
use panelalts::rng::{stream, Purpose};
use panelalts::select::{AlternateSet, Engine, OptConfig};
use panelalts::synth::{benchmark_fixture_config, synth, synth_history};
use panelalts::{DataError, Error, Rational};
use serde_json::{json, Map, Value};

use crate::args::SolverSpec;
use crate::output::{emit, read_payload, read_text, render_commented, render_json, Provenance};
use crate::{
    BenchmarkArgs, CliError, Command, ConvergeArgs, EngineKind, EvaluateArgs, ExtendArgs, FitArgs, ImportArgs,
    InputArgs, ReportOut, RobustnessArgs, SelectArgs, SolveArgs, SolveLpArgs, SynthArgs,
};

type Res<T = ()> = Result<T, CliError>;

pub(crate) fn dispatch(command: &Command, argv: &[String]) -> Res {
    match command {
        Command::Fit(a) => fit(a, argv),
        Command::Select(a) => select(a, argv),
        Command::Evaluate(a) => evaluate(a, argv),
        Command::Benchmark(a) => benchmark(a, argv),
        Command::Robustness(a) => robustness(a, argv),
        Command::Converge(a) => converge(a, argv),
        Command::Synth(a) => synth_cmd(a, argv),
        Command::Import(a) => import(a, argv),
        Command::SolveLp(a) => solve_lp(a, argv),
        Command::Extend(a) => extend(a, argv),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing.

fn load_instance(path: &Path) -> Res<Instance> {
    Ok(Instance::from_json(&read_payload(path)?)?)
}

fn load_inputs(input: &InputArgs) -> Res<(Instance, DropoutProbs)> {
    let instance = load_instance(&input.instance)?;
    let probs = DropoutProbs::from_json(&read_payload(&input.probs)?, &instance.panel)?;
    Ok((instance, probs))
}

fn time_limit(secs: Option<f64>) -> Res<Option<Duration>> {
    match secs {
        None => Ok(None),
        Some(t) if t.is_finite() && t >= 0.0 => Ok(Some(Duration::from_secs_f64(t))),
        Some(t) => Err(CliError::Usage(format!(
            "--time-limit must be a non-negative number of seconds, got {t}"
        ))),
    }
}

fn backend(spec: &SolverSpec, node_limit: Option<u64>, time: Option<Duration>) -> Backend {
    match spec {
        SolverSpec::Builtin => Backend::Builtin(SolverConfig {
            node_limit,
            time_limit: time,
            incumbent: None,
        }),
        SolverSpec::External(t) => Backend::External(ExternalSolver::new(t.clone())),
    }
}

fn engine_and_backend(args: &SolveArgs) -> Res<(Engine, Backend)> {
    let time = time_limit(args.time_limit)?;
    let backend = backend(&args.solver, args.node_limit, time);
    let external = matches!(args.solver, SolverSpec::External(_));
    let kind = args
        .engine
        .unwrap_or(if external { EngineKind::Ilp } else { EngineKind::Search });
    if kind == EngineKind::Search && external {
        warn!("the search engine ignores the external solver except for quota-based");
    }
    let engine = match kind {
        EngineKind::Search => Engine::Search {
            node_limit: args.node_limit,
            time_limit: time,
        },
        EngineKind::Ilp => Engine::Ilp(backend.clone()),
    };
    Ok((engine, backend))
}

fn opt_config(args: &SolveArgs, dev: panelalts::deviation::DeviationKind) -> Res<OptConfig> {
    let (engine, _) = engine_and_backend(args)?;
    Ok(OptConfig {
        engine,
        ..OptConfig::new(dev, args.policy)
    })
}

fn with_budget(instance: Instance, a: Option<usize>) -> Res<Instance> {
    match a {
        Some(a) if a > instance.n() => {
            Err(Error::Input(format!("budget {a} exceeds pool size {}", instance.n())).into())
        }
        Some(a) => Ok(instance.with_budget(a)),
        None => Ok(instance),
    }
}

fn write_json(path: Option<&Path>, prov: &Provenance, body: Value) -> Res {
    emit(path, &render_json(prov, body))
}

fn write_report(report: &EvaluationReport, out: &ReportOut, prov: &Provenance) -> Res {
    emit(out.out.as_deref(), &render_commented(prov, &report.to_csv()?))?;
    if let Some(p) = &out.json {
        write_json(Some(p), prov, report.to_json())?;
    }
    if let Some(p) = &out.emit_plot_data {
        emit(Some(p), &render_commented(prov, &report.plot_data_csv()?))?;
    }
    let failed: Vec<&String> = report.rows.iter().filter_map(|r| r.outcome.as_ref().err()).collect();
    if failed.is_empty() {
        return Ok(());
    }
    let msg = format!(
        "{} of {} cells failed; first: {}",
        failed.len(),
        report.rows.len(),
        failed[0]
    );
    if failed.iter().any(|e| e.contains("budget exceeded")) {
        Err(CliError::Budget(msg))
    } else {
        Err(CliError::Data(msg))
    }
}

fn algorithms(list: &Option<crate::args::List<Algorithm>>) -> Vec<Algorithm> {
    list.as_ref().map_or_else(|| Algorithm::ALL.to_vec(), |l| l.0.clone())
}

fn ids_by_index(agents: &[panelalts::domain::Agent], list: &str, what: &str) -> Res<Vec<usize>> {
    let index: HashMap<&str, usize> = agents.iter().enumerate().map(|(i, a)| (a.id.as_str(), i)).collect();
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|id| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| CliError::Data(format!("`{id}` is not a {what} id")))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Subcommands.

fn fit(args: &FitArgs, argv: &[String]) -> Res {
    let prov = Provenance::new(argv, None);
    let instance = args.instance.as_deref().map(load_instance).transpose()?;
    let schema = match (&instance, &args.quotas) {
        (Some(inst), _) => inst.schema.clone(),
        (None, Some(q)) => load_quotas(&read_payload(q)?, None)?.0,
        (None, None) => unreachable!("clap requires one of them"),
    };
    let table = load_agents_csv(&read_text(&args.history)?, &schema, false)?;
    if table.outcomes.is_empty() {
        return Err(CliError::Data("history has no rows with a `dropped` outcome".into()));
    }
    let model = fit_dropout_model(&table.outcomes, &schema)?;
    info!("fitted on {} rows", table.outcomes.len());
    let mut body = model.to_json(&schema);
    body["rows"] = json!(table.outcomes.len());
    write_json(args.out.as_deref(), &prov, body)?;
    if let (Some(path), Some(inst)) = (&args.probs_out, &instance) {
        let (probs, preds) = model.predict_panel(&inst.panel, &schema)?;
        for (a, p) in inst.panel.iter().zip(&preds) {
            if p.unseen {
                warn!("panelist `{}` has a feature-value absent from the history", a.id);
            }
        }
        write_json(Some(path), &prov, probs.to_json(&inst.panel))?;
    }
    Ok(())
}

fn select(args: &SelectArgs, argv: &[String]) -> Res {
    let prov = Provenance::new(argv, Some(args.seed));
    let (instance, probs) = load_inputs(&args.input)?;
    let instance = with_budget(instance, args.a)?;
    let (engine, backend) = engine_and_backend(&args.solve)?;
    let config = SuiteConfig {
        train_samples: args.s,
        eval_dev: args.dev,
        policy: args.solve.policy,
        engine,
        backend,
        at_most: args.at_most,
        ..SuiteConfig::default()
    };
    match select_algorithm(args.algo, &instance, &probs, args.seed, &config) {
        Ok(result) => {
            let mut body = result.to_json(&instance);
            body["status"] = json!("optimal");
            body["budget"] = json!(instance.budget);
            write_json(args.out.as_deref(), &prov, body)
        }
        Err(Error::BudgetExceeded { incumbent, objective }) => {
            let body = json!({
                "algorithm": args.algo.name(),
                "status": "budget_exceeded",
                "budget": instance.budget,
                "incumbent": incumbent,
                "objective": objective.as_ref().map(to_fraction_string),
            });
            write_json(args.out.as_deref(), &prov, body)?;
            Err(CliError::Budget("solver budget exceeded; incumbent written".into()))
        }
        Err(e) => Err(e.into()),
    }
}

fn parse_alternates(spec: &str, instance: &Instance) -> Res<AlternateSet> {
    let path = Path::new(spec);
    let ids: Vec<String> = if path.is_file() {
        let v: Value = serde_json::from_str(&read_payload(path)?).map_err(|e| CliError::Data(e.to_string()))?;
        let list = v.get("alternates").unwrap_or(&v);
        list.as_array()
            .and_then(|a| {
                a.iter()
                    .map(|x| x.as_str().map(String::from))
                    .collect::<Option<Vec<_>>>()
            })
            .ok_or_else(|| CliError::Data(format!("{spec}: expected a list of pool ids under `alternates`")))?
    } else {
        spec.split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    };
    Ok(AlternateSet::from_ids(instance, &ids)?)
}

fn evaluate(args: &EvaluateArgs, argv: &[String]) -> Res {
    let prov = Provenance::new(argv, Some(args.seed));
    let (instance, probs) = load_inputs(&args.input)?;
    let alternates = parse_alternates(&args.alternates, &instance)?;
    let index = args.a.unwrap_or(alternates.len());
    let dist = if args.exact {
        enumerate_exact_distribution(&probs)?
    } else {
        eval_distribution(&probs, args.eval_samples, args.seed, index as u64)?
    };
    let est = loss_on_distribution(&instance, &alternates, &dist, args.dev, args.policy)?;
    let aux: Map<String, Value> = est
        .aux
        .iter()
        .map(|(m, v)| (m.name().to_string(), json!(to_fraction_string(v))))
        .collect();
    let mut body = json!({
        "alternates": alternates.ids(&instance),
        "dev": args.dev.name(),
        "policy": args.policy.name(),
        "distribution": {
            "kind": if args.exact { "exact" } else { "empirical" },
            "scenarios": dist.scenarios.len(),
            "eval_hash": format!("{:016x}", scenario_hash(&dist)),
        },
        "loss": {
            "mean": to_fraction_string(&est.mean),
            "mean_decimal": to_f64(&est.mean),
            "stddev": est.summary.stddev,
            "stderr": est.summary.stderr,
            "median": est.summary.median,
            "n": est.summary.n,
        },
        "aux": aux,
    });
    if let Some(list) = &args.realized {
        let dropped = ids_by_index(&instance.panel, list, "panel")?;
        let dev = panelalts::evaluate::evaluate_realized(&alternates, &dropped, &instance, args.dev, args.policy)?;
        let rows = match &args.model {
            Some(p) => {
                let model = DropoutModel::from_json(&read_payload(p)?, &instance.schema)?;
                calibration_report(&model, &instance.panel, &instance.schema, &dropped)?
            }
            None => calibration_from_probs(&probs, &instance.panel, &instance.schema, &dropped)?,
        };
        let mut ids: Vec<&str> = dropped.iter().map(|&i| instance.panel[i].id.as_str()).collect();
        ids.sort_unstable();
        body["realized"] = json!({
            "dropped": ids,
            "deviation": to_fraction_string(&dev),
            "deviation_decimal": to_f64(&dev),
        });
        body["calibration"] = rows
            .iter()
            .map(|r| json!({"feature": r.feature, "value": r.value, "expected": r.expected, "actual": r.actual}))
            .collect();
    }
    write_json(args.out.as_deref(), &prov, body)
}

fn suite(
    args: &SolveArgs,
    s: usize,
    eval_samples: usize,
    dev: panelalts::deviation::DeviationKind,
) -> Res<SuiteConfig> {
    let (engine, backend) = engine_and_backend(args)?;
    Ok(SuiteConfig {
        train_samples: s,
        eval_samples,
        eval_dev: dev,
        policy: args.policy,
        engine,
        backend,
        at_most: false,
    })
}

fn benchmark(args: &BenchmarkArgs, argv: &[String]) -> Res {
    let prov = Provenance::new(argv, Some(args.seed));
    let (instance, probs) = load_inputs(&args.input)?;
    let config = suite(&args.solve, args.s, args.eval_samples, args.dev)?;
    let report = benchmark_suite(
        &instance,
        &probs,
        &args.budgets.0,
        &algorithms(&args.algos),
        &config,
        args.seed,
    )?;
    write_report(&report, &args.report, &prov)
}

fn robustness(args: &RobustnessArgs, argv: &[String]) -> Res {
    let prov = Provenance::new(argv, Some(args.seed));
    let (instance, probs) = load_inputs(&args.input)?;
    let config = suite(&args.solve, args.s, args.eval_samples, args.dev)?;
    let report = robustness_sweep(
        &instance,
        &probs,
        &args.gammas.0,
        args.reps,
        args.a,
        &algorithms(&args.algos),
        &config,
        args.seed,
    )?;
    write_report(&report, &args.report, &prov)
}

fn converge(args: &ConvergeArgs, argv: &[String]) -> Res {
    let prov = Provenance::new(argv, Some(args.seed));
    let (instance, probs) = load_inputs(&args.input)?;
    let instance = with_budget(instance, args.a)?;
    let config = suite(
        &args.solve,
        0,
        args.eval_samples,
        panelalts::deviation::DeviationKind::Linear,
    )?;
    let report = convergence_study(
        &instance,
        &probs,
        &args.devs.0,
        &args.s_grid.0,
        args.seeds,
        &config,
        args.seed,
    )?;
    write_report(&report, &args.report, &prov)
}

fn synth_cmd(args: &SynthArgs, argv: &[String]) -> Res {
    let prov = Provenance::new(argv, Some(args.seed));
    let mut cfg = benchmark_fixture_config();
    cfg.n = args.n.unwrap_or(cfg.n);
    cfg.k = args.k.unwrap_or(cfg.k);
    cfg.a = args.a.unwrap_or(cfg.a);
    if let Some(v) = &args.values {
        cfg.values_per_feature = v.0.clone();
    }
    cfg.tightness = args.tightness.unwrap_or(cfg.tightness);
    cfg.dropout.base = args.rho_base.unwrap_or(cfg.dropout.base);
    cfg.dropout.spread = args.rho_spread.unwrap_or(cfg.dropout.spread);
    cfg.dropout.max_rho = args.rho_max.unwrap_or(cfg.dropout.max_rho);
    let out = synth(&cfg, args.seed)?;
    let inst = &out.instance;
    write_json(args.out.as_deref(), &prov, inst.to_json())?;
    if let Some(p) = &args.probs_out {
        write_json(Some(p), &prov, out.probs.to_json(&inst.panel))?;
    }
    if let Some(p) = &args.model_out {
        write_json(Some(p), &prov, out.model.to_json(&inst.schema))?;
    }
    if let Some(p) = &args.agents_out {
        emit(
            Some(p),
            &render_commented(
                &prov,
                &write_agents_csv(&inst.schema, &inst.panel, &inst.pool, &HashMap::new()),
            ),
        )?;
    }
    if let (Some(p), Some(rows)) = (&args.history_out, args.history_rows) {
        let mut rng = stream(args.seed, Purpose::Train, 0xfe, 0);
        let history = synth_history(&inst.schema, &out.model, None, rows, &mut rng);
        let dropped: HashMap<String, bool> = history.iter().map(|r| (r.agent.id.clone(), r.dropped)).collect();
        let agents: Vec<_> = history.into_iter().map(|r| r.agent).collect();
        emit(
            Some(p),
            &render_commented(&prov, &write_agents_csv(&inst.schema, &agents, &[], &dropped)),
        )?;
    }
    Ok(())
}

fn import(args: &ImportArgs, argv: &[String]) -> Res {
    let prov = Provenance::new(argv, None);
    let (schema, quotas) = load_quotas(&read_payload(&args.quotas)?, None)?;
    let table = load_agents_csv(&read_text(&args.agents)?, &schema, args.strict)?;
    let instance = Instance {
        schema,
        panel: table.panel,
        pool: table.pool,
        quotas,
        budget: args.a,
    };
    let problems = validate_instance(&instance);
    if !problems.is_empty() {
        return Err(DataError::Invalid(problems).into());
    }
    let mut body = instance.to_json();
    if !table.warnings.is_empty() {
        body["warnings"] = json!(table.warnings);
    }
    write_json(args.out.as_deref(), &prov, body)
}

fn solve_lp(args: &SolveLpArgs, argv: &[String]) -> Res {
    let prov = Provenance::new(argv, None);
    let model = milp::parse_lp(&read_text(&args.lp)?).map_err(|e| CliError::Data(e.to_string()))?;
    let backend = backend(&args.solver, args.node_limit, time_limit(args.time_limit)?);
    let solution = backend
        .solve(&model)
        .map_err(|e| CliError::Data(format!("solver: {e}")))?;
    emit(
        args.out.as_deref(),
        &render_commented(&prov, &milp::write_solution(&model, &solution)),
    )?;
    match solution.status {
        Status::Optimal => Ok(()),
        Status::Infeasible => {
            warn!("model is infeasible");
            Ok(())
        }
        Status::BudgetExceeded => Err(CliError::Budget("solver budget exceeded; best solution written".into())),
    }
}

fn extra_upper(path: &Path, instance: &Instance) -> Res<Vec<i64>> {
    let v: Value = serde_json::from_str(&read_payload(path)?).map_err(|e| CliError::Data(e.to_string()))?;
    let bad = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let schema = &instance.schema;
    let mut upper = vec![0; schema.num_fv()];
    for (fname, vals) in v
        .as_object()
        .ok_or_else(|| bad("expected {feature: {value: n}}".into()))?
    {
        let f = schema
            .feature_index(fname)
            .ok_or_else(|| bad(format!("unknown feature `{fname}`")))?;
        for (vname, n) in vals
            .as_object()
            .ok_or_else(|| bad(format!("`{fname}` must map values")))?
        {
            let vi = schema
                .value_index(f, vname)
                .ok_or_else(|| bad(format!("unknown value `{fname}={vname}`")))?;
            upper[schema.fv_index(f, vi)] = n
                .as_i64()
                .filter(|n| *n >= 0)
                .ok_or_else(|| bad(format!("bad bound for `{fname}={vname}`")))?;
        }
    }
    Ok(upper)
}

fn extend(args: &ExtendArgs, argv: &[String]) -> Res {
    let prov = Provenance::new(argv, Some(args.seed));
    let instance = with_budget(load_instance(&args.instance)?, args.a)?;
    let panel_variant = matches!(args.variant, Variant::PanelSelect | Variant::PanelAndAlts);
    let need = |flag: &str| {
        CliError::Usage(format!(
            "--variant {} needs {flag}",
            args.variant.name().replace('_', "-")
        ))
    };
    let mut panel_probs_map: Option<Map<String, Value>> = None;
    if let Some(p) = &args.probs {
        let v: Value = serde_json::from_str(&read_payload(p)?).map_err(|e| CliError::Data(e.to_string()))?;
        panel_probs_map = v.as_object().cloned();
    }
    let panel_probs = match &args.probs {
        Some(p) => DropoutProbs::from_json(&read_payload(p)?, &instance.panel)?,
        None if panel_variant => DropoutProbs::new(vec![Rational::from_integer(0.into()); instance.k()])?,
        None => return Err(need("--probs")),
    };
    let mut cfg = ExtensionConfig::new(args.variant);
    cfg.panel_size = args.panel_size;
    match args.variant {
        Variant::Preempt => {
            let p = args.extra_upper.as_ref().ok_or_else(|| need("--extra-upper"))?;
            cfg.extra_upper = Some(extra_upper(p, &instance)?);
        }
        Variant::AltsDrop => {
            let p = args.pool_probs.as_ref().ok_or_else(|| need("--pool-probs"))?;
            cfg.pool_probs = Some(DropoutProbs::from_json(&read_payload(p)?, &instance.pool)?);
        }
        Variant::PanelSelect | Variant::PanelAndAlts => {
            let p = args.pool_probs.as_ref().ok_or_else(|| need("--pool-probs"))?;
            let v: Value = serde_json::from_str(&read_payload(p)?).map_err(|e| CliError::Data(e.to_string()))?;
            let mut merged = panel_probs_map.unwrap_or_default();
            merged.extend(
                v.as_object()
                    .cloned()
                    .ok_or_else(|| CliError::Data("pool probabilities must be an object".into()))?,
            );
            let mut everyone = instance.panel.clone();
            everyone.extend(instance.pool.iter().cloned());
            cfg.pool_probs = Some(DropoutProbs::from_json(&Value::Object(merged).to_string(), &everyone)?);
        }
    }
    let opt = opt_config(&args.solve, args.dev)?;
    let (result, panel_agents, pool_agents) = cfg.run(&instance, &panel_probs, args.s, args.seed, &opt)?;
    let mut body = result.to_json(&panel_agents, &pool_agents);
    body["budget"] = json!(instance.budget);
    write_json(args.out.as_deref(), &prov, body)
}
