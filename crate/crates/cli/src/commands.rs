use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::Utc;
use serde_json::{json, Value};
use zmdp_core::baselines::{baseline_registry, boltzmann_policy, BaselineConfig};
use zmdp_core::envs::{build_env, catalog, EnvCatalogEntry};
use zmdp_core::io::{parse_spec, save_spec, to_json};
use zmdp_core::learner::{plan_zsa, plan_zsa_variant, train, LearnerConfig, LogZsaTable};
use zmdp_core::mdp::{default_mu, validate, Hyperparams, ValidatedMdp, DEFAULT_MU_MARGIN};
use zmdp_core::oracle::enumerate_with;
use zmdp_core::planner::{value_analytic, value_fd};
use zmdp_core::solver::{solver_registry, SolveError, SolveParams};
use zmdp_core::stochastic::diagnose_averaged_policy;
use zmdp_core::tables::{LogZTable, PolicyTable, Variant};

use crate::args::*;
use crate::error::CliError;
use crate::output::{ensure_dir, sha256_hex, timestamp, Cell, InputInfo, Manifest, Table};

/// Final scalar metrics of a run, used by `sweep`.
pub type Metrics = BTreeMap<String, f64>;

pub fn run(command: &Command, argv: &[String]) -> Result<Metrics, CliError> {
    match command {
        Command::Env(a) => env(a, argv),
        Command::Plan(a) => plan(a, argv),
        Command::PlanStochastic(a) => plan_stochastic(a, argv),
        Command::Learn(a) => learn(a, argv),
        Command::Baseline(a) => baseline(a, argv),
        Command::Oracle(a) => oracle(a, argv),
        Command::Sweep(a) => crate::sweep::sweep(a, argv),
    }
}

struct Loaded {
    mdp: ValidatedMdp,
    input: InputInfo,
}

fn load(args: &SourceArgs) -> Result<Loaded, CliError> {
    if let Some(path) = &args.source.mdp {
        if !args.params.is_empty() {
            return Err(CliError::invalid("--param only applies to --env"));
        }
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| CliError::invalid(format!("{}: not UTF-8", path.display())))?;
        let spec = parse_spec(&text)?;
        return Ok(Loaded {
            mdp: validate(spec)?,
            input: InputInfo {
                source: "file".into(),
                name: path.display().to_string(),
                sha256: sha256_hex(&bytes),
            },
        });
    }
    let name = args.source.env.as_deref().expect("clap requires a source");
    let spec = build_env(&entry(name, &args.params))?;
    let hash = sha256_hex(to_json(&spec).as_bytes());
    Ok(Loaded {
        mdp: validate(spec)?,
        input: InputInfo {
            source: "env".into(),
            name: name.into(),
            sha256: hash,
        },
    })
}

fn entry(name: &str, params: &[KeyValue]) -> EnvCatalogEntry {
    params
        .iter()
        .fold(EnvCatalogEntry::new(name), |e, KeyValue(k, v)| {
            e.with(k, *v)
        })
}

fn resolve_mu(mdp: &ValidatedMdp, mu: MuArg) -> f64 {
    match mu {
        MuArg::Auto => default_mu(mdp, DEFAULT_MU_MARGIN),
        MuArg::Value(v) => v,
    }
}

fn state_by_name(mdp: &ValidatedMdp, name: &str) -> Result<usize, CliError> {
    mdp.state_index(name)
        .ok_or_else(|| CliError::invalid(format!("unknown state `{name}`")))
}

/// Bookkeeping shared by every command: start time and written files.
struct Run<'a> {
    argv: &'a [String],
    command: &'static str,
    dir: &'a Path,
    started: chrono::DateTime<Utc>,
    outputs: Vec<String>,
}

impl<'a> Run<'a> {
    fn start(argv: &'a [String], command: &'static str, dir: &'a Path) -> Result<Self, CliError> {
        ensure_dir(dir)?;
        Ok(Self {
            argv,
            command,
            dir,
            started: Utc::now(),
            outputs: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        table.write(&self.dir.join(name))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn finish(
        self,
        hyperparams: Value,
        seeds: Vec<u64>,
        loaded: Option<&Loaded>,
    ) -> Result<(), CliError> {
        Manifest {
            tool: "zmdp",
            version: env!("CARGO_PKG_VERSION"),
            command_line: self.argv.to_vec(),
            command: self.command.into(),
            hyperparams,
            seeds,
            input: loaded.map(|l| l.input.clone()),
            reward_shift: loaded.map(|l| l.mdp.reward_shift()),
            outputs: self.outputs,
            started_at: timestamp(self.started),
            finished_at: timestamp(Utc::now()),
        }
        .write(self.dir)
    }
}

fn env(a: &EnvArgs, argv: &[String]) -> Result<Metrics, CliError> {
    if a.list {
        for (name, builder) in catalog().iter() {
            let params: Vec<String> = builder
                .defaults()
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect();
            println!("{name}\t{}", params.join(" "));
        }
        return Ok(Metrics::new());
    }
    let name = a.env.as_deref().expect("clap requires --env");
    let spec = build_env(&entry(name, &a.params))?;
    let mdp = validate(spec.clone())?;
    let mut run = Run::start(argv, "env", &a.out.out)?;
    let path = a.out.out.join("mdp.json");
    save_spec(&spec, &path)?;
    run.outputs.push("mdp.json".into());
    let loaded = Loaded {
        input: InputInfo {
            source: "env".into(),
            name: name.into(),
            sha256: sha256_hex(to_json(&spec).as_bytes()),
        },
        mdp,
    };
    let params: BTreeMap<&str, f64> = a
        .params
        .iter()
        .map(|KeyValue(k, v)| (k.as_str(), *v))
        .collect();
    let states = loaded.mdp.num_states() as f64;
    run.finish(
        json!({ "env": name, "params": params }),
        vec![],
        Some(&loaded),
    )?;
    Ok(Metrics::from([("states".into(), states)]))
}

fn logz_table(mdp: &ValidatedMdp, t: &LogZTable) -> Table {
    let mut table = Table::new(&["state", "log_z", "z", "dead", "terminal"]);
    for s in 0..mdp.num_states() {
        table.row(&[
            Cell::Str(mdp.state_name(s)),
            Cell::Num(t.log_z[s]),
            Cell::Num(t.z(s)),
            Cell::Bool(t.dead[s]),
            Cell::Bool(mdp.is_terminal(s)),
        ]);
    }
    table
}

fn policy_table(mdp: &ValidatedMdp, pi: &PolicyTable) -> Table {
    let mut table = Table::new(&["state", "action", "prob"]);
    for s in mdp.non_terminal_states() {
        for (a, action) in mdp.actions(s).iter().enumerate() {
            table.row(&[
                Cell::Str(mdp.state_name(s)),
                Cell::Str(&action.label),
                Cell::Num(pi.prob(s, a)),
            ]);
        }
    }
    table
}

fn z_hyperparams(h: &Hyperparams, extra: Value) -> Value {
    let mut v = json!({
        "beta": h.beta,
        "mu": h.mu,
        "tol": h.tol,
        "max_iter": h.max_iter,
    });
    if let (Value::Object(map), Value::Object(more)) = (&mut v, extra) {
        map.extend(more);
    }
    v
}

fn hyperparams_for(mdp: &ValidatedMdp, z: &ZArgs) -> Hyperparams {
    let mut h = Hyperparams::new(z.beta, resolve_mu(mdp, z.mu));
    h.tol = z.tol;
    h.max_iter = z.max_iter;
    h
}

/// Writes the best iterate before reporting non-convergence.
fn solved(
    run: &mut Run,
    mdp: &ValidatedMdp,
    result: Result<LogZTable, SolveError>,
) -> Result<LogZTable, CliError> {
    match result {
        Err(SolveError::MaxIterExceeded {
            iterations,
            residual,
            best,
        }) => {
            run.write("logz.csv", &logz_table(mdp, &best))?;
            Err(SolveError::MaxIterExceeded {
                iterations,
                residual,
                best,
            }
            .into())
        }
        other => Ok(other?),
    }
}

fn plan(a: &PlanArgs, argv: &[String]) -> Result<Metrics, CliError> {
    let loaded = load(&a.source)?;
    let mdp = &loaded.mdp;
    let mut h = hyperparams_for(mdp, &a.z);
    h.fd_step = a.fd_step;
    let params = h.solve_params();
    let registry = solver_registry();
    let solver = registry
        .get(&a.solver)
        .map_err(|e| CliError::invalid(e.to_string()))?;
    let mut run = Run::start(argv, "plan", &a.out.out)?;
    let table = solved(&mut run, mdp, solver.solve(mdp, &params))?;
    let policy = solver.policy(mdp, &table)?;
    run.write("logz.csv", &logz_table(mdp, &table))?;
    run.write("policy.csv", &policy_table(mdp, &policy))?;

    let start = mdp.default_start();
    let mut metrics = Metrics::from([
        ("log_z".into(), table.log_z[start]),
        ("residual".into(), table.residual),
        ("iterations".into(), table.iterations as f64),
    ]);
    let values = match a.value {
        ValueArg::None => None,
        ValueArg::Analytic => Some(value_analytic(mdp, &table)?),
        ValueArg::Fd => Some(value_fd(mdp, solver, &params, a.fd_step)?),
    };
    if let Some(v) = values {
        let mut t = Table::new(&["state", "v"]);
        for s in 0..mdp.num_states() {
            t.row(&[Cell::Str(mdp.state_name(s)), Cell::Num(v.v[s])]);
        }
        run.write("value.csv", &t)?;
        metrics.insert("v".into(), v.v[start]);
    }
    let value = match a.value {
        ValueArg::Fd => "fd",
        ValueArg::Analytic => "analytic",
        ValueArg::None => "none",
    };
    run.finish(
        z_hyperparams(
            &h,
            json!({ "solver": a.solver, "value": value, "fd_step": a.fd_step }),
        ),
        vec![],
        Some(&loaded),
    )?;
    Ok(metrics)
}

fn plan_stochastic(a: &PlanStochasticArgs, argv: &[String]) -> Result<Metrics, CliError> {
    let loaded = load(&a.source)?;
    let mdp = &loaded.mdp;
    let h = hyperparams_for(mdp, &a.z);
    let name = match a.variant {
        VariantArg::Averaged => "averaged",
        VariantArg::Variational => "variational",
    };
    let registry = solver_registry();
    let solver = registry.get(name).expect("built-in solver");
    let mut run = Run::start(argv, "plan-stochastic", &a.out.out)?;
    let table = solved(&mut run, mdp, solver.solve(mdp, &h.solve_params()))?;
    let policy = solver.policy(mdp, &table)?;
    run.write("logz.csv", &logz_table(mdp, &table))?;
    run.write("policy.csv", &policy_table(mdp, &policy))?;
    if table.variant == Variant::Averaged {
        let w = diagnose_averaged_policy(mdp, &table)?;
        let mut t = Table::new(&["state", "action", "to", "weight"]);
        for e in &w.entries {
            t.row(&[
                Cell::Str(mdp.state_name(e.state)),
                Cell::Str(&mdp.actions(e.state)[e.action].label),
                Cell::Str(mdp.state_name(e.to)),
                Cell::Num(e.weight),
            ]);
        }
        run.write("weights.csv", &t)?;
    }
    let start = mdp.default_start();
    run.finish(
        z_hyperparams(&h, json!({ "variant": name })),
        vec![],
        Some(&loaded),
    )?;
    Ok(Metrics::from([
        ("log_z".into(), table.log_z[start]),
        ("residual".into(), table.residual),
        ("iterations".into(), table.iterations as f64),
    ]))
}

fn learner_config(mdp: &ValidatedMdp, t: &TrainArgs) -> Result<LearnerConfig, CliError> {
    let mut c = LearnerConfig::new(t.beta, resolve_mu(mdp, t.mu));
    c.episodes = t.episodes;
    c.alpha0 = t.alpha0;
    c.alpha_decay = t.alpha_decay;
    c.exploration = t.explore.name().into();
    c.epsilon_start = t.epsilon_start;
    c.epsilon_end = t.epsilon_end;
    c.seed = t.seed;
    c.eval_every = t.eval_every;
    c.max_steps = t.max_steps;
    c.start = t
        .start
        .as_deref()
        .map(|s| state_by_name(mdp, s))
        .transpose()?;
    c.validate()?;
    Ok(c)
}

fn train_hyperparams(c: &LearnerConfig) -> Value {
    json!({
        "episodes": c.episodes,
        "alpha0": c.alpha0,
        "alpha_decay": c.alpha_decay,
        "explore": c.exploration,
        "epsilon_start": c.epsilon_start,
        "epsilon_end": c.epsilon_end,
        "beta": c.beta,
        "mu": c.mu,
        "eval_every": c.eval_every,
        "start": c.start,
        "max_steps": c.max_steps,
    })
}

fn curve_table(rows: &[zmdp_core::learner::CurveRow]) -> Table {
    let mut t = Table::new(&["episode", "return", "error", "epsilon", "alpha"]);
    for r in rows {
        t.row(&[
            Cell::Int(r.episode as u64),
            Cell::Num(r.ret),
            Cell::Num(r.error),
            Cell::Num(r.epsilon),
            Cell::Num(r.alpha),
        ]);
    }
    t
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn learn(a: &LearnArgs, argv: &[String]) -> Result<Metrics, CliError> {
    let loaded = load(&a.source)?;
    let mdp = &loaded.mdp;
    let config = learner_config(mdp, &a.train)?;
    let reference = if a.ref_planner {
        let p = SolveParams::new(config.beta, config.mu);
        // the sampled update settles on the variational table
        Some(if mdp.is_deterministic() {
            plan_zsa(mdp, &p)?
        } else {
            plan_zsa_variant(mdp, Variant::Variational, &p)?
        })
    } else {
        None
    };
    let mut run = Run::start(argv, "learn", &a.out.out)?;
    let (table, curve) = train(mdp, &config, reference.as_ref())?;
    run.write("zsa.csv", &zsa_table(mdp, &table))?;
    run.write("policy.csv", &policy_table(mdp, &table.policy()))?;
    run.write("curve.csv", &curve_table(&curve.rows))?;

    let start = zmdp_core::learner::start_state(mdp, config.start)?;
    let mut metrics = Metrics::from([
        ("log_z".into(), table.state_log_z(mdp, start)),
        ("mean_return".into(), mean(curve.rows.iter().map(|r| r.ret))),
    ]);
    if let Some(r) = &reference {
        metrics.insert("final_error".into(), table.sup_distance(r));
    }
    let mut hp = train_hyperparams(&config);
    hp["ref_planner"] = json!(a.ref_planner);
    run.finish(hp, vec![config.seed], Some(&loaded))?;
    Ok(metrics)
}

fn zsa_table(mdp: &ValidatedMdp, t: &LogZsaTable) -> Table {
    let mut table = Table::new(&["state", "action", "log_zsa", "zsa"]);
    for s in mdp.non_terminal_states() {
        for (a, action) in mdp.actions(s).iter().enumerate() {
            table.row(&[
                Cell::Str(mdp.state_name(s)),
                Cell::Str(&action.label),
                Cell::Num(t.get(s, a)),
                Cell::Num(t.get(s, a).exp()),
            ]);
        }
    }
    table
}

fn baseline(a: &BaselineArgs, argv: &[String]) -> Result<Metrics, CliError> {
    let loaded = load(&a.source)?;
    let mdp = &loaded.mdp;
    let mut config = BaselineConfig::new(learner_config(mdp, &a.train)?);
    config.gamma = a.gamma;
    config.tol = a.tol;
    config.max_iter = a.max_iter;
    let registry = baseline_registry();
    let algo = registry.get(a.algo.name()).expect("built-in baseline");
    let mut run = Run::start(argv, "baseline", &a.out.out)?;
    let out = algo.run(mdp, &config)?;

    let mut q = Table::new(&["state", "action", "q"]);
    for s in mdp.non_terminal_states() {
        for (i, action) in mdp.actions(s).iter().enumerate() {
            q.row(&[
                Cell::Str(mdp.state_name(s)),
                Cell::Str(&action.label),
                Cell::Num(out.q.q[s][i]),
            ]);
        }
    }
    run.write("q.csv", &q)?;
    run.write("policy.csv", &policy_table(mdp, &out.policy))?;
    if let Some(v) = &out.v {
        let mut t = Table::new(&["state", "v"]);
        for s in 0..mdp.num_states() {
            t.row(&[Cell::Str(mdp.state_name(s)), Cell::Num(v.v[s])]);
        }
        run.write("value.csv", &t)?;
    }
    if let Some(beta) = a.boltzmann_beta {
        run.write(
            "boltzmann.csv",
            &policy_table(mdp, &boltzmann_policy(&out.q, beta)),
        )?;
    }
    let start = zmdp_core::learner::start_state(mdp, config.learner.start)?;
    let mut metrics = Metrics::from([("v".into(), out.q.value(mdp, start))]);
    let mut seeds = vec![];
    if let Some(curve) = &out.curve {
        run.write("curve.csv", &curve_table(&curve.rows))?;
        metrics.insert("mean_return".into(), mean(curve.rows.iter().map(|r| r.ret)));
        if let Some(last) = curve.rows.last() {
            metrics.insert("final_error".into(), last.error);
        }
        seeds.push(config.learner.seed);
    }
    let mut hp = json!({
        "algo": a.algo.name(),
        "gamma": config.gamma,
        "tol": config.tol,
        "max_iter": config.max_iter,
        "boltzmann_beta": a.boltzmann_beta,
    });
    if a.algo == AlgoArg::Qlearn {
        hp["train"] = train_hyperparams(&config.learner);
    }
    run.finish(hp, seeds, Some(&loaded))?;
    Ok(metrics)
}

fn oracle(a: &OracleArgs, argv: &[String]) -> Result<Metrics, CliError> {
    let loaded = load(&a.source)?;
    let mdp = &loaded.mdp;
    let s = state_by_name(mdp, &a.state)?;
    let mu = resolve_mu(mdp, a.mu);
    if !a.likelihood && !mdp.is_deterministic() {
        return Err(CliError::invalid(
            "the MDP is stochastic; pass --likelihood",
        ));
    }
    let mut run = Run::start(argv, "oracle", &a.out.out)?;
    let r = enumerate_with(mdp, s, a.beta, mu, a.len_cap, a.likelihood, a.budget)?;
    let mut t = Table::new(&[
        "state",
        "len_cap",
        "partial_sum",
        "tail_bound",
        "exhausted",
        "trajectories",
        "expanded",
    ]);
    t.row(&[
        Cell::Str(&a.state),
        Cell::Int(a.len_cap as u64),
        Cell::Num(r.partial_sum),
        Cell::Num(r.tail_bound),
        Cell::Bool(r.exhausted),
        Cell::Int(r.trajectories),
        Cell::Int(r.expanded),
    ]);
    run.write("oracle.csv", &t)?;
    run.finish(
        json!({
            "state": a.state,
            "beta": a.beta,
            "mu": mu,
            "len_cap": a.len_cap,
            "likelihood": a.likelihood,
            "budget": a.budget,
        }),
        vec![],
        Some(&loaded),
    )?;
    Ok(Metrics::from([
        ("partial_sum".into(), r.partial_sum),
        ("tail_bound".into(), r.tail_bound),
    ]))
}
