//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit status
//! if any criterion fails or exceeds its time budget.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use zmdp_core::baselines::{boltzmann_policy, q_learning, value_iteration};
use zmdp_core::envs::{chain_env, coin_env, fork_env, random_mdp, tree_env, RandomMdpParams};
use zmdp_core::explore::SimRng;
use zmdp_core::learner::{plan_zsa, train, update_zsa, LearnerConfig, LogZsaTable, ZsaTransition};
use zmdp_core::logspace::argmax;
use zmdp_core::mdp::{default_mu, validate, ValidatedMdp};
use zmdp_core::oracle::{enumerate_z, enumerate_z_likelihood, optimal_path_stats};
use zmdp_core::planner::{
    bellman_backup, build_bellman_matrix, policy_from_z, solve_linear, solve_power,
};
use zmdp_core::solver::SolveParams;
use zmdp_core::stochastic::{solve_averaged, solve_variational};
use zmdp_core::tables::Variant;

type Outcome = Result<String, String>;

const MU: f64 = -1.2;

fn tree() -> ValidatedMdp {
    validate(tree_env()).unwrap()
}

fn random(seed: u64, states: usize, branching: usize, cyclic: bool) -> ValidatedMdp {
    let p = RandomMdpParams {
        states,
        terminals: 2,
        max_actions: 3,
        branching,
        cyclic,
        seed,
        ..RandomMdpParams::default()
    };
    validate(random_mdp(&p)).unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn tree_closed_forms() -> Outcome {
    let mdp = tree();
    let p = SolveParams::new(1.0, MU);
    let expect = [
        (0, 3.0 * (-1.4f64).exp() + (-2.4f64).exp()),
        (1, 2.0 * (-0.2f64).exp()),
        (2, (-0.2f64).exp()),
        (3, (-1.2f64).exp()),
    ];
    let mut worst: f64 = 0.0;
    for t in [
        solve_power(&mdp, &p).map_err(|e| e.to_string())?,
        solve_linear(&mdp, 1.0, MU).map_err(|e| e.to_string())?,
    ] {
        for (s, z) in expect {
            worst = worst.max(rel(t.z(s), z));
        }
    }
    check(worst <= 1e-9, format!("max relative error {worst:.2e}"))
}

fn limit_policies() -> Outcome {
    let mdp = tree();
    let row = |beta: f64| {
        let t = solve_power(&mdp, &SolveParams::new(beta, MU)).unwrap();
        policy_from_z(&mdp, &t).row(0).to_vec()
    };
    let err = |got: &[f64], want: [f64; 3]| {
        got.iter()
            .zip(want)
            .map(|(g, w)| (g - w).abs())
            .fold(0.0, f64::max)
    };
    let e0 = err(&row(0.0), [0.5, 0.25, 0.25]);
    let e50 = err(&row(50.0), [2.0 / 3.0, 1.0 / 3.0, 0.0]);
    check(
        e0 <= 1e-9 && e50 <= 1e-6,
        format!("beta=0 error {e0:.2e}, beta=50 error {e50:.2e}"),
    )
}

fn entropic_contrast() -> Outcome {
    let mdp = tree();
    let t = solve_power(&mdp, &SolveParams::new(50.0, MU)).map_err(|e| e.to_string())?;
    let z_first = policy_from_z(&mdp, &t).prob(0, 0);
    let vi = value_iteration(&mdp, 0.999, 1e-12, 10_000).map_err(|e| e.to_string())?;
    let b_first = boltzmann_policy(&vi.q, 50.0).prob(0, 0);
    check(
        z_first >= 0.66 && (b_first - 0.5).abs() <= 1e-6,
        format!("Z-policy {z_first:.6}, Boltzmann {b_first:.6}"),
    )
}

fn bracket_ok(z: f64, partial: f64, tail: f64) -> bool {
    // the lower end gets floating-point slack: both sides sum the same terms
    // in different orders
    z >= partial * (1.0 - 1e-12) && z <= partial + tail + 1e-8
}

fn oracle_bracketing() -> Outcome {
    let mut checked = 0;
    for seed in 0..100 {
        let states = 3 + (seed as usize % 6);
        let mdp = random(seed, states, 1, false);
        let beta = 1.0 + (seed % 3) as f64;
        let p = SolveParams::new(beta, default_mu(&mdp, 0.1));
        let t = solve_power(&mdp, &p).map_err(|e| e.to_string())?;
        for s in 0..mdp.num_states() {
            let r = enumerate_z(&mdp, s, beta, p.mu, states).map_err(|e| e.to_string())?;
            if !bracket_ok(t.z(s), r.partial_sum, r.tail_bound) {
                return Err(format!(
                    "seed {seed} state {s}: Z {} vs [{}, +{}]",
                    t.z(s),
                    r.partial_sum,
                    r.tail_bound
                ));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} states in 100 MDPs bracketed"))
}

fn contraction() -> Outcome {
    let mut rng = SimRng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for trial in 0..200u64 {
        let mdp = random(
            trial,
            4 + (trial as usize % 5),
            1 + (trial as usize % 2),
            true,
        );
        let mu = default_mu(&mdp, 0.1);
        let beta: f64 = rng.gen_range(0.0..5.0);
        let n = mdp.num_states();
        let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
        let mut y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
        for s in 0..n {
            if let Some(r) = mdp.terminal_reward(s) {
                x[s] = (beta * r).exp();
                y[s] = x[s];
            }
        }
        let apply = |v: &[f64]| -> Vec<f64> {
            if mdp.is_deterministic() {
                build_bellman_matrix(&mdp, beta, mu).unwrap().apply(v)
            } else {
                let logs: Vec<f64> = v.iter().map(|z| z.ln()).collect();
                bellman_backup(&mdp, Variant::Averaged, beta, mu, &logs)
                    .iter()
                    .map(|l| l.exp())
                    .collect()
            }
        };
        let sup = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max)
        };
        let ratio = sup(&apply(&x), &apply(&y)) / sup(&x, &y);
        worst = worst.max(ratio);
    }
    let bound = (-0.1f64).exp();
    check(
        worst <= bound + 1e-12,
        format!("worst Lipschitz ratio {worst:.6} (bound {bound:.6})"),
    )
}

fn stochastic_equivalence() -> Outcome {
    for seed in 0..100 {
        let mdp = random(seed, 4 + (seed as usize % 4), 3, false);
        let p = SolveParams::new(1.0 + (seed % 2) as f64, default_mu(&mdp, 0.1));
        let t = solve_averaged(&mdp, &p).map_err(|e| e.to_string())?;
        for s in 0..mdp.num_states() {
            let r = enumerate_z_likelihood(&mdp, s, p.beta, p.mu, mdp.num_states())
                .map_err(|e| e.to_string())?;
            if !bracket_ok(t.z(s), r.partial_sum, r.tail_bound) {
                return Err(format!(
                    "seed {seed} state {s}: Z {} vs [{}, +{}]",
                    t.z(s),
                    r.partial_sum,
                    r.tail_bound
                ));
            }
        }
    }
    let coin = validate(coin_env()).unwrap();
    let z = solve_averaged(&coin, &SolveParams::new(1.0, MU))
        .map_err(|e| e.to_string())?
        .z(0);
    check(
        (z - 0.559962).abs() <= 1e-6,
        format!("100 MDPs bracketed, coin Z {z:.9}"),
    )
}

fn variational_values() -> Outcome {
    let p = SolveParams::new(1.0, MU);
    let coin = validate(coin_env()).unwrap();
    let z = solve_variational(&coin, &p)
        .map_err(|e| e.to_string())?
        .z(0);
    let coin_err = (z - (-0.7f64).exp()).abs();

    let tree = tree();
    let det = solve_power(&tree, &p).map_err(|e| e.to_string())?;
    let var = solve_variational(&tree, &p).map_err(|e| e.to_string())?;
    let reduction = det
        .log_z
        .iter()
        .zip(&var.log_z)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut mdps = vec![
        coin,
        validate(fork_env(0.5)).unwrap(),
        validate(fork_env(0.6)).unwrap(),
        tree,
    ];
    mdps.extend((0..100).map(|seed| random(seed, 4 + (seed as usize % 4), 3, false)));
    let mut slack = f64::INFINITY;
    for mdp in &mdps {
        for beta in [0.0, 1.0, 5.0] {
            let p = SolveParams::new(beta, default_mu(mdp, 0.1));
            let avg = solve_averaged(mdp, &p).map_err(|e| e.to_string())?;
            let var = solve_variational(mdp, &p).map_err(|e| e.to_string())?;
            for s in 0..mdp.num_states() {
                slack = slack.min(avg.log_z[s] - var.log_z[s]);
            }
        }
    }
    check(
        coin_err <= 1e-9 && reduction <= 1e-10 && slack >= -1e-12,
        format!(
            "coin error {coin_err:.2e}, tree reduction {reduction:.2e}, min log-slack {slack:.2e} over {} MDPs",
            mdps.len()
        ),
    )
}

fn update_identity() -> Outcome {
    let mdp = validate(chain_env(2, 0.0, 0.0)).unwrap();
    let mut rng = SimRng::seed_from_u64(11);
    for i in 0..10_000 {
        let beta = rng.gen_range(0.0..10.0);
        let mu = rng.gen_range(-5.0..-0.01);
        let l: f64 = rng.gen_range(-20.0..5.0);
        let next: f64 = rng.gen_range(-20.0..5.0);
        let r = rng.gen_range(-3.0..=0.0);
        let alpha = rng.gen_range(0.0..=1.0);
        let mut t = LogZsaTable::zeros(&mdp, beta, mu);
        t.log_zsa[0][0] = l;
        t.log_zsa[1][0] = next;
        let tr = ZsaTransition {
            state: 0,
            action: 0,
            reward: r,
            next: 1,
            done: false,
        };
        update_zsa(&mut t, &mdp, &tr, alpha).map_err(|e| e.to_string())?;
        // single successor action: log-sum-exp is the entry itself
        let expect = (1.0 - alpha) * l + alpha * (beta * r + mu + next);
        if t.log_zsa[0][0] != expect {
            return Err(format!("tuple {i}: {} != {expect}", t.log_zsa[0][0]));
        }
    }
    Ok("10000 tuples bit-identical".into())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn model_free_convergence() -> Outcome {
    let mdp = tree();
    let reference = plan_zsa(&mdp, &SolveParams::new(1.0, MU)).map_err(|e| e.to_string())?;
    let target = reference.policy();
    let mut errors = Vec::new();
    let mut tvs = Vec::new();
    for seed in 0..10 {
        let mut cfg = LearnerConfig::new(1.0, MU);
        cfg.seed = 7 + seed;
        let (t, _) = train(&mdp, &cfg, None).map_err(|e| e.to_string())?;
        errors.push(t.sup_distance(&reference));
        tvs.push(t.policy().total_variation(&target, 0));
    }
    let (e, tv) = (median(errors), median(tvs));
    check(
        e <= 0.05 && tv <= 0.03,
        format!("median sup error {e:.2e}, median root TV {tv:.2e}"),
    )
}

/// Best undiscounted return of each action at `s`, from the oracle.
fn action_returns(mdp: &ValidatedMdp, s: usize, mu: f64) -> Vec<f64> {
    mdp.actions(s)
        .iter()
        .map(|a| {
            let o = &a.outcomes[0];
            o.reward + optimal_path_stats(mdp, o.to, mu).unwrap().0
        })
        .collect()
}

/// Smallest gap between the best and second-best action over all states.
fn min_gap(mdp: &ValidatedMdp, mu: f64) -> f64 {
    let mut gap = f64::INFINITY;
    for s in mdp.non_terminal_states() {
        let mut r = action_returns(mdp, s, mu);
        if r.len() < 2 {
            continue;
        }
        r.sort_by(|a, b| b.total_cmp(a));
        gap = gap.min(r[0] - r[1]);
    }
    gap
}

fn baseline_correctness() -> Outcome {
    let chain = validate(chain_env(2, -1.0, 0.0)).unwrap();
    let vi = value_iteration(&chain, 0.9, 1e-12, 1000).map_err(|e| e.to_string())?;
    let exact = vi.v.v[0] == -1.9 && vi.v.v[1] == -1.0;
    let mut cfg = LearnerConfig::new(1.0, -0.5);
    cfg.episodes = 2000;
    cfg.exploration = "epsilon".into();
    let (q, _) = q_learning(&chain, 0.9, &cfg, None).map_err(|e| e.to_string())?;
    let q_err = q.sup_distance(&vi.q);

    let mut agreed = 0;
    let mut seed = 0;
    while agreed < 50 {
        seed += 1;
        if seed > 100_000 {
            return Err("could not find 50 unique-optimum MDPs".into());
        }
        let mdp = random(seed, 6, 1, false);
        let mu = default_mu(&mdp, 0.1);
        if min_gap(&mdp, mu) < 0.4 {
            continue;
        }
        let z = solve_power(&mdp, &SolveParams::new(50.0, mu)).map_err(|e| e.to_string())?;
        let pi = policy_from_z(&mdp, &z);
        let greedy = value_iteration(&mdp, 0.999, 1e-12, 10_000).map_err(|e| e.to_string())?;
        for s in mdp.non_terminal_states() {
            if argmax(pi.row(s)) != argmax(greedy.policy.row(s)) {
                return Err(format!("seed {seed} state {s}: argmax disagrees"));
            }
        }
        agreed += 1;
    }
    check(
        exact && q_err <= 0.05,
        format!(
            "VI {:?}, Q-learning error {q_err:.2e}, 50 unique-optimum MDPs agree",
            &vi.v.v[..2]
        ),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome, Duration);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (
            1,
            "tree closed forms",
            tree_closed_forms,
            Duration::from_secs(1),
        ),
        (2, "limit policies", limit_policies, Duration::from_secs(1)),
        (
            3,
            "entropic contrast",
            entropic_contrast,
            Duration::from_secs(5),
        ),
        (
            4,
            "oracle bracketing",
            oracle_bracketing,
            Duration::from_secs(30),
        ),
        (5, "contraction", contraction, Duration::from_secs(30)),
        (
            6,
            "stochastic equivalence",
            stochastic_equivalence,
            Duration::from_secs(30),
        ),
        (
            7,
            "variational values",
            variational_values,
            Duration::from_secs(30),
        ),
        (
            8,
            "update identity",
            update_identity,
            Duration::from_secs(30),
        ),
        (
            9,
            "model-free convergence",
            model_free_convergence,
            Duration::from_secs(60),
        ),
        (
            10,
            "baseline correctness",
            baseline_correctness,
            Duration::from_secs(60),
        ),
    ];
    let mut failed = 0;
    for (id, name, run, budget) in criteria {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let (status, detail) = match outcome {
            Ok(d) if took <= budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; over the {budget:?} budget")),
            Err(d) => ("FAIL", d),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!(
            "[{status}] {id:>2} {name} ({:.2}s): {detail}",
            took.as_secs_f64()
        );
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
