//! State-action partition functions and the model-free learner.
//!
//! `Z(s, a) = exp(beta R(s, a) + mu) * sum_a' Z(s + a, a')`, with the
//! terminal boundary `exp(beta R(s_f))` in place of the sum, and
//! `Z(s) = sum_a Z(s, a)`. The learner moves `log Z(s, a)` a fraction
//! `alpha` of the way towards the sampled target `beta r + mu + log sum_a'
//! Z(s', a')`, which is the geometric interpolation
//! `Z <- Z^(1-alpha) * target^alpha` written in log space.
//!
//! On stochastic MDPs the sampled targets average `log` of the landing
//! state's `Z`, so the learner settles on the variational table, not the
//! averaged one.

use rand::SeedableRng;
use thiserror::Error;

use crate::explore::{exploration_registry, sample, ExplorationOptions, SimRng};
use crate::logspace::{log_sum_exp, softmax, LOG_Z_FLOOR};
use crate::mdp::ValidatedMdp;
use crate::planner::alive_states;
use crate::registry::UnknownEntry;
use crate::solver::{SolveError, SolveParams};
use crate::tables::{LogZTable, PolicyTable, Variant};

/// `log Z(s, a)`, rows aligned with `ValidatedMdp::actions(s)`. Terminal
/// rows are empty; pairs with `Z = 0` hold [`LOG_Z_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct LogZsaTable {
    pub log_zsa: Vec<Vec<f64>>,
    pub beta: f64,
    pub mu: f64,
}

impl LogZsaTable {
    /// Every pair at `log Z = 0`.
    pub fn zeros(mdp: &ValidatedMdp, beta: f64, mu: f64) -> Self {
        let log_zsa = (0..mdp.num_states())
            .map(|s| vec![0.0; mdp.actions(s).len()])
            .collect();
        Self { log_zsa, beta, mu }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.log_zsa[s][a]
    }

    /// `log sum_a Z(s, a)`, or `beta R(s)` on terminals.
    pub fn state_log_z(&self, mdp: &ValidatedMdp, s: usize) -> f64 {
        match mdp.terminal_reward(s) {
            Some(r) => self.beta * r,
            None => log_sum_exp(&self.log_zsa[s]),
        }
    }

    /// `pi(a|s) ∝ Z(s, a)`.
    pub fn policy(&self) -> PolicyTable {
        PolicyTable {
            probs: self.log_zsa.iter().map(|row| softmax(row)).collect(),
        }
    }

    /// Largest `|log Z - log Z_ref|` over pairs that are alive in `reference`.
    pub fn sup_distance(&self, reference: &LogZsaTable) -> f64 {
        self.log_zsa
            .iter()
            .flatten()
            .zip(reference.log_zsa.iter().flatten())
            .filter(|(_, r)| **r > LOG_Z_FLOOR)
            .map(|(x, r)| (x - r).abs())
            .fold(0.0, f64::max)
    }
}

/// Pair values reached by an exact Bellman iteration on `mdp`.
pub fn plan_zsa(mdp: &ValidatedMdp, params: &SolveParams) -> Result<LogZsaTable, SolveError> {
    if !mdp.is_deterministic() {
        return Err(SolveError::NotDeterministic);
    }
    plan_zsa_variant(mdp, Variant::Deterministic, params)
}

/// State-action tables for stochastic MDPs. `Averaged` sums
/// `P(s'|s,a) exp(beta r + mu) Z(s')` over landing states; `Variational`
/// takes the `P`-weighted geometric mean.
pub fn plan_zsa_variant(
    mdp: &ValidatedMdp,
    variant: Variant,
    params: &SolveParams,
) -> Result<LogZsaTable, SolveError> {
    mdp.check_mu(params.mu)?;
    let SolveParams {
        beta,
        mu,
        tol,
        max_iter,
    } = *params;
    let alive = alive_states(mdp, variant);
    let n = mdp.num_states();
    let pair_alive = |s: usize, a: usize| {
        let mut out = mdp.actions(s)[a].reachable().map(|o| alive[o.to]);
        match variant {
            Variant::Variational => out.all(|x| x),
            _ => out.any(|x| x),
        }
    };
    let mut x: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            (0..mdp.actions(s).len())
                .map(|a| {
                    if pair_alive(s, a) {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect()
        })
        .collect();
    let state_value = |x: &[Vec<f64>], s: usize| match mdp.terminal_reward(s) {
        Some(r) => beta * r,
        None => log_sum_exp(&x[s]),
    };
    let mut buf = Vec::new();
    let mut iterations = 0;
    loop {
        let v: Vec<f64> = (0..n).map(|s| state_value(&x, s)).collect();
        let mut residual: f64 = 0.0;
        for s in mdp.non_terminal_states() {
            for (a, action) in mdp.actions(s).iter().enumerate() {
                if x[s][a] == f64::NEG_INFINITY {
                    continue;
                }
                let next = match variant {
                    Variant::Deterministic | Variant::Averaged => {
                        buf.clear();
                        buf.extend(
                            action
                                .reachable()
                                .map(|o| o.prob.ln() + beta * o.reward + mu + v[o.to]),
                        );
                        log_sum_exp(&buf)
                    }
                    Variant::Variational => action
                        .reachable()
                        .map(|o| o.prob * (beta * o.reward + mu + v[o.to]))
                        .sum(),
                };
                let change = (next - x[s][a]).abs();
                residual = if change.is_nan() {
                    f64::INFINITY
                } else {
                    residual.max(change)
                };
                x[s][a] = next;
            }
        }
        iterations += 1;
        if residual <= tol {
            break;
        }
        if iterations == max_iter {
            let exact: Vec<f64> = (0..n).map(|s| state_value(&x, s)).collect();
            let dead = alive.iter().map(|a| !a).collect();
            let mut best = LogZTable::from_exact(exact, dead, variant, beta, mu);
            best.residual = residual;
            best.iterations = iterations;
            best.converged = false;
            return Err(SolveError::MaxIterExceeded {
                iterations,
                residual,
                best: Box::new(best),
            });
        }
    }
    for row in &mut x {
        for l in row.iter_mut() {
            if *l == f64::NEG_INFINITY {
                *l = LOG_Z_FLOOR;
            }
        }
    }
    Ok(LogZsaTable {
        log_zsa: x,
        beta,
        mu,
    })
}

/// One sampled step `(s, a, r, s', done)`. `reward` is on the validated
/// (shifted) scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZsaTransition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next: usize,
    pub done: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("no action {action} in state {state}")]
    UnknownStateAction { state: usize, action: usize },
    #[error("episode {episode} did not reach a terminal within {max_steps} steps")]
    NonEpisodic { episode: usize, max_steps: usize },
    #[error("invalid learner configuration: {0}")]
    Config(String),
    #[error(transparent)]
    UnknownExploration(#[from] UnknownEntry),
    #[error(transparent)]
    MuTooLarge(#[from] crate::mdp::MuTooLarge),
}

/// `beta r + mu + log sum_a' Z(s', a')`, with `beta R(s')` for the sum when
/// the step ended the episode.
pub fn update_target(table: &LogZsaTable, mdp: &ValidatedMdp, tr: &ZsaTransition) -> f64 {
    let tail = if tr.done {
        table.beta * mdp.terminal_reward(tr.next).unwrap_or(0.0)
    } else {
        log_sum_exp(&table.log_zsa[tr.next])
    };
    table.beta * tr.reward + table.mu + tail
}

/// `log Z(s, a) <- (1 - alpha) log Z(s, a) + alpha * target`.
pub fn update_zsa(
    table: &mut LogZsaTable,
    mdp: &ValidatedMdp,
    tr: &ZsaTransition,
    alpha: f64,
) -> Result<(), LearnError> {
    let valid = tr.state < table.log_zsa.len()
        && tr.action < table.log_zsa[tr.state].len()
        && tr.next < table.log_zsa.len();
    if !valid {
        return Err(LearnError::UnknownStateAction {
            state: tr.state,
            action: tr.action,
        });
    }
    let target = update_target(table, mdp, tr);
    let l = &mut table.log_zsa[tr.state][tr.action];
    *l = (1.0 - alpha) * *l + alpha * target;
    Ok(())
}

/// Draws a landing state of `(s, a)` from its transition probabilities.
pub fn sample_outcome(mdp: &ValidatedMdp, s: usize, a: usize, rng: &mut SimRng) -> usize {
    let outcomes = &mdp.actions(s)[a].outcomes;
    if outcomes.len() == 1 {
        return 0;
    }
    let probs: Vec<f64> = outcomes.iter().map(|o| o.prob).collect();
    sample(&probs, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub episodes: usize,
    pub alpha0: f64,
    /// `tau` in `alpha = alpha0 / (1 + n / tau)`, `n` the pair's visit count.
    pub alpha_decay: f64,
    /// Name in the exploration registry.
    pub exploration: String,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub beta: f64,
    pub mu: f64,
    pub seed: u64,
    /// Curve rows are written every this many episodes and after the last.
    pub eval_every: usize,
    /// Start state; the first non-terminal state when `None`.
    pub start: Option<usize>,
    pub max_steps: usize,
}

impl LearnerConfig {
    pub fn new(beta: f64, mu: f64) -> Self {
        Self {
            episodes: 20_000,
            alpha0: 0.5,
            alpha_decay: 500.0,
            exploration: "proportional".into(),
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            beta,
            mu,
            seed: 0,
            eval_every: 100,
            start: None,
            max_steps: 10_000,
        }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::Config(m.into()));
        if !(self.alpha0 > 0.0 && self.alpha0 <= 1.0) {
            return bad("alpha0 must lie in (0, 1]");
        }
        if self.alpha_decay.is_nan() || self.alpha_decay <= 0.0 {
            return bad("alpha_decay must be positive");
        }
        for eps in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&eps) {
                return bad("epsilon must lie in [0, 1]");
            }
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        Ok(())
    }

    pub fn alpha(&self, visits: u64) -> f64 {
        self.alpha0 / (1.0 + visits as f64 / self.alpha_decay)
    }

    fn exploration_options(&self) -> ExplorationOptions {
        ExplorationOptions {
            epsilon_start: self.epsilon_start,
            epsilon_end: self.epsilon_end,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    /// 1-based episode index.
    pub episode: usize,
    /// Undiscounted return of that episode on the user's reward scale,
    /// terminal reward included.
    pub ret: f64,
    /// Sup-norm distance to the reference table; `NaN` without one.
    pub error: f64,
    /// `NaN` for explorations without an epsilon.
    pub epsilon: f64,
    /// Step size of the episode's last update.
    pub alpha: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
}

/// Resolves the start state for training.
pub fn start_state(mdp: &ValidatedMdp, start: Option<usize>) -> Result<usize, LearnError> {
    let s = start.unwrap_or_else(|| mdp.default_start());
    if s >= mdp.num_states() || mdp.is_terminal(s) {
        return Err(LearnError::Config(format!(
            "start state {s} must be a non-terminal state"
        )));
    }
    Ok(s)
}

/// Episodic training on `mdp` used as a simulator.
pub fn train(
    mdp: &ValidatedMdp,
    config: &LearnerConfig,
    reference: Option<&LogZsaTable>,
) -> Result<(LogZsaTable, LearningCurve), LearnError> {
    config.validate()?;
    mdp.check_mu(config.mu)?;
    let registry = exploration_registry(config.exploration_options());
    let explore = registry.get(&config.exploration)?;
    let start = start_state(mdp, config.start)?;
    let mut rng = SimRng::seed_from_u64(config.seed);
    let mut table = LogZsaTable::zeros(mdp, config.beta, config.mu);
    let mut visits: Vec<Vec<u64>> = table.log_zsa.iter().map(|r| vec![0; r.len()]).collect();
    let mut curve = LearningCurve::default();

    for episode in 0..config.episodes {
        let progress = episode as f64 / config.episodes as f64;
        let mut s = start;
        let mut ret = 0.0;
        let mut alpha;
        let mut steps = 0;
        loop {
            if steps == config.max_steps {
                return Err(LearnError::NonEpisodic {
                    episode: episode + 1,
                    max_steps: config.max_steps,
                });
            }
            let a = explore.select(&table.log_zsa[s], progress, &mut rng);
            let o = &mdp.actions(s)[a].outcomes[sample_outcome(mdp, s, a, &mut rng)];
            let tr = ZsaTransition {
                state: s,
                action: a,
                reward: o.reward,
                next: o.to,
                done: mdp.is_terminal(o.to),
            };
            alpha = config.alpha(visits[s][a]);
            visits[s][a] += 1;
            update_zsa(&mut table, mdp, &tr, alpha)?;
            ret += mdp.unshift(o.reward);
            steps += 1;
            if tr.done {
                ret += mdp.terminal_reward(o.to).unwrap_or(0.0);
                break;
            }
            s = o.to;
        }
        let done = episode + 1;
        if done % config.eval_every == 0 || done == config.episodes {
            curve.rows.push(CurveRow {
                episode: done,
                ret,
                error: reference.map_or(f64::NAN, |r| table.sup_distance(r)),
                epsilon: explore.epsilon(progress),
                alpha,
            });
        }
    }
    Ok((table, curve))
}

/// `Q(s, a) = d/dbeta log Z(s, a)` by finite differences of [`plan_zsa`]
/// (central when `beta >= h`, one-sided three-point otherwise).
pub fn q_diagnostic(
    mdp: &ValidatedMdp,
    params: &SolveParams,
    h: f64,
) -> Result<Vec<Vec<f64>>, SolveError> {
    let beta = params.beta;
    let at = |b: f64| plan_zsa(mdp, &params.with_beta(b));
    let (stencil, tables): (Vec<f64>, Vec<LogZsaTable>) = if beta >= h {
        (vec![-0.5, 0.5], vec![at(beta - h)?, at(beta + h)?])
    } else {
        (
            vec![-1.5, 2.0, -0.5],
            vec![at(beta)?, at(beta + h)?, at(beta + 2.0 * h)?],
        )
    };
    let q = (0..mdp.num_states())
        .map(|s| {
            (0..mdp.actions(s).len())
                .map(|a| {
                    if tables.iter().any(|t| t.log_zsa[s][a] <= LOG_Z_FLOOR) {
                        return f64::NAN;
                    }
                    stencil
                        .iter()
                        .zip(&tables)
                        .map(|(c, t)| c * t.log_zsa[s][a])
                        .sum::<f64>()
                        / h
                })
                .collect()
        })
        .collect();
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{chain_env, coin_env, tree_env};
    use crate::mdp::validate;
    use crate::planner::solve_power;
    use crate::stochastic::{solve_averaged, solve_variational};

    const MU: f64 = -1.2;

    fn tree() -> ValidatedMdp {
        validate(tree_env()).unwrap()
    }

    #[test]
    fn planned_pairs_on_the_tree() {
        let mdp = tree();
        let p = SolveParams::new(1.0, MU);
        let t = plan_zsa(&mdp, &p).unwrap();
        let z01 = t.get(0, 0).exp();
        assert!((z01 - MU.exp() * 2.0 * (-0.2f64).exp()).abs() < 1e-12);
        assert!((z01 - 0.493194).abs() < 1e-6);
        let z0: f64 = t.log_zsa[0].iter().map(|l| l.exp()).sum();
        assert!((z0 - 0.830509).abs() < 1e-6);
        // S2 -> S6, terminal reward 1
        assert!((t.get(2, 0) - (MU + 1.0)).abs() < 1e-12);
        let states = solve_power(&mdp, &p).unwrap();
        for s in 0..8 {
            assert!((t.state_log_z(&mdp, s) - states.log_z[s]).abs() < 1e-10);
        }
        assert!(t.log_zsa[4].is_empty());
    }

    #[test]
    fn stochastic_pairs_match_state_tables() {
        let mdp = validate(coin_env()).unwrap();
        let p = SolveParams::new(1.0, MU);
        assert!(matches!(
            plan_zsa(&mdp, &p),
            Err(SolveError::NotDeterministic)
        ));
        for (variant, states) in [
            (Variant::Averaged, solve_averaged(&mdp, &p).unwrap()),
            (Variant::Variational, solve_variational(&mdp, &p).unwrap()),
        ] {
            let t = plan_zsa_variant(&mdp, variant, &p).unwrap();
            assert!((t.state_log_z(&mdp, 0) - states.log_z[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn update_examples() {
        let mdp = validate(chain_env(2, 0.0, 0.0)).unwrap();
        // c_2 -> c_1 -> t; give c_1 a single pair with Z = 2
        let mut t = LogZsaTable::zeros(&mdp, 1.0, -2.0);
        t.log_zsa[1][0] = 2f64.ln();
        let tr = ZsaTransition {
            state: 0,
            action: 0,
            reward: 0.0,
            next: 1,
            done: false,
        };
        update_zsa(&mut t, &mdp, &tr, 0.5).unwrap();
        assert!((t.get(0, 0) - 0.5 * (-2.0 + 2f64.ln())).abs() < 1e-15);
        assert!((t.get(0, 0) - (-0.653426)).abs() < 1e-6);
        assert!((t.get(0, 0).exp() - 0.520260).abs() < 1e-6);

        let before = t.clone();
        update_zsa(&mut t, &mdp, &tr, 0.0).unwrap();
        assert_eq!(t, before);
        update_zsa(&mut t, &mdp, &tr, 1.0).unwrap();
        assert_eq!(t.get(0, 0), update_target(&t, &mdp, &tr));

        let bad = ZsaTransition { action: 3, ..tr };
        assert!(update_zsa(&mut t, &mdp, &bad, 0.5).is_err());
    }

    #[test]
    fn terminal_update_uses_the_boundary() {
        let mdp = validate(chain_env(1, 0.0, 1.0)).unwrap();
        let mut t = LogZsaTable::zeros(&mdp, 2.0, -0.5);
        let tr = ZsaTransition {
            state: 0,
            action: 0,
            reward: 0.0,
            next: 1,
            done: true,
        };
        update_zsa(&mut t, &mdp, &tr, 1.0).unwrap();
        assert_eq!(t.get(0, 0), 2.0 - 0.5);
    }

    #[test]
    fn zero_episodes_keep_initialization() {
        let mdp = tree();
        let mut cfg = LearnerConfig::new(1.0, MU);
        cfg.episodes = 0;
        let (t, curve) = train(&mdp, &cfg, None).unwrap();
        assert_eq!(t, LogZsaTable::zeros(&mdp, 1.0, MU));
        assert!(curve.rows.is_empty());
    }

    #[test]
    fn tree_training_converges() {
        let mdp = tree();
        let reference = plan_zsa(&mdp, &SolveParams::new(1.0, MU)).unwrap();
        let mut cfg = LearnerConfig::new(1.0, MU);
        cfg.seed = 7;
        cfg.eval_every = 1000;
        let (t, curve) = train(&mdp, &cfg, Some(&reference)).unwrap();
        assert!(t.sup_distance(&reference) <= 0.05);
        let root = t.policy();
        let want = reference.policy();
        assert!(root.total_variation(&want, 0) <= 0.03);
        assert_eq!(curve.rows.len(), 20);
        assert!(curve.rows.windows(2).all(|w| w[0].episode < w[1].episode));
        assert!(curve.rows.iter().all(|r| r.epsilon.is_nan()));
        assert_eq!(curve.rows.last().unwrap().error, t.sup_distance(&reference));
    }

    #[test]
    fn training_is_seeded() {
        let mdp = tree();
        let mut cfg = LearnerConfig::new(1.0, MU);
        cfg.episodes = 300;
        cfg.exploration = "epsilon".into();
        let a = train(&mdp, &cfg, None).unwrap();
        let b = train(&mdp, &cfg, None).unwrap();
        assert_eq!(a.0, b.0);
        cfg.seed = 1;
        assert_ne!(train(&mdp, &cfg, None).unwrap().0, a.0);
    }

    #[test]
    fn stochastic_learning_finds_the_variational_table() {
        let mdp = validate(coin_env()).unwrap();
        let mut cfg = LearnerConfig::new(1.0, MU);
        cfg.episodes = 40_000;
        cfg.alpha_decay = 20.0;
        cfg.seed = 3;
        let (t, _) = train(&mdp, &cfg, None).unwrap();
        let learned = t.get(0, 0);
        assert!((learned - (MU + 0.5)).abs() < 0.03, "{learned}");
        let averaged = (0.559962f64).ln();
        assert!((learned - averaged).abs() > 0.08);
    }

    #[test]
    fn config_checks() {
        let mdp = tree();
        let mut cfg = LearnerConfig::new(1.0, MU);
        cfg.alpha0 = 0.0;
        assert!(matches!(
            train(&mdp, &cfg, None),
            Err(LearnError::Config(_))
        ));
        let mut cfg = LearnerConfig::new(1.0, MU);
        cfg.exploration = "greedy".into();
        assert!(matches!(
            train(&mdp, &cfg, None),
            Err(LearnError::UnknownExploration(_))
        ));
        let mut cfg = LearnerConfig::new(1.0, MU);
        cfg.start = Some(4);
        assert!(train(&mdp, &cfg, None).is_err());
        let mut cfg = LearnerConfig::new(1.0, MU);
        cfg.max_steps = 1;
        assert_eq!(
            train(&mdp, &cfg, None).unwrap_err(),
            LearnError::NonEpisodic {
                episode: 1,
                max_steps: 1
            }
        );
    }

    #[test]
    fn q_from_finite_differences() {
        let mdp = tree();
        let q = q_diagnostic(&mdp, &SolveParams::new(50.0, MU), 1e-3).unwrap();
        assert!(q[0][2].abs() < 1e-4);
        assert!((q[0][0] - 1.0).abs() < 1e-4);
        let chain = validate(chain_env(1, 0.0, 1.0)).unwrap();
        for beta in [0.0, 0.7, 5.0] {
            let q = q_diagnostic(&chain, &SolveParams::new(beta, -0.5), 1e-4).unwrap();
            assert!((q[0][0] - 1.0).abs() < 1e-8);
        }
        let q0 = q_diagnostic(&mdp, &SolveParams::new(0.0, MU), 1e-4).unwrap();
        assert!((q0[1][0] - q0[1][1]).abs() < 1e-12);
    }
}
