//! Classical tabular baselines: value iteration, Q-learning and the
//! Boltzmann policy over Q.
//!
//! These work on the user's reward scale (the validated shift is added back
//! to every transition reward). A terminal state's value is its terminal
//! reward, so `Q(s, a) = sum_s' P(s'|s,a) [r + gamma V(s')]` with
//! `V(s_f) = R(s_f)`.

use rand::SeedableRng;
use thiserror::Error;

use crate::explore::{exploration_registry, ExplorationOptions, SimRng};
use crate::learner::{
    sample_outcome, start_state, CurveRow, LearnError, LearnerConfig, LearningCurve,
};
use crate::logspace::{argmax, softmax};
use crate::mdp::ValidatedMdp;
use crate::registry::Registry;
use crate::tables::{PolicyTable, VTable, ValueMethod};

/// `Q(s, a)` rows aligned with `ValidatedMdp::actions(s)`; terminal rows
/// are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub q: Vec<Vec<f64>>,
    pub gamma: f64,
}

impl QTable {
    pub fn zeros(mdp: &ValidatedMdp, gamma: f64) -> Self {
        let q = (0..mdp.num_states())
            .map(|s| vec![0.0; mdp.actions(s).len()])
            .collect();
        Self { q, gamma }
    }

    /// `max_a Q(s, a)`, or `R(s)` on terminals.
    pub fn value(&self, mdp: &ValidatedMdp, s: usize) -> f64 {
        match mdp.terminal_reward(s) {
            Some(r) => r,
            None => self.q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.q
            .iter()
            .flatten()
            .zip(other.q.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("gamma must lie in [0, 1), got {0}")]
    Gamma(f64),
    #[error("value iteration did not converge in {iterations} iterations (change {residual:e})")]
    MaxIterExceeded { iterations: usize, residual: f64 },
    #[error(transparent)]
    Learn(#[from] LearnError),
}

impl BaselineError {
    pub fn is_numerical(&self) -> bool {
        matches!(self, BaselineError::MaxIterExceeded { .. })
    }
}

fn check_gamma(gamma: f64) -> Result<(), BaselineError> {
    if (0.0..1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(BaselineError::Gamma(gamma))
    }
}

/// `sum_s' P(s'|s,a) [r + gamma * value(s')]` on the user's reward scale.
fn backup(mdp: &ValidatedMdp, s: usize, a: usize, gamma: f64, value: impl Fn(usize) -> f64) -> f64 {
    mdp.actions(s)[a]
        .reachable()
        .map(|o| o.prob * (mdp.unshift(o.reward) + gamma * value(o.to)))
        .sum()
}

fn q_from_values(mdp: &ValidatedMdp, v: &[f64], gamma: f64) -> QTable {
    let q = (0..mdp.num_states())
        .map(|s| {
            if mdp.is_terminal(s) {
                return Vec::new();
            }
            (0..mdp.actions(s).len())
                .map(|a| backup(mdp, s, a, gamma, |t| v[t]))
                .collect()
        })
        .collect();
    QTable { q, gamma }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViResult {
    pub v: VTable,
    pub q: QTable,
    /// Greedy and deterministic, lowest index on ties.
    pub policy: PolicyTable,
    pub iterations: usize,
}

/// `V(s) <- max_a sum_s' P(s'|s,a) [r + gamma V(s')]` until the sup-norm
/// change is at most `tol`. Non-terminals start at 0.
pub fn value_iteration(
    mdp: &ValidatedMdp,
    gamma: f64,
    tol: f64,
    max_iter: usize,
) -> Result<ViResult, BaselineError> {
    check_gamma(gamma)?;
    let n = mdp.num_states();
    let mut v: Vec<f64> = (0..n)
        .map(|s| mdp.terminal_reward(s).unwrap_or(0.0))
        .collect();
    let mut iterations = 0;
    loop {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                if mdp.is_terminal(s) {
                    return v[s];
                }
                (0..mdp.actions(s).len())
                    .map(|a| backup(mdp, s, a, gamma, |t| v[t]))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let change = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        iterations += 1;
        if change <= tol {
            break;
        }
        if iterations == max_iter {
            return Err(BaselineError::MaxIterExceeded {
                iterations,
                residual: change,
            });
        }
    }
    let q = q_from_values(mdp, &v, gamma);
    Ok(ViResult {
        policy: greedy_policy(&q),
        v: VTable {
            v,
            method: ValueMethod::ValueIteration,
        },
        q,
        iterations,
    })
}

/// One-hot rows at `argmax_a Q(s, a)`.
pub fn greedy_policy(q: &QTable) -> PolicyTable {
    let probs =
        q.q.iter()
            .map(|row| {
                let mut p = vec![0.0; row.len()];
                if !row.is_empty() {
                    p[argmax(row)] = 1.0;
                }
                p
            })
            .collect();
    PolicyTable { probs }
}

/// `pi(a|s) ∝ exp(beta Q(s, a))`.
pub fn boltzmann_policy(q: &QTable, beta: f64) -> PolicyTable {
    let probs =
        q.q.iter()
            .map(|row| softmax(&row.iter().map(|x| beta * x).collect::<Vec<_>>()))
            .collect();
    PolicyTable { probs }
}

/// One sampled step on the user's reward scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QTransition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next: usize,
    pub done: bool,
}

/// `Q <- Q + alpha (r + gamma * next - Q)` with `next = R(s')` when the step
/// ended the episode and `max_a' Q(s', a')` otherwise.
pub fn q_update(q: &mut QTable, mdp: &ValidatedMdp, tr: &QTransition, alpha: f64) {
    let next = if tr.done {
        mdp.terminal_reward(tr.next).unwrap_or(0.0)
    } else {
        q.value(mdp, tr.next)
    };
    let target = tr.reward + q.gamma * next;
    let x = &mut q.q[tr.state][tr.action];
    *x += alpha * (target - *x);
}

/// Synchronous expected update of every pair:
/// `Q <- (1 - alpha) Q + alpha * sum_s' P [r + gamma max_a' Q(s', a')]`.
pub fn q_sweep(q: &QTable, mdp: &ValidatedMdp, alpha: f64) -> QTable {
    let mut out = q.clone();
    for s in mdp.non_terminal_states() {
        for a in 0..mdp.actions(s).len() {
            let target = backup(mdp, s, a, q.gamma, |t| q.value(mdp, t));
            out.q[s][a] = (1.0 - alpha) * q.q[s][a] + alpha * target;
        }
    }
    out
}

/// Online tabular Q-learning with `mdp` as the simulator.
///
/// Uses the step-size schedule, exploration, episode count, seed and start
/// state of `config`; `beta` is the inverse temperature of proportional
/// (Boltzmann) exploration over Q, and `mu` is unused.
pub fn q_learning(
    mdp: &ValidatedMdp,
    gamma: f64,
    config: &LearnerConfig,
    reference: Option<&QTable>,
) -> Result<(QTable, LearningCurve), BaselineError> {
    check_gamma(gamma)?;
    config.validate()?;
    let registry = exploration_registry(ExplorationOptions {
        epsilon_start: config.epsilon_start,
        epsilon_end: config.epsilon_end,
    });
    let explore = registry
        .get(&config.exploration)
        .map_err(LearnError::from)?;
    let scale = if explore.name() == "proportional" {
        config.beta
    } else {
        1.0
    };
    let start = start_state(mdp, config.start)?;
    let mut rng = SimRng::seed_from_u64(config.seed);
    let mut q = QTable::zeros(mdp, gamma);
    let mut visits: Vec<Vec<u64>> = q.q.iter().map(|r| vec![0; r.len()]).collect();
    let mut curve = LearningCurve::default();
    let mut scores = Vec::new();

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
                }
                .into());
            }
            scores.clear();
            scores.extend(q.q[s].iter().map(|x| scale * x));
            let a = explore.select(&scores, progress, &mut rng);
            let o = &mdp.actions(s)[a].outcomes[sample_outcome(mdp, s, a, &mut rng)];
            let tr = QTransition {
                state: s,
                action: a,
                reward: mdp.unshift(o.reward),
                next: o.to,
                done: mdp.is_terminal(o.to),
            };
            alpha = config.alpha(visits[s][a]);
            visits[s][a] += 1;
            q_update(&mut q, mdp, &tr, alpha);
            ret += tr.reward;
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
                error: reference.map_or(f64::NAN, |r| q.sup_distance(r)),
                epsilon: explore.epsilon(progress),
                alpha,
            });
        }
    }
    Ok((q, curve))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub gamma: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Training settings for the learning baselines.
    pub learner: LearnerConfig,
}

impl BaselineConfig {
    pub fn new(learner: LearnerConfig) -> Self {
        Self {
            gamma: 0.99,
            tol: 1e-10,
            max_iter: 100_000,
            learner,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutput {
    pub q: QTable,
    pub policy: PolicyTable,
    pub v: Option<VTable>,
    pub curve: Option<LearningCurve>,
}

pub trait Baseline: Send + Sync {
    fn name(&self) -> &'static str;

    fn run(
        &self,
        mdp: &ValidatedMdp,
        config: &BaselineConfig,
    ) -> Result<BaselineOutput, BaselineError>;
}

pub struct ValueIteration;
pub struct QLearning;

impl Baseline for ValueIteration {
    fn name(&self) -> &'static str {
        "vi"
    }

    fn run(
        &self,
        mdp: &ValidatedMdp,
        config: &BaselineConfig,
    ) -> Result<BaselineOutput, BaselineError> {
        let r = value_iteration(mdp, config.gamma, config.tol, config.max_iter)?;
        Ok(BaselineOutput {
            q: r.q,
            policy: r.policy,
            v: Some(r.v),
            curve: None,
        })
    }
}

impl Baseline for QLearning {
    fn name(&self) -> &'static str {
        "qlearn"
    }

    /// The curve's error column is measured against value iteration.
    fn run(
        &self,
        mdp: &ValidatedMdp,
        config: &BaselineConfig,
    ) -> Result<BaselineOutput, BaselineError> {
        let reference = value_iteration(mdp, config.gamma, config.tol, config.max_iter)?;
        let (q, curve) = q_learning(mdp, config.gamma, &config.learner, Some(&reference.q))?;
        Ok(BaselineOutput {
            policy: greedy_policy(&q),
            q,
            v: None,
            curve: Some(curve),
        })
    }
}

pub fn baseline_registry() -> Registry<dyn Baseline> {
    let mut reg: Registry<dyn Baseline> = Registry::new("baseline");
    reg.register("vi", Box::new(ValueIteration))
        .register("qlearn", Box::new(QLearning));
    reg
}
