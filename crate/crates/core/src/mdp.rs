//! Finite MDP definitions and validation.
//!
//! An [`MdpSpec`] is the user-facing description: named states, labelled
//! actions, stochastic transitions with deterministic rewards, and terminal
//! rewards. [`validate`] checks it and compiles it into a [`ValidatedMdp`],
//! an indexed, immutable form in which every transition reward is `<= 0`.
//!
//! Rewards are shifted by `max(R_max, 0)`, where `R_max` is the largest
//! transition reward. Terminal rewards are never shifted. The shift is kept on
//! the validated MDP so reports can convert back to the user's reward scale.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the per-`(state, action)` probability sum.
pub const PROB_SUM_TOL: f64 = 1e-9;

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub from: String,
    pub action: String,
    pub to: String,
    #[serde(default = "one")]
    pub prob: f64,
    pub reward: f64,
}

impl TransitionSpec {
    pub fn new(from: &str, action: &str, to: &str, prob: f64, reward: f64) -> Self {
        Self {
            from: from.to_string(),
            action: action.to_string(),
            to: to.to_string(),
            prob,
            reward,
        }
    }
}

/// Declarative description of a finite MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub states: Vec<String>,
    pub terminals: BTreeMap<String, f64>,
    pub transitions: Vec<TransitionSpec>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("duplicate state `{0}`")]
    DuplicateState(String),
    #[error("{context} references unknown state `{state}`")]
    DanglingState { state: String, context: String },
    #[error("terminal state `{0}` has outgoing transitions")]
    TerminalWithActions(String),
    #[error("non-terminal state `{0}` has no actions")]
    DeadEnd(String),
    #[error("probabilities of ({state}, {action}) sum to {sum}, expected 1")]
    ProbSumViolation {
        state: String,
        action: String,
        sum: f64,
    },
    #[error("transition {index}: probability {prob} outside [0, 1]")]
    InvalidProbability { index: usize, prob: f64 },
    #[error("transition {index}: reward is not finite")]
    NonFiniteReward { index: usize },
    #[error("terminal `{0}`: reward is not finite")]
    NonFiniteTerminalReward(String),
    #[error("transition {index}: ({state}, {action}) lists destination `{to}` twice")]
    DuplicateOutcome {
        index: usize,
        state: String,
        action: String,
        to: String,
    },
}

/// `mu` is too large for the trajectory sum and the Bellman operator to be
/// guaranteed well behaved (`mu < -log d` is required).
#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("mu = {mu} is not below -log(d) = {limit}")]
pub struct MuTooLarge {
    pub mu: f64,
    pub limit: f64,
}

/// One landing state of an action.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub to: usize,
    pub prob: f64,
    /// Shifted reward, always `<= 0`.
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub label: String,
    pub outcomes: Vec<Outcome>,
}

impl Action {
    /// Outcomes that can actually happen.
    pub fn reachable(&self) -> impl Iterator<Item = &Outcome> {
        self.outcomes.iter().filter(|o| o.prob > 0.0)
    }
}

/// A checked MDP with shifted rewards and derived constants.
///
/// Immutable after construction; share it freely between threads.
#[derive(Debug, Clone)]
pub struct ValidatedMdp {
    spec: MdpSpec,
    index: HashMap<String, usize>,
    actions: Vec<Vec<Action>>,
    terminal_reward: Vec<Option<f64>>,
    d: usize,
    k: f64,
    reward_shift: f64,
    deterministic: bool,
}

impl ValidatedMdp {
    /// The spec with shifted transition rewards.
    pub fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    /// The spec on the original reward scale.
    pub fn unshifted_spec(&self) -> MdpSpec {
        let mut spec = self.spec.clone();
        for t in &mut spec.transitions {
            t.reward += self.reward_shift;
        }
        spec
    }

    pub fn num_states(&self) -> usize {
        self.spec.states.len()
    }

    pub fn states(&self) -> &[String] {
        &self.spec.states
    }

    pub fn state_name(&self, s: usize) -> &str {
        &self.spec.states[s]
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn actions(&self, s: usize) -> &[Action] {
        &self.actions[s]
    }

    pub fn action_index(&self, s: usize, label: &str) -> Option<usize> {
        self.actions[s].iter().position(|a| a.label == label)
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal_reward[s].is_some()
    }

    pub fn terminal_reward(&self, s: usize) -> Option<f64> {
        self.terminal_reward[s]
    }

    pub fn non_terminal_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_states()).filter(|&s| !self.is_terminal(s))
    }

    /// Maximum number of actions available in any state (at least 1).
    pub fn d(&self) -> usize {
        self.d
    }

    /// Upper bound on terminal rewards (0 when there are no terminals).
    pub fn k(&self) -> f64 {
        self.k
    }

    /// Amount subtracted from every transition reward.
    pub fn reward_shift(&self) -> f64 {
        self.reward_shift
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    /// Converts a shifted transition reward back to the user's scale.
    pub fn unshift(&self, reward: f64) -> f64 {
        reward + self.reward_shift
    }

    /// First non-terminal state in declaration order, or state 0.
    pub fn default_start(&self) -> usize {
        self.non_terminal_states().next().unwrap_or(0)
    }

    /// Errors unless `mu < -log d`.
    pub fn check_mu(&self, mu: f64) -> Result<(), MuTooLarge> {
        let limit = 0.0 - (self.d as f64).ln();
        if mu < limit {
            Ok(())
        } else {
            Err(MuTooLarge { mu, limit })
        }
    }
}

/// Checks `spec` and compiles it into a [`ValidatedMdp`].
pub fn validate(spec: MdpSpec) -> Result<ValidatedMdp, MdpError> {
    let mut index = HashMap::with_capacity(spec.states.len());
    for (i, name) in spec.states.iter().enumerate() {
        if index.insert(name.clone(), i).is_some() {
            return Err(MdpError::DuplicateState(name.clone()));
        }
    }
    let n = spec.states.len();
    let resolve = |name: &str, context: String| {
        index.get(name).copied().ok_or(MdpError::DanglingState {
            state: name.to_string(),
            context,
        })
    };

    let mut terminal_reward = vec![None; n];
    for (name, &r) in &spec.terminals {
        let s = resolve(name, "terminals".to_string())?;
        if !r.is_finite() {
            return Err(MdpError::NonFiniteTerminalReward(name.clone()));
        }
        terminal_reward[s] = Some(r);
    }

    let mut actions: Vec<Vec<Action>> = vec![Vec::new(); n];
    let mut r_max = f64::NEG_INFINITY;
    for (i, t) in spec.transitions.iter().enumerate() {
        let from = resolve(&t.from, format!("transition {i} (from)"))?;
        let to = resolve(&t.to, format!("transition {i} (to)"))?;
        if terminal_reward[from].is_some() {
            return Err(MdpError::TerminalWithActions(t.from.clone()));
        }
        if !(t.prob.is_finite() && (0.0..=1.0).contains(&t.prob)) {
            return Err(MdpError::InvalidProbability {
                index: i,
                prob: t.prob,
            });
        }
        if !t.reward.is_finite() {
            return Err(MdpError::NonFiniteReward { index: i });
        }
        r_max = r_max.max(t.reward);
        let list = &mut actions[from];
        let a = match list.iter().position(|a| a.label == t.action) {
            Some(a) => a,
            None => {
                list.push(Action {
                    label: t.action.clone(),
                    outcomes: Vec::new(),
                });
                list.len() - 1
            }
        };
        if list[a].outcomes.iter().any(|o| o.to == to) {
            return Err(MdpError::DuplicateOutcome {
                index: i,
                state: t.from.clone(),
                action: t.action.clone(),
                to: t.to.clone(),
            });
        }
        list[a].outcomes.push(Outcome {
            to,
            prob: t.prob,
            reward: t.reward,
        });
    }

    for s in 0..n {
        if terminal_reward[s].is_none() && actions[s].is_empty() {
            return Err(MdpError::DeadEnd(spec.states[s].clone()));
        }
        for a in &actions[s] {
            let sum: f64 = a.outcomes.iter().map(|o| o.prob).sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(MdpError::ProbSumViolation {
                    state: spec.states[s].clone(),
                    action: a.label.clone(),
                    sum,
                });
            }
        }
    }

    let reward_shift = r_max.max(0.0);
    let mut spec = spec;
    if reward_shift != 0.0 {
        for t in &mut spec.transitions {
            t.reward -= reward_shift;
        }
        for o in actions
            .iter_mut()
            .flatten()
            .flat_map(|a| a.outcomes.iter_mut())
        {
            o.reward -= reward_shift;
        }
    }

    let d = actions.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let k = terminal_reward
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let k = if k.is_finite() { k } else { 0.0 };
    let deterministic = actions.iter().flatten().all(|a| a.reachable().count() == 1);

    Ok(ValidatedMdp {
        spec,
        index,
        actions,
        terminal_reward,
        d,
        k,
        reward_shift,
        deterministic,
    })
}

/// A chemical potential strictly inside the convergence region:
/// `-log(d) - margin`.
pub fn default_mu(mdp: &ValidatedMdp, margin: f64) -> f64 {
    mu_for_fanout(mdp.d(), margin)
}

/// [`default_mu`] for a bare action fan-out `d`.
pub fn mu_for_fanout(d: usize, margin: f64) -> f64 {
    assert!(margin > 0.0, "margin must be positive");
    -(d as f64).ln() - margin
}

/// Default margin used by `--mu auto`.
pub const DEFAULT_MU_MARGIN: f64 = 0.1;

/// Run-wide hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub beta: f64,
    pub mu: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub fd_step: f64,
    pub alpha0: f64,
    pub alpha_decay: f64,
    pub seed: u64,
}

impl Hyperparams {
    pub fn new(beta: f64, mu: f64) -> Self {
        Self {
            beta,
            mu,
            tol: 1e-10,
            max_iter: 100_000,
            fd_step: 1e-4,
            alpha0: 0.5,
            alpha_decay: 500.0,
            seed: 0,
        }
    }

    /// Uses `default_mu(mdp, 0.1)`.
    pub fn auto(mdp: &ValidatedMdp, beta: f64) -> Self {
        Self::new(beta, default_mu(mdp, DEFAULT_MU_MARGIN))
    }

    pub fn solve_params(&self) -> crate::solver::SolveParams {
        crate::solver::SolveParams {
            beta: self.beta,
            mu: self.mu,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs;

    fn single(reward: f64) -> MdpSpec {
        MdpSpec {
            states: vec!["s".into(), "t".into()],
            terminals: [("t".to_string(), 0.0)].into_iter().collect(),
            transitions: vec![TransitionSpec::new("s", "go", "t", 1.0, reward)],
        }
    }

    #[test]
    fn tree_constants() {
        let mdp = validate(envs::tree_env()).unwrap();
        assert_eq!(mdp.d(), 3);
        assert_eq!(mdp.k(), 1.0);
        assert_eq!(mdp.reward_shift(), 0.0);
        assert!(mdp.is_deterministic());
    }

    #[test]
    fn identity_case() {
        let mdp = validate(single(0.0)).unwrap();
        assert_eq!((mdp.d(), mdp.k(), mdp.reward_shift()), (1, 0.0, 0.0));
    }

    #[test]
    fn positive_reward_is_shifted() {
        let mdp = validate(single(2.0)).unwrap();
        assert_eq!(mdp.reward_shift(), 2.0);
        assert_eq!(mdp.actions(0)[0].outcomes[0].reward, 0.0);
        assert_eq!(mdp.spec().transitions[0].reward, 0.0);
        assert_eq!(mdp.unshifted_spec(), single(2.0));
    }

    #[test]
    fn negative_rewards_are_not_shifted() {
        let mdp = validate(single(-3.0)).unwrap();
        assert_eq!(mdp.reward_shift(), 0.0);
        assert_eq!(mdp.actions(0)[0].outcomes[0].reward, -3.0);
    }

    #[test]
    fn terminal_rewards_keep_their_sign() {
        let mut spec = single(5.0);
        spec.terminals.insert("t".into(), 4.0);
        let mdp = validate(spec).unwrap();
        assert_eq!(mdp.terminal_reward(1), Some(4.0));
        assert_eq!(mdp.k(), 4.0);
    }

    #[test]
    fn rejects_dangling_state() {
        let mut spec = single(0.0);
        spec.transitions[0].to = "nowhere".into();
        assert!(matches!(
            validate(spec),
            Err(MdpError::DanglingState { .. })
        ));
        let mut spec = single(0.0);
        spec.terminals.insert("ghost".into(), 1.0);
        assert!(matches!(
            validate(spec),
            Err(MdpError::DanglingState { .. })
        ));
    }

    #[test]
    fn rejects_bad_probability_sum() {
        let mut spec = single(0.0);
        spec.transitions[0].prob = 0.7;
        assert!(matches!(
            validate(spec),
            Err(MdpError::ProbSumViolation { .. })
        ));
    }

    #[test]
    fn rejects_dead_end_and_terminal_actions() {
        let mut spec = single(0.0);
        spec.states.push("u".into());
        assert_eq!(validate(spec).unwrap_err(), MdpError::DeadEnd("u".into()));

        let mut spec = single(0.0);
        spec.transitions
            .push(TransitionSpec::new("t", "back", "s", 1.0, 0.0));
        assert_eq!(
            validate(spec).unwrap_err(),
            MdpError::TerminalWithActions("t".into())
        );
    }

    #[test]
    fn rejects_duplicates() {
        let mut spec = single(0.0);
        spec.states.push("s".into());
        assert!(matches!(validate(spec), Err(MdpError::DuplicateState(_))));
        let mut spec = single(0.0);
        spec.transitions[0].prob = 0.5;
        spec.transitions
            .push(TransitionSpec::new("s", "go", "t", 0.5, 0.0));
        assert!(matches!(
            validate(spec),
            Err(MdpError::DuplicateOutcome { .. })
        ));
    }

    #[test]
    fn stochastic_flag() {
        assert!(!validate(envs::coin_env()).unwrap().is_deterministic());
    }

    #[test]
    fn default_mu_examples() {
        assert!((mu_for_fanout(3, 0.1014) - (-1.2)).abs() < 1e-4);
        assert_eq!(mu_for_fanout(1, 0.5), -0.5);
        assert!((mu_for_fanout(2, 0.01) - (-0.70315)).abs() < 1e-5);
    }

    #[test]
    fn default_mu_satisfies_check() {
        let mdp = validate(envs::tree_env()).unwrap();
        let mu = default_mu(&mdp, 0.1);
        assert!(mdp.check_mu(mu).is_ok());
        assert!((mu + 3f64.ln() + 0.1).abs() < 1e-15);
        assert!(mdp.check_mu(-(3f64.ln())).is_err());
    }
}
