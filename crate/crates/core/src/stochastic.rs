//! Partition functions on stochastic MDPs.
//!
//! Two constructions:
//!
//! * **averaged**: `Z(s) = sum_{a,s'} P(s'|s,a) exp(beta R + mu) Z(s')`. Its
//!   solution is the trajectory sum with the log-likelihood of each
//!   trajectory added to the exponent. The weights it induces depend on the
//!   landing state, so they do not form a policy an agent could follow;
//!   [`diagnose_averaged_policy`] reports them.
//! * **variational**: `Z(s) = sum_a prod_{s'} [exp(beta R + mu) Z(s')]^P(s'|s,a)`,
//!   the fixed point of the belief-space equation restricted to the product
//!   family `Z(rho) = prod_i Z(s_i)^rho_i`. It induces a policy that depends
//!   on the current state only.
//!
//! Both reduce to the deterministic equation when every action has a single
//! landing state. Transitions with probability 0 are skipped.

use crate::logspace::{log_sum_exp, softmax};
use crate::mdp::ValidatedMdp;
use crate::planner::iterate;
use crate::solver::{SolveError, SolveParams};
use crate::tables::{LogZTable, PolicyTable, Variant};

pub fn solve_averaged(mdp: &ValidatedMdp, params: &SolveParams) -> Result<LogZTable, SolveError> {
    mdp.check_mu(params.mu)?;
    iterate(mdp, Variant::Averaged, params)
}

pub fn solve_variational(
    mdp: &ValidatedMdp,
    params: &SolveParams,
) -> Result<LogZTable, SolveError> {
    mdp.check_mu(params.mu)?;
    iterate(mdp, Variant::Variational, params)
}

/// Weight the averaged equation puts on one `(s, a, s')` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionWeight {
    pub state: usize,
    pub action: usize,
    pub to: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedWeights {
    /// `exp(beta R + mu) Z(s') P(s'|s,a) / Z(s)`, one entry per outcome.
    pub entries: Vec<TransitionWeight>,
    /// Sum of the weights leaving each state (1 for live non-terminals,
    /// 0 for terminals).
    pub row_sums: Vec<f64>,
}

impl AveragedWeights {
    pub fn get(&self, state: usize, action: usize, to: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.state == state && e.action == action && e.to == to)
            .map(|e| e.weight)
    }
}

/// Landing-state-dependent weights of the averaged solution.
pub fn diagnose_averaged_policy(
    mdp: &ValidatedMdp,
    table: &LogZTable,
) -> Result<AveragedWeights, SolveError> {
    if table.variant == Variant::Variational {
        return Err(SolveError::WrongVariant {
            expected: Variant::Averaged,
            found: table.variant,
        });
    }
    let w = crate::planner::transition_weights(mdp, table)?;
    let mut entries = Vec::new();
    let mut row_sums = vec![0.0; mdp.num_states()];
    for s in 0..mdp.num_states() {
        for (a, action) in mdp.actions(s).iter().enumerate() {
            for (o, &weight) in action.outcomes.iter().zip(&w[s][a]) {
                row_sums[s] += weight;
                entries.push(TransitionWeight {
                    state: s,
                    action: a,
                    to: o.to,
                    weight,
                });
            }
        }
    }
    Ok(AveragedWeights { entries, row_sums })
}

/// Log score `sum_{s'} P(s'|s,a) [beta R + mu + log Z(s')]` of each action.
pub fn variational_scores(mdp: &ValidatedMdp, table: &LogZTable, s: usize) -> Vec<f64> {
    mdp.actions(s)
        .iter()
        .map(|a| {
            a.reachable()
                .map(|o| o.prob * (table.beta * o.reward + table.mu + table.exact(o.to)))
                .sum()
        })
        .collect()
}

/// `pi(a|s)` proportional to `prod_{s'} [exp(beta R + mu) Z(s')]^P(s'|s,a)`.
pub fn policy_variational(
    mdp: &ValidatedMdp,
    table: &LogZTable,
) -> Result<PolicyTable, SolveError> {
    if table.variant == Variant::Averaged {
        return Err(SolveError::WrongVariant {
            expected: Variant::Variational,
            found: table.variant,
        });
    }
    let probs = (0..mdp.num_states())
        .map(|s| softmax(&variational_scores(mdp, table, s)))
        .collect();
    Ok(PolicyTable { probs })
}

/// The belief-space Bellman operator applied to an arbitrary function `x`
/// of beliefs, evaluated at belief `rho`:
/// `sum_a exp(beta * R(rho, a) + mu) * x(P_a^T rho)`.
///
/// Actions are matched by label across states; a state lacking the label
/// keeps its mass in place with zero reward, as terminals do. Final beliefs
/// (all mass on terminals) return the boundary value
/// `exp(beta * sum_i rho_i R(f_i))`.
pub fn belief_backup(
    mdp: &ValidatedMdp,
    beta: f64,
    mu: f64,
    x: &dyn Fn(&[f64]) -> f64,
    rho: &[f64],
) -> f64 {
    let n = mdp.num_states();
    let is_final = (0..n).all(|s| rho[s] == 0.0 || mdp.is_terminal(s));
    if is_final {
        let r: f64 = (0..n)
            .filter(|&s| rho[s] > 0.0)
            .map(|s| rho[s] * mdp.terminal_reward(s).unwrap_or(0.0))
            .sum();
        return (beta * r).exp();
    }
    let mut labels: Vec<&str> = Vec::new();
    for s in 0..n {
        for a in mdp.actions(s) {
            if !labels.contains(&a.label.as_str()) {
                labels.push(&a.label);
            }
        }
    }
    labels
        .iter()
        .map(|label| {
            let mut next = vec![0.0; n];
            let mut reward = 0.0;
            for s in 0..n {
                if rho[s] == 0.0 {
                    continue;
                }
                match mdp.action_index(s, label) {
                    Some(a) => {
                        for o in mdp.actions(s)[a].reachable() {
                            next[o.to] += rho[s] * o.prob;
                            reward += rho[s] * o.prob * o.reward;
                        }
                    }
                    None => next[s] += rho[s],
                }
            }
            (beta * reward + mu).exp() * x(&next)
        })
        .sum()
}

/// Product-family belief function `prod_i exp(log_z[i])^rho_i`.
pub fn product_family(log_z: &[f64], rho: &[f64]) -> f64 {
    let exponent: f64 = rho
        .iter()
        .zip(log_z)
        .filter(|(r, _)| **r > 0.0)
        .map(|(r, l)| r * l)
        .sum();
    exponent.exp()
}

/// `log` of the variational right-hand side at state `s`, for checking the
/// fixed point independently of the solver loop.
pub fn variational_rhs(mdp: &ValidatedMdp, table: &LogZTable, s: usize) -> f64 {
    log_sum_exp(&variational_scores(mdp, table, s))
}
