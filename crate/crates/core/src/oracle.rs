//! Brute-force partition functions by explicit trajectory enumeration.
//!
//! Depth-first search over every trajectory of at most `len_cap` steps. The
//! part of the sum beyond the cap is bounded by
//! `exp(beta K) * rho^(cap+1) / (1 - rho)` with `rho = exp(mu + log d)`,
//! which needs `mu < -log d` and `beta >= 0`. When the search never hits the
//! cap the sum is exact and [`EnumResult::exhausted`] is set.
//!
//! Rewards are the validated (shifted) ones, so results are directly
//! comparable with the solvers.

use thiserror::Error;

use crate::mdp::{MuTooLarge, ValidatedMdp};

/// Default limit on expanded prefixes.
pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    MuTooLarge(#[from] MuTooLarge),
    #[error("enumeration exceeded the budget of {budget} expanded prefixes")]
    CapExplosion { budget: u64 },
    #[error("cannot certify the optimum: a path from {state} revisits a state")]
    Cyclic { state: String },
    #[error("the MDP is stochastic; use the likelihood oracle")]
    NotDeterministic,
    #[error("beta must be non-negative for the tail bound, got {0}")]
    NegativeBeta(f64),
    #[error("len_cap must be at least 1")]
    ZeroCap,
}

/// One step of a trajectory: `(state, action index, reward)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    /// Probability of the realized landing state.
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub terminal: usize,
    pub terminal_reward: f64,
}

impl Trajectory {
    /// `-(sum of rewards) - R(terminal)`.
    pub fn energy(&self) -> f64 {
        -self.steps.iter().map(|s| s.reward).sum::<f64>() - self.terminal_reward
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn log_likelihood(&self) -> f64 {
        self.steps.iter().map(|s| s.prob.ln()).sum()
    }

    /// `exp(-beta E + mu |w| + L)`, or without `L` when `likelihood` is false.
    pub fn weight(&self, beta: f64, mu: f64, likelihood: bool) -> f64 {
        let l = if likelihood {
            self.log_likelihood()
        } else {
            0.0
        };
        (-beta * self.energy() + mu * self.len() as f64 + l).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumResult {
    pub partial_sum: f64,
    pub tail_bound: f64,
    pub len_cap: usize,
    /// True when every trajectory was reached within the cap.
    pub exhausted: bool,
    /// Trajectories included in `partial_sum`.
    pub trajectories: u64,
    /// Prefixes expanded during the search.
    pub expanded: u64,
}

/// `exp(beta K) rho^(cap+1) / (1 - rho)` with `rho = exp(mu + log d)`.
pub fn tail_bound(mdp: &ValidatedMdp, beta: f64, mu: f64, len_cap: usize) -> f64 {
    let rho = (mu + (mdp.d() as f64).ln()).exp();
    (beta * mdp.k()).exp() * rho.powi(len_cap as i32 + 1) / (1.0 - rho)
}

/// `Z(s)` summed over deterministic trajectories of length `<= len_cap`.
pub fn enumerate_z(
    mdp: &ValidatedMdp,
    s: usize,
    beta: f64,
    mu: f64,
    len_cap: usize,
) -> Result<EnumResult, OracleError> {
    if !mdp.is_deterministic() {
        return Err(OracleError::NotDeterministic);
    }
    enumerate_with(mdp, s, beta, mu, len_cap, false, DEFAULT_NODE_BUDGET)
}

/// Likelihood-weighted sum `sum exp(-beta E + mu |w| + L(w))`.
pub fn enumerate_z_likelihood(
    mdp: &ValidatedMdp,
    s: usize,
    beta: f64,
    mu: f64,
    len_cap: usize,
) -> Result<EnumResult, OracleError> {
    enumerate_with(mdp, s, beta, mu, len_cap, true, DEFAULT_NODE_BUDGET)
}

struct Search<'a> {
    mdp: &'a ValidatedMdp,
    beta: f64,
    mu: f64,
    likelihood: bool,
    cap: usize,
    budget: u64,
    sum: f64,
    trajectories: u64,
    expanded: u64,
    truncated: bool,
}

impl Search<'_> {
    /// `log_w` is the accumulated exponent of the prefix ending at `s`.
    fn visit(&mut self, s: usize, depth: usize, log_w: f64) -> Result<(), OracleError> {
        if let Some(r) = self.mdp.terminal_reward(s) {
            self.sum += (log_w + self.beta * r).exp();
            self.trajectories += 1;
            return Ok(());
        }
        if depth == self.cap {
            self.truncated = true;
            return Ok(());
        }
        self.expanded += 1;
        if self.expanded > self.budget {
            return Err(OracleError::CapExplosion {
                budget: self.budget,
            });
        }
        for action in self.mdp.actions(s) {
            for o in action.reachable() {
                let l = if self.likelihood { o.prob.ln() } else { 0.0 };
                let step = self.beta * o.reward + self.mu + l;
                self.visit(o.to, depth + 1, log_w + step)?;
            }
        }
        Ok(())
    }
}

/// Enumeration with an explicit node budget. With `likelihood` false the
/// probabilities are ignored, which is only meaningful on deterministic MDPs.
pub fn enumerate_with(
    mdp: &ValidatedMdp,
    s: usize,
    beta: f64,
    mu: f64,
    len_cap: usize,
    likelihood: bool,
    budget: u64,
) -> Result<EnumResult, OracleError> {
    mdp.check_mu(mu)?;
    if beta < 0.0 {
        return Err(OracleError::NegativeBeta(beta));
    }
    if len_cap == 0 {
        return Err(OracleError::ZeroCap);
    }
    let mut search = Search {
        mdp,
        beta,
        mu,
        likelihood,
        cap: len_cap,
        budget,
        sum: 0.0,
        trajectories: 0,
        expanded: 0,
        truncated: false,
    };
    search.visit(s, 0, 0.0)?;
    Ok(EnumResult {
        partial_sum: search.sum,
        tail_bound: tail_bound(mdp, beta, mu, len_cap),
        len_cap,
        exhausted: !search.truncated,
        trajectories: search.trajectories,
        expanded: search.expanded,
    })
}

/// All trajectories from `s` of length `<= len_cap`, in search order.
pub fn trajectories(mdp: &ValidatedMdp, s: usize, len_cap: usize) -> Vec<Trajectory> {
    fn go(
        mdp: &ValidatedMdp,
        s: usize,
        cap: usize,
        prefix: &mut Vec<Step>,
        out: &mut Vec<Trajectory>,
    ) {
        if let Some(r) = mdp.terminal_reward(s) {
            out.push(Trajectory {
                steps: prefix.clone(),
                terminal: s,
                terminal_reward: r,
            });
            return;
        }
        if prefix.len() == cap {
            return;
        }
        for (a, action) in mdp.actions(s).iter().enumerate() {
            for o in action.reachable() {
                prefix.push(Step {
                    state: s,
                    action: a,
                    reward: o.reward,
                    prob: o.prob,
                });
                go(mdp, o.to, cap, prefix, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(mdp, s, len_cap, &mut Vec::new(), &mut out);
    out
}

/// Best total reward from `s` and the weighted count
/// `N_max = sum exp(mu |w|)` over trajectories achieving it.
///
/// Returns are on the validated reward scale. Ties are detected within
/// `1e-12 * max(1, |best|)`.
pub fn optimal_path_stats(
    mdp: &ValidatedMdp,
    s: usize,
    mu: f64,
) -> Result<(f64, f64), OracleError> {
    if !mdp.is_deterministic() {
        return Err(OracleError::NotDeterministic);
    }
    // any prefix of |S| steps revisits a state
    let cap = mdp.num_states();
    let mut found: Vec<(f64, usize)> = Vec::new();
    let mut stack = vec![(s, 0usize, 0.0f64)];
    let mut expanded = 0u64;
    while let Some((u, depth, ret)) = stack.pop() {
        if let Some(r) = mdp.terminal_reward(u) {
            found.push((ret + r, depth));
            continue;
        }
        if depth == cap {
            return Err(OracleError::Cyclic {
                state: mdp.state_name(s).to_string(),
            });
        }
        expanded += 1;
        if expanded > DEFAULT_NODE_BUDGET {
            return Err(OracleError::CapExplosion {
                budget: DEFAULT_NODE_BUDGET,
            });
        }
        for action in mdp.actions(u).iter().rev() {
            for o in action.reachable() {
                stack.push((o.to, depth + 1, ret + o.reward));
            }
        }
    }
    let best = found.iter().map(|f| f.0).fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * best.abs().max(1.0);
    let n_max = found
        .iter()
        .filter(|f| best - f.0 <= tol)
        .map(|f| (mu * f.1 as f64).exp())
        .sum();
    Ok((best, n_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{chain_env, coin_env, tree_env};
    use crate::mdp::validate;

    const MU: f64 = -1.2;

    #[test]
    fn tree_closed_forms() {
        let mdp = validate(tree_env()).unwrap();
        let r = enumerate_z(&mdp, 0, 1.0, MU, 2).unwrap();
        let expect = 3.0 * (-1.4f64).exp() + (-2.4f64).exp();
        assert!((r.partial_sum - expect).abs() < 1e-12);
        assert!((r.partial_sum - 0.830509).abs() < 1e-6);
        assert!(r.exhausted);
        assert_eq!(r.trajectories, 4);
        let rho = (MU + 3f64.ln()).exp();
        assert!((r.tail_bound - 1f64.exp() * rho.powi(3) / (1.0 - rho)).abs() < 1e-12);

        let s3 = enumerate_z(&mdp, 3, 1.0, MU, 2).unwrap();
        assert!((s3.partial_sum - MU.exp()).abs() < 1e-15);

        let cut = enumerate_z(&mdp, 0, 1.0, MU, 1).unwrap();
        assert_eq!(cut.partial_sum, 0.0);
        assert!(!cut.exhausted);
    }

    #[test]
    fn trivial_chain_and_terminal_start() {
        let mdp = validate(chain_env(1, 0.0, 0.0)).unwrap();
        let r = enumerate_z(&mdp, 0, 3.0, -0.5, 1).unwrap();
        assert!((r.partial_sum - (-0.5f64).exp()).abs() < 1e-15);
        let mdp = validate(tree_env()).unwrap();
        let t = enumerate_z(&mdp, 4, 2.0, MU, 1).unwrap();
        assert!((t.partial_sum - 2f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn likelihood_oracle() {
        let mdp = validate(coin_env()).unwrap();
        let r = enumerate_z_likelihood(&mdp, 0, 1.0, MU, 1).unwrap();
        let expect = 0.5 * (1.0 + MU).exp() + 0.5 * MU.exp();
        assert!((r.partial_sum - expect).abs() < 1e-15);
        assert!((r.partial_sum - 0.559962).abs() < 1e-6);
        let flat = enumerate_z_likelihood(&mdp, 0, 0.0, MU, 1).unwrap();
        assert!((flat.partial_sum - MU.exp()).abs() < 1e-15);
        assert_eq!(
            enumerate_z(&mdp, 0, 1.0, MU, 1),
            Err(OracleError::NotDeterministic)
        );

        let tree = validate(tree_env()).unwrap();
        for s in 0..8 {
            let a = enumerate_z(&tree, s, 1.3, MU, 3).unwrap();
            let b = enumerate_z_likelihood(&tree, s, 1.3, MU, 3).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn preconditions() {
        let mdp = validate(tree_env()).unwrap();
        assert!(matches!(
            enumerate_z(&mdp, 0, 1.0, -1.0, 2),
            Err(OracleError::MuTooLarge(_))
        ));
        assert_eq!(enumerate_z(&mdp, 0, 1.0, MU, 0), Err(OracleError::ZeroCap));
        assert_eq!(
            enumerate_z(&mdp, 0, -1.0, MU, 2),
            Err(OracleError::NegativeBeta(-1.0))
        );
        assert_eq!(
            enumerate_with(&mdp, 0, 1.0, MU, 2, false, 2),
            Err(OracleError::CapExplosion { budget: 2 })
        );
    }

    #[test]
    fn trajectory_accessors() {
        let mdp = validate(coin_env()).unwrap();
        let ts = trajectories(&mdp, 0, 1);
        assert_eq!(ts.len(), 2);
        let t = &ts[0];
        assert_eq!((t.len(), t.terminal), (1, 1));
        assert_eq!(t.energy(), -1.0);
        assert!((t.log_likelihood() - 0.5f64.ln()).abs() < 1e-15);
        let total: f64 = ts.iter().map(|t| t.weight(1.0, MU, true)).sum();
        let r = enumerate_z_likelihood(&mdp, 0, 1.0, MU, 1).unwrap();
        assert!((total - r.partial_sum).abs() < 1e-15);
    }

    #[test]
    fn optimal_paths() {
        let mdp = validate(tree_env()).unwrap();
        let (best, n) = optimal_path_stats(&mdp, 0, MU).unwrap();
        assert_eq!(best, 1.0);
        assert!((n - 3.0 * (-2.4f64).exp()).abs() < 1e-15);
        assert!((n - 0.272154).abs() < 1e-6);
        let (best, n) = optimal_path_stats(&mdp, 3, MU).unwrap();
        assert_eq!((best, n), (0.0, MU.exp()));

        let chain = validate(chain_env(2, -1.0, 0.0)).unwrap();
        let (best, n) = optimal_path_stats(&chain, 0, -0.5).unwrap();
        assert_eq!(best, -2.0);
        assert!((n - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn cycles_are_reported() {
        use crate::mdp::{MdpSpec, TransitionSpec};
        let spec = MdpSpec {
            states: vec!["a".into(), "b".into(), "t".into()],
            terminals: [("t".to_string(), 0.0)].into_iter().collect(),
            transitions: vec![
                TransitionSpec::new("a", "go", "b", 1.0, 0.0),
                TransitionSpec::new("b", "back", "a", 1.0, 0.0),
                TransitionSpec::new("b", "end", "t", 1.0, 0.0),
            ],
        };
        let mdp = validate(spec).unwrap();
        assert!(matches!(
            optimal_path_stats(&mdp, 0, -1.0),
            Err(OracleError::Cyclic { .. })
        ));
        // the sum itself is fine: a -> b -> t, a -> b -> a -> b -> t, ...
        let r = enumerate_z(&mdp, 0, 1.0, -1.0, 40).unwrap();
        let q = (-2.0f64).exp();
        assert!((r.partial_sum - q / (1.0 - q)).abs() <= r.tail_bound + 1e-15);
        assert!(!r.exhausted);
    }
}
