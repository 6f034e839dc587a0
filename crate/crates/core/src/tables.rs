//! Result tables shared by the planners, learners and baselines.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::logspace::LOG_Z_FLOOR;
use crate::mdp::ValidatedMdp;

/// Which Bellman equation a partition-function table solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Linear equation of a deterministic MDP.
    Deterministic,
    /// Transition-probability-weighted linear equation.
    Averaged,
    /// Geometric mean over landing states.
    Variational,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Deterministic => "deterministic",
            Variant::Averaged => "averaged",
            Variant::Variational => "variational",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-state `log Z(s, beta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogZTable {
    /// Log partition function; states flagged in `dead` sit at
    /// [`LOG_Z_FLOOR`].
    pub log_z: Vec<f64>,
    /// States with `Z = 0`: no terminal can be reached from them.
    pub dead: Vec<bool>,
    pub variant: Variant,
    pub beta: f64,
    pub mu: f64,
    /// Sup-norm Bellman residual of `log_z`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Tables produced by the stochastic solvers carry `Averaged` or
/// `Variational` in [`LogZTable::variant`].
pub type StochasticZTable = LogZTable;

impl LogZTable {
    pub fn z(&self, s: usize) -> f64 {
        self.exact(s).exp()
    }

    /// `log Z(s)` with dead states at `-inf` rather than the floor.
    pub fn exact(&self, s: usize) -> f64 {
        if self.dead[s] {
            f64::NEG_INFINITY
        } else {
            self.log_z[s]
        }
    }

    /// `log Z` for every state, dead states at `-inf`.
    pub fn exact_all(&self) -> Vec<f64> {
        (0..self.log_z.len()).map(|s| self.exact(s)).collect()
    }

    pub(crate) fn from_exact(
        exact: Vec<f64>,
        dead: Vec<bool>,
        variant: Variant,
        beta: f64,
        mu: f64,
    ) -> Self {
        let log_z = exact
            .iter()
            .zip(&dead)
            .map(|(&x, &d)| if d { LOG_Z_FLOOR } else { x })
            .collect();
        Self {
            log_z,
            dead,
            variant,
            beta,
            mu,
            residual: 0.0,
            iterations: 0,
            converged: true,
        }
    }
}

/// Stochastic policy, `probs[s][a]` aligned with `ValidatedMdp::actions(s)`.
/// Terminal states have empty rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub probs: Vec<Vec<f64>>,
}

impl PolicyTable {
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s][a]
    }

    /// Probability of the action called `label` in state `state`.
    pub fn prob_by_name(&self, mdp: &ValidatedMdp, state: &str, label: &str) -> Option<f64> {
        let s = mdp.state_index(state)?;
        let a = mdp.action_index(s, label)?;
        Some(self.probs[s][a])
    }

    /// Largest `|sum(row) - 1|` over non-empty rows.
    pub fn max_row_error(&self) -> f64 {
        self.probs
            .iter()
            .filter(|r| !r.is_empty())
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Total-variation distance between the rows of `s`.
    pub fn total_variation(&self, other: &PolicyTable, s: usize) -> f64 {
        0.5 * self.probs[s]
            .iter()
            .zip(&other.probs[s])
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueMethod {
    FiniteDifference,
    AnalyticRecursion,
    ValueIteration,
}

/// Per-state values in shifted reward units. Dead states hold `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct VTable {
    pub v: Vec<f64>,
    pub method: ValueMethod,
}

impl VTable {
    /// Sup-norm distance over states where both tables are finite.
    pub fn sup_distance(&self, other: &VTable) -> f64 {
        self.v
            .iter()
            .zip(&other.v)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
