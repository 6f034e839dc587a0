//! The [`ZSolver`] strategy trait and its registry.
//!
//! | name          | equation                                  | MDPs          |
//! |---------------|-------------------------------------------|---------------|
//! | `power`       | linear, log-space fixed-point iteration   | deterministic |
//! | `linear`      | linear, dense direct solve                | deterministic |
//! | `averaged`    | probability-weighted linear equation      | any           |
//! | `variational` | geometric mean over landing states        | any           |

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{MuTooLarge, ValidatedMdp};
use crate::registry::Registry;
use crate::tables::{LogZTable, PolicyTable, ValueMethod, Variant};
use crate::{planner, stochastic};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveParams {
    pub beta: f64,
    pub mu: f64,
    /// Sup-norm tolerance on successive `log Z` iterates.
    pub tol: f64,
    pub max_iter: usize,
}

impl SolveParams {
    pub fn new(beta: f64, mu: f64) -> Self {
        Self {
            beta,
            mu,
            tol: 1e-10,
            max_iter: 100_000,
        }
    }

    pub fn with_beta(self, beta: f64) -> Self {
        Self { beta, ..self }
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    MuTooLarge(#[from] MuTooLarge),
    #[error("the MDP is stochastic; this operation needs a deterministic MDP")]
    NotDeterministic,
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIterExceeded {
        iterations: usize,
        residual: f64,
        best: Box<LogZTable>,
    },
    #[error("singular linear system (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },
    #[error("{states} states exceed the dense-solve limit of {limit}")]
    TooLargeForDense { states: usize, limit: usize },
    #[error("{0:?} values are not derived from Z; see the baselines")]
    UnsupportedMethod(ValueMethod),
    #[error("expected a {expected} table, got {found}")]
    WrongVariant { expected: Variant, found: Variant },
}

impl SolveError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SolveError::MaxIterExceeded { .. } | SolveError::SingularSystem { .. }
        )
    }
}

/// A method for computing `log Z(s, beta)` on a validated MDP.
pub trait ZSolver: Send + Sync {
    fn name(&self) -> &'static str;

    fn variant(&self) -> Variant;

    fn solve(&self, mdp: &ValidatedMdp, params: &SolveParams) -> Result<LogZTable, SolveError>;

    /// Policy induced by a table this solver produced.
    fn policy(&self, mdp: &ValidatedMdp, table: &LogZTable) -> Result<PolicyTable, SolveError> {
        policy_for(mdp, table)
    }
}

pub struct PowerSolver;
pub struct LinearSolver;
pub struct AveragedSolver;
pub struct VariationalSolver;

impl ZSolver for PowerSolver {
    fn name(&self) -> &'static str {
        "power"
    }
    fn variant(&self) -> Variant {
        Variant::Deterministic
    }
    fn solve(&self, mdp: &ValidatedMdp, params: &SolveParams) -> Result<LogZTable, SolveError> {
        planner::solve_power(mdp, params)
    }
}

impl ZSolver for LinearSolver {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn variant(&self) -> Variant {
        Variant::Deterministic
    }
    fn solve(&self, mdp: &ValidatedMdp, params: &SolveParams) -> Result<LogZTable, SolveError> {
        planner::solve_linear(mdp, params.beta, params.mu)
    }
}

impl ZSolver for AveragedSolver {
    fn name(&self) -> &'static str {
        "averaged"
    }
    fn variant(&self) -> Variant {
        Variant::Averaged
    }
    fn solve(&self, mdp: &ValidatedMdp, params: &SolveParams) -> Result<LogZTable, SolveError> {
        stochastic::solve_averaged(mdp, params)
    }
}

impl ZSolver for VariationalSolver {
    fn name(&self) -> &'static str {
        "variational"
    }
    fn variant(&self) -> Variant {
        Variant::Variational
    }
    fn solve(&self, mdp: &ValidatedMdp, params: &SolveParams) -> Result<LogZTable, SolveError> {
        stochastic::solve_variational(mdp, params)
    }
}

pub fn solver_registry() -> Registry<dyn ZSolver> {
    let mut reg: Registry<dyn ZSolver> = Registry::new("solver");
    reg.register("power", Box::new(PowerSolver))
        .register("linear", Box::new(LinearSolver))
        .register("averaged", Box::new(AveragedSolver))
        .register("variational", Box::new(VariationalSolver));
    reg
}

/// Dispatches to the policy matching `table.variant`. For averaged tables
/// this is the action marginal of the landing-state weights.
pub fn policy_for(mdp: &ValidatedMdp, table: &LogZTable) -> Result<PolicyTable, SolveError> {
    match table.variant {
        Variant::Deterministic | Variant::Averaged => Ok(planner::policy_from_z(mdp, table)),
        Variant::Variational => stochastic::policy_variational(mdp, table),
    }
}
