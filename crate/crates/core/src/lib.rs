//! Planning and learning with trajectory partition functions.
//!
//! `Z(s, beta)` sums `exp(beta * return + mu * length)` over every
//! trajectory from `s` to a terminal state. It satisfies a linear Bellman
//! equation, its `beta`-derivative of `log Z` is a value function, and the
//! ratio of successor partition functions is a policy that weighs equally
//! good actions by how many good trajectories follow them.
//!
//! Solvers, exploration schemes, baselines and environments are each kept
//! in a [`registry::Registry`] and looked up by name.

pub mod baselines;
pub mod envs;
pub mod explore;
pub mod io;
pub mod learner;
pub mod logspace;
pub mod mdp;
pub mod oracle;
pub mod planner;
pub mod registry;
pub mod solver;
pub mod stochastic;
pub mod tables;

pub use mdp::{default_mu, validate, Hyperparams, MdpError, MdpSpec, TransitionSpec, ValidatedMdp};
pub use solver::{solver_registry, SolveError, SolveParams, ZSolver};
pub use tables::{LogZTable, PolicyTable, VTable, ValueMethod, Variant};
