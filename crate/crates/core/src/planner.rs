//! Partition-function planning on deterministic MDPs.
//!
//! `Z(s, beta)` satisfies the linear equation
//! `Z(s) = sum_a exp(beta * R(s, a) + mu) * Z(s + a)` with the boundary
//! `Z(s_f) = exp(beta * R(s_f))` on terminals. Two routes solve it:
//! fixed-point iteration in log space ([`solve_power`]) and a dense direct
//! solve of `(I - C) Z = b` ([`solve_linear`]). Both are exposed through the
//! solver registry as `power` and `linear`.
//!
//! Values come from `V = d/dbeta log Z`, either by finite differences in
//! `beta` or by evaluating the induced policy ([`value_from_z`]).

use nalgebra::{DMatrix, DVector};

use crate::logspace::{log_sum_exp, softmax};
use crate::mdp::ValidatedMdp;
use crate::solver::{SolveError, SolveParams, ZSolver};
use crate::stochastic;
use crate::tables::{LogZTable, PolicyTable, VTable, ValueMethod, Variant};

/// Largest state count handled by dense direct solves.
pub const DENSE_LIMIT: usize = 2000;

/// Condition estimates above this are reported as singular.
const MAX_CONDITION: f64 = 1e14;

/// States with `Z > 0` under `variant`: the least set containing the
/// terminals and closed under "some action reaches it" (linear variants) or
/// "some action lands only in it" (variational).
pub fn alive_states(mdp: &ValidatedMdp, variant: Variant) -> Vec<bool> {
    let n = mdp.num_states();
    let mut alive: Vec<bool> = (0..n).map(|s| mdp.is_terminal(s)).collect();
    loop {
        let mut changed = false;
        for s in mdp.non_terminal_states() {
            if alive[s] {
                continue;
            }
            let ok = mdp.actions(s).iter().any(|a| match variant {
                Variant::Deterministic | Variant::Averaged => a.reachable().any(|o| alive[o.to]),
                Variant::Variational => a.reachable().all(|o| alive[o.to]),
            });
            if ok {
                alive[s] = true;
                changed = true;
            }
        }
        if !changed {
            return alive;
        }
    }
}

pub(crate) fn backup_state(
    mdp: &ValidatedMdp,
    variant: Variant,
    beta: f64,
    mu: f64,
    log_z: &[f64],
    s: usize,
    buf: &mut Vec<f64>,
) -> f64 {
    buf.clear();
    for a in mdp.actions(s) {
        match variant {
            Variant::Deterministic | Variant::Averaged => {
                for o in a.reachable() {
                    buf.push(o.prob.ln() + beta * o.reward + mu + log_z[o.to]);
                }
            }
            Variant::Variational => {
                let score = a
                    .reachable()
                    .map(|o| o.prob * (beta * o.reward + mu + log_z[o.to]))
                    .sum();
                buf.push(score);
            }
        }
    }
    log_sum_exp(buf)
}

/// One application of the Bellman operator in log space. Terminal entries
/// are reset to `beta * R(s_f)`; `-inf` entries are allowed.
pub fn bellman_backup(
    mdp: &ValidatedMdp,
    variant: Variant,
    beta: f64,
    mu: f64,
    log_z: &[f64],
) -> Vec<f64> {
    let mut buf = Vec::new();
    (0..mdp.num_states())
        .map(|s| match mdp.terminal_reward(s) {
            Some(r) => beta * r,
            None => backup_state(mdp, variant, beta, mu, log_z, s, &mut buf),
        })
        .collect()
}

/// Sup-norm Bellman residual of `table` over live non-terminal states.
pub fn bellman_residual(mdp: &ValidatedMdp, table: &LogZTable) -> f64 {
    let exact = table.exact_all();
    let next = bellman_backup(mdp, table.variant, table.beta, table.mu, &exact);
    mdp.non_terminal_states()
        .filter(|&s| !table.dead[s])
        .map(|s| (next[s] - exact[s]).abs())
        .fold(0.0, f64::max)
}

/// Log-space fixed-point iteration shared by every iterative solver.
///
/// Starts from the boundary on terminals and 0 elsewhere. Dead states are
/// pinned at `-inf` and excluded from the convergence test.
pub(crate) fn iterate(
    mdp: &ValidatedMdp,
    variant: Variant,
    params: &SolveParams,
) -> Result<LogZTable, SolveError> {
    let SolveParams {
        beta,
        mu,
        tol,
        max_iter,
    } = *params;
    let alive = alive_states(mdp, variant);
    let mut x: Vec<f64> = (0..mdp.num_states())
        .map(|s| match mdp.terminal_reward(s) {
            Some(r) => beta * r,
            None if alive[s] => 0.0,
            None => f64::NEG_INFINITY,
        })
        .collect();
    let active: Vec<usize> = mdp.non_terminal_states().filter(|&s| alive[s]).collect();
    let mut next = x.clone();
    let mut buf = Vec::new();
    let mut residual = 0.0;
    let mut iterations = 0;
    let dead: Vec<bool> = alive.iter().map(|a| !a).collect();

    while !active.is_empty() {
        if iterations == max_iter {
            let mut best = LogZTable::from_exact(x, dead, variant, beta, mu);
            best.residual = residual;
            best.iterations = iterations;
            best.converged = false;
            return Err(SolveError::MaxIterExceeded {
                iterations,
                residual,
                best: Box::new(best),
            });
        }
        residual = 0.0;
        for &s in &active {
            next[s] = backup_state(mdp, variant, beta, mu, &x, s, &mut buf);
            let change = (next[s] - x[s]).abs();
            // NaN must not look converged
            if change.is_nan() || change > residual {
                residual = if change.is_nan() {
                    f64::INFINITY
                } else {
                    change
                };
            }
        }
        std::mem::swap(&mut x, &mut next);
        iterations += 1;
        if residual <= tol {
            break;
        }
    }

    let mut table = LogZTable::from_exact(x, dead, variant, beta, mu);
    table.residual = residual;
    table.iterations = iterations;
    Ok(table)
}

/// Power iteration `X <- C(beta) X` carried out in log space.
pub fn solve_power(mdp: &ValidatedMdp, params: &SolveParams) -> Result<LogZTable, SolveError> {
    if !mdp.is_deterministic() {
        return Err(SolveError::NotDeterministic);
    }
    mdp.check_mu(params.mu)?;
    iterate(mdp, Variant::Deterministic, params)
}

/// Sparse row representation of `C(beta)`.
///
/// Entry `(s, s')` is `exp(beta * R(s -> s') + mu)` summed over the actions
/// of `s` that lead to `s'`; terminal rows are unit rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BellmanMatrix {
    rows: Vec<Vec<(usize, f64)>>,
}

impl BellmanMatrix {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|(c, _)| *c == j)
            .map_or(0.0, |(_, v)| *v)
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|(_, v)| v).sum()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, c)| c * x[j]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, c) in row {
                m[(i, j)] = c;
            }
        }
        m
    }
}

pub fn build_bellman_matrix(
    mdp: &ValidatedMdp,
    beta: f64,
    mu: f64,
) -> Result<BellmanMatrix, SolveError> {
    if !mdp.is_deterministic() {
        return Err(SolveError::NotDeterministic);
    }
    let rows = (0..mdp.num_states())
        .map(|s| {
            if mdp.is_terminal(s) {
                return vec![(s, 1.0)];
            }
            let mut row: Vec<(usize, f64)> = Vec::new();
            for o in mdp.actions(s).iter().flat_map(|a| a.reachable()) {
                let c = (beta * o.reward + mu).exp();
                match row.iter_mut().find(|(j, _)| *j == o.to) {
                    Some(entry) => entry.1 += c,
                    None => row.push((o.to, c)),
                }
            }
            row
        })
        .collect();
    Ok(BellmanMatrix { rows })
}

/// Direct solve of `(I - C(beta)) Z = 0` with terminal rows replaced by the
/// boundary values.
///
/// The right-hand side is scaled by `exp(-beta * K)` and the scale is added
/// back in log space, so large `beta` does not overflow.
pub fn solve_linear(mdp: &ValidatedMdp, beta: f64, mu: f64) -> Result<LogZTable, SolveError> {
    if !mdp.is_deterministic() {
        return Err(SolveError::NotDeterministic);
    }
    mdp.check_mu(mu)?;
    let n = mdp.num_states();
    if n > DENSE_LIMIT {
        return Err(SolveError::TooLargeForDense {
            states: n,
            limit: DENSE_LIMIT,
        });
    }
    let c = build_bellman_matrix(mdp, beta, mu)?;
    let scale = beta * mdp.k();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        match mdp.terminal_reward(s) {
            Some(r) => b[s] = (beta * r - scale).exp(),
            None => {
                for &(j, v) in c.row(s) {
                    a[(s, j)] -= v;
                }
            }
        }
    }
    let lu = a.lu();
    let diag = lu.u().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), d| {
        (lo.min(d.abs()), hi.max(d.abs()))
    });
    let condition = hi / lo;
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(SolveError::SingularSystem { condition });
    }
    let z = lu
        .solve(&b)
        .ok_or(SolveError::SingularSystem { condition })?;

    let alive = alive_states(mdp, Variant::Deterministic);
    let mut exact = vec![f64::NEG_INFINITY; n];
    for s in 0..n {
        if let Some(r) = mdp.terminal_reward(s) {
            exact[s] = beta * r;
        } else if alive[s] {
            if z[s].is_nan() || z[s] <= 0.0 {
                return Err(SolveError::SingularSystem { condition });
            }
            exact[s] = z[s].ln() + scale;
        }
    }
    let dead = alive.iter().map(|a| !a).collect();
    let mut table = LogZTable::from_exact(exact, dead, Variant::Deterministic, beta, mu);
    table.residual = bellman_residual(mdp, &table);
    table.iterations = 1;
    Ok(table)
}

/// `pi(a|s)` proportional to `exp(beta * R(s, a) + mu) * Z(s + a)`,
/// normalized in log space.
///
/// On stochastic MDPs each action's score sums over landing states with
/// their probabilities, which is the action marginal of the averaged
/// equation's landing-state weights. States with no live action get a
/// uniform row.
pub fn policy_from_z(mdp: &ValidatedMdp, table: &LogZTable) -> PolicyTable {
    let (beta, mu) = (table.beta, table.mu);
    let mut terms = Vec::new();
    let probs = (0..mdp.num_states())
        .map(|s| {
            let scores: Vec<f64> = mdp
                .actions(s)
                .iter()
                .map(|a| {
                    terms.clear();
                    terms.extend(
                        a.reachable()
                            .map(|o| o.prob.ln() + beta * o.reward + mu + table.exact(o.to)),
                    );
                    log_sum_exp(&terms)
                })
                .collect();
            softmax(&scores)
        })
        .collect();
    PolicyTable { probs }
}

/// Per-outcome transition weights `w[s][a][o]` of the policy a table
/// induces: the landing-state weights for linear variants, and
/// `pi(a|s) * P(o|s,a)` for the variational one.
pub fn transition_weights(
    mdp: &ValidatedMdp,
    table: &LogZTable,
) -> Result<Vec<Vec<Vec<f64>>>, SolveError> {
    let (beta, mu) = (table.beta, table.mu);
    let weights = match table.variant {
        Variant::Deterministic | Variant::Averaged => (0..mdp.num_states())
            .map(|s| {
                let terms: Vec<Vec<f64>> = mdp
                    .actions(s)
                    .iter()
                    .map(|a| {
                        a.outcomes
                            .iter()
                            .map(|o| {
                                if o.prob > 0.0 {
                                    o.prob.ln() + beta * o.reward + mu + table.exact(o.to)
                                } else {
                                    f64::NEG_INFINITY
                                }
                            })
                            .collect()
                    })
                    .collect();
                let flat: Vec<f64> = terms.iter().flatten().copied().collect();
                let total = log_sum_exp(&flat);
                if total == f64::NEG_INFINITY {
                    let k = mdp.actions(s).len() as f64;
                    return mdp
                        .actions(s)
                        .iter()
                        .map(|a| a.outcomes.iter().map(|o| o.prob / k).collect())
                        .collect();
                }
                terms
                    .iter()
                    .map(|row| row.iter().map(|t| (t - total).exp()).collect())
                    .collect()
            })
            .collect(),
        Variant::Variational => {
            let pi = stochastic::policy_variational(mdp, table)?;
            (0..mdp.num_states())
                .map(|s| {
                    mdp.actions(s)
                        .iter()
                        .zip(pi.row(s))
                        .map(|(a, &p)| a.outcomes.iter().map(|o| p * o.prob).collect())
                        .collect()
                })
                .collect()
        }
    };
    Ok(weights)
}

/// Evaluates the policy induced by `table`:
/// `V(s) = sum w(s,a,s') [R(s,a,s') + V(s')]`, `V(s_f) = R(s_f)`.
pub fn value_analytic(mdp: &ValidatedMdp, table: &LogZTable) -> Result<VTable, SolveError> {
    let n = mdp.num_states();
    let w = transition_weights(mdp, table)?;
    let mut v: Vec<f64> = (0..n)
        .map(|s| mdp.terminal_reward(s).unwrap_or(f64::NAN))
        .collect();
    let unknowns: Vec<usize> = mdp
        .non_terminal_states()
        .filter(|&s| !table.dead[s])
        .collect();
    let mut slot = vec![usize::MAX; n];
    for (i, &s) in unknowns.iter().enumerate() {
        slot[s] = i;
    }
    let m = unknowns.len();

    // rhs: expected immediate reward plus terminal contributions
    let mut rhs = vec![0.0; m];
    let mut coupling: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for (i, &s) in unknowns.iter().enumerate() {
        for (a, ws) in mdp.actions(s).iter().zip(&w[s]) {
            for (o, &wt) in a.outcomes.iter().zip(ws) {
                if wt == 0.0 {
                    continue;
                }
                rhs[i] += wt * o.reward;
                if let Some(r) = mdp.terminal_reward(o.to) {
                    rhs[i] += wt * r;
                } else {
                    coupling[i].push((slot[o.to], wt));
                }
            }
        }
    }

    let solution: Vec<f64> = if m <= DENSE_LIMIT {
        let mut a = DMatrix::<f64>::identity(m, m);
        for (i, row) in coupling.iter().enumerate() {
            for &(j, wt) in row {
                a[(i, j)] -= wt;
            }
        }
        let b = DVector::from_vec(rhs);
        let lu = a.lu();
        let x = lu.solve(&b).ok_or(SolveError::SingularSystem {
            condition: f64::INFINITY,
        })?;
        x.iter().copied().collect()
    } else {
        gauss_seidel(&coupling, &rhs, 1e-13, 1_000_000)?
    };
    for (i, &s) in unknowns.iter().enumerate() {
        v[s] = solution[i];
    }
    Ok(VTable {
        v,
        method: ValueMethod::AnalyticRecursion,
    })
}

fn gauss_seidel(
    coupling: &[Vec<(usize, f64)>],
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, SolveError> {
    let mut x = vec![0.0; rhs.len()];
    for _ in 0..max_iter {
        let mut change: f64 = 0.0;
        for i in 0..rhs.len() {
            let mut diag = 1.0;
            let mut acc = rhs[i];
            for &(j, w) in &coupling[i] {
                if j == i {
                    diag -= w;
                } else {
                    acc += w * x[j];
                }
            }
            let new = acc / diag;
            change = change.max((new - x[i]).abs());
            x[i] = new;
        }
        if change <= tol {
            return Ok(x);
        }
    }
    Err(SolveError::SingularSystem {
        condition: f64::INFINITY,
    })
}

/// `d/dbeta log Z` by a second-order finite difference. Central when
/// `beta >= h`; otherwise the one-sided three-point stencil, so `beta` never
/// goes negative.
pub fn value_fd(
    mdp: &ValidatedMdp,
    solver: &dyn ZSolver,
    params: &SolveParams,
    h: f64,
) -> Result<VTable, SolveError> {
    let beta = params.beta;
    let at = |b: f64| solver.solve(mdp, &params.with_beta(b));
    let (stencil, tables): (Vec<f64>, Vec<LogZTable>) = if beta >= h {
        (vec![-0.5, 0.5], vec![at(beta - h)?, at(beta + h)?])
    } else {
        (
            vec![-1.5, 2.0, -0.5],
            vec![at(beta)?, at(beta + h)?, at(beta + 2.0 * h)?],
        )
    };
    let v = (0..mdp.num_states())
        .map(|s| {
            if let Some(r) = mdp.terminal_reward(s) {
                return r;
            }
            if tables.iter().any(|t| t.dead[s]) {
                return f64::NAN;
            }
            stencil
                .iter()
                .zip(&tables)
                .map(|(c, t)| c * t.log_z[s])
                .sum::<f64>()
                / h
        })
        .collect();
    Ok(VTable {
        v,
        method: ValueMethod::FiniteDifference,
    })
}

/// Value function from the partition function, by either method.
pub fn value_from_z(
    mdp: &ValidatedMdp,
    solver: &dyn ZSolver,
    params: &SolveParams,
    fd_step: f64,
    method: ValueMethod,
) -> Result<VTable, SolveError> {
    match method {
        ValueMethod::FiniteDifference => value_fd(mdp, solver, params, fd_step),
        ValueMethod::AnalyticRecursion => value_analytic(mdp, &solver.solve(mdp, params)?),
        ValueMethod::ValueIteration => Err(SolveError::UnsupportedMethod(method)),
    }
}
