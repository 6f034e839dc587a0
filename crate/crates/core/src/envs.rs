//! Built-in environments and the name-keyed environment catalog.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::mdp::{MdpSpec, TransitionSpec};
use crate::registry::{Registry, UnknownEntry};

fn spec(states: &[&str], terminals: &[(&str, f64)], transitions: Vec<TransitionSpec>) -> MdpSpec {
    MdpSpec {
        states: states.iter().map(|s| s.to_string()).collect(),
        terminals: terminals.iter().map(|(s, r)| (s.to_string(), *r)).collect(),
        transitions,
    }
}

/// The eight-state decision tree.
///
/// `S0` offers actions `1`, `2`, `3` leading to `S1`, `S2`, `S3`. `S1`
/// branches to the terminals `S4` and `S5`, `S2` leads to `S6` and `S3` to
/// `S7`. All transition rewards are 0; `S4`, `S5`, `S6` pay 1 and `S7` pays 0.
pub fn tree_env() -> MdpSpec {
    let t = |from, action, to| TransitionSpec::new(from, action, to, 1.0, 0.0);
    spec(
        &["S0", "S1", "S2", "S3", "S4", "S5", "S6", "S7"],
        &[("S4", 1.0), ("S5", 1.0), ("S6", 1.0), ("S7", 0.0)],
        vec![
            t("S0", "1", "S1"),
            t("S0", "2", "S2"),
            t("S0", "3", "S3"),
            t("S1", "1", "S4"),
            t("S1", "2", "S5"),
            t("S2", "1", "S6"),
            t("S3", "1", "S7"),
        ],
    )
}

/// Linear chain `c_n -> ... -> c_1 -> t` with one action per state.
pub fn chain_env(n: usize, step_reward: f64, terminal_reward: f64) -> MdpSpec {
    assert!(n >= 1, "chain needs at least one non-terminal state");
    let name = |i: usize| format!("c_{i}");
    let mut states: Vec<String> = (1..=n).rev().map(name).collect();
    states.push("t".to_string());
    let transitions = (1..=n)
        .rev()
        .map(|i| {
            let to = if i == 1 { "t".to_string() } else { name(i - 1) };
            TransitionSpec {
                from: name(i),
                action: "next".to_string(),
                to,
                prob: 1.0,
                reward: step_reward,
            }
        })
        .collect();
    MdpSpec {
        states,
        terminals: [("t".to_string(), terminal_reward)].into_iter().collect(),
        transitions,
    }
}

/// One state, one action, a fair coin between a paying and a non-paying
/// terminal.
pub fn coin_env() -> MdpSpec {
    spec(
        &["s0", "t1", "t2"],
        &[("t1", 1.0), ("t2", 0.0)],
        vec![
            TransitionSpec::new("s0", "a", "t1", 0.5, 0.0),
            TransitionSpec::new("s0", "a", "t2", 0.5, 0.0),
        ],
    )
}

/// Two-action fork: `safe` lands deterministically on `tm` (reward
/// `safe_reward`), `gamble` is the coin of [`coin_env`].
pub fn fork_env(safe_reward: f64) -> MdpSpec {
    spec(
        &["s0", "tm", "t1", "t2"],
        &[("tm", safe_reward), ("t1", 1.0), ("t2", 0.0)],
        vec![
            TransitionSpec::new("s0", "safe", "tm", 1.0, 0.0),
            TransitionSpec::new("s0", "gamble", "t1", 0.5, 0.0),
            TransitionSpec::new("s0", "gamble", "t2", 0.5, 0.0),
        ],
    )
}

/// Parameters for [`random_mdp`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomMdpParams {
    pub states: usize,
    pub terminals: usize,
    pub max_actions: usize,
    /// Maximum landing states per action; 1 gives a deterministic MDP.
    pub branching: usize,
    /// Allow transitions to any state, including earlier ones and self loops.
    pub cyclic: bool,
    /// Transition rewards are drawn from `[reward_min, 0]`.
    pub reward_min: f64,
    /// Terminal rewards are drawn from `[0, terminal_max]`.
    pub terminal_max: f64,
    pub seed: u64,
}

impl Default for RandomMdpParams {
    fn default() -> Self {
        Self {
            states: 6,
            terminals: 2,
            max_actions: 3,
            branching: 1,
            cyclic: false,
            reward_min: -1.0,
            terminal_max: 1.0,
            seed: 0,
        }
    }
}

/// Seeded random MDP with states `s0..s{n-1}`; the last `terminals` states
/// are terminal.
///
/// Without `cyclic`, every transition goes from a lower to a higher index, so
/// the MDP is acyclic and every trajectory has at most `states - 1` steps.
pub fn random_mdp(p: &RandomMdpParams) -> MdpSpec {
    assert!(p.states >= 2, "need at least two states");
    assert!(p.max_actions >= 1 && p.branching >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let n = p.states;
    let n_term = p.terminals.clamp(1, n - 1);
    let first_terminal = n - n_term;
    let name = |i: usize| format!("s{i}");

    let mut terminals = BTreeMap::new();
    for i in first_terminal..n {
        terminals.insert(name(i), rng.gen_range(0.0..=p.terminal_max));
    }

    let mut transitions = Vec::new();
    for i in 0..first_terminal {
        let lo = if p.cyclic { 0 } else { i + 1 };
        let n_actions = rng.gen_range(1..=p.max_actions);
        for a in 0..n_actions {
            let pool = n - lo;
            let b = rng.gen_range(1..=p.branching.min(pool));
            let targets = sample(&mut rng, pool, b);
            let weights: Vec<f64> = (0..b).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let mut assigned = 0.0;
            for (j, target) in targets.iter().enumerate() {
                let prob = if j + 1 == b {
                    1.0 - assigned
                } else {
                    weights[j] / total
                };
                assigned += prob;
                transitions.push(TransitionSpec {
                    from: name(i),
                    action: format!("a{a}"),
                    to: name(lo + target),
                    prob,
                    reward: rng.gen_range(p.reward_min..=0.0),
                });
            }
        }
    }
    MdpSpec {
        states: (0..n).map(name).collect(),
        terminals,
        transitions,
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error(transparent)]
    Unknown(#[from] UnknownEntry),
    #[error("environment `{env}`: {message}")]
    BadParam { env: String, message: String },
}

/// A request for a catalog environment: its name and parameter overrides.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnvCatalogEntry {
    pub name: String,
    pub params: BTreeMap<String, f64>,
}

impl EnvCatalogEntry {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }
}

/// Builds one family of environments from scalar parameters.
pub trait EnvBuilder: Send + Sync {
    /// Accepted parameters and their defaults.
    fn defaults(&self) -> Vec<(&'static str, f64)>;
    fn build(&self, params: &Params) -> Result<MdpSpec, String>;
}

/// Parameters resolved against a builder's defaults.
pub struct Params(BTreeMap<String, f64>);

impl Params {
    pub fn get(&self, key: &str) -> f64 {
        self.0[key]
    }

    fn count(&self, key: &str, min: usize) -> Result<usize, String> {
        let v = self.get(key);
        if v.fract() != 0.0 || v < min as f64 {
            return Err(format!("`{key}` must be an integer >= {min}, got {v}"));
        }
        Ok(v as usize)
    }
}

struct Tree;
struct Chain;
struct Coin;
struct Fork;
struct Random;

impl EnvBuilder for Tree {
    fn defaults(&self) -> Vec<(&'static str, f64)> {
        Vec::new()
    }
    fn build(&self, _: &Params) -> Result<MdpSpec, String> {
        Ok(tree_env())
    }
}

impl EnvBuilder for Chain {
    fn defaults(&self) -> Vec<(&'static str, f64)> {
        vec![("n", 3.0), ("step_reward", 0.0), ("terminal_reward", 1.0)]
    }
    fn build(&self, p: &Params) -> Result<MdpSpec, String> {
        Ok(chain_env(
            p.count("n", 1)?,
            p.get("step_reward"),
            p.get("terminal_reward"),
        ))
    }
}

impl EnvBuilder for Coin {
    fn defaults(&self) -> Vec<(&'static str, f64)> {
        Vec::new()
    }
    fn build(&self, _: &Params) -> Result<MdpSpec, String> {
        Ok(coin_env())
    }
}

impl EnvBuilder for Fork {
    fn defaults(&self) -> Vec<(&'static str, f64)> {
        vec![("safe_reward", 0.5)]
    }
    fn build(&self, p: &Params) -> Result<MdpSpec, String> {
        Ok(fork_env(p.get("safe_reward")))
    }
}

impl EnvBuilder for Random {
    fn defaults(&self) -> Vec<(&'static str, f64)> {
        let d = RandomMdpParams::default();
        vec![
            ("states", d.states as f64),
            ("terminals", d.terminals as f64),
            ("max_actions", d.max_actions as f64),
            ("branching", d.branching as f64),
            ("cyclic", 0.0),
            ("reward_min", d.reward_min),
            ("terminal_max", d.terminal_max),
            ("seed", 0.0),
        ]
    }
    fn build(&self, p: &Params) -> Result<MdpSpec, String> {
        let params = RandomMdpParams {
            states: p.count("states", 2)?,
            terminals: p.count("terminals", 1)?,
            max_actions: p.count("max_actions", 1)?,
            branching: p.count("branching", 1)?,
            cyclic: p.get("cyclic") != 0.0,
            reward_min: p.get("reward_min"),
            terminal_max: p.get("terminal_max"),
            seed: p.count("seed", 0)? as u64,
        };
        if params.reward_min > 0.0 || params.terminal_max < 0.0 {
            return Err("reward_min must be <= 0 and terminal_max >= 0".into());
        }
        Ok(random_mdp(&params))
    }
}

pub fn catalog() -> Registry<dyn EnvBuilder> {
    let mut reg: Registry<dyn EnvBuilder> = Registry::new("environment");
    reg.register("tree", Box::new(Tree))
        .register("chain", Box::new(Chain))
        .register("coin", Box::new(Coin))
        .register("fork", Box::new(Fork))
        .register("random", Box::new(Random));
    reg
}

/// Looks up `entry.name` in the catalog and builds it.
pub fn build_env(entry: &EnvCatalogEntry) -> Result<MdpSpec, EnvError> {
    let reg = catalog();
    let builder = reg.get(&entry.name)?;
    let mut params: BTreeMap<String, f64> = builder
        .defaults()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    for (k, v) in &entry.params {
        if !params.contains_key(k) {
            return Err(EnvError::BadParam {
                env: entry.name.clone(),
                message: format!("unknown parameter `{k}`"),
            });
        }
        params.insert(k.clone(), *v);
    }
    builder
        .build(&Params(params))
        .map_err(|message| EnvError::BadParam {
            env: entry.name.clone(),
            message,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::validate;

    #[test]
    fn tree_shape() {
        let mdp = validate(tree_env()).unwrap();
        let counts: Vec<usize> = (0..4).map(|s| mdp.actions(s).len()).collect();
        assert_eq!(counts, vec![3, 2, 1, 1]);
        let rewards: Vec<f64> = (4..8).map(|s| mdp.terminal_reward(s).unwrap()).collect();
        assert_eq!(rewards, vec![1.0, 1.0, 1.0, 0.0]);
        assert_eq!(mdp.num_states(), 8);
        assert_eq!(mdp.d(), 3);
        let labels: Vec<&str> = mdp.actions(0).iter().map(|a| a.label.as_str()).collect();
        assert_eq!(labels, vec!["1", "2", "3"]);
        let edges: Vec<(usize, usize)> = (0..8)
            .flat_map(|s| mdp.actions(s).iter().map(move |a| (s, a.outcomes[0].to)))
            .collect();
        assert_eq!(
            edges,
            vec![(0, 1), (0, 2), (0, 3), (1, 4), (1, 5), (2, 6), (3, 7)]
        );
    }

    #[test]
    fn chain_layout() {
        let spec = chain_env(2, -1.0, 0.0);
        assert_eq!(spec.states, vec!["c_2", "c_1", "t"]);
        assert_eq!(spec.transitions.len(), 2);
        assert!(spec.transitions.iter().all(|t| t.reward == -1.0));
    }

    #[test]
    fn builtins_need_no_shift() {
        for name in catalog().names() {
            let mdp = validate(build_env(&EnvCatalogEntry::new(name)).unwrap()).unwrap();
            assert_eq!(mdp.reward_shift(), 0.0, "{name}");
        }
        let chain = validate(chain_env(4, -0.5, 2.0)).unwrap();
        assert_eq!(chain.reward_shift(), 0.0);
    }

    #[test]
    fn random_is_seeded_and_valid() {
        for seed in 0..50 {
            for branching in [1, 3] {
                for cyclic in [false, true] {
                    let p = RandomMdpParams {
                        states: 8,
                        branching,
                        cyclic,
                        seed,
                        ..Default::default()
                    };
                    let spec = random_mdp(&p);
                    assert_eq!(spec, random_mdp(&p));
                    let mdp = validate(spec).unwrap();
                    assert!(mdp.d() <= 3);
                    if branching == 1 {
                        assert!(mdp.is_deterministic());
                    }
                }
            }
        }
    }

    #[test]
    fn catalog_params() {
        let spec = build_env(&EnvCatalogEntry::new("chain").with("n", 5.0)).unwrap();
        assert_eq!(spec.states.len(), 6);
        assert!(matches!(
            build_env(&EnvCatalogEntry::new("chain").with("bogus", 1.0)),
            Err(EnvError::BadParam { .. })
        ));
        assert!(matches!(
            build_env(&EnvCatalogEntry::new("chain").with("n", 0.5)),
            Err(EnvError::BadParam { .. })
        ));
        assert!(matches!(
            build_env(&EnvCatalogEntry::new("maze")),
            Err(EnvError::Unknown(_))
        ));
    }
}
