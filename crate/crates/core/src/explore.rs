//! Action-selection strategies for the learners.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::logspace::{argmax, softmax};
use crate::registry::Registry;

/// The generator every simulator and learner draws from.
pub type SimRng = ChaCha8Rng;

/// Picks an action index from per-action scores.
///
/// `progress` is the fraction of training completed, in `[0, 1]`.
pub trait Exploration: Send + Sync {
    fn name(&self) -> &'static str;

    /// Current exploration rate, for reporting. `NaN` when not applicable.
    fn epsilon(&self, progress: f64) -> f64;

    fn select(&self, scores: &[f64], progress: f64, rng: &mut SimRng) -> usize;
}

/// Samples `a` with probability `softmax(scores)[a]`. With log `Z(s, a)` as
/// scores this is `P(a|s) ∝ Z(s, a)`.
pub struct Proportional;

impl Exploration for Proportional {
    fn name(&self) -> &'static str {
        "proportional"
    }

    fn epsilon(&self, _progress: f64) -> f64 {
        f64::NAN
    }

    fn select(&self, scores: &[f64], _progress: f64, rng: &mut SimRng) -> usize {
        sample(&softmax(scores), rng)
    }
}

/// Uniform action with probability `epsilon`, otherwise the argmax (lowest
/// index on ties). Epsilon falls linearly from `start` to `end` over the
/// first half of training and stays at `end` afterwards.
pub struct EpsilonGreedy {
    pub start: f64,
    pub end: f64,
}

impl Exploration for EpsilonGreedy {
    fn name(&self) -> &'static str {
        "epsilon"
    }

    fn epsilon(&self, progress: f64) -> f64 {
        let t = (2.0 * progress).clamp(0.0, 1.0);
        self.start * (1.0 - t) + self.end * t
    }

    fn select(&self, scores: &[f64], progress: f64, rng: &mut SimRng) -> usize {
        let eps = self.epsilon(progress);
        if eps > 0.0 && rng.gen::<f64>() < eps {
            rng.gen_range(0..scores.len())
        } else {
            argmax(scores)
        }
    }
}

/// Index drawn from the distribution `probs`.
pub fn sample(probs: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left `acc` just below 1: take the last positive entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplorationOptions {
    pub epsilon_start: f64,
    pub epsilon_end: f64,
}

impl Default for ExplorationOptions {
    fn default() -> Self {
        Self {
            epsilon_start: 1.0,
            epsilon_end: 0.05,
        }
    }
}

pub fn exploration_registry(opts: ExplorationOptions) -> Registry<dyn Exploration> {
    let mut reg: Registry<dyn Exploration> = Registry::new("exploration");
    reg.register("proportional", Box::new(Proportional))
        .register(
            "epsilon",
            Box::new(EpsilonGreedy {
                start: opts.epsilon_start,
                end: opts.epsilon_end,
            }),
        );
    reg
}
