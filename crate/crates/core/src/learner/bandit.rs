//! One-step contextual bandit used to smoke-test the training loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envsim::{EnvError, Environment, Observation, Phase, Regime, StepInfo, NUM_ACTIONS};
use crate::numerics::Real;

/// Each episode shows one of `contexts` cues, in vision and as a single
/// token; action `i` is rewarded with 1 exactly when the cue is `i`.
pub struct ContextualBandit {
    contexts: usize,
    vision_dim: usize,
    tokens: Vec<usize>,
    rng: ChaCha8Rng,
    current: usize,
    done: bool,
}

impl ContextualBandit {
    /// `tokens[i]` is the word shown with cue `i`.
    pub fn new(tokens: Vec<usize>, vision_dim: usize, seed: u64) -> Result<(Self, Observation), EnvError> {
        let contexts = tokens.len();
        if contexts == 0 || contexts > NUM_ACTIONS || contexts > vision_dim {
            return Err(EnvError::Config(format!("{contexts} contexts for {vision_dim} vision dims")));
        }
        let mut b = Self { contexts, vision_dim, tokens, rng: ChaCha8Rng::seed_from_u64(seed), current: 0, done: false };
        let obs = b.reset()?;
        Ok((b, obs))
    }

    pub fn current(&self) -> usize {
        self.current
    }

    fn observe(&self, reward: Real, done: bool, success: Option<bool>) -> Observation {
        let mut vision = vec![0.0; self.vision_dim];
        vision[self.current] = 1.0;
        Observation {
            vision,
            tokens: vec![self.tokens[self.current]],
            reward,
            done,
            info: StepInfo {
                phase: if done { Phase::Done } else { Phase::Instruction },
                regime: Regime::FastMapping,
                target: self.current,
                success,
            },
        }
    }
}

impl Environment for ContextualBandit {
    fn step(&mut self, action: usize) -> Result<Observation, EnvError> {
        if action >= NUM_ACTIONS {
            return Err(EnvError::InvalidAction(action));
        }
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        self.done = true;
        let hit = action == self.current;
        Ok(self.observe(if hit { 1.0 } else { 0.0 }, true, Some(hit)))
    }

    fn reset(&mut self) -> Result<Observation, EnvError> {
        self.current = self.rng.random_range(0..self.contexts);
        self.done = false;
        Ok(self.observe(0.0, false, None))
    }
}
