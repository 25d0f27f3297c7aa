use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{clip_action, EnvError, EnvSpec, EnvState, Environment, StepOutcome};

/// Small deterministic chain for exhaustive oracles.
///
/// States `0..n` are one-hot encoded. The scalar action moves right above
/// `+1/3`, left below `-1/3` and stays otherwise; walls are absorbing.
#[derive(Clone, Debug)]
pub struct Chain {
    spec: EnvSpec,
    rewards: Vec<f64>,
    state: usize,
    steps: usize,
}

pub const MAX_CHAIN_STATES: usize = 5;
pub const MAX_CHAIN_HORIZON: usize = 6;

impl Default for Chain {
    fn default() -> Self {
        let n = MAX_CHAIN_STATES;
        // Negative distance to the right end, scaled into (-1, 0].
        let rewards = (0..n).map(|s| -((n - 1 - s) as f64) / n as f64).collect();
        Self::new(rewards, MAX_CHAIN_HORIZON).expect("defaults are valid")
    }
}

impl Chain {
    pub fn new(rewards: Vec<f64>, horizon: usize) -> Result<Self, EnvError> {
        let n = rewards.len();
        if !(2..=MAX_CHAIN_STATES).contains(&n) || !(1..=MAX_CHAIN_HORIZON).contains(&horizon) {
            return Err(EnvError::Invalid(format!(
                "chain needs 2..={MAX_CHAIN_STATES} states and horizon 1..={MAX_CHAIN_HORIZON}"
            )));
        }
        if rewards.iter().any(|&r| r > 0.0 || !r.is_finite()) {
            return Err(EnvError::Invalid("chain rewards must be finite and ≤ 0".into()));
        }
        let bound = rewards.iter().fold(0.0f64, |m, r| m.max(-r)) + 1e-9;
        Ok(Self {
            spec: EnvSpec {
                id: super::CHAIN.to_string(),
                state_dim: n,
                action_dim: 1,
                horizon,
                reward_bound: bound,
                render: None,
            },
            rewards,
            state: 0,
            steps: 0,
        })
    }

    pub fn num_states(&self) -> usize {
        self.rewards.len()
    }

    pub fn reward_table(&self) -> &[f64] {
        &self.rewards
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.rewards.len()];
        v[s] = 1.0;
        v
    }

    /// Places the chain in state `s` at the start of an episode.
    pub fn set_state(&mut self, s: usize) -> EnvState {
        self.state = s;
        self.steps = 0;
        self.current()
    }

    /// Canonical actions for enumeration: left, stay, right.
    pub const ACTIONS: [f64; 3] = [-1.0, 0.0, 1.0];

    fn current(&self) -> EnvState {
        EnvState {
            observation: self.one_hot(self.state),
            step: self.steps,
            done: self.steps >= self.spec.horizon,
        }
    }

    fn decode(observation: &[f64]) -> usize {
        observation
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i)
    }
}

impl Environment for Chain {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = rng.random_range(0..self.rewards.len());
        self.steps = 0;
        self.current()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        if self.steps >= self.spec.horizon {
            return Err(EnvError::EpisodeDone);
        }
        if action.len() != 1 {
            return Err(EnvError::ActionDim {
                expected: 1,
                found: action.len(),
            });
        }
        let (a, clipped) = clip_action(action);
        let reward = self.rewards[self.state];
        if a[0] > 1.0 / 3.0 {
            self.state = (self.state + 1).min(self.rewards.len() - 1);
        } else if a[0] < -1.0 / 3.0 {
            self.state = self.state.saturating_sub(1);
        }
        self.steps += 1;
        Ok(StepOutcome {
            state: self.current(),
            reward,
            clipped,
        })
    }

    fn ground_truth_reward(&self, observation: &[f64], _action: &[f64]) -> f64 {
        self.rewards[Self::decode(observation)]
    }
}
