//! Policy learning: soft actor-critic, rollouts and intrinsic pre-training.

mod sac;

pub use sac::{component_rng, ActMode, Sac, SacConfig, SacLosses};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, EnvState, Environment};
use crate::nn::NnError;
use crate::replay::{ReplayBuffer, ReplayError, TrainingBatch, Transition};

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("k-NN needs at least {k} stored states, have {found}")]
    InsufficientStates { k: usize, found: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntrinsicConfig {
    pub k: usize,
    /// Environment steps of unsupervised pre-training.
    pub steps: usize,
    /// Leading steps with uniformly random actions.
    pub random_steps: usize,
}

impl Default for IntrinsicConfig {
    fn default() -> Self {
        Self {
            k: 5,
            steps: 9000,
            random_steps: 1000,
        }
    }
}

/// Distance from `query` to its `k`-th nearest row of the row-major `states`.
pub fn kth_neighbor_distance(states: &[f64], query: &[f64], k: usize) -> Result<f64, AgentError> {
    let dim = query.len().max(1);
    let rows = states.len() / dim;
    if k == 0 || rows < k {
        return Err(AgentError::InsufficientStates { k, found: rows });
    }
    // Keep the k smallest squared distances in a sorted scratch array.
    let mut best = vec![f64::INFINITY; k];
    for row in states.chunks_exact(dim) {
        let d: f64 = row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best[k - 1] {
            let mut j = k - 1;
            while j > 0 && best[j - 1] > d {
                best[j] = best[j - 1];
                j -= 1;
            }
            best[j] = d;
        }
    }
    Ok(best[k - 1].sqrt())
}

/// `log(1 + ‖s − s_(k)‖)` where `s_(k)` is the k-th nearest stored state.
pub fn intrinsic_reward(states: &[f64], query: &[f64], k: usize) -> Result<f64, AgentError> {
    Ok(kth_neighbor_distance(states, query, k)?.ln_1p())
}

/// Steps one environment and turns each step into a [`Transition`].
pub struct Rollout {
    env: Box<dyn Environment>,
    seed: u64,
    state: EnvState,
    episode: u64,
    episode_return: f64,
}

/// What happened on one environment step.
pub struct RolloutStep {
    pub transition: Transition,
    /// True return of the episode this step finished, if any.
    pub finished_return: Option<f64>,
}

impl Rollout {
    /// Episode `i` is reset with seed `seed + i`.
    pub fn new(mut env: Box<dyn Environment>, seed: u64) -> Self {
        let state = env.reset(seed);
        Self {
            env,
            seed,
            state,
            episode: 0,
            episode_return: 0.0,
        }
    }

    pub fn env(&self) -> &dyn Environment {
        self.env.as_ref()
    }

    pub fn observation(&self) -> &[f64] {
        &self.state.observation
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn step(&mut self, action: &[f64]) -> Result<RolloutStep, AgentError> {
        let out = self.env.step(action)?;
        let transition = Transition::new(
            self.state.observation.clone(),
            action.to_vec(),
            out.state.observation.clone(),
            out.reward,
            out.state.done,
            self.episode,
            self.state.step,
        );
        self.episode_return += out.reward;
        let finished_return = if out.state.done {
            let r = self.episode_return;
            self.episode += 1;
            self.episode_return = 0.0;
            self.state = self.env.reset(self.seed.wrapping_add(self.episode));
            Some(r)
        } else {
            self.state = out.state;
            None
        };
        Ok(RolloutStep {
            transition,
            finished_return,
        })
    }
}

/// Replaces the rewards of `batch` with the intrinsic reward of each state.
pub fn intrinsic_batch(batch: &mut TrainingBatch, all_states: &[f64], k: usize) -> Result<(), AgentError> {
    for i in 0..batch.states.rows() {
        batch.rewards[i] = intrinsic_reward(all_states, batch.states.row(i), k)?;
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExploreReport {
    pub episode_returns: Vec<f64>,
    pub updates: u64,
}

/// One environment step of unsupervised pre-training.
pub struct ExploreStep {
    pub finished_return: Option<f64>,
    pub losses: Option<SacLosses>,
}

/// Step-wise driver for the intrinsic-reward phase; keeps every visited state
/// for the k-NN estimate.
pub struct Explorer {
    cfg: IntrinsicConfig,
    states: Vec<f64>,
    step: usize,
}

impl Explorer {
    pub fn new(cfg: IntrinsicConfig, buffer: &ReplayBuffer) -> Self {
        Self {
            cfg,
            states: buffer.iter().flat_map(|t| t.state.iter().copied()).collect(),
            step: 0,
        }
    }

    pub fn done(&self) -> bool {
        self.step >= self.cfg.steps
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Acts, stores the transition (with `learned_reward` as given by `label`)
    /// and takes one SAC step on intrinsic rewards once warm.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        agent: &mut Sac,
        rollout: &mut Rollout,
        buffer: &mut ReplayBuffer,
        label: &mut dyn FnMut(&Transition) -> f64,
        rng: &mut R,
    ) -> Result<ExploreStep, AgentError> {
        let action = if self.step < self.cfg.random_steps {
            (0..agent.action_dim()).map(|_| rng.random_range(-1.0..=1.0)).collect()
        } else {
            agent.act(rollout.observation(), ActMode::Stochastic, rng)?
        };
        let mut out = rollout.step(&action)?;
        out.transition.learned_reward = label(&out.transition);
        self.states.extend_from_slice(&out.transition.state);
        buffer.push(out.transition)?;
        let batch_size = agent.config.batch_size;
        let mut losses = None;
        if self.step >= self.cfg.random_steps && buffer.len() >= batch_size.max(self.cfg.k) {
            let idx = buffer.sample_indices(batch_size, rng)?;
            let mut batch = buffer.training_batch(&idx);
            intrinsic_batch(&mut batch, &self.states, self.cfg.k)?;
            losses = Some(agent.update(&batch, rng)?);
        }
        self.step += 1;
        Ok(ExploreStep {
            finished_return: out.finished_return,
            losses,
        })
    }
}

/// Unsupervised pre-training: fills `buffer` with `cfg.steps` transitions
/// while SAC maximises the k-NN state-entropy reward.
pub fn explore_pretrain<R: Rng + ?Sized>(
    agent: &mut Sac,
    rollout: &mut Rollout,
    buffer: &mut ReplayBuffer,
    cfg: &IntrinsicConfig,
    rng: &mut R,
) -> Result<ExploreReport, AgentError> {
    let mut report = ExploreReport::default();
    let mut explorer = Explorer::new(*cfg, buffer);
    while !explorer.done() {
        let out = explorer.step(agent, rollout, buffer, &mut |_| 0.0, rng)?;
        if let Some(r) = out.finished_return {
            report.episode_returns.push(r);
        }
        if out.losses.is_some() {
            report.updates += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
