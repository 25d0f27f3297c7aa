//! Transition storage, segment extraction and reward relabelling.
//!
//! Ground-truth rewards are stored next to learned rewards but can only be
//! read with a [`GroundTruthAccess`] token. Only teachers and evaluation code
//! inside this crate can mint one; reward-model, REED and agent code paths
//! work from learned rewards and raw dynamics.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("transition has {field} width {found}, buffer expects {expected}")]
    Dimension {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("episode {found} interleaves with unfinished episode {open}")]
    Interleaved { open: u64, found: u64 },
    #[error("a finished episode ({0}) cannot be continued; start a new episode id")]
    EpisodeClosed(u64),
    #[error("step {found} does not follow step {expected} of the open episode")]
    StepGap { expected: usize, found: usize },
    #[error("not enough experience: need a window of {needed} steps, have {available}")]
    NotEnoughExperience { needed: usize, available: usize },
    #[error("requested {requested} transitions from a buffer of {size}")]
    BatchTooLarge { requested: usize, size: usize },
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
}

/// Capability token for reading ground-truth rewards.
#[derive(Clone, Copy, Debug)]
pub struct GroundTruthAccess {
    _private: (),
}

impl GroundTruthAccess {
    pub(crate) const fn grant() -> Self {
        Self { _private: () }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    /// Current learned reward `r̂(s, a)`; rewritten by [`ReplayBuffer::relabel`].
    pub learned_reward: f64,
    true_reward: f64,
    /// Last transition of its episode.
    pub done: bool,
    pub episode: u64,
    pub step: usize,
}

impl Transition {
    pub fn new(
        state: Vec<f64>,
        action: Vec<f64>,
        next_state: Vec<f64>,
        true_reward: f64,
        done: bool,
        episode: u64,
        step: usize,
    ) -> Self {
        Self {
            state,
            action,
            next_state,
            learned_reward: 0.0,
            true_reward,
            done,
            episode,
            step,
        }
    }

    pub fn true_reward(&self, _access: GroundTruthAccess) -> f64 {
        self.true_reward
    }
}

/// A fixed-length window of consecutive transitions from one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    transitions: Vec<Transition>,
}

impl Segment {
    pub fn new(transitions: Vec<Transition>) -> Result<Self, ReplayError> {
        let first = transitions
            .first()
            .ok_or_else(|| ReplayError::InvalidSegment("empty".into()))?;
        for w in transitions.windows(2) {
            if w[1].episode != first.episode {
                return Err(ReplayError::InvalidSegment("spans two episodes".into()));
            }
            if w[1].step != w[0].step + 1 {
                return Err(ReplayError::InvalidSegment("non-consecutive steps".into()));
            }
        }
        Ok(Self { transitions })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn episode(&self) -> u64 {
        self.transitions[0].episode
    }

    pub fn start_step(&self) -> usize {
        self.transitions[0].step
    }

    /// `l × d_s` state matrix.
    pub fn states(&self) -> Matrix {
        Matrix::from_rows(&self.transitions.iter().map(|t| t.state.as_slice()).collect::<Vec<_>>())
    }

    /// `l × d_a` action matrix.
    pub fn actions(&self) -> Matrix {
        Matrix::from_rows(&self.transitions.iter().map(|t| t.action.as_slice()).collect::<Vec<_>>())
    }

    pub fn true_rewards(&self, access: GroundTruthAccess) -> Vec<f64> {
        self.transitions.iter().map(|t| t.true_reward(access)).collect()
    }
}

/// Row-aligned `(s, a, r̂, s')` batch for the agent; carries no ground truth.
#[derive(Clone, Debug)]
pub struct TrainingBatch {
    pub states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
}

/// Row-aligned `(s, a, s')` batch for the self-predictive task.
#[derive(Clone, Debug)]
pub struct DynamicsBatch {
    pub states: Matrix,
    pub actions: Matrix,
    pub next_states: Matrix,
}

/// Anything that can score state-action pairs with a learned reward.
pub trait RewardPredictor {
    /// One reward per row of `states`/`actions`.
    fn predict_batch(&self, states: &Matrix, actions: &Matrix) -> Vec<f64>;
}

/// FIFO transition store with episode-contiguity checks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    items: VecDeque<Transition>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self {
            capacity,
            state_dim,
            action_dim,
            items: VecDeque::with_capacity(capacity.min(1 << 20)),
            inserted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Total number of transitions ever pushed.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn push(&mut self, t: Transition) -> Result<(), ReplayError> {
        for (field, expected, found) in [
            ("state", self.state_dim, t.state.len()),
            ("next_state", self.state_dim, t.next_state.len()),
            ("action", self.action_dim, t.action.len()),
        ] {
            if expected != found {
                return Err(ReplayError::Dimension {
                    field,
                    expected,
                    found,
                });
            }
        }
        if let Some(last) = self.items.back() {
            if last.done {
                if t.episode == last.episode {
                    return Err(ReplayError::EpisodeClosed(last.episode));
                }
            } else if t.episode != last.episode {
                return Err(ReplayError::Interleaved {
                    open: last.episode,
                    found: t.episode,
                });
            } else if t.step != last.step + 1 {
                return Err(ReplayError::StepGap {
                    expected: last.step + 1,
                    found: t.step,
                });
            }
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.inserted += 1;
        Ok(())
    }

    /// Start indices of every valid length-`len` window.
    pub fn window_starts(&self, len: usize) -> Vec<usize> {
        if len == 0 {
            return Vec::new();
        }
        let mut starts = Vec::new();
        let mut run_start = 0;
        for i in 0..self.items.len() {
            if i > 0 {
                let (a, b) = (&self.items[i - 1], &self.items[i]);
                if a.episode != b.episode || b.step != a.step + 1 {
                    run_start = i;
                }
            }
            if i + 1 >= run_start + len {
                starts.push(i + 1 - len);
            }
        }
        starts
    }

    pub fn segment_at(&self, start: usize, len: usize) -> Result<Segment, ReplayError> {
        if start + len > self.items.len() {
            return Err(ReplayError::InvalidSegment("window past end of buffer".into()));
        }
        Segment::new(self.items.range(start..start + len).cloned().collect())
    }

    /// Draws `count` independent pairs of uniformly placed length-`len` windows.
    pub fn sample_segment_pairs<R: Rng + ?Sized>(
        &self,
        count: usize,
        len: usize,
        rng: &mut R,
    ) -> Result<Vec<(Segment, Segment)>, ReplayError> {
        let starts = self.window_starts(len);
        if starts.is_empty() {
            return Err(ReplayError::NotEnoughExperience {
                needed: len,
                available: self.longest_run(),
            });
        }
        let pick = |rng: &mut R| {
            let s = starts[rng.random_range(0..starts.len())];
            self.segment_at(s, len).expect("window starts are valid")
        };
        Ok((0..count).map(|_| (pick(rng), pick(rng))).collect())
    }

    fn longest_run(&self) -> usize {
        let mut best = 0;
        let mut run = 0;
        for i in 0..self.items.len() {
            run = if i > 0
                && self.items[i].episode == self.items[i - 1].episode
                && self.items[i].step == self.items[i - 1].step + 1
            {
                run + 1
            } else {
                1
            };
            best = best.max(run);
        }
        best
    }

    /// Rewrites every stored learned reward with `predictor`'s output.
    pub fn relabel<P: RewardPredictor + ?Sized>(&mut self, predictor: &P) {
        const CHUNK: usize = 2048;
        let n = self.items.len();
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let states = Matrix::from_rows(
                &self.items.range(start..end).map(|t| t.state.as_slice()).collect::<Vec<_>>(),
            );
            let actions = Matrix::from_rows(
                &self.items.range(start..end).map(|t| t.action.as_slice()).collect::<Vec<_>>(),
            );
            let rewards = predictor.predict_batch(&states, &actions);
            for (t, r) in self.items.range_mut(start..end).zip(rewards) {
                t.learned_reward = r;
            }
            start = end;
        }
    }

    /// Indices of a uniform draw of `batch` distinct transitions.
    pub fn sample_indices<R: Rng + ?Sized>(
        &self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>, ReplayError> {
        if batch > self.items.len() {
            return Err(ReplayError::BatchTooLarge {
                requested: batch,
                size: self.items.len(),
            });
        }
        Ok(index::sample(rng, self.items.len(), batch).into_vec())
    }

    /// Uniform draw of `batch` distinct transitions.
    pub fn sample_transitions<R: Rng + ?Sized>(
        &self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<&Transition>, ReplayError> {
        Ok(self
            .sample_indices(batch, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }

    pub fn training_batch(&self, indices: &[usize]) -> TrainingBatch {
        let ts: Vec<&Transition> = indices.iter().map(|&i| &self.items[i]).collect();
        TrainingBatch {
            states: Matrix::from_rows(&ts.iter().map(|t| t.state.as_slice()).collect::<Vec<_>>()),
            actions: Matrix::from_rows(&ts.iter().map(|t| t.action.as_slice()).collect::<Vec<_>>()),
            rewards: ts.iter().map(|t| t.learned_reward).collect(),
            next_states: Matrix::from_rows(
                &ts.iter().map(|t| t.next_state.as_slice()).collect::<Vec<_>>(),
            ),
        }
    }

    pub fn dynamics_batch(&self, indices: &[usize]) -> DynamicsBatch {
        let ts: Vec<&Transition> = indices.iter().map(|&i| &self.items[i]).collect();
        DynamicsBatch {
            states: Matrix::from_rows(&ts.iter().map(|t| t.state.as_slice()).collect::<Vec<_>>()),
            actions: Matrix::from_rows(&ts.iter().map(|t| t.action.as_slice()).collect::<Vec<_>>()),
            next_states: Matrix::from_rows(
                &ts.iter().map(|t| t.next_state.as_slice()).collect::<Vec<_>>(),
            ),
        }
    }

    /// All stored states as a matrix (row `i` is transition `i`'s state).
    pub fn state_matrix(&self) -> Matrix {
        Matrix::from_rows(&self.items.iter().map(|t| t.state.as_slice()).collect::<Vec<_>>())
    }
}
