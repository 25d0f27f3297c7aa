//! Toy continuous-control environments with analytic ground-truth rewards.

mod chain;
mod point_mass;
mod static_feature;
mod trace;

pub use chain::Chain;
pub use point_mass::PointMass2D;
pub use static_feature::StaticFeatureEnv;
pub use trace::{render_trace, Frame, Trace, TRACE_VERSION};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("episode already finished; call reset first")]
    EpisodeDone,
    #[error("action has {found} dimensions, environment expects {expected}")]
    ActionDim { expected: usize, found: usize },
    #[error("unknown environment id {0:?}")]
    UnknownId(String),
    #[error("environment {0:?} cannot be rendered in 2D")]
    Unsupported(String),
    #[error("invalid environment parameters: {0}")]
    Invalid(String),
}

/// Static description of an environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    /// Ground-truth reward per step lies in `(-reward_bound, 0]`.
    pub reward_bound: f64,
    /// Observation columns holding the 2D position and goal, when renderable.
    pub render: Option<RenderLayout>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderLayout {
    pub position: usize,
    pub goal: usize,
    pub half_extent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub observation: Vec<f64>,
    /// Number of steps taken in the current episode.
    pub step: usize,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    /// Ground-truth reward `r(s_t, a_t)`; for teachers and evaluation only.
    pub reward: f64,
    /// True when the action was outside `[-1, 1]` and got clipped.
    pub clipped: bool,
}

/// Episodic environment with a fixed horizon and no terminal states other
/// than the time limit.
pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode; the start state is a pure function of `seed`.
    fn reset(&mut self, seed: u64) -> EnvState;

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError>;

    /// Ground-truth reward of a stored observation/action, for evaluation.
    fn ground_truth_reward(&self, observation: &[f64], action: &[f64]) -> f64;
}

pub const POINT_MASS: &str = "point_mass";
pub const STATIC_FEATURE: &str = "static_feature";
pub const CHAIN: &str = "chain";

/// Builds an environment from its string id.
pub fn make_env(id: &str) -> Result<Box<dyn Environment>, EnvError> {
    match id {
        POINT_MASS => Ok(Box::new(PointMass2D::default())),
        STATIC_FEATURE => Ok(Box::new(StaticFeatureEnv::default())),
        CHAIN => Ok(Box::new(Chain::default())),
        other => Err(EnvError::UnknownId(other.to_string())),
    }
}

/// Clips each coordinate to `[-1, 1]`, reporting whether anything changed.
pub(crate) fn clip_action(action: &[f64]) -> (Vec<f64>, bool) {
    let mut clipped = false;
    let out = action
        .iter()
        .map(|&a| {
            let c = a.clamp(-1.0, 1.0);
            clipped |= c != a || a.is_nan();
            if a.is_nan() {
                0.0
            } else {
                c
            }
        })
        .collect();
    (out, clipped)
}
