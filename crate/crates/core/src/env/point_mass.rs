use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{clip_action, EnvError, EnvSpec, EnvState, Environment, RenderLayout, StepOutcome};

/// A damped 2D point mass that should be driven to a goal.
///
/// Observation: `[px, py, vx, vy, gx, gy]`. Action: 2D force in `[-1, 1]²`.
/// Ground-truth reward: `-‖p − g‖₂` evaluated at the pre-step state.
#[derive(Clone, Debug)]
pub struct PointMass2D {
    spec: EnvSpec,
    pub dt: f64,
    pub damping: f64,
    pub gain: f64,
    /// Start positions and goals are drawn uniformly from `[-start_extent, start_extent]²`.
    pub start_extent: f64,
    /// Positions are confined to `[-arena, arena]²`.
    pub arena: f64,
    position: [f64; 2],
    velocity: [f64; 2],
    goal: [f64; 2],
    steps: usize,
}

impl Default for PointMass2D {
    fn default() -> Self {
        Self::new(100, 0.05, 0.95)
    }
}

impl PointMass2D {
    pub fn new(horizon: usize, dt: f64, damping: f64) -> Self {
        let arena = 1.5;
        Self {
            spec: EnvSpec {
                id: super::POINT_MASS.to_string(),
                state_dim: 6,
                action_dim: 2,
                horizon,
                reward_bound: 2.0 * arena * std::f64::consts::SQRT_2,
                render: Some(RenderLayout {
                    position: 0,
                    goal: 4,
                    half_extent: arena,
                }),
            },
            dt,
            damping,
            gain: 2.0,
            start_extent: 1.0,
            arena,
            position: [0.0; 2],
            velocity: [0.0; 2],
            goal: [0.0; 2],
            steps: 0,
        }
    }

    /// Places the mass at an exact configuration, e.g. for scripted tests.
    pub fn set_configuration(&mut self, position: [f64; 2], velocity: [f64; 2], goal: [f64; 2]) -> EnvState {
        self.position = position;
        self.velocity = velocity;
        self.goal = goal;
        self.steps = 0;
        self.state()
    }

    pub fn position(&self) -> [f64; 2] {
        self.position
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    pub fn distance_to_goal(&self) -> f64 {
        distance(self.position, self.goal)
    }

    fn observation(&self) -> Vec<f64> {
        vec![
            self.position[0],
            self.position[1],
            self.velocity[0],
            self.velocity[1],
            self.goal[0],
            self.goal[1],
        ]
    }

    fn state(&self) -> EnvState {
        EnvState {
            observation: self.observation(),
            step: self.steps,
            done: self.steps >= self.spec.horizon,
        }
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Environment for PointMass2D {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = self.start_extent;
        self.position = [rng.random_range(-e..=e), rng.random_range(-e..=e)];
        self.goal = [rng.random_range(-e..=e), rng.random_range(-e..=e)];
        self.velocity = [0.0; 2];
        self.steps = 0;
        self.state()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        if self.steps >= self.spec.horizon {
            return Err(EnvError::EpisodeDone);
        }
        if action.len() != 2 {
            return Err(EnvError::ActionDim {
                expected: 2,
                found: action.len(),
            });
        }
        let (a, clipped) = clip_action(action);
        let reward = -self.distance_to_goal();
        for k in 0..2 {
            self.velocity[k] = self.damping * self.velocity[k] + self.dt * self.gain * a[k];
            let p = self.position[k] + self.dt * self.velocity[k];
            if p.abs() > self.arena {
                self.position[k] = p.clamp(-self.arena, self.arena);
                self.velocity[k] = 0.0;
            } else {
                self.position[k] = p;
            }
        }
        self.steps += 1;
        Ok(StepOutcome {
            state: self.state(),
            reward,
            clipped,
        })
    }

    fn ground_truth_reward(&self, observation: &[f64], _action: &[f64]) -> f64 {
        -distance([observation[0], observation[1]], [observation[4], observation[5]])
    }
}
