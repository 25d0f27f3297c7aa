use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvError, EnvSpec, EnvState, Environment, PointMass2D, StepOutcome};

/// [`PointMass2D`] with a block of per-episode constant context features
/// appended to every observation.
///
/// The context features are large and positive, so any two observations
/// (and in particular temporally adjacent ones) have cosine similarity close
/// to one; the dynamic part of the state is a small perturbation.
#[derive(Clone, Debug)]
pub struct StaticFeatureEnv {
    inner: PointMass2D,
    spec: EnvSpec,
    context: Vec<f64>,
}

pub const DEFAULT_CONTEXT_FEATURES: usize = 16;
const CONTEXT_STREAM: u64 = 0x5eed_c047_e47a_11ce;

impl Default for StaticFeatureEnv {
    fn default() -> Self {
        Self::new(PointMass2D::default(), DEFAULT_CONTEXT_FEATURES)
    }
}

impl StaticFeatureEnv {
    pub fn new(inner: PointMass2D, context_features: usize) -> Self {
        let mut spec = inner.spec().clone();
        spec.id = super::STATIC_FEATURE.to_string();
        spec.state_dim += context_features;
        Self {
            inner,
            spec,
            context: vec![0.0; context_features],
        }
    }

    pub fn context(&self) -> &[f64] {
        &self.context
    }

    fn extend(&self, mut state: EnvState) -> EnvState {
        state.observation.extend_from_slice(&self.context);
        state
    }
}

impl Environment for StaticFeatureEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> EnvState {
        let state = self.inner.reset(seed);
        // Separate stream so the point-mass start matches the unwrapped env.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ CONTEXT_STREAM);
        for c in &mut self.context {
            *c = rng.random_range(1.0..3.0);
        }
        self.extend(state)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        let mut out = self.inner.step(action)?;
        out.state = self.extend(out.state);
        Ok(out)
    }

    fn ground_truth_reward(&self, observation: &[f64], action: &[f64]) -> f64 {
        self.inner.ground_truth_reward(&observation[..6], action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::cosine_similarity;
    use rand::Rng;

    #[test]
    fn context_is_constant_within_an_episode() {
        let mut env = StaticFeatureEnv::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = env.reset(11);
        let ctx = s.observation[6..].to_vec();
        assert_eq!(ctx.len(), DEFAULT_CONTEXT_FEATURES);
        while !s.done {
            let a = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            s = env.step(&a).unwrap().state;
            assert_eq!(&s.observation[6..], ctx.as_slice());
        }
        let other = env.reset(12);
        assert_ne!(&other.observation[6..], ctx.as_slice());
    }

    #[test]
    fn adjacent_observations_are_nearly_parallel() {
        let mut env = StaticFeatureEnv::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut worst: f64 = 1.0;
        for seed in 0..20 {
            let mut s = env.reset(seed);
            while !s.done {
                let a = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let next = env.step(&a).unwrap().state;
                worst = worst.min(cosine_similarity(&s.observation, &next.observation).value);
                s = next;
            }
        }
        assert!(worst > 0.99, "min adjacent cosine {worst}");
    }

    #[test]
    fn point_mass_part_matches_unwrapped_env() {
        let mut wrapped = StaticFeatureEnv::default();
        let mut plain = PointMass2D::default();
        let a = wrapped.reset(9);
        let b = plain.reset(9);
        assert_eq!(&a.observation[..6], b.observation.as_slice());
        let ra = wrapped.step(&[0.3, -0.4]).unwrap();
        let rb = plain.step(&[0.3, -0.4]).unwrap();
        assert_eq!(ra.reward, rb.reward);
    }
}
