use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, DenseNet, Gradients, LayerSpec, Matrix, NnError};
use crate::replay::DynamicsBatch;
use crate::reward::{EncoderGrads, Encoders, RewardNet};

use super::ReedError;

/// Self-predictive network: a copy of one reward member's encoders plus the
/// dynamics, projection and prediction heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SprNet {
    pub encoders: Encoders,
    /// `g_d`: linear `z^{sa} → ẑ^s_{t+1}`.
    pub dynamics: DenseNet,
    /// `h_pro`: linear, shared by both branches.
    pub projector: DenseNet,
    /// `h_pre`: bottleneck with batch norm on the hidden layer.
    pub predictor: DenseNet,
}

/// Predictions `ŷ` (gradient-carrying) and targets `y` (detached).
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPairs {
    pub predicted: Matrix,
    pub target: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SprGrads {
    pub encoders: EncoderGrads,
    pub dynamics: Gradients,
    pub projector: Gradients,
    pub predictor: Gradients,
}

impl SprGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.encoders.slices();
        v.extend(self.dynamics.slices());
        v.extend(self.projector.slices());
        v.extend(self.predictor.slices());
        v
    }
}

impl SprNet {
    /// Builds heads around a copy of `member`'s encoders.
    pub fn for_member<R: Rng + ?Sized>(member: &RewardNet, rng: &mut R) -> Result<Self, ReedError> {
        let encoders = member.encoders().ok_or(ReedError::NotSaf)?.clone();
        Ok(Self::new(encoders, rng))
    }

    pub fn new<R: Rng + ?Sized>(encoders: Encoders, rng: &mut R) -> Self {
        let h = encoders.embed_dim();
        let p = encoders.state_embed_dim();
        let bottleneck = (p / 8).max(1);
        let dynamics = DenseNet::new(&[LayerSpec::new(h, p, Activation::Identity)], rng)
            .expect("single layer");
        let projector = DenseNet::new(&[LayerSpec::new(p, p, Activation::Identity)], rng)
            .expect("single layer");
        let mut predictor = DenseNet::new(
            &[
                LayerSpec::new(p, bottleneck, Activation::Relu)
                    .without_bias()
                    .with_batch_norm(),
                LayerSpec::new(bottleneck, p, Activation::Identity),
            ],
            rng,
        )
        .expect("dims chain");
        predictor.set_training(false);
        Self {
            encoders,
            dynamics,
            projector,
            predictor,
        }
    }

    /// Recorded forward pass; only the prediction branch is traced.
    pub fn forward(&mut self, batch: &DynamicsBatch) -> Result<LatentPairs, ReedError> {
        self.check(batch)?;
        let zsa = self.encoders.forward(&batch.states, &batch.actions)?;
        let zhat = self.dynamics.forward(&zsa)?;
        let proj = self.projector.forward(&zhat)?;
        let predicted = self.predictor.forward(&proj)?;
        let target = self.target(&batch.next_states)?;
        Ok(LatentPairs { predicted, target })
    }

    /// `y = h_pro(f_s(s_{t+1}))`, evaluated without recording anything.
    pub fn target(&self, next_states: &Matrix) -> Result<Matrix, NnError> {
        self.projector.infer(&self.encoders.state.infer(next_states)?)
    }

    /// Evaluation-mode predictions `ŷ`.
    pub fn predict(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix, NnError> {
        let zsa = self.encoders.infer(states, actions)?;
        let proj = self.projector.infer(&self.dynamics.infer(&zsa)?)?;
        self.predictor.infer(&proj)
    }

    pub fn backward(&mut self, d_pred: &Matrix) -> Result<SprGrads, ReedError> {
        let (predictor, d) = self.predictor.backward(d_pred)?;
        let (projector, d) = self.projector.backward(&d)?;
        let (dynamics, d) = self.dynamics.backward(&d)?;
        let encoders = self.encoders.backward(&d)?;
        Ok(SprGrads {
            encoders,
            dynamics,
            projector,
            predictor,
        })
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.encoders.params_mut();
        v.extend(self.dynamics.params_mut());
        v.extend(self.projector.params_mut());
        v.extend(self.predictor.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut v = self.encoders.params();
        v.extend(self.dynamics.params());
        v.extend(self.projector.params());
        v.extend(self.predictor.params());
        v
    }

    /// Copies the reward member's current encoders into this network.
    pub fn pull_from(&mut self, member: &RewardNet) -> Result<(), ReedError> {
        let enc = member.encoders().ok_or(ReedError::NotSaf)?;
        if !self.encoders.same_architecture(enc) {
            return Err(ReedError::Architecture);
        }
        self.encoders.copy_from(enc)?;
        Ok(())
    }

    fn check(&self, batch: &DynamicsBatch) -> Result<(), ReedError> {
        let ds = self.encoders.state.input_dim();
        let da = self.encoders.action.input_dim();
        for (expected, found) in [
            (ds, batch.states.cols()),
            (da, batch.actions.cols()),
            (ds, batch.next_states.cols()),
        ] {
            if expected != found {
                return Err(ReedError::Nn(NnError::Shape {
                    layer: None,
                    expected,
                    found,
                }));
            }
        }
        Ok(())
    }
}

/// Copies the SPR network's encoders into the reward member, leaving its head.
pub fn sync_shared_params(spr: &SprNet, member: &mut RewardNet) -> Result<(), ReedError> {
    let enc = member.encoders_mut().ok_or(ReedError::NotSaf)?;
    if !enc.same_architecture(&spr.encoders) {
        return Err(ReedError::Architecture);
    }
    enc.copy_from(&spr.encoders)?;
    Ok(())
}
