use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, DenseNet, Gradients, LayerSpec, Matrix, NnError};

/// Architecture of the reward network body.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardVariant {
    /// State and action encoded separately, then fused.
    Saf,
    /// Raw `[s; a]` fed straight into the trunk.
    OriginalConcat,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardNetConfig {
    pub variant: RewardVariant,
    pub state_embed: usize,
    pub action_embed: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl Default for RewardNetConfig {
    fn default() -> Self {
        Self {
            variant: RewardVariant::Saf,
            state_embed: 20,
            action_embed: 10,
            hidden: 64,
            layers: 3,
        }
    }
}

/// The encoder stack shared between a reward network and its SPR heads:
/// `z^s = f_s(s)`, `z^a = f_a(a)`, `z^{sa} = f_sa([z^s; z^a])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoders {
    pub state: DenseNet,
    pub action: DenseNet,
    pub trunk: DenseNet,
}

/// Gradients for an [`Encoders`] stack.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGrads {
    pub state: Gradients,
    pub action: Gradients,
    pub trunk: Gradients,
}

impl EncoderGrads {
    pub fn zeros_like(enc: &Encoders) -> Self {
        Self {
            state: Gradients::zeros_like(&enc.state),
            action: Gradients::zeros_like(&enc.action),
            trunk: Gradients::zeros_like(&enc.trunk),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.state.slices();
        v.extend(self.action.slices());
        v.extend(self.trunk.slices());
        v
    }

    pub fn add_assign(&mut self, other: &EncoderGrads) {
        self.state.add_assign(&other.state);
        self.action.add_assign(&other.action);
        self.trunk.add_assign(&other.trunk);
    }
}

fn trunk_specs(input: usize, hidden: usize, layers: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(layers);
    let mut prev = input;
    for _ in 0..layers.max(1) {
        specs.push(LayerSpec::new(prev, hidden, Activation::LeakyRelu));
        prev = hidden;
    }
    specs
}

impl Encoders {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        cfg: &RewardNetConfig,
        rng: &mut R,
    ) -> Self {
        let state = DenseNet::new(
            &[LayerSpec::new(state_dim, cfg.state_embed, Activation::LeakyRelu)],
            rng,
        )
        .expect("single layer");
        let action = DenseNet::new(
            &[LayerSpec::new(action_dim, cfg.action_embed, Activation::LeakyRelu)],
            rng,
        )
        .expect("single layer");
        let trunk = DenseNet::new(
            &trunk_specs(cfg.state_embed + cfg.action_embed, cfg.hidden, cfg.layers),
            rng,
        )
        .expect("trunk dims chain");
        Self {
            state,
            action,
            trunk,
        }
    }

    pub fn state_embed_dim(&self) -> usize {
        self.state.output_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.trunk.output_dim()
    }

    pub fn same_architecture(&self, other: &Encoders) -> bool {
        self.state.same_architecture(&other.state)
            && self.action.same_architecture(&other.action)
            && self.trunk.same_architecture(&other.trunk)
    }

    /// Recorded forward pass producing `z^{sa}`.
    pub fn forward(&mut self, states: &Matrix, actions: &Matrix) -> Result<Matrix, NnError> {
        let zs = self.state.forward(states)?;
        let za = self.action.forward(actions)?;
        self.trunk.forward(&Matrix::hcat(&[&zs, &za]))
    }

    pub fn infer(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix, NnError> {
        let zs = self.state.infer(states)?;
        let za = self.action.infer(actions)?;
        self.trunk.infer(&Matrix::hcat(&[&zs, &za]))
    }

    pub fn backward(&mut self, d_zsa: &Matrix) -> Result<EncoderGrads, NnError> {
        let (trunk, d_in) = self.trunk.backward(d_zsa)?;
        let parts = d_in.hsplit(&[self.state.output_dim(), self.action.output_dim()]);
        let (state, _) = self.state.backward(&parts[0])?;
        let (action, _) = self.action.backward(&parts[1])?;
        Ok(EncoderGrads {
            state,
            action,
            trunk,
        })
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut v = self.state.params();
        v.extend(self.action.params());
        v.extend(self.trunk.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.state.params_mut();
        v.extend(self.action.params_mut());
        v.extend(self.trunk.params_mut());
        v
    }

    pub fn copy_from(&mut self, other: &Encoders) -> Result<(), NnError> {
        if !self.same_architecture(other) {
            return Err(NnError::Shape {
                layer: None,
                expected: self.params().iter().map(|p| p.len()).sum(),
                found: other.params().iter().map(|p| p.len()).sum(),
            });
        }
        self.state.copy_from(&other.state)?;
        self.action.copy_from(&other.action)?;
        self.trunk.copy_from(&other.trunk)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum RewardBody {
    Saf(Encoders),
    OriginalConcat(DenseNet),
}

/// `r̂(s, a) = tanh(w · body(s, a) + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardNet {
    pub body: RewardBody,
    pub head: DenseNet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardGrads {
    pub body: BodyGrads,
    pub head: Gradients,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BodyGrads {
    Saf(EncoderGrads),
    OriginalConcat(Gradients),
}

impl RewardGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = match &self.body {
            BodyGrads::Saf(g) => g.slices(),
            BodyGrads::OriginalConcat(g) => g.slices(),
        };
        v.extend(self.head.slices());
        v
    }
}

impl RewardNet {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        cfg: &RewardNetConfig,
        rng: &mut R,
    ) -> Self {
        let body = match cfg.variant {
            RewardVariant::Saf => RewardBody::Saf(Encoders::new(state_dim, action_dim, cfg, rng)),
            RewardVariant::OriginalConcat => RewardBody::OriginalConcat(
                DenseNet::new(&trunk_specs(state_dim + action_dim, cfg.hidden, cfg.layers), rng)
                    .expect("trunk dims chain"),
            ),
        };
        let head = DenseNet::new(&[LayerSpec::new(cfg.hidden, 1, Activation::Tanh)], rng)
            .expect("single layer");
        Self { body, head }
    }

    pub fn variant(&self) -> RewardVariant {
        match self.body {
            RewardBody::Saf(_) => RewardVariant::Saf,
            RewardBody::OriginalConcat(_) => RewardVariant::OriginalConcat,
        }
    }

    pub fn encoders(&self) -> Option<&Encoders> {
        match &self.body {
            RewardBody::Saf(e) => Some(e),
            RewardBody::OriginalConcat(_) => None,
        }
    }

    pub fn encoders_mut(&mut self) -> Option<&mut Encoders> {
        match &mut self.body {
            RewardBody::Saf(e) => Some(e),
            RewardBody::OriginalConcat(_) => None,
        }
    }

    /// Learned reward for each row, evaluation mode.
    pub fn predict(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>, NnError> {
        let h = match &self.body {
            RewardBody::Saf(e) => e.infer(states, actions)?,
            RewardBody::OriginalConcat(t) => t.infer(&Matrix::hcat(&[states, actions]))?,
        };
        Ok(self.head.infer(&h)?.into_vec())
    }

    pub fn predict_one(&self, state: &[f64], action: &[f64]) -> Result<f64, NnError> {
        Ok(self.predict(&Matrix::row_vector(state), &Matrix::row_vector(action))?[0])
    }

    /// Recorded forward pass; output is `B × 1`.
    pub fn forward(&mut self, states: &Matrix, actions: &Matrix) -> Result<Matrix, NnError> {
        let h = match &mut self.body {
            RewardBody::Saf(e) => e.forward(states, actions)?,
            RewardBody::OriginalConcat(t) => t.forward(&Matrix::hcat(&[states, actions]))?,
        };
        self.head.forward(&h)
    }

    pub fn backward(&mut self, upstream: &Matrix) -> Result<RewardGrads, NnError> {
        let (head, d_h) = self.head.backward(upstream)?;
        let body = match &mut self.body {
            RewardBody::Saf(e) => BodyGrads::Saf(e.backward(&d_h)?),
            RewardBody::OriginalConcat(t) => BodyGrads::OriginalConcat(t.backward(&d_h)?.0),
        };
        Ok(RewardGrads { body, head })
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut v = match &self.body {
            RewardBody::Saf(e) => e.params(),
            RewardBody::OriginalConcat(t) => t.params(),
        };
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = match &mut self.body {
            RewardBody::Saf(e) => e.params_mut(),
            RewardBody::OriginalConcat(t) => t.params_mut(),
        };
        v.extend(self.head.params_mut());
        v
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut off = 0;
        for p in self.params_mut() {
            p.copy_from_slice(&flat[off..off + p.len()]);
            off += p.len();
        }
        assert_eq!(off, flat.len(), "parameter count mismatch");
    }
}
