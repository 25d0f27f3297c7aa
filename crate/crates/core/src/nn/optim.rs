use serde::{Deserialize, Serialize};

use super::{DenseNet, Gradients, NnError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl OptimizerKind {
    pub const ADAM_DEFAULT: OptimizerKind = OptimizerKind::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

/// First-order optimizer with per-parameter moment state.
///
/// Moment buffers are created on the first step and their shapes are pinned
/// from then on; a later step with differently shaped gradients is rejected.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::ADAM_DEFAULT, lr)
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to `net` from its gradient tape.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<(), NnError> {
        let g = grads.slices();
        let mut p = net.params_mut();
        self.apply(&mut p, &g)
    }

    /// Applies one update to an arbitrary list of parameter slices.
    pub fn apply(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), NnError> {
        if params.len() != grads.len() {
            return Err(NnError::Shape {
                layer: None,
                expected: params.len(),
                found: grads.len(),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(NnError::Shape {
                    layer: Some(i),
                    expected: p.len(),
                    found: g.len(),
                });
            }
        }
        if let OptimizerKind::Adam { .. } = self.kind {
            if self.first.is_empty() {
                self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                self.second = self.first.clone();
            } else if self.first.len() != grads.len()
                || self.first.iter().zip(grads).any(|(m, g)| m.len() != g.len())
            {
                return Err(NnError::Shape {
                    layer: None,
                    expected: self.first.iter().map(Vec::len).sum(),
                    found: grads.iter().map(|g| g.len()).sum(),
                });
            }
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (x, d) in p.iter_mut().zip(g.iter()) {
                        *x -= self.lr * d;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.first.iter_mut().zip(self.second.iter_mut()))
                {
                    for i in 0..p.len() {
                        let d = g[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * d;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * d * d;
                        let mhat = m[i] / c1;
                        let vhat = v[i] / c2;
                        p[i] -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        if params.iter().any(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(NnError::NonFinite);
        }
        Ok(())
    }
}
