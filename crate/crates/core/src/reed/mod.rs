//! Encoding environment dynamics into the reward encoders.
//!
//! Each reward-ensemble member gets its own [`SprNet`]. Before an update the
//! SPR network pulls the member's encoders, trains on `(s, a, s')` batches
//! drawn from the replay buffer, and [`sync_shared_params`] copies the
//! trained encoders back. Nothing here touches labels or true rewards.

mod loss;
mod spr;

pub use loss::{contrastive_loss, simsiam_loss, ContrastiveForm, LossOutput};
pub use spr::{sync_shared_params, LatentPairs, SprGrads, SprNet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Matrix, NnError, Optimizer, OptimizerKind};
use crate::replay::{ReplayBuffer, ReplayError};
use crate::reward::{Encoders, RewardNet};

#[derive(Debug, Error, PartialEq)]
pub enum ReedError {
    #[error("REED needs the state-action fusion reward network")]
    NotSaf,
    #[error("SPR encoders and reward encoders have different shapes")]
    Architecture,
    #[error("batch needs at least {needed} rows, got {found}")]
    BatchTooSmall { needed: usize, found: usize },
    #[error("batch shape mismatch: expected {expected}, found {found}")]
    BatchShape { expected: usize, found: usize },
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Simsiam,
    Contrastive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReedConfig {
    pub objective: Objective,
    pub temperature: f64,
    pub contrastive_form: ContrastiveForm,
    pub epochs_per_update: usize,
    pub batch_size: usize,
    /// Caps the minibatches drawn per epoch; `None` sweeps the whole buffer.
    pub batches_per_epoch: Option<usize>,
    pub lr: f64,
    pub optimizer: OptimizerKind,
}

impl Default for ReedConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Contrastive,
            temperature: 0.1,
            contrastive_form: ContrastiveForm::NtXent,
            epochs_per_update: 1,
            batch_size: 128,
            batches_per_epoch: None,
            lr: 1e-3,
            optimizer: OptimizerKind::ADAM_DEFAULT,
        }
    }
}

impl ReedConfig {
    pub fn validate(&self) -> Result<(), ReedError> {
        if !(self.temperature > 0.0) {
            return Err(ReedError::Temperature(self.temperature));
        }
        let needed = match self.objective {
            Objective::Simsiam => 1,
            Objective::Contrastive => 2,
        };
        if self.batch_size < needed {
            return Err(ReedError::BatchTooSmall {
                needed,
                found: self.batch_size,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReedReport {
    /// Mean minibatch loss per epoch.
    pub losses: Vec<f64>,
    /// Minibatch losses in order.
    pub batch_losses: Vec<f64>,
    /// Zero-norm vectors seen by the loss; a collapse warning sign.
    pub degenerate: usize,
}

/// Loss of one batch under `cfg`, with its gradient with respect to `ŷ`.
pub fn reed_loss(
    pairs: &LatentPairs,
    next_states: &Matrix,
    cfg: &ReedConfig,
) -> Result<LossOutput, ReedError> {
    match cfg.objective {
        Objective::Simsiam => simsiam_loss(&pairs.predicted, &pairs.target),
        Objective::Contrastive => contrastive_loss(
            &pairs.predicted,
            &pairs.target,
            next_states,
            cfg.temperature,
            cfg.contrastive_form,
        ),
    }
}

/// Runs `epochs_per_update` epochs of the configured objective over `buffer`.
pub fn train_reed<R: Rng + ?Sized>(
    spr: &mut SprNet,
    optimizer: &mut Optimizer,
    buffer: &ReplayBuffer,
    cfg: &ReedConfig,
    rng: &mut R,
) -> Result<ReedReport, ReedError> {
    cfg.validate()?;
    if buffer.is_empty() {
        return Err(ReedError::EmptyBuffer);
    }
    let min_rows = match cfg.objective {
        Objective::Simsiam => 1,
        Objective::Contrastive => 2,
    };
    let mut report = ReedReport::default();
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    spr.predictor.set_training(true);
    let result = (|| {
        for _ in 0..cfg.epochs_per_update {
            order.shuffle(rng);
            let (mut sum, mut count) = (0.0, 0usize);
            let limit = cfg.batches_per_epoch.unwrap_or(usize::MAX);
            for chunk in order.chunks(cfg.batch_size).take(limit) {
                if chunk.len() < min_rows {
                    continue;
                }
                let batch = buffer.dynamics_batch(chunk);
                let pairs = spr.forward(&batch)?;
                let out = reed_loss(&pairs, &batch.next_states, cfg)?;
                let grads = spr.backward(&out.grad)?;
                optimizer.apply(&mut spr.params_mut(), &grads.slices())?;
                report.degenerate += out.degenerate;
                report.batch_losses.push(out.loss);
                sum += out.loss;
                count += 1;
            }
            report.losses.push(if count == 0 { 0.0 } else { sum / count as f64 });
        }
        Ok(())
    })();
    spr.predictor.set_training(false);
    result.map(|()| report)
}

/// SPR network and optimizer state for one reward-ensemble member.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReedLearner {
    pub spr: SprNet,
    pub optimizer: Optimizer,
}

impl ReedLearner {
    pub fn new<R: Rng + ?Sized>(member: &RewardNet, cfg: &ReedConfig, rng: &mut R) -> Result<Self, ReedError> {
        cfg.validate()?;
        Ok(Self {
            spr: SprNet::for_member(member, rng)?,
            optimizer: Optimizer::new(cfg.optimizer, cfg.lr),
        })
    }

    /// Pull encoders from `member`, train, and copy them back.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        member: &mut RewardNet,
        buffer: &ReplayBuffer,
        cfg: &ReedConfig,
        rng: &mut R,
    ) -> Result<ReedReport, ReedError> {
        self.spr.pull_from(member)?;
        let report = train_reed(&mut self.spr, &mut self.optimizer, buffer, cfg, rng)?;
        sync_shared_params(&self.spr, member)?;
        Ok(report)
    }
}

/// Mean per-dimension variance of `z^{sa}` over `n` transitions sampled
/// without replacement.
pub fn embedding_variance<R: Rng + ?Sized>(
    encoders: &Encoders,
    buffer: &ReplayBuffer,
    n: usize,
    rng: &mut R,
) -> Result<f64, ReedError> {
    let idx = buffer.sample_indices(n, rng)?;
    let batch = buffer.dynamics_batch(&idx);
    let z = encoders.infer(&batch.states, &batch.actions)?;
    Ok(mean_dimension_variance(&z))
}

/// Population variance of each column, averaged over columns.
pub fn mean_dimension_variance(z: &Matrix) -> f64 {
    let (rows, cols) = (z.rows() as f64, z.cols());
    let mut total = 0.0;
    for c in 0..cols {
        // Shifted by the first row so constant columns give exactly zero.
        let x0 = z.get(0, c);
        let (mut s, mut sq) = (0.0, 0.0);
        for r in 0..z.rows() {
            let d = z.get(r, c) - x0;
            s += d;
            sq += d * d;
        }
        let m = s / rows;
        total += (sq / rows - m * m).max(0.0);
    }
    total / cols as f64
}
