use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Checkpoint, Matrix, NnError, Optimizer};
use crate::replay::{RewardPredictor, Segment};

use super::net::{RewardNet, RewardNetConfig};
use super::preference::{
    preference_loss_from_returns, preference_loss_grad, preference_probability_from_returns,
    Preference, PreferenceError, PreferenceTriplet,
};

pub const ENSEMBLE_CHECKPOINT_KIND: &str = "reward_ensemble";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreferenceTraining {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once an epoch's training accuracy reaches this value.
    pub stop_accuracy: Option<f64>,
}

impl Default for PreferenceTraining {
    fn default() -> Self {
        Self {
            batch_size: 128,
            max_epochs: 200,
            stop_accuracy: Some(0.97),
        }
    }
}

/// Per-member outcome of one call to [`RewardEnsemble::train`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberReport {
    pub epochs: usize,
    /// Mean loss of each epoch, computed on the fly.
    pub losses: Vec<f64>,
    /// Accuracy of the last epoch on labels that are not `Equal`.
    pub accuracy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RewardMember {
    pub net: RewardNet,
    pub optimizer: Optimizer,
}

/// Independently initialised reward networks trained on the same labels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RewardEnsemble {
    pub members: Vec<RewardMember>,
    pub config: RewardNetConfig,
    state_dim: usize,
    action_dim: usize,
}

/// Stacked `[σ¹; σ²]` rows of one triplet, built once per training call.
struct Stacked {
    states: Vec<f64>,
    actions: Vec<f64>,
    len: usize,
    target: [f64; 2],
    label: Preference,
}

fn stack(t: &PreferenceTriplet) -> Stacked {
    let mut states = Vec::new();
    let mut actions = Vec::new();
    for seg in [&t.first, &t.second] {
        for tr in seg.transitions() {
            states.extend_from_slice(&tr.state);
            actions.extend_from_slice(&tr.action);
        }
    }
    Stacked {
        states,
        actions,
        len: t.first.len(),
        target: t.label.target(),
        label: t.label,
    }
}

fn train_member(
    member: &mut RewardMember,
    data: &[Stacked],
    dims: (usize, usize),
    cfg: &PreferenceTraining,
    rng: &mut ChaCha8Rng,
) -> Result<MemberReport, PreferenceError> {
    let (ds, da) = dims;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::new();
    let mut accuracy = 0.0;
    let batch = cfg.batch_size.max(1);
    for _ in 0..cfg.max_epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let (mut correct, mut decided) = (0usize, 0usize);
        for chunk in order.chunks(batch) {
            let mut s = Vec::new();
            let mut a = Vec::new();
            for &i in chunk {
                s.extend_from_slice(&data[i].states);
                a.extend_from_slice(&data[i].actions);
            }
            let rows = s.len() / ds;
            let s = Matrix::from_vec(rows, ds, s)?;
            let a = Matrix::from_vec(rows, da, a)?;
            let out = member.net.forward(&s, &a)?;
            let r = out.data();
            let mut upstream = vec![0.0; rows];
            let mut off = 0;
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let d = &data[i];
                let r1: f64 = r[off..off + d.len].iter().sum();
                let r2: f64 = r[off + d.len..off + 2 * d.len].iter().sum();
                loss_sum += preference_loss_from_returns(r1, r2, d.target);
                let g = preference_loss_grad(r1, r2, d.target) * scale;
                upstream[off..off + d.len].fill(g);
                upstream[off + d.len..off + 2 * d.len].fill(-g);
                match d.label {
                    Preference::First => {
                        decided += 1;
                        correct += usize::from(r1 > r2);
                    }
                    Preference::Second => {
                        decided += 1;
                        correct += usize::from(r2 > r1);
                    }
                    Preference::Equal => {}
                }
                off += 2 * d.len;
            }
            let grads = member.net.backward(&Matrix::from_vec(rows, 1, upstream)?)?;
            let mut params = member.net.params_mut();
            member.optimizer.apply(&mut params, &grads.slices())?;
        }
        losses.push(loss_sum / data.len() as f64);
        accuracy = if decided == 0 {
            0.0
        } else {
            correct as f64 / decided as f64
        };
        if cfg.stop_accuracy.is_some_and(|t| decided > 0 && accuracy >= t) {
            break;
        }
    }
    Ok(MemberReport {
        epochs: losses.len(),
        losses,
        accuracy,
    })
}

impl RewardEnsemble {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        size: usize,
        config: RewardNetConfig,
        lr: f64,
        rng: &mut R,
    ) -> Self {
        assert!(size > 0, "ensemble needs at least one member");
        let members = (0..size)
            .map(|_| {
                let mut member_rng = ChaCha8Rng::seed_from_u64(rng.random());
                RewardMember {
                    net: RewardNet::new(state_dim, action_dim, &config, &mut member_rng),
                    optimizer: Optimizer::adam(lr),
                }
            })
            .collect();
        Self {
            members,
            config,
            state_dim,
            action_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Trains every member on all `triplets`, each with its own shuffle stream.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        triplets: &[PreferenceTriplet],
        cfg: &PreferenceTraining,
        rng: &mut R,
    ) -> Result<Vec<MemberReport>, PreferenceError> {
        if triplets.is_empty() {
            return Err(PreferenceError::Empty);
        }
        let data: Vec<Stacked> = triplets.iter().map(stack).collect();
        let dims = (self.state_dim, self.action_dim);
        self.members
            .iter_mut()
            .map(|m| {
                let mut member_rng = ChaCha8Rng::seed_from_u64(rng.random());
                train_member(m, &data, dims, cfg, &mut member_rng)
            })
            .collect()
    }

    /// Mean per-member preference loss on `triplets`.
    pub fn mean_loss(&self, triplets: &[PreferenceTriplet]) -> Result<f64, PreferenceError> {
        let mut total = 0.0;
        for m in &self.members {
            total += super::preference::preference_loss(&m.net, triplets)?;
        }
        Ok(total / self.members.len() as f64)
    }

    /// `P[σ¹ ≻ σ²]` of every member for every pair, indexed `[member][pair]`.
    pub fn pair_probabilities(
        &self,
        pairs: &[(Segment, Segment)],
    ) -> Result<Vec<Vec<f64>>, PreferenceError> {
        if pairs.is_empty() {
            return Ok(vec![Vec::new(); self.members.len()]);
        }
        let mut s = Vec::new();
        let mut a = Vec::new();
        let mut lens = Vec::with_capacity(pairs.len());
        for (x, y) in pairs {
            if x.len() != y.len() {
                return Err(PreferenceError::LengthMismatch {
                    first: x.len(),
                    second: y.len(),
                });
            }
            lens.push(x.len());
            for seg in [x, y] {
                for t in seg.transitions() {
                    s.extend_from_slice(&t.state);
                    a.extend_from_slice(&t.action);
                }
            }
        }
        let rows = s.len() / self.state_dim;
        let s = Matrix::from_vec(rows, self.state_dim, s)?;
        let a = Matrix::from_vec(rows, self.action_dim, a)?;
        self.members
            .iter()
            .map(|m| {
                let r = m.net.predict(&s, &a)?;
                let mut off = 0;
                Ok(lens
                    .iter()
                    .map(|&l| {
                        let r1: f64 = r[off..off + l].iter().sum();
                        let r2: f64 = r[off + l..off + 2 * l].iter().sum();
                        off += 2 * l;
                        preference_probability_from_returns(r1, r2)
                    })
                    .collect())
            })
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint<RewardEnsemble> {
        Checkpoint::new(ENSEMBLE_CHECKPOINT_KIND, self.clone())
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self, NnError> {
        Ok(Checkpoint::<RewardEnsemble>::from_json(text, ENSEMBLE_CHECKPOINT_KIND)?.payload)
    }
}

impl RewardPredictor for RewardEnsemble {
    fn predict_batch(&self, states: &Matrix, actions: &Matrix) -> Vec<f64> {
        let mut out = vec![0.0; states.rows()];
        for m in &self.members {
            let r = m
                .net
                .predict(states, actions)
                .expect("buffer dimensions match the ensemble");
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        let k = self.members.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
        out
    }
}

/// Population variance of member probabilities.
pub fn disagreement(probabilities: &[f64]) -> f64 {
    let n = probabilities.len() as f64;
    // Shifted by the first value so identical members give exactly zero.
    let p0 = probabilities[0];
    let mean = probabilities.iter().map(|p| p - p0).sum::<f64>() / n;
    probabilities.iter().map(|p| (p - p0 - mean).powi(2)).sum::<f64>() / n
}

/// Binary entropy in nats.
pub fn binary_entropy(p: f64) -> f64 {
    let h = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    h(p) + h(1.0 - p)
}
