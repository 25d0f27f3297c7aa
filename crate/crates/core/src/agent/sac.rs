use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, DenseNet, Matrix, NnError, Optimizer};
use crate::replay::TrainingBatch;

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub hidden: usize,
    pub layers: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub batch_size: usize,
    pub gamma: f64,
    /// EMA rate of the target critics.
    pub tau: f64,
    /// Updates between target EMA steps.
    pub target_every: u64,
    pub init_temperature: f64,
    pub learn_alpha: bool,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 2,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 1e-4,
            batch_size: 128,
            gamma: 0.99,
            tau: 5e-3,
            target_every: 2,
            init_temperature: 0.1,
            learn_alpha: true,
            log_std_min: -10.0,
            log_std_max: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SacLosses {
    pub critic: f64,
    pub actor: f64,
    pub alpha: f64,
    /// Temperature after the update.
    pub alpha_value: f64,
    /// Mean entropy estimate `−log π` of the actor's samples.
    pub entropy: f64,
}

/// Soft actor-critic with twin critics, target EMA and automatic temperature.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sac {
    pub config: SacConfig,
    pub actor: DenseNet,
    pub critics: [DenseNet; 2],
    pub targets: [DenseNet; 2],
    pub log_alpha: f64,
    actor_opt: Optimizer,
    critic_opts: [Optimizer; 2],
    alpha_opt: Optimizer,
    state_dim: usize,
    action_dim: usize,
    updates: u64,
}

/// Squashed-Gaussian samples for a batch of actor outputs.
struct Sampled {
    eps: Matrix,
    action: Matrix,
    log_std: Matrix,
    raw_log_std: Matrix,
    log_prob: Vec<f64>,
}

fn log_one_minus_tanh_sq(u: f64) -> f64 {
    // log(1 − tanh²u) = 2 (ln 2 − u − softplus(−2u))
    let x = -2.0 * u;
    let softplus = if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    2.0 * (std::f64::consts::LN_2 - u - softplus)
}

impl Sac {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, config: SacConfig, rng: &mut R) -> Self {
        let hidden = vec![config.hidden; config.layers];
        let net = |i, o, rng: &mut R| {
            DenseNet::mlp(i, &hidden, o, Activation::Relu, Activation::Identity, rng)
        };
        let actor = net(state_dim, 2 * action_dim, rng);
        let critics = [net(state_dim + action_dim, 1, rng), net(state_dim + action_dim, 1, rng)];
        let targets = critics.clone();
        Self {
            actor,
            targets,
            critics,
            log_alpha: config.init_temperature.ln(),
            actor_opt: Optimizer::adam(config.actor_lr),
            critic_opts: [Optimizer::adam(config.critic_lr), Optimizer::adam(config.critic_lr)],
            alpha_opt: Optimizer::adam(config.alpha_lr),
            state_dim,
            action_dim,
            updates: 0,
            config,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn squash_log_std(&self, raw: f64) -> f64 {
        let (lo, hi) = (self.config.log_std_min, self.config.log_std_max);
        lo + 0.5 * (hi - lo) * (raw.tanh() + 1.0)
    }

    fn sample<R: Rng + ?Sized>(&self, out: &Matrix, rng: &mut R) -> Sampled {
        let (b, d) = (out.rows(), self.action_dim);
        let mut eps = Matrix::zeros(b, d);
        let mut action = Matrix::zeros(b, d);
        let mut log_std = Matrix::zeros(b, d);
        let mut raw_log_std = Matrix::zeros(b, d);
        let mut log_prob = vec![0.0; b];
        for i in 0..b {
            let row = out.row(i);
            for j in 0..d {
                let e: f64 = rng.sample(StandardNormal);
                let raw = row[d + j];
                let ls = self.squash_log_std(raw);
                let u = row[j] + ls.exp() * e;
                eps.set(i, j, e);
                action.set(i, j, u.tanh());
                log_std.set(i, j, ls);
                raw_log_std.set(i, j, raw);
                log_prob[i] += -0.5 * e * e - ls - 0.5 * LOG_2PI - log_one_minus_tanh_sq(u);
            }
        }
        Sampled {
            eps,
            action,
            log_std,
            raw_log_std,
            log_prob,
        }
    }

    /// Action in `[−1, 1]^d_a`.
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], mode: ActMode, rng: &mut R) -> Result<Vec<f64>, NnError> {
        let out = self.actor.infer_one(state)?;
        Ok(match mode {
            ActMode::Deterministic => out[..self.action_dim].iter().map(|m| m.tanh()).collect(),
            ActMode::Stochastic => self.sample(&Matrix::row_vector(&out), rng).action.into_vec(),
        })
    }

    fn min_target_q(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>, NnError> {
        let x = Matrix::hcat(&[states, actions]);
        let q1 = self.targets[0].infer(&x)?;
        let q2 = self.targets[1].infer(&x)?;
        Ok(q1.data().iter().zip(q2.data()).map(|(a, b)| a.min(*b)).collect())
    }

    /// Soft Bellman targets `r + γ (min Q' − α log π')`; episodes only end on time limits.
    pub fn critic_targets<R: Rng + ?Sized>(&self, batch: &TrainingBatch, rng: &mut R) -> Result<Vec<f64>, NnError> {
        let out = self.actor.infer(&batch.next_states)?;
        let s = self.sample(&out, rng);
        let q = self.min_target_q(&batch.next_states, &s.action)?;
        let alpha = self.alpha();
        Ok(batch
            .rewards
            .iter()
            .zip(q)
            .zip(&s.log_prob)
            .map(|((r, q), lp)| r + self.config.gamma * (q - alpha * lp))
            .collect())
    }

    /// Mean squared TD error of both critics against freshly drawn targets.
    pub fn td_error<R: Rng + ?Sized>(&self, batch: &TrainingBatch, rng: &mut R) -> Result<f64, NnError> {
        let y = self.critic_targets(batch, rng)?;
        let x = Matrix::hcat(&[&batch.states, &batch.actions]);
        let mut total = 0.0;
        for c in &self.critics {
            let q = c.infer(&x)?;
            total += q.data().iter().zip(&y).map(|(q, y)| (q - y).powi(2)).sum::<f64>();
        }
        Ok(total / (2 * y.len()) as f64)
    }

    pub fn update<R: Rng + ?Sized>(&mut self, batch: &TrainingBatch, rng: &mut R) -> Result<SacLosses, NnError> {
        let b = batch.states.rows();
        let inv_b = 1.0 / b as f64;
        let mut losses = SacLosses::default();

        let y = self.critic_targets(batch, rng)?;
        let x = Matrix::hcat(&[&batch.states, &batch.actions]);
        for k in 0..2 {
            let q = self.critics[k].forward(&x)?;
            let mut up = Matrix::zeros(b, 1);
            for i in 0..b {
                let d = q.get(i, 0) - y[i];
                losses.critic += d * d * inv_b;
                up.set(i, 0, 2.0 * d * inv_b);
            }
            let (g, _) = self.critics[k].backward(&up)?;
            self.critic_opts[k].step(&mut self.critics[k], &g)?;
        }

        let out = self.actor.forward(&batch.states)?;
        let s = self.sample(&out, rng);
        let xa = Matrix::hcat(&[&batch.states, &s.action]);
        let q1 = self.critics[0].forward(&xa)?;
        let q2 = self.critics[1].forward(&xa)?;
        let mut up1 = Matrix::zeros(b, 1);
        let mut up2 = Matrix::zeros(b, 1);
        let alpha = self.alpha();
        for i in 0..b {
            let (a, c) = (q1.get(i, 0), q2.get(i, 0));
            if a <= c {
                up1.set(i, 0, 1.0);
            } else {
                up2.set(i, 0, 1.0);
            }
            losses.actor += (alpha * s.log_prob[i] - a.min(c)) * inv_b;
        }
        let (_, dx1) = self.critics[0].backward(&up1)?;
        let (_, dx2) = self.critics[1].backward(&up2)?;
        let (ds, d) = (self.state_dim, self.action_dim);
        let (lo, hi) = (self.config.log_std_min, self.config.log_std_max);
        let mut up = Matrix::zeros(b, 2 * d);
        for i in 0..b {
            for j in 0..d {
                let dq = dx1.get(i, ds + j) + dx2.get(i, ds + j);
                let a = s.action.get(i, j);
                let sigma = s.log_std.get(i, j).exp();
                let e = s.eps.get(i, j);
                let jac = 1.0 - a * a;
                let d_mu = alpha * 2.0 * a - dq * jac;
                let d_log_std = alpha * (-1.0 + 2.0 * a * sigma * e) - dq * jac * sigma * e;
                let t = s.raw_log_std.get(i, j).tanh();
                up.set(i, j, d_mu * inv_b);
                up.set(i, d + j, d_log_std * 0.5 * (hi - lo) * (1.0 - t * t) * inv_b);
            }
        }
        let (g, _) = self.actor.backward(&up)?;
        self.actor_opt.step(&mut self.actor, &g)?;

        let mean_lp = s.log_prob.iter().sum::<f64>() * inv_b;
        let target_entropy = -(self.action_dim as f64);
        losses.entropy = -mean_lp;
        losses.alpha = alpha * (-mean_lp - target_entropy);
        if self.config.learn_alpha {
            let grad = [alpha * (-mean_lp - target_entropy)];
            let mut p = [self.log_alpha];
            self.alpha_opt.apply(&mut [&mut p[..]], &[&grad[..]])?;
            self.log_alpha = p[0];
        }
        losses.alpha_value = self.alpha();

        self.updates += 1;
        if self.updates.is_multiple_of(self.config.target_every.max(1)) {
            for k in 0..2 {
                self.targets[k].soft_update_from(&self.critics[k], self.config.tau);
            }
        }
        Ok(losses)
    }

    /// Re-initialises critics and targets, keeping the actor.
    pub fn reset_critics<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let fresh = Sac::new(self.state_dim, self.action_dim, self.config, rng);
        self.critics = fresh.critics;
        self.targets = fresh.targets;
        self.critic_opts = fresh.critic_opts;
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite()
            && self.critics.iter().all(DenseNet::is_finite)
            && self.targets.iter().all(DenseNet::is_finite)
            && self.log_alpha.is_finite()
    }
}

/// Deterministic stream for an agent component.
pub fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
