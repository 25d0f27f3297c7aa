use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::feedback::{FeedbackRequest, Labeler, TeacherLabeler};
use super::metrics::{final_window_return, normalized_return, write_csv, AuditRecord, Curve, MetricsRecord};
use super::{RewardSource, RunConfig, RunError};
use crate::agent::{component_rng, ActMode, Explorer, Rollout, Sac, SacLosses};
use crate::env::{make_env, EnvSpec, Environment};
use crate::nn::Matrix;
use crate::query::{select_queries, QueryBatch};
use crate::reed::{embedding_variance, ReedLearner};
use crate::replay::{GroundTruthAccess, ReplayBuffer, RewardPredictor, Transition};
use crate::reward::{PreferenceDataset, PreferenceTriplet, RewardEnsemble, RewardVariant};
use crate::teachers::{ReturnStats, Teacher, TeacherConfig};

pub const STREAM_AGENT: u64 = 1;
pub const STREAM_REWARD: u64 = 2;
pub const STREAM_REED: u64 = 3;
pub const STREAM_QUERY: u64 = 4;
pub const STREAM_PROBE: u64 = 5;
pub const STREAM_TEACHER: u64 = 6;

/// Added to every evaluation return before taking ratios, so that returns of
/// negative-reward environments become non-negative: `horizon · reward_bound`.
pub fn return_offset(spec: &EnvSpec) -> f64 {
    spec.horizon as f64 * spec.reward_bound
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ExploreDone,
    ReedUpdate,
    QueriesSelected,
    FeedbackSession,
    RewardUpdate,
    Relabel,
    Evaluation,
}

/// Ordered log of loop milestones; `seq` is strictly increasing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub step: u64,
    pub kind: EventKind,
}

/// Written to `summary.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub env: String,
    pub seed: u64,
    pub total_steps: u64,
    pub budget: u64,
    pub labels: u64,
    pub queries: u64,
    pub sessions: u64,
    pub spr_ops: u64,
    pub eval: Curve,
    pub final_eval_return: Option<f64>,
    /// Mean ground-truth reward of the last state of each final evaluation episode.
    pub final_terminal_reward: Option<f64>,
    pub return_offset: f64,
    pub normalized_return: Option<f64>,
    pub final_window_return: Option<f64>,
}

impl Summary {
    /// Fills the normalized scores from a reference run on the same grid.
    pub fn score_against(&mut self, reference: &Curve) -> Result<(), RunError> {
        let l = self.eval.shifted(self.return_offset);
        let r = reference.shifted(self.return_offset);
        self.normalized_return = Some(normalized_return(&l, &r)?);
        self.final_window_return = final_window_return(&l, &r).ok();
        Ok(())
    }
}

/// Everything a finished run produces.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub config: RunConfig,
    pub records: Vec<MetricsRecord>,
    pub audit: Vec<AuditRecord>,
    pub events: Vec<Event>,
    pub summary: Summary,
}

impl RunOutput {
    pub fn metrics_csv(&self) -> Result<Vec<u8>, RunError> {
        let mut out = Vec::new();
        write_csv(&self.records, &mut out)?;
        Ok(out)
    }

    /// `metrics.csv`, `labels_audit.csv`, `summary.json` and the resolved `config.toml`.
    pub fn write(&self, dir: &Path) -> Result<(), RunError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), self.metrics_csv()?)?;
        write_csv(&self.audit, std::fs::File::create(dir.join("labels_audit.csv"))?)?;
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&self.summary)?)?;
        std::fs::write(dir.join("config.toml"), self.config.to_toml())?;
        Ok(())
    }
}

struct Streams {
    agent: ChaCha8Rng,
    reward: ChaCha8Rng,
    reed: ChaCha8Rng,
    query: ChaCha8Rng,
    probe: ChaCha8Rng,
}

#[derive(Default)]
struct EpisodeTally {
    learned_return: f64,
    critic: f64,
    actor: f64,
    updates: usize,
}

impl EpisodeTally {
    fn add(&mut self, losses: Option<SacLosses>) {
        if let Some(l) = losses {
            self.critic += l.critic;
            self.actor += l.actor;
            self.updates += 1;
        }
    }

    fn mean(&self, total: f64) -> Option<f64> {
        (self.updates > 0).then(|| total / self.updates as f64)
    }
}

#[derive(Default)]
struct Latest {
    reward_loss: Option<f64>,
    reward_accuracy: Option<f64>,
    reed_loss: Option<f64>,
    reed_degenerate: u64,
    disagreement_mean: Option<f64>,
    embedding_variance: Option<f64>,
}

/// A resumable run. [`Experiment::run`] returns [`RunError::Feedback`] when a
/// labeler gives up; calling it again resumes the same pending session.
pub struct Experiment {
    config: RunConfig,
    spec: EnvSpec,
    rollout: Rollout,
    eval_env: Box<dyn Environment>,
    buffer: ReplayBuffer,
    agent: Sac,
    ensemble: RewardEnsemble,
    reed: Vec<ReedLearner>,
    labeler: Box<dyn Labeler>,
    dataset: PreferenceDataset,
    stats: ReturnStats,
    rng: Streams,
    explorer: Option<Explorer>,
    step: u64,
    policy_step: usize,
    sessions_done: usize,
    queries_asked: usize,
    pending: Option<QueryBatch>,
    last_reed_step: Option<usize>,
    tally: EpisodeTally,
    latest: Latest,
    spr_ops: u64,
    records: Vec<MetricsRecord>,
    audit: Vec<AuditRecord>,
    events: Vec<Event>,
}

impl Experiment {
    /// A run labelled by the configured simulated teacher.
    pub fn new(config: RunConfig) -> Result<Self, RunError> {
        config.validate()?;
        let teacher = TeacherConfig {
            seed: component_rng(config.seed, STREAM_TEACHER).random(),
            ..config.teacher
        };
        let labeler = Box::new(TeacherLabeler(Teacher::new(teacher)?));
        Self::with_labeler(config, labeler)
    }

    pub fn with_labeler(config: RunConfig, labeler: Box<dyn Labeler>) -> Result<Self, RunError> {
        config.validate()?;
        let env = make_env(&config.env)?;
        let spec = env.spec().clone();
        let (ds, da) = (spec.state_dim, spec.action_dim);
        let seed = config.seed;
        let mut rng = Streams {
            agent: component_rng(seed, STREAM_AGENT),
            reward: component_rng(seed, STREAM_REWARD),
            reed: component_rng(seed, STREAM_REED),
            query: component_rng(seed, STREAM_QUERY),
            probe: component_rng(seed, STREAM_PROBE),
        };
        let agent = Sac::new(ds, da, config.sac, &mut rng.agent);
        let ensemble = RewardEnsemble::new(
            ds,
            da,
            config.reward.ensemble_size,
            config.reward.net,
            config.reward.lr,
            &mut rng.reward,
        );
        let reed = match (&config.reed, config.reward_source) {
            (Some(cfg), RewardSource::Learned) => ensemble
                .members
                .iter()
                .map(|m| ReedLearner::new(&m.net, cfg, &mut rng.reed))
                .collect::<Result<_, _>>()?,
            _ => Vec::new(),
        };
        let buffer = ReplayBuffer::new(config.capacity(), ds, da);
        Ok(Self {
            rollout: Rollout::new(env, seed),
            eval_env: make_env(&config.env)?,
            explorer: Some(Explorer::new(config.explore, &buffer)),
            buffer,
            agent,
            ensemble,
            reed,
            labeler,
            dataset: PreferenceDataset::new(config.feedback.budget),
            stats: ReturnStats::new(config.feedback.interval.max(1) as u64),
            rng,
            step: 0,
            policy_step: 0,
            sessions_done: 0,
            queries_asked: 0,
            pending: None,
            last_reed_step: None,
            tally: EpisodeTally::default(),
            latest: Latest::default(),
            spr_ops: 0,
            records: Vec::new(),
            audit: Vec::new(),
            events: Vec::new(),
            spec,
            config,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.total_steps as u64
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn ensemble(&self) -> &RewardEnsemble {
        &self.ensemble
    }

    pub fn agent(&self) -> &Sac {
        &self.agent
    }

    pub fn dataset(&self) -> &PreferenceDataset {
        &self.dataset
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Number of SPR forward/backward batches executed so far.
    pub fn spr_ops(&self) -> u64 {
        self.spr_ops
    }

    /// Sessions completed so far.
    pub fn sessions(&self) -> usize {
        self.sessions_done
    }

    fn log(&mut self, kind: EventKind) {
        let seq = self.events.len() as u64;
        self.events.push(Event {
            seq,
            step: self.step,
            kind,
        });
    }

    /// Runs until `total_steps` or until a feedback session cannot be completed.
    pub fn run(&mut self) -> Result<(), RunError> {
        while !self.is_finished() {
            self.advance()?;
        }
        Ok(())
    }

    /// Runs until `total_steps` and assembles the outputs.
    pub fn finish(mut self) -> Result<RunOutput, RunError> {
        self.run()?;
        let eval = Curve::from_records(&self.records);
        let final_terminal_reward = self.records.iter().rev().find_map(|r| r.eval_terminal_reward);
        let summary = Summary {
            name: self.config.name.clone(),
            env: self.config.env.clone(),
            seed: self.config.seed,
            total_steps: self.step,
            budget: self.config.feedback.budget as u64,
            labels: self.dataset.len() as u64,
            queries: self.queries_asked as u64,
            sessions: self.sessions_done as u64,
            spr_ops: self.spr_ops,
            final_eval_return: eval.returns.last().copied(),
            final_terminal_reward,
            eval,
            return_offset: return_offset(&self.spec),
            normalized_return: None,
            final_window_return: None,
        };
        Ok(RunOutput {
            config: self.config,
            records: self.records,
            audit: self.audit,
            events: self.events,
            summary,
        })
    }

    /// One environment step, preceded by any feedback session due at it.
    pub fn advance(&mut self) -> Result<(), RunError> {
        if let Some(explorer) = &self.explorer {
            if !explorer.done() {
                return self.explore_step();
            }
            self.explorer = None;
            self.agent.reset_critics(&mut self.rng.agent);
            if self.config.reward_source == RewardSource::Learned {
                self.relabel();
            }
            self.log(EventKind::ExploreDone);
        }
        if self.config.reward_source == RewardSource::Learned {
            self.maybe_feedback()?;
        }
        self.policy_step()
    }

    fn explore_step(&mut self) -> Result<(), RunError> {
        let Self {
            explorer,
            agent,
            rollout,
            buffer,
            ensemble,
            rng,
            config,
            ..
        } = self;
        let explorer = explorer.as_mut().expect("exploring");
        let source = config.reward_source;
        let mut label = |t: &Transition| predict_reward(source, ensemble, t);
        let out = explorer.step(agent, rollout, buffer, &mut label, &mut rng.agent)?;
        let learned = buffer.get(buffer.len() - 1).map_or(0.0, |t| t.learned_reward);
        self.after_env_step(learned, out.losses, out.finished_return, "explore")
    }

    fn policy_step(&mut self) -> Result<(), RunError> {
        let action = self.agent.act(self.rollout.observation(), ActMode::Stochastic, &mut self.rng.agent)?;
        let mut out = self.rollout.step(&action)?;
        let learned = predict_reward(self.config.reward_source, &self.ensemble, &out.transition);
        out.transition.learned_reward = learned;
        self.buffer.push(out.transition)?;
        let mut losses = None;
        if self.buffer.len() >= self.config.sac.batch_size {
            let idx = self.buffer.sample_indices(self.config.sac.batch_size, &mut self.rng.agent)?;
            let batch = self.buffer.training_batch(&idx);
            losses = Some(self.agent.update(&batch, &mut self.rng.agent)?);
        }
        self.policy_step += 1;
        self.after_env_step(learned, losses, out.finished_return, "policy")
    }

    fn after_env_step(
        &mut self,
        learned: f64,
        losses: Option<SacLosses>,
        finished: Option<f64>,
        phase: &str,
    ) -> Result<(), RunError> {
        self.step += 1;
        self.tally.learned_return += learned;
        self.tally.add(losses);
        if let Some(true_return) = finished {
            self.stats.record(self.step, true_return);
            let evaluate = self.explorer.is_none()
                && self.step > self.config.explore.steps as u64
                && self.step.is_multiple_of(self.config.eval.every as u64);
            let (eval_return, eval_terminal_reward) = if evaluate {
                let (r, t) = self.evaluate()?;
                (Some(r), Some(t))
            } else {
                (None, None)
            };
            let tally = std::mem::take(&mut self.tally);
            self.records.push(MetricsRecord {
                step: self.step,
                episode: self.rollout.episode() - 1,
                phase: phase.into(),
                true_return,
                learned_return: tally.learned_return,
                eval_return,
                eval_terminal_reward,
                critic_loss: tally.mean(tally.critic),
                actor_loss: tally.mean(tally.actor),
                alpha: self.agent.alpha(),
                reward_loss: self.latest.reward_loss,
                reward_accuracy: self.latest.reward_accuracy,
                reed_loss: self.latest.reed_loss,
                reed_degenerate: self.latest.reed_degenerate,
                disagreement_mean: self.latest.disagreement_mean,
                embedding_variance: self.latest.embedding_variance,
                labels: self.dataset.len() as u64,
                queries: self.queries_asked as u64,
                spr_ops: self.spr_ops,
            });
        }
        Ok(())
    }

    /// Deterministic-policy return and terminal reward, averaged over episodes.
    fn evaluate(&mut self) -> Result<(f64, f64), RunError> {
        let eval = self.config.eval;
        let (mut total, mut terminal) = (0.0, 0.0);
        for e in 0..eval.episodes as u64 {
            let mut state = self.eval_env.reset(eval.seed + e);
            while !state.done {
                let a = self.agent.act(&state.observation, ActMode::Deterministic, &mut self.rng.probe)?;
                let out = self.eval_env.step(&a)?;
                total += out.reward;
                state = out.state;
            }
            let zero = vec![0.0; self.spec.action_dim];
            terminal += self.eval_env.ground_truth_reward(&state.observation, &zero);
        }
        self.log(EventKind::Evaluation);
        let n = eval.episodes as f64;
        Ok((total / n, terminal / n))
    }

    fn relabel(&mut self) {
        self.buffer.relabel(&self.ensemble);
        self.log(EventKind::Relabel);
    }

    fn maybe_feedback(&mut self) -> Result<(), RunError> {
        let fb = self.config.feedback;
        let p = self.policy_step;
        let due = self.sessions_done < fb.sessions() && p == self.config.session_step(self.sessions_done);
        if due {
            if self.pending.is_none() {
                if !self.reed.is_empty() && self.last_reed_step != Some(p) {
                    self.reed_update()?;
                }
                self.probe_embeddings()?;
                let batch = select_queries(
                    &fb.query,
                    &self.buffer,
                    &self.ensemble,
                    fb.queries_per_session,
                    fb.segment_len,
                    &mut self.rng.query,
                )?;
                self.latest.disagreement_mean =
                    (!batch.scores.is_empty()).then(|| batch.scores.iter().sum::<f64>() / batch.scores.len() as f64);
                self.pending = Some(batch);
                self.log(EventKind::QueriesSelected);
            }
            return self.complete_session();
        }
        let after_budget = fb.reed_after_budget && self.sessions_done == fb.sessions() && p > 0;
        if after_budget && fb.interval > 0 && p.is_multiple_of(fb.interval) && !self.reed.is_empty() && self.last_reed_step != Some(p)
        {
            self.reed_update()?;
            self.probe_embeddings()?;
            self.relabel();
        }
        Ok(())
    }

    fn reed_update(&mut self) -> Result<(), RunError> {
        let cfg = self.config.reed.expect("REED learners exist only with a REED config");
        let (mut loss, mut degenerate) = (0.0, 0);
        for (learner, member) in self.reed.iter_mut().zip(self.ensemble.members.iter_mut()) {
            let report = learner.update(&mut member.net, &self.buffer, &cfg, &mut self.rng.reed)?;
            self.spr_ops += report.batch_losses.len() as u64;
            loss += report.losses.last().copied().unwrap_or(0.0);
            degenerate += report.degenerate as u64;
        }
        self.latest.reed_loss = Some(loss / self.reed.len() as f64);
        self.latest.reed_degenerate += degenerate;
        self.last_reed_step = Some(self.policy_step);
        self.log(EventKind::ReedUpdate);
        Ok(())
    }

    fn probe_embeddings(&mut self) -> Result<(), RunError> {
        if self.config.reward.net.variant != RewardVariant::Saf {
            return Ok(());
        }
        let n = self.config.eval.variance_samples.min(self.buffer.len());
        if n < 2 {
            return Ok(());
        }
        let enc = self.ensemble.members[0].net.encoders().expect("SAF network has encoders");
        self.latest.embedding_variance = Some(embedding_variance(enc, &self.buffer, n, &mut self.rng.probe)?);
        Ok(())
    }

    fn complete_session(&mut self) -> Result<(), RunError> {
        let fb = self.config.feedback;
        let batch = self.pending.as_ref().expect("pending session");
        let request = FeedbackRequest {
            session: self.sessions_done as u64,
            step: self.step,
            queries: &batch.pairs,
            stats: &self.stats,
        };
        let labels = self.labeler.label(&request)?;
        if labels.len() != batch.pairs.len() {
            return Err(super::FeedbackError::Incomplete {
                session: request.session,
                expected: batch.pairs.len(),
                found: labels.len(),
            }
            .into());
        }
        let asked = self.queries_asked + batch.pairs.len();
        if asked > fb.budget {
            return Err(RunError::BudgetExceeded { budget: fb.budget, asked });
        }
        let batch = self.pending.take().expect("pending session");
        for (i, ((a, b), l)) in batch.pairs.into_iter().zip(&labels).enumerate() {
            self.audit.push(AuditRecord {
                session: self.sessions_done as u64,
                step: self.step,
                query: i as u64,
                first_episode: a.episode(),
                first_start: a.start_step() as u64,
                second_episode: b.episode(),
                second_start: b.start_step() as u64,
                score: batch.scores.get(i).copied(),
                label: l.label.as_str().into(),
                return_first: l.returns.map(|r| r.0),
                return_second: l.returns.map(|r| r.1),
                perturbed: l.perturbed,
            });
            if let Some(pref) = l.label.preference() {
                self.dataset.push(PreferenceTriplet::new(a, b, pref)?)?;
            }
        }
        self.queries_asked = asked;
        self.sessions_done += 1;
        self.log(EventKind::FeedbackSession);
        if !self.dataset.is_empty() {
            let reports = self
                .ensemble
                .train(self.dataset.triplets(), &self.config.reward.training, &mut self.rng.reward)?;
            let n = reports.len() as f64;
            self.latest.reward_loss = Some(reports.iter().map(|r| r.losses.last().copied().unwrap_or(0.0)).sum::<f64>() / n);
            self.latest.reward_accuracy = Some(reports.iter().map(|r| r.accuracy).sum::<f64>() / n);
            self.log(EventKind::RewardUpdate);
        }
        self.relabel();
        Ok(())
    }
}

fn predict_reward(source: RewardSource, ensemble: &RewardEnsemble, t: &Transition) -> f64 {
    match source {
        RewardSource::GroundTruth => t.true_reward(GroundTruthAccess::grant()),
        RewardSource::Learned => {
            ensemble.predict_batch(&Matrix::row_vector(&t.state), &Matrix::row_vector(&t.action))[0]
        }
    }
}

/// Runs `config` with its simulated teacher to completion.
pub fn run_experiment(config: RunConfig) -> Result<RunOutput, RunError> {
    Experiment::new(config)?.finish()
}
