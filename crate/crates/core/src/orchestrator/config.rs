use serde::{Deserialize, Serialize};

use super::RunError;
use crate::agent::{IntrinsicConfig, SacConfig};
use crate::env::make_env;
use crate::query::QueryConfig;
use crate::reed::ReedConfig;
use crate::reward::{PreferenceTraining, RewardNetConfig, RewardVariant};
use crate::teachers::TeacherConfig;

/// Where the agent's training reward comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSource {
    /// Learned from preferences (PEBBLE, optionally with REED).
    #[default]
    Learned,
    /// The environment's own reward; used for the reference run.
    GroundTruth,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedbackConfig {
    /// Total queries across all sessions.
    pub budget: usize,
    /// Queries per session (`M`).
    pub queries_per_session: usize,
    /// Policy steps between sessions (`K`).
    pub interval: usize,
    pub segment_len: usize,
    pub query: QueryConfig,
    /// Keep running REED every `K` steps once the budget is spent.
    pub reed_after_budget: bool,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self {
            budget: 50,
            queries_per_session: 5,
            interval: 2000,
            segment_len: 50,
            query: QueryConfig::default(),
            reed_after_budget: false,
        }
    }
}

impl FeedbackConfig {
    pub fn sessions(&self) -> usize {
        if self.budget == 0 {
            0
        } else {
            self.budget / self.queries_per_session
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub net: RewardNetConfig,
    pub ensemble_size: usize,
    pub lr: f64,
    pub training: PreferenceTraining,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            net: RewardNetConfig::default(),
            ensemble_size: 3,
            lr: 3e-4,
            training: PreferenceTraining::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Total environment steps between evaluations; a multiple of the horizon.
    pub every: usize,
    pub episodes: usize,
    /// Reset seed of the first evaluation episode.
    pub seed: u64,
    /// Transitions sampled for the embedding-variance probe.
    pub variance_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            every: 1000,
            episodes: 10,
            seed: 1_000_000,
            variance_samples: 1024,
        }
    }
}

/// Everything that defines one training run. Loaded from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub name: String,
    pub env: String,
    pub seed: u64,
    /// Environment steps including pre-training.
    pub total_steps: usize,
    pub reward_source: RewardSource,
    pub replay_capacity: Option<usize>,
    pub explore: IntrinsicConfig,
    pub sac: SacConfig,
    pub feedback: FeedbackConfig,
    /// `seed` is replaced by a stream derived from the run seed.
    pub teacher: TeacherConfig,
    pub reward: RewardConfig,
    /// REED is enabled when this table is present.
    pub reed: Option<ReedConfig>,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "pebble".into(),
            env: crate::env::POINT_MASS.into(),
            seed: 0,
            total_steps: 50_000,
            reward_source: RewardSource::Learned,
            replay_capacity: None,
            explore: IntrinsicConfig::default(),
            sac: SacConfig::default(),
            feedback: FeedbackConfig::default(),
            teacher: TeacherConfig::default(),
            reward: RewardConfig::default(),
            reed: None,
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn policy_steps(&self) -> usize {
        self.total_steps.saturating_sub(self.explore.steps)
    }

    pub fn capacity(&self) -> usize {
        self.replay_capacity.unwrap_or(self.total_steps).max(1)
    }

    /// Policy step at which session `i` (0-based) opens.
    pub fn session_step(&self, i: usize) -> usize {
        i * self.feedback.interval
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        let env = make_env(&self.env)?;
        let spec = env.spec();
        let fb = &self.feedback;
        if self.total_steps == 0 {
            return bad("total_steps must be positive".into());
        }
        if self.explore.k == 0 {
            return bad("explore.k must be at least 1".into());
        }
        if self.explore.steps > self.total_steps {
            return bad("explore.steps exceeds total_steps".into());
        }
        if self.eval.every == 0 || !self.eval.every.is_multiple_of(spec.horizon) {
            return bad(format!("eval.every must be a positive multiple of the horizon {}", spec.horizon));
        }
        if self.eval.episodes == 0 {
            return bad("eval.episodes must be positive".into());
        }
        if self.reward.ensemble_size == 0 {
            return bad("reward.ensemble_size must be positive".into());
        }
        if self.sac.batch_size == 0 {
            return bad("sac.batch_size must be positive".into());
        }
        self.teacher.validate()?;
        if let Some(reed) = &self.reed {
            reed.validate()?;
            if self.reward.net.variant != RewardVariant::Saf {
                return bad("REED needs the SAF reward network".into());
            }
        }
        if self.reward_source == RewardSource::GroundTruth {
            return Ok(());
        }
        if fb.budget > 0 {
            if fb.queries_per_session == 0 || !fb.budget.is_multiple_of(fb.queries_per_session) {
                return bad(format!(
                    "budget {} is not a multiple of queries_per_session {}",
                    fb.budget, fb.queries_per_session
                ));
            }
            if fb.interval == 0 {
                return bad("feedback.interval must be positive".into());
            }
            if fb.segment_len == 0 || fb.segment_len > spec.horizon {
                return bad(format!("segment_len must lie in 1..={}", spec.horizon));
            }
            let last = self.session_step(fb.sessions() - 1);
            if last >= self.policy_steps() {
                return bad(format!(
                    "{} sessions every {} steps do not fit in {} policy steps",
                    fb.sessions(),
                    fb.interval,
                    self.policy_steps()
                ));
            }
            if self.explore.steps < fb.segment_len {
                return bad("explore.steps must cover at least one segment".into());
            }
        }
        Ok(())
    }
}

/// Settings compared in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pebble,
    PebbleSaf,
    ReedSimsiam,
    ReedContrastive,
    Reference,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Pebble,
        Method::PebbleSaf,
        Method::ReedSimsiam,
        Method::ReedContrastive,
        Method::Reference,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pebble => "pebble",
            Method::PebbleSaf => "pebble_saf",
            Method::ReedSimsiam => "reed_simsiam",
            Method::ReedContrastive => "reed_contrastive",
            Method::Reference => "reference",
        }
    }

    /// Rewrites the reward and REED settings of `base` for this method.
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        use crate::reed::Objective;
        let mut cfg = base.clone();
        cfg.name = self.as_str().into();
        cfg.reward_source = RewardSource::Learned;
        let reed = base.reed.unwrap_or_default();
        match self {
            Method::Pebble => {
                cfg.reward.net.variant = RewardVariant::OriginalConcat;
                cfg.reed = None;
            }
            Method::PebbleSaf => {
                cfg.reward.net.variant = RewardVariant::Saf;
                cfg.reed = None;
            }
            Method::ReedSimsiam | Method::ReedContrastive => {
                cfg.reward.net.variant = RewardVariant::Saf;
                cfg.reed = Some(ReedConfig {
                    objective: if self == Method::ReedSimsiam {
                        Objective::Simsiam
                    } else {
                        Objective::Contrastive
                    },
                    ..reed
                });
            }
            Method::Reference => {
                cfg.reward_source = RewardSource::GroundTruth;
                cfg.reed = None;
            }
        }
        cfg
    }
}

impl std::str::FromStr for Method {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| RunError::Config(format!("unknown method {s:?}")))
    }
}
