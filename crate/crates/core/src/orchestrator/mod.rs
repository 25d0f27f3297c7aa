//! The training loop: pre-training, feedback sessions, REED and reward
//! updates, relabelling, SAC, evaluation and run outputs.

mod config;
mod experiment;
mod feedback;
mod metrics;

pub use config::{EvalConfig, FeedbackConfig, Method, RewardConfig, RewardSource, RunConfig};
pub use experiment::{
    return_offset, run_experiment, Event, EventKind, Experiment, RunOutput, Summary, STREAM_AGENT,
    STREAM_PROBE, STREAM_QUERY, STREAM_REED, STREAM_REWARD, STREAM_TEACHER,
};
pub use feedback::{
    human_channel, FeedbackError, FeedbackRequest, HumanEndpoint, HumanLabeler, HumanReply, HumanSession,
    Labeler, PendingQuery, SessionLabel, TeacherLabeler,
};
pub use metrics::{
    final_window_len, final_window_return, format_mean_sd, mean_sd, normalized_return, read_metrics,
    write_csv, AuditRecord, Curve, MetricsRecord, DENOMINATOR_EPS,
};

use thiserror::Error;

use crate::agent::AgentError;
use crate::env::EnvError;
use crate::nn::NnError;
use crate::query::QueryError;
use crate::reed::ReedError;
use crate::replay::ReplayError;
use crate::reward::PreferenceError;
use crate::teachers::TeacherError;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("learning curves differ in grid: {learned} vs {reference} points")]
    GridMismatch { learned: usize, reference: usize },
    #[error("run has {0} evaluation points; the final window needs at least 10")]
    ShortRun(usize),
    #[error("feedback budget {budget} would be exceeded ({asked} queries)")]
    BudgetExceeded { budget: usize, asked: usize },
    #[error("feedback session suspended: {0}")]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Preference(#[from] PreferenceError),
    #[error(transparent)]
    Reed(#[from] ReedError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}


#[cfg(test)]
mod tests;
