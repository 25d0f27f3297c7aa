use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{render_trace, EnvError, EnvSpec, Trace};
use crate::replay::Segment;
use crate::teachers::{Label, ReturnStats, Teacher, TeacherError};

#[derive(Debug, Error, PartialEq)]
pub enum FeedbackError {
    #[error("no labels for session {0} before the timeout")]
    Timeout(u64),
    #[error("the labelling endpoint hung up")]
    Disconnected,
    #[error("session {session}: expected {expected} labels, got {found}")]
    Incomplete { session: u64, expected: usize, found: usize },
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// The queries of one feedback session.
pub struct FeedbackRequest<'a> {
    pub session: u64,
    pub step: u64,
    pub queries: &'a [(Segment, Segment)],
    pub stats: &'a ReturnStats,
}

/// A label plus whatever the labeler can say about it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionLabel {
    pub label: Label,
    /// Returns the teacher compared, when known.
    pub returns: Option<(f64, f64)>,
    pub perturbed: bool,
}

/// Anything that can answer a feedback session.
pub trait Labeler: Send {
    fn label(&mut self, request: &FeedbackRequest<'_>) -> Result<Vec<SessionLabel>, FeedbackError>;
}

/// A scripted teacher with ground-truth access.
pub struct TeacherLabeler(pub Teacher);

impl Labeler for TeacherLabeler {
    fn label(&mut self, request: &FeedbackRequest<'_>) -> Result<Vec<SessionLabel>, FeedbackError> {
        Ok(self
            .0
            .label_batch(request.queries, Some(request.stats))?
            .into_iter()
            .map(|d| SessionLabel {
                label: d.label,
                returns: Some((d.return_first, d.return_second)),
                perturbed: d.perturbed,
            })
            .collect())
    }
}

/// One pair as shown to a human: render traces and where the segments came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub pair_id: u64,
    pub trace_a: Trace,
    pub trace_b: Trace,
    pub segment_len: usize,
    pub episode_a: u64,
    pub start_a: u64,
    pub episode_b: u64,
    pub start_b: u64,
}

/// Sent from the experiment to the labelling service.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanSession {
    pub session: u64,
    pub step: u64,
    pub queries: Vec<PendingQuery>,
}

/// Sent back once every pair of `session` is resolved; `labels[i]` answers `pair_id == i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanReply {
    pub session: u64,
    pub labels: Vec<Label>,
}

/// Forwards sessions to a human over channels and blocks until they answer.
pub struct HumanLabeler {
    spec: EnvSpec,
    requests: Sender<HumanSession>,
    replies: Receiver<HumanReply>,
    timeout: Duration,
    announced: Option<u64>,
}

/// The service's side of a [`HumanLabeler`].
pub struct HumanEndpoint {
    pub requests: Receiver<HumanSession>,
    pub replies: Sender<HumanReply>,
}

pub fn human_channel(spec: EnvSpec, timeout: Duration) -> (HumanLabeler, HumanEndpoint) {
    let (req_tx, req_rx) = channel();
    let (rep_tx, rep_rx) = channel();
    (
        HumanLabeler {
            spec,
            requests: req_tx,
            replies: rep_rx,
            timeout,
            announced: None,
        },
        HumanEndpoint {
            requests: req_rx,
            replies: rep_tx,
        },
    )
}

impl HumanLabeler {
    fn announce(&mut self, request: &FeedbackRequest<'_>) -> Result<(), FeedbackError> {
        let queries = request
            .queries
            .iter()
            .enumerate()
            .map(|(i, (a, b))| {
                Ok(PendingQuery {
                    pair_id: i as u64,
                    trace_a: render_trace(&self.spec, a)?,
                    trace_b: render_trace(&self.spec, b)?,
                    segment_len: a.len(),
                    episode_a: a.episode(),
                    start_a: a.start_step() as u64,
                    episode_b: b.episode(),
                    start_b: b.start_step() as u64,
                })
            })
            .collect::<Result<Vec<_>, EnvError>>()?;
        self.requests
            .send(HumanSession {
                session: request.session,
                step: request.step,
                queries,
            })
            .map_err(|_| FeedbackError::Disconnected)?;
        self.announced = Some(request.session);
        Ok(())
    }
}

impl Labeler for HumanLabeler {
    /// Announces the session once; a timed-out session is resumed by calling again.
    fn label(&mut self, request: &FeedbackRequest<'_>) -> Result<Vec<SessionLabel>, FeedbackError> {
        if self.announced != Some(request.session) {
            self.announce(request)?;
        }
        loop {
            let reply = match self.replies.recv_timeout(self.timeout) {
                Ok(r) => r,
                Err(RecvTimeoutError::Timeout) => return Err(FeedbackError::Timeout(request.session)),
                Err(RecvTimeoutError::Disconnected) => return Err(FeedbackError::Disconnected),
            };
            if reply.session != request.session {
                continue;
            }
            if reply.labels.len() != request.queries.len() {
                return Err(FeedbackError::Incomplete {
                    session: request.session,
                    expected: request.queries.len(),
                    found: reply.labels.len(),
                });
            }
            return Ok(reply
                .labels
                .into_iter()
                .map(|label| SessionLabel {
                    label,
                    returns: None,
                    perturbed: false,
                })
                .collect());
        }
    }
}
