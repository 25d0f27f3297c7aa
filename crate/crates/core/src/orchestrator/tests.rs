use std::sync::{Arc, Mutex};

use super::*;
use crate::agent::{IntrinsicConfig, SacConfig};
use crate::reed::ReedConfig;
use crate::replay::{GroundTruthAccess, RewardPredictor};
use crate::reward::{PreferenceTraining, RewardVariant};
use crate::teachers::{Label, TeacherStyle};

fn small(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        total_steps: 2200,
        explore: IntrinsicConfig {
            k: 5,
            steps: 600,
            random_steps: 200,
        },
        sac: SacConfig {
            batch_size: 32,
            ..SacConfig::default()
        },
        feedback: FeedbackConfig {
            budget: 8,
            queries_per_session: 2,
            interval: 300,
            segment_len: 20,
            ..FeedbackConfig::default()
        },
        reward: RewardConfig {
            training: PreferenceTraining {
                max_epochs: 10,
                ..PreferenceTraining::default()
            },
            ..RewardConfig::default()
        },
        eval: EvalConfig {
            every: 200,
            episodes: 2,
            ..EvalConfig::default()
        },
        ..RunConfig::default()
    }
}

fn with_reed(mut cfg: RunConfig) -> RunConfig {
    cfg.reed = Some(ReedConfig {
        batch_size: 32,
        batches_per_epoch: Some(4),
        ..ReedConfig::default()
    });
    cfg
}

/// Never expected to be called.
struct Unreachable;

impl Labeler for Unreachable {
    fn label(&mut self, _: &FeedbackRequest<'_>) -> Result<Vec<SessionLabel>, FeedbackError> {
        panic!("teacher called")
    }
}

#[test]
fn same_seed_gives_identical_metrics_bytes() {
    let a = run_experiment(with_reed(small(3))).unwrap();
    let b = run_experiment(with_reed(small(3))).unwrap();
    assert_eq!(a.metrics_csv().unwrap(), b.metrics_csv().unwrap());
    assert_eq!(a.audit, b.audit);
    let c = run_experiment(with_reed(small(4))).unwrap();
    assert_ne!(a.metrics_csv().unwrap(), c.metrics_csv().unwrap());
}

#[test]
fn sessions_follow_the_budget_schedule() {
    let out = run_experiment(small(1)).unwrap();
    let s = &out.summary;
    assert_eq!(s.sessions, 4);
    assert_eq!(s.queries, 8);
    assert_eq!(s.labels, 8);
    assert_eq!(out.audit.len(), 8);
    let session_steps: Vec<u64> = out
        .events
        .iter()
        .filter(|e| e.kind == EventKind::FeedbackSession)
        .map(|e| e.step)
        .collect();
    assert_eq!(session_steps, vec![600, 900, 1200, 1500]);
    assert!(out.records.iter().all(|r| r.queries <= 8));
    assert!(out.records.windows(2).all(|w| w[0].step < w[1].step));
}

#[test]
fn scaled_budgets_stop_at_the_same_step() {
    let last = |budget: usize, m: usize| {
        let mut cfg = small(0);
        cfg.feedback.budget = budget;
        cfg.feedback.queries_per_session = m;
        cfg.validate().unwrap();
        assert_eq!(cfg.feedback.sessions(), 4);
        cfg.session_step(cfg.feedback.sessions() - 1)
    };
    assert_eq!(last(8, 2), last(20, 5));
    assert_eq!(last(8, 2), last(40, 10));
}

#[test]
fn skip_teacher_keeps_eighteen_of_twenty() {
    let mut cfg = small(2);
    cfg.feedback.budget = 20;
    cfg.feedback.queries_per_session = 20;
    cfg.teacher.style = TeacherStyle::Skip;
    let out = run_experiment(cfg).unwrap();
    assert_eq!(out.summary.queries, 20);
    assert_eq!(out.summary.labels, 18);
    assert_eq!(out.audit.iter().filter(|a| a.label == "discard").count(), 2);
}

#[test]
fn zero_budget_never_calls_the_teacher() {
    let mut cfg = small(5);
    cfg.feedback.budget = 0;
    let mut exp = Experiment::with_labeler(cfg, Box::new(Unreachable)).unwrap();
    let before = exp.ensemble().members[0].net.flat_params();
    exp.run().unwrap();
    assert_eq!(exp.ensemble().members[0].net.flat_params(), before);
    assert_eq!(exp.dataset().len(), 0);
    assert_eq!(exp.sessions(), 0);
}

#[test]
fn baseline_executes_no_spr_operations() {
    let cfg = Method::Pebble.apply(&with_reed(small(6)));
    assert_eq!(cfg.reward.net.variant, RewardVariant::OriginalConcat);
    let out = run_experiment(cfg).unwrap();
    assert_eq!(out.summary.spr_ops, 0);
    assert!(out.events.iter().all(|e| e.kind != EventKind::ReedUpdate));
    let reed = run_experiment(Method::ReedContrastive.apply(&with_reed(small(6)))).unwrap();
    assert_eq!(reed.summary.spr_ops, 4 * 3 * 4);
}

#[test]
fn reed_runs_before_every_session() {
    let out = run_experiment(with_reed(small(7))).unwrap();
    let sessions: Vec<&Event> = out.events.iter().filter(|e| e.kind == EventKind::FeedbackSession).collect();
    assert_eq!(sessions.len(), 4);
    for s in sessions {
        let reed = out
            .events
            .iter()
            .rev()
            .find(|e| e.kind == EventKind::ReedUpdate && e.seq < s.seq)
            .expect("REED update precedes session");
        assert_eq!(reed.step, s.step);
        let select = out
            .events
            .iter()
            .find(|e| e.kind == EventKind::QueriesSelected && e.step == s.step)
            .unwrap();
        assert!(reed.seq < select.seq && select.seq < s.seq);
    }
}

#[test]
fn reed_can_continue_after_the_budget() {
    let mut cfg = with_reed(small(8));
    cfg.feedback.reed_after_budget = true;
    let out = run_experiment(cfg).unwrap();
    let reed_steps = out.events.iter().filter(|e| e.kind == EventKind::ReedUpdate).count();
    // Sessions at policy steps 0..=900, then REED alone at 1200 and 1500.
    assert_eq!(reed_steps, 6);
}

#[test]
fn relabelled_buffer_matches_ensemble_mean_exactly() {
    let mut exp = Experiment::new(with_reed(small(9))).unwrap();
    while exp.sessions() < 2 {
        exp.advance().unwrap();
    }
    let buf = exp.buffer();
    let s = buf.state_matrix();
    let a = crate::nn::Matrix::from_rows(&buf.iter().map(|t| t.action.clone()).collect::<Vec<_>>());
    let expected = exp.ensemble().predict_batch(&s, &a);
    let got: Vec<f64> = buf.iter().map(|t| t.learned_reward).collect();
    assert_eq!(got, expected);
}

#[test]
fn reference_run_trains_on_true_rewards() {
    let cfg = Method::Reference.apply(&small(10));
    let mut exp = Experiment::with_labeler(cfg, Box::new(Unreachable)).unwrap();
    exp.run().unwrap();
    assert!(exp
        .buffer()
        .iter()
        .all(|t| t.learned_reward == t.true_reward(GroundTruthAccess::grant())));
}

#[test]
fn learned_and_reference_runs_share_the_evaluation_grid() {
    let learned = run_experiment(small(11)).unwrap();
    let reference = run_experiment(Method::Reference.apply(&small(11))).unwrap();
    assert_eq!(learned.summary.eval.steps, reference.summary.eval.steps);
    assert_eq!(learned.summary.eval.steps, (4..=11).map(|i| i * 200).collect::<Vec<u64>>());
    // The pre-training phase does not depend on the reward source.
    assert_eq!(learned.records[..3], reference.records[..3]
        .iter()
        .cloned()
        .map(|mut r| {
            r.learned_return = learned.records[r.episode as usize].learned_return;
            r
        })
        .collect::<Vec<_>>()[..]);
    let mut s = reference.summary.clone();
    s.score_against(&reference.summary.eval).unwrap();
    assert_eq!(s.normalized_return, Some(1.0));
    assert!(s.final_window_return.is_none(), "8 points is shorter than the final window minimum");
}

/// Times out on the first call, then answers like the oracle.
struct Flaky {
    calls: Arc<Mutex<usize>>,
}

impl Labeler for Flaky {
    fn label(&mut self, req: &FeedbackRequest<'_>) -> Result<Vec<SessionLabel>, FeedbackError> {
        let mut calls = self.calls.lock().unwrap();
        *calls += 1;
        if *calls == 1 {
            return Err(FeedbackError::Timeout(req.session));
        }
        Ok(req
            .queries
            .iter()
            .map(|_| SessionLabel {
                label: Label::PreferFirst,
                returns: None,
                perturbed: false,
            })
            .collect())
    }
}

#[test]
fn suspended_session_resumes_without_reselecting() {
    let calls = Arc::new(Mutex::new(0));
    let mut exp = Experiment::with_labeler(small(12), Box::new(Flaky { calls: calls.clone() })).unwrap();
    let err = exp.run().unwrap_err();
    assert!(matches!(err, RunError::Feedback(FeedbackError::Timeout(0))));
    let paused_at = exp.step();
    assert_eq!(paused_at, 600);
    exp.run().unwrap();
    let out = exp.finish().unwrap();
    assert_eq!(*calls.lock().unwrap(), 5);
    assert_eq!(out.events.iter().filter(|e| e.kind == EventKind::QueriesSelected).count(), 4);
    assert_eq!(out.summary.labels, 8);
}

#[test]
fn human_channel_round_trip() {
    let env = crate::env::make_env("point_mass").unwrap();
    let (labeler, endpoint) = human_channel(env.spec().clone(), std::time::Duration::from_secs(30));
    let service = std::thread::spawn(move || {
        let mut seen = Vec::new();
        while let Ok(session) = endpoint.requests.recv() {
            assert!(session.queries.iter().all(|q| q.trace_a.frames.len() == 20));
            seen.push(session.session);
            let labels = session.queries.iter().map(|_| Label::Equal).collect();
            endpoint
                .replies
                .send(HumanReply {
                    session: session.session,
                    labels,
                })
                .unwrap();
        }
        seen
    });
    let out = Experiment::with_labeler(small(13), Box::new(labeler)).unwrap().finish().unwrap();
    assert_eq!(service.join().unwrap(), vec![0, 1, 2, 3]);
    assert_eq!(out.summary.labels, 8);
    assert!(out.audit.iter().all(|a| a.label == "equal" && a.return_first.is_none()));
}

#[test]
fn human_timeout_suspends_the_run() {
    let env = crate::env::make_env("point_mass").unwrap();
    let (labeler, endpoint) = human_channel(env.spec().clone(), std::time::Duration::from_millis(20));
    let mut exp = Experiment::with_labeler(small(14), Box::new(labeler)).unwrap();
    assert!(matches!(exp.run(), Err(RunError::Feedback(FeedbackError::Timeout(0)))));
    let first = endpoint.requests.try_recv().unwrap();
    assert!(matches!(exp.run(), Err(RunError::Feedback(FeedbackError::Timeout(0)))));
    assert!(endpoint.requests.try_recv().is_err(), "session announced only once");
    endpoint
        .replies
        .send(HumanReply {
            session: 0,
            labels: vec![Label::PreferSecond; first.queries.len()],
        })
        .unwrap();
    assert!(matches!(exp.run(), Err(RunError::Feedback(FeedbackError::Timeout(1)))));
    assert_eq!(exp.dataset().len(), 2);
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = with_reed(small(15));
    let text = cfg.to_toml();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    let partial = RunConfig::from_toml("seed = 4\n[feedback]\nbudget = 100\nqueries_per_session = 10\n").unwrap();
    assert_eq!(partial.seed, 4);
    assert_eq!(partial.feedback.interval, 2000);
    assert_eq!(partial.reed, None);
    partial.validate().unwrap();
}

#[test]
fn invalid_configs_are_rejected() {
    let check = |f: &dyn Fn(&mut RunConfig)| {
        let mut c = small(0);
        f(&mut c);
        assert!(matches!(c.validate(), Err(RunError::Config(_))), "{c:?}");
    };
    check(&|c| c.feedback.budget = 7);
    check(&|c| c.feedback.segment_len = 101);
    check(&|c| c.feedback.interval = 1000);
    check(&|c| c.eval.every = 150);
    check(&|c| c.explore.k = 0);
    check(&|c| {
        c.reed = Some(ReedConfig::default());
        c.reward.net.variant = RewardVariant::OriginalConcat;
    });
    let mut c = small(0);
    c.env = "cartpole".into();
    assert!(matches!(c.validate(), Err(RunError::Env(_))));
}

#[test]
fn outputs_are_written() {
    let out = run_experiment(small(16)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    for f in ["metrics.csv", "labels_audit.csv", "summary.json", "config.toml"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(read_metrics(&dir.path().join("metrics.csv")).unwrap(), out.records);
    let summary: Summary =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary, out.summary);
}
