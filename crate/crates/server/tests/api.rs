use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde::de::DeserializeOwned;
use tower::ServiceExt;

use reed_core::agent::{IntrinsicConfig, SacConfig};
use reed_core::env::make_env;
use reed_core::orchestrator::{human_channel, EvalConfig, Experiment, FeedbackConfig, HumanSession, RunConfig};
use reed_core::reward::Preference;
use reed_server::*;

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, serde_json::Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map_or(Body::empty(), |b| Body::from(b.to_owned()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null))
}

fn typed<T: DeserializeOwned>(v: serde_json::Value) -> T {
    serde_json::from_value(v).unwrap()
}

fn label(app: &axum::Router, session: u64, pair: u64, choice: &str) -> impl std::future::Future<Output = (StatusCode, serde_json::Value)> {
    let body = format!(r#"{{"pair_id":{pair},"choice":"{choice}"}}"#);
    let app = app.clone();
    async move { call(&app, "POST", &format!("/api/session/{session}/label"), Some(&body)).await }
}

/// A session of `n` pairs built from a short point-mass rollout.
fn fake_session(id: u64, n: usize) -> HumanSession {
    use reed_core::agent::Rollout;
    use reed_core::env::render_trace;
    use reed_core::orchestrator::PendingQuery;
    use reed_core::replay::Segment;
    let env = make_env("point_mass").unwrap();
    let spec = env.spec().clone();
    let mut rollout = Rollout::new(env, 3);
    let ts: Vec<_> = (0..10).map(|_| rollout.step(&[0.3, -0.2]).unwrap().transition).collect();
    let seg = Segment::new(ts).unwrap();
    let trace = render_trace(&spec, &seg).unwrap();
    HumanSession {
        session: id,
        step: 1234,
        queries: (0..n as u64)
            .map(|pair_id| PendingQuery {
                pair_id,
                trace_a: trace.clone(),
                trace_b: trace.clone(),
                segment_len: 10,
                episode_a: 0,
                start_a: 0,
                episode_b: 0,
                start_b: 0,
            })
            .collect(),
    }
}

#[tokio::test]
async fn idle_service_reports_no_pending_pairs() {
    let app = router(Store::shared(), None);
    let (status, body) = call(&app, "GET", "/api/session", None).await;
    assert_eq!(status, StatusCode::OK);
    let info: SessionInfo = typed(body);
    assert_eq!(info.status, Status::Idle);
    assert_eq!(info.pending, 0);
    assert_eq!(info.session, None);
    assert_eq!(info.api_version, API_VERSION);
    let (status, body) = call(&app, "GET", "/api/session/7/pending", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(typed::<ErrorBody>(body).error.contains("unknown session 7"));
}

#[tokio::test]
async fn pending_shrinks_as_pairs_are_labelled() {
    let store = Store::shared();
    store.lock().unwrap().open(fake_session(0, 5));
    let app = router(store, None);
    let (_, body) = call(&app, "GET", "/api/session/0/pending", None).await;
    let pending: PendingResponse = typed(body);
    assert_eq!(pending.pairs.len(), 5);
    assert_eq!(pending.pairs[0].trace_a.frames.len(), 10);
    label(&app, 0, 1, "first").await;
    label(&app, 0, 3, "skip").await;
    let (_, body) = call(&app, "GET", "/api/session/0/pending", None).await;
    let ids: Vec<u64> = typed::<PendingResponse>(body).pairs.iter().map(|p| p.pair_id).collect();
    assert_eq!(ids, vec![0, 2, 4]);
    let (_, body) = call(&app, "GET", "/api/session/0/state", None).await;
    let state: StateResponse = typed(body);
    assert_eq!((state.pending, state.labels_collected, state.completed), (3, 1, false));
    assert_eq!(state.experiment_step, 1234);
}

#[tokio::test]
async fn duplicate_label_conflicts_and_keeps_the_first() {
    let store = Store::shared();
    store.lock().unwrap().open(fake_session(0, 2));
    let app = router(store, None);
    let (status, body) = label(&app, 0, 0, "second").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(typed::<LabelAck>(body).remaining, 1);
    let (status, body) = label(&app, 0, 0, "first").await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(typed::<ErrorBody>(body).error.contains("Second"));
    let (_, body) = label(&app, 0, 1, "equal").await;
    assert!(typed::<LabelAck>(body).completed);
    let (status, _) = label(&app, 0, 0, "first").await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let store = Store::shared();
    store.lock().unwrap().open(fake_session(0, 2));
    let app = router(store, None);
    assert_eq!(label(&app, 0, 9, "first").await.0, StatusCode::NOT_FOUND);
    assert_eq!(label(&app, 4, 0, "first").await.0, StatusCode::NOT_FOUND);
    assert_eq!(label(&app, 0, 0, "maybe").await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, "POST", "/api/session/0/label", Some("{not json")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (_, body) = call(&app, "GET", "/api/session/0/state", None).await;
    assert_eq!(typed::<StateResponse>(body).pending, 2);
}

#[tokio::test]
async fn pending_count_never_increases() {
    let store = Store::shared();
    store.lock().unwrap().open(fake_session(0, 4));
    let app = router(store.clone(), None);
    let mut last = usize::MAX;
    for (pair, choice) in [(2, "first"), (0, "equal"), (3, "skip"), (1, "second")] {
        label(&app, 0, pair, choice).await;
        // A repeated announcement must not reset progress.
        store.lock().unwrap().open(fake_session(0, 4));
        let (_, body) = call(&app, "GET", "/api/session/0/state", None).await;
        let p = typed::<StateResponse>(body).pending;
        assert!(p < last);
        last = p;
    }
    assert_eq!(last, 0);
    let (_, body) = call(&app, "GET", "/api/session", None).await;
    assert_eq!(typed::<SessionInfo>(body).status, Status::Idle);
}

fn tiny_run() -> RunConfig {
    RunConfig {
        seed: 21,
        total_steps: 1200,
        explore: IntrinsicConfig {
            k: 5,
            steps: 400,
            random_steps: 200,
        },
        sac: SacConfig {
            batch_size: 32,
            ..SacConfig::default()
        },
        feedback: FeedbackConfig {
            budget: 5,
            queries_per_session: 5,
            interval: 400,
            segment_len: 25,
            ..FeedbackConfig::default()
        },
        eval: EvalConfig {
            every: 400,
            episodes: 1,
            ..EvalConfig::default()
        },
        ..RunConfig::default()
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scripted_session_feeds_the_experiment() {
    let cfg = tiny_run();
    let spec = make_env(&cfg.env).unwrap().spec().clone();
    let (labeler, endpoint) = human_channel(spec, Duration::from_millis(50));
    let store = Store::shared();
    let bridge = attach(endpoint, store.clone());
    let app = router(store.clone(), None);
    let runner = std::thread::spawn(move || {
        let mut exp = Experiment::with_labeler(cfg, Box::new(labeler)).unwrap();
        // Each timeout suspends the run; resuming waits on the same session.
        while exp.run().is_err() {}
        exp
    });

    let deadline = Instant::now() + Duration::from_secs(120);
    let session = loop {
        let (_, body) = call(&app, "GET", "/api/session", None).await;
        let info: SessionInfo = typed(body);
        if info.status == Status::Labeling {
            break info.session.unwrap();
        }
        assert!(Instant::now() < deadline, "no session announced");
        tokio::time::sleep(Duration::from_millis(20)).await;
    };
    let (_, body) = call(&app, "GET", &format!("/api/session/{session}/pending"), None).await;
    let pairs = typed::<PendingResponse>(body).pairs;
    assert_eq!(pairs.len(), 5);
    assert!(pairs.iter().all(|p| p.trace_a.frames.len() == 25 && p.trace_b.frames.len() == 25));
    let choices = ["first", "second", "equal", "first", "second"];
    for (p, c) in pairs.iter().zip(choices) {
        assert_eq!(label(&app, session, p.pair_id, c).await.0, StatusCode::OK);
    }
    let completed_at = Instant::now();
    let exp = tokio::task::spawn_blocking(move || runner.join().unwrap()).await.unwrap();
    assert!(exp.is_finished());
    let got: Vec<Preference> = exp.dataset().triplets().iter().map(|t| t.label).collect();
    assert_eq!(
        got,
        vec![Preference::First, Preference::Second, Preference::Equal, Preference::First, Preference::Second]
    );
    let targets: Vec<[f64; 2]> = got.iter().map(|p| p.target()).collect();
    assert_eq!(targets[0], [1.0, 0.0]);
    assert_eq!(targets[1], [0.0, 1.0]);
    assert_eq!(targets[2], [0.5, 0.5]);
    assert!(completed_at.elapsed() < Duration::from_secs(120));
    let (_, body) = call(&app, "GET", &format!("/api/session/{session}/state"), None).await;
    assert!(typed::<StateResponse>(body).completed);
    drop(exp);
    bridge.join().unwrap();
}
