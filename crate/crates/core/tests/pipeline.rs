use reed_core::agent::{IntrinsicConfig, SacConfig};
use reed_core::orchestrator::{
    read_metrics, run_experiment, EvalConfig, FeedbackConfig, Method, RewardConfig, RunConfig,
};
use reed_core::reward::{PreferenceTraining, RewardEnsemble};

fn tiny(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        total_steps: 1600,
        explore: IntrinsicConfig {
            k: 5,
            steps: 400,
            random_steps: 100,
        },
        sac: SacConfig {
            batch_size: 32,
            ..SacConfig::default()
        },
        feedback: FeedbackConfig {
            budget: 6,
            queries_per_session: 2,
            interval: 300,
            segment_len: 20,
            ..FeedbackConfig::default()
        },
        reward: RewardConfig {
            training: PreferenceTraining {
                max_epochs: 5,
                ..PreferenceTraining::default()
            },
            ..RewardConfig::default()
        },
        eval: EvalConfig {
            every: 200,
            episodes: 1,
            ..EvalConfig::default()
        },
        ..RunConfig::default()
    }
}

#[test]
fn written_run_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(Method::PebbleSaf.apply(&tiny(3))).unwrap();
    out.write(dir.path()).unwrap();

    let records = read_metrics(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(records, out.records);
    let text = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), out.config);
    assert_eq!(out.summary.labels, 6);
    assert_eq!(out.summary.sessions, 3);
}

#[test]
fn same_seed_same_bytes_other_seed_differs() {
    let a = run_experiment(tiny(5)).unwrap().metrics_csv().unwrap();
    let b = run_experiment(tiny(5)).unwrap().metrics_csv().unwrap();
    let c = run_experiment(tiny(6)).unwrap().metrics_csv().unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn ensemble_checkpoint_survives_a_run() {
    let mut exp = reed_core::orchestrator::Experiment::new(tiny(8)).unwrap();
    exp.run().unwrap();
    let json = exp.ensemble().to_checkpoint().to_json().unwrap();
    let back = RewardEnsemble::from_checkpoint_json(&json).unwrap();
    let t = exp.buffer().iter().next().unwrap();
    for (m, n) in exp.ensemble().members.iter().zip(&back.members) {
        assert_eq!(m.net.predict_one(&t.state, &t.action).unwrap(), n.net.predict_one(&t.state, &t.action).unwrap());
    }
}
