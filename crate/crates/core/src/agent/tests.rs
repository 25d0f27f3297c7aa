use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::env::{make_env, PointMass2D};

#[test]
fn kth_neighbor_matches_sorted_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let dim = 3;
        let rows = rng.random_range(5..40);
        let states: Vec<f64> = (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let query: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = rng.random_range(1..=5);
        let mut d: Vec<f64> = states
            .chunks_exact(dim)
            .map(|r| r.iter().zip(&query).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .collect();
        d.sort_by(f64::total_cmp);
        let got = kth_neighbor_distance(&states, &query, k).unwrap();
        assert!((got - d[k - 1]).abs() < 1e-12);
    }
}

#[test]
fn intrinsic_reward_is_log1p_distance() {
    let states = [0.0, 0.0, 3.0, 4.0];
    assert_eq!(intrinsic_reward(&states, &[0.0, 0.0], 1).unwrap(), 0.0);
    assert!((intrinsic_reward(&states, &[0.0, 0.0], 2).unwrap() - 6f64.ln()).abs() < 1e-15);
    assert_eq!(
        intrinsic_reward(&states, &[0.0, 0.0], 3),
        Err(AgentError::InsufficientStates { k: 3, found: 2 })
    );
}

#[test]
fn rollout_tracks_episodes_and_returns() {
    let env = Box::new(PointMass2D::new(5, 0.05, 0.95));
    let mut rollout = Rollout::new(env, 11);
    let mut finished = Vec::new();
    let mut sum = 0.0;
    for i in 0..12 {
        let out = rollout.step(&[0.5, -0.5]).unwrap();
        assert_eq!(out.transition.episode, (i / 5) as u64);
        assert_eq!(out.transition.step, i % 5);
        sum += out.transition.true_reward(crate::replay::GroundTruthAccess::grant());
        if let Some(r) = out.finished_return {
            assert!((r - sum).abs() < 1e-12);
            sum = 0.0;
            finished.push(r);
        }
    }
    assert_eq!(finished.len(), 2);
    assert_eq!(rollout.episode(), 2);
}

#[test]
fn explore_pretrain_fills_buffer_deterministically() {
    let run = || {
        let env = make_env("point_mass").unwrap();
        let (ds, da) = (env.spec().state_dim, env.spec().action_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = SacConfig {
            batch_size: 16,
            ..SacConfig::default()
        };
        let mut agent = Sac::new(ds, da, cfg, &mut rng);
        let mut rollout = Rollout::new(env, 5);
        let mut buffer = ReplayBuffer::new(1000, ds, da);
        let icfg = IntrinsicConfig {
            k: 5,
            steps: 150,
            random_steps: 50,
        };
        let report = explore_pretrain(&mut agent, &mut rollout, &mut buffer, &icfg, &mut rng).unwrap();
        (report, buffer.len(), agent.actor.flat_params())
    };
    let (a, len, pa) = run();
    let (b, _, pb) = run();
    assert_eq!(len, 150);
    assert_eq!(a.updates, 100);
    assert_eq!(a.episode_returns.len(), 1);
    assert_eq!(a, b);
    assert_eq!(pa, pb);
}

#[test]
fn duplicated_state_has_zero_reward_and_novelty_is_monotone() {
    let mut states = [0.5, -0.5].repeat(5);
    states.extend_from_slice(&[2.0, 2.0, -3.0, 1.0]);
    assert_eq!(intrinsic_reward(&states, &[0.5, -0.5], 5).unwrap(), 0.0);
    let near = intrinsic_reward(&states, &[0.6, -0.5], 5).unwrap();
    let far = intrinsic_reward(&states, &[5.0, 5.0], 5).unwrap();
    assert!(far > near && near > 0.0);
}

fn visitation_spread(buffer: &ReplayBuffer) -> f64 {
    let m = buffer.state_matrix();
    // Position and velocity dimensions; the goal is fixed per episode.
    (0..4)
        .map(|c| {
            let col: Vec<f64> = (0..m.rows()).map(|r| m.get(r, c)).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / col.len() as f64
        })
        .sum()
}

#[test]
fn exploration_spreads_wider_than_a_random_policy() {
    let steps = 1500;
    let mut wins = 0;
    for seed in 0..10u64 {
        let env = make_env("point_mass").unwrap();
        let (ds, da) = (env.spec().state_dim, env.spec().action_dim);
        let mut rng = component_rng(seed, 0);
        let mut agent = Sac::new(ds, da, SacConfig::default(), &mut rng);
        let mut rollout = Rollout::new(env, seed);
        let mut explored = ReplayBuffer::new(steps, ds, da);
        let cfg = IntrinsicConfig {
            k: 5,
            steps,
            random_steps: 200,
        };
        explore_pretrain(&mut agent, &mut rollout, &mut explored, &cfg, &mut rng).unwrap();

        let mut rollout = Rollout::new(make_env("point_mass").unwrap(), seed);
        let mut random = ReplayBuffer::new(steps, ds, da);
        for _ in 0..steps {
            let a: Vec<f64> = (0..da).map(|_| rng.random_range(-1.0..=1.0)).collect();
            random.push(rollout.step(&a).unwrap().transition).unwrap();
        }
        if visitation_spread(&explored) >= visitation_spread(&random) {
            wins += 1;
        }
    }
    assert!(wins >= 7, "exploration won {wins}/10 seeds");
}
