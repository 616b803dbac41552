mod common;

use std::fs;

use maca::credit::{AdditiveCritic, AdvantageMethod};
use maca::env::{joint_features, spawn_episode, Scenario};
use maca::policy::ActorSet;
use maca::trace;
use maca::trainer::{
    actor_gradients, load_actors, train, Learner, Manifest, TrainConfig, TrainOptions, Transition, CHECKPOINT_DIR, CURVE_FILE,
    MANIFEST_FILE, TRACE_DIR,
};
use rand::Rng;

fn small_config(seed: u64, steps: usize) -> TrainConfig {
    let mut cfg = TrainConfig::new(Scenario::TwoUavOneObstacle, AdvantageMethod::Maca, seed);
    cfg.total_env_steps = steps;
    cfg.eval_every = 500;
    cfg.eval_episodes = 2;
    cfg
}

/// Terminal transitions sampled from real spawns, with random rewards.
fn terminal_batch(cfg: &TrainConfig, len: usize) -> Vec<Transition> {
    let mut r = common::rng(17);
    (0..len)
        .map(|k| {
            let obs = joint_features(&spawn_episode(&cfg.env, k as u64).unwrap(), &cfg.env).unwrap();
            let act = common::random_vec(cfg.env.n_uavs, &mut r);
            Transition {
                joint_obs: obs.clone(),
                joint_act: act.clone(),
                sampled_act: act,
                reward: r.random_range(-2.0..2.0),
                next_joint_obs: obs,
                done: true,
                step_index: 0,
            }
        })
        .collect()
}

#[test]
fn critic_overfits_a_frozen_batch() {
    let mut cfg = small_config(0, 1000);
    cfg.target_sync_period = u64::MAX;
    let mut learner = Learner::new(&cfg).unwrap();
    let batch = terminal_batch(&cfg, 16);
    let mut rng = common::rng(1);
    let losses: Vec<f64> = (0..51).map(|_| learner.train_step(&batch, &mut rng).unwrap().critic_loss).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "loss went from {} to {}", w[0], w[1]);
    }
}

#[test]
fn counterfactual_and_shapley_actor_gradients_coincide_on_additive_critics() {
    let cfg = small_config(0, 1000);
    let mut r = common::rng(23);
    let w = cfg.env.obs_width();
    let critic = AdditiveCritic::random(2, w, &mut r);
    let actors = ActorSet::new(2, w, 0.1, false, &mut r).unwrap();
    let batch = terminal_batch(&cfg, 8);
    let maca = actor_gradients(&actors, &critic, &batch, &AdvantageMethod::Maca, &mut common::rng(0)).unwrap();
    let shapley = actor_gradients(&actors, &critic, &batch, &AdvantageMethod::Shapley, &mut common::rng(0)).unwrap();
    for (a, b) in maca.per_slot.iter().flatten().zip(shapley.per_slot.iter().flatten()) {
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn short_run_writes_parseable_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(5, 1000);
    let summary = train(&cfg, dir.path(), &TrainOptions::default()).unwrap();
    assert!(!summary.interrupted && summary.env_steps >= 1000);

    let curve = trace::read_curve(&dir.path().join(CURVE_FILE)).unwrap();
    // NaN losses on the first row rule out a plain equality
    assert_eq!(format!("{curve:?}"), format!("{:?}", summary.curve));
    assert_eq!(curve[0].env_step, 0);
    assert!(curve.iter().all(|r| r.mean_return.is_finite()));

    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert!(manifest.completed);
    assert_eq!(manifest.eas_decisions_during_training, 0);
    assert_eq!(manifest.config, cfg);

    let (actors, meta) = load_actors(&dir.path().join(CHECKPOINT_DIR), &cfg.env).unwrap();
    assert_eq!(meta.scenario, Scenario::TwoUavOneObstacle);
    assert_eq!(actors.policies(), summary.learner.actors.policies());
    let rows = trace::read_trace(&dir.path().join(TRACE_DIR).join("episode_0000.csv")).unwrap();
    assert!(!rows.is_empty());
}

#[test]
fn exploration_schedule_is_monotone_and_reaches_its_floor() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(2, 3000);
    cfg.env.epsilon_steps = 2000;
    cfg.eval_every = 250;
    train(&cfg, dir.path(), &TrainOptions::default()).unwrap();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    let trace = &manifest.epsilon_trace;
    assert_eq!(trace[0].epsilon, 1.0);
    assert!(trace.windows(2).all(|w| w[1].epsilon <= w[0].epsilon && w[1].env_step > w[0].env_step));
    for p in trace {
        if p.env_step >= 2000 {
            assert!((p.epsilon - 0.1).abs() < 1e-12);
        }
    }
}

#[test]
fn interrupted_run_resumes_to_identical_outputs() {
    let cfg = small_config(11, 2000);
    let full = tempfile::tempdir().unwrap();
    train(&cfg, full.path(), &TrainOptions::default()).unwrap();

    let split = tempfile::tempdir().unwrap();
    let first = train(
        &cfg,
        split.path(),
        &TrainOptions {
            resume: false,
            stop_after: Some(1200),
        },
    )
    .unwrap();
    assert!(first.interrupted);
    let second = train(
        &cfg,
        split.path(),
        &TrainOptions {
            resume: true,
            stop_after: None,
        },
    )
    .unwrap();
    assert!(!second.interrupted);
    for file in [CURVE_FILE, MANIFEST_FILE] {
        assert_eq!(
            fs::read(full.path().join(file)).unwrap(),
            fs::read(split.path().join(file)).unwrap(),
            "{file} differs after resume"
        );
    }
}

#[test]
fn identical_configs_give_identical_curves() {
    let cfg = small_config(3, 800);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train(&cfg, a.path(), &TrainOptions::default()).unwrap();
    train(&cfg, b.path(), &TrainOptions::default()).unwrap();
    assert_eq!(fs::read(a.path().join(CURVE_FILE)).unwrap(), fs::read(b.path().join(CURVE_FILE)).unwrap());
}
