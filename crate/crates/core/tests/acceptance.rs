//! Acceptance suite: runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each. Exits non-zero if any criterion fails.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use maca::credit::{
    all_advantages, shapley_advantage, verify_lemma2, AdditiveCritic, AdvantageMethod, CountingCritic, Lemma2Baseline,
};
use maca::critic::CriticNet;
use maca::eas::EasConfig;
use maca::env::{joint_features, spawn_episode, Scenario, Vec2};
use maca::eval::{evaluate, evaluate_checkpoint, measure_response_time, write_eval_csvs, DecisionSample, EvalConfig};
use maca::policy::ActorSet;
use maca::trace::CurveRow;
use maca::trainer::{train, TrainConfig, TrainOptions, CHECKPOINT_DIR};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed <= limit
}

fn additive_exactness() -> Verdict {
    let t = Instant::now();
    let worst = common::lemma1_worst(1000);
    let el = t.elapsed();
    verdict(
        worst <= 1e-9 && within(el, Duration::from_secs(10)),
        format!("1000 additive critics, worst |A_i - own term| = {worst:.2e}, {el:.2?}"),
    )
}

fn baseline_unbiasedness() -> Verdict {
    let t = Instant::now();
    let scenario = Scenario::TwoUavOneObstacle;
    let env = scenario.config();
    let mut r = common::rng(2024);
    let critic = CriticNet::new(env.n_uavs, env.obs_width(), &mut r).unwrap();
    let actors = ActorSet::new(env.n_uavs, env.obs_width(), 0.1, false, &mut r).unwrap();
    let states: Vec<Vec<f64>> = (0..16)
        .map(|k| {
            let mut w = spawn_episode(&env, k).unwrap();
            // move the obstacle into view so every block is populated
            w.obstacles[0].position = w.uavs[0].position + Vec2::new(30.0, 10.0);
            joint_features(&w, &env).unwrap()
        })
        .collect();
    let cf = verify_lemma2(&actors, &critic, &states, 100_000, Lemma2Baseline::Counterfactual, &mut common::rng(1)).unwrap();
    let joint = verify_lemma2(&actors, &critic, &states, 100_000, Lemma2Baseline::JointQ, &mut common::rng(1)).unwrap();
    let el = t.elapsed();
    verdict(
        cf.z_score() <= 3.0 && joint.z_score() > 3.0 && within(el, Duration::from_secs(300)),
        format!(
            "counterfactual |mean|/stderr = {:.2} (<= 3), joint-Q control = {:.2} (> 3), 1e5 samples, {el:.2?}",
            cf.z_score(),
            joint.z_score()
        ),
    )
}

fn gradient_correctness() -> Verdict {
    let t = Instant::now();
    let worst = common::gradient_suite(100, 12);
    let el = t.elapsed();
    verdict(
        worst < 1e-4 && within(el, Duration::from_secs(60)),
        format!("100 critics + 100 actors, max relative error {worst:.2e}, {el:.2?}"),
    )
}

fn additive_agreement() -> Verdict {
    let t = Instant::now();
    let worst = common::additive_agreement_worst(1000);
    let el = t.elapsed();
    verdict(
        worst <= 1e-9 && within(el, Duration::from_secs(30)),
        format!("1000 additive critics, worst |counterfactual - Shapley| = {worst:.2e}, {el:.2?}"),
    )
}

fn call_accounting() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    let k = 10;
    for n in 2..=4usize {
        let mut r = common::rng(n as u64);
        let critic = CriticNet::new(n, 6, &mut r).unwrap();
        let obs = common::random_vec(n * 6, &mut r);
        let act = common::random_vec(n, &mut r);
        let counter = CountingCritic::new(&critic);
        let mut counts = Vec::new();
        for method in [AdvantageMethod::Maca, AdvantageMethod::Coma { sigma: 0.1, samples: k }] {
            counter.reset();
            maca::credit::advantage(&method, &counter, &obs, &act, 0, &mut r).unwrap();
            counts.push(counter.calls());
        }
        counter.reset();
        shapley_advantage(&counter, &obs, &act, 0).unwrap();
        counts.push(counter.calls());
        let expected = [2, k + 1, common::coalition_count(n)];
        pass &= counts == expected;
        notes.push(format!("N={n}: {counts:?}"));
    }
    let big = AdditiveCritic::random(9, 2, &mut common::rng(9));
    let guard = shapley_advantage(&big, &[0.0; 18], &[0.0; 9], 0);
    pass &= guard.is_err();
    // batched training path: one joint Q plus one masked call per agent
    let mut r = common::rng(3);
    let critic = CriticNet::new(3, 6, &mut r).unwrap();
    let counter = CountingCritic::new(&critic);
    all_advantages(&AdvantageMethod::Maca, &counter, &common::random_vec(18, &mut r), &[0.1, 0.2, 0.3], &mut r).unwrap();
    pass &= counter.calls() == 4;
    verdict(
        pass,
        format!(
            "[maca, coma K={k}, shapley] calls {}; N=9 Shapley rejected: {}",
            notes.join(", "),
            guard.is_err()
        ),
    )
}

fn environment_invariants() -> Verdict {
    let t = Instant::now();
    let results = [
        ("10000 spawns", common::check_spawns(10_000)),
        ("1000 random episodes", common::check_speed_conservation(1000)),
        ("3 reward cases", common::check_reward_cases()),
    ];
    let failures: Vec<String> = results.iter().filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}"))).collect();
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!("spawns, speed conservation and reward cases hold, {:.2?}", t.elapsed())
        } else {
            failures.join("; ")
        },
    )
}

/// Mean greedy return over the evaluation rows within the first and the
/// final tenth of training.
fn window_means(curve: &[CurveRow], total: usize) -> (f64, f64) {
    let mean = |rows: Vec<&CurveRow>| rows.iter().map(|r| r.mean_return).sum::<f64>() / rows.len().max(1) as f64;
    let tenth = total / 10;
    (
        mean(curve.iter().filter(|r| r.env_step <= tenth).collect()),
        mean(curve.iter().filter(|r| r.env_step >= total - tenth).collect()),
    )
}

struct LearningRuns {
    maca_checkpoint: PathBuf,
}

const LEARNING_SEEDS: [u64; 3] = [1, 2, 3];
const LEARNING_STEPS: usize = 100_000;

fn desk_scale_learning(root: &Path) -> (Verdict, Verdict, LearningRuns) {
    let mut finals = Vec::new();
    let mut notes = Vec::new();
    let mut first_maca = 0.0;
    let mut within_budget = true;
    for method in [AdvantageMethod::Maca, AdvantageMethod::coma()] {
        let t = Instant::now();
        let (mut first, mut last) = (0.0, 0.0);
        let mut per_seed = Vec::new();
        for seed in LEARNING_SEEDS {
            let mut cfg = TrainConfig::new(Scenario::TwoUavOneObstacle, method, seed);
            cfg.total_env_steps = LEARNING_STEPS;
            cfg.eval_every = 2_000;
            let dir = root.join(format!("{}-seed{seed}", method.name()));
            let summary = train(&cfg, &dir, &TrainOptions::default()).unwrap();
            let (f, l) = window_means(&summary.curve, LEARNING_STEPS);
            per_seed.push(format!("{f:.1}->{l:.1}"));
            first += f / LEARNING_SEEDS.len() as f64;
            last += l / LEARNING_SEEDS.len() as f64;
        }
        let el = t.elapsed();
        within_budget &= el <= Duration::from_secs(30 * 60);
        notes.push(format!("{}: first {first:.2} final {last:.2} [{}] in {el:.0?}", method.name(), per_seed.join(", ")));
        if method == AdvantageMethod::Maca {
            first_maca = first;
        }
        finals.push(last);
    }
    let (maca_final, coma_final) = (finals[0], finals[1]);
    let improves = verdict(
        maca_final >= first_maca + 0.5 && within_budget,
        format!("maca final-10% mean {maca_final:.2} vs first-10% {first_maca:.2} (need +0.5); {}", notes[0]),
    );
    let beats = verdict(
        maca_final >= coma_final && within_budget,
        format!("maca final {maca_final:.2} vs coma final {coma_final:.2}; {}", notes[1]),
    );
    (
        improves,
        beats,
        LearningRuns {
            maca_checkpoint: root.join(format!("maca-seed{}", LEARNING_SEEDS[0])).join(CHECKPOINT_DIR),
        },
    )
}

fn eas_ablation(runs: &LearningRuns) -> Verdict {
    let t = Instant::now();
    let scenario = Scenario::TwoUavOneObstacle;
    let on = evaluate_checkpoint(&runs.maca_checkpoint, scenario, &EvalConfig::new(100, 0, true)).unwrap().metrics;
    let off = evaluate_checkpoint(&runs.maca_checkpoint, scenario, &EvalConfig::new(100, 0, false)).unwrap().metrics;
    let el = t.elapsed();
    verdict(
        on.failure_rate <= off.failure_rate && within(el, Duration::from_secs(120)),
        format!(
            "trained checkpoint, 100 episodes: failure with EAS {:.2}, without {:.2}, intervention rate {:.4}, {el:.2?}",
            on.failure_rate, off.failure_rate, on.eas_intervention_rate
        ),
    )
}

fn response_time() -> Verdict {
    let scenario = Scenario::ThreeUavOneObstacle;
    let env = scenario.config();
    let actors = ActorSet::new(env.n_uavs, env.obs_width(), 0.1, false, &mut common::rng(5)).unwrap();
    let world = spawn_episode(&env, 0).unwrap();
    let sample = DecisionSample { world: &world, env: &env, agent: 0 };
    let eas = EasConfig::default();
    let timing = measure_response_time(actors.policy(0), &sample, Some(&eas), 10_000).unwrap();
    verdict(
        timing.median_us < 1000.0,
        format!("3U1O decision with EAS check, median {:.2} us over {} iterations", timing.median_us, timing.iterations),
    )
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn full_determinism(root: &Path) -> Verdict {
    let mut runs = Vec::new();
    for copy in ["a", "b"] {
        let dir = root.join(copy);
        let mut cfg = TrainConfig::new(Scenario::ThreeUavOneObstacle, AdvantageMethod::coma(), 7);
        cfg.total_env_steps = 3_000;
        cfg.eval_every = 1_000;
        cfg.eval_episodes = 5;
        let run = dir.join("train");
        train(&cfg, &run, &TrainOptions::default()).unwrap();
        let env = Scenario::ThreeUavOneObstacle.config();
        let actors = maca::trainer::load_actors(&run.join(CHECKPOINT_DIR), &env).unwrap().0;
        for eas_on in [true, false] {
            let report = evaluate(&actors, &env, &EvalConfig::new(20, 3, eas_on)).unwrap();
            write_eval_csvs(&dir.join(format!("eval-{eas_on}")), &report).unwrap();
        }
        runs.push(csv_files(&dir));
    }
    let identical = runs[0] == runs[1] && !runs[0].is_empty();
    verdict(identical, format!("train + evaluate twice: {} CSV files, bit-identical: {identical}", runs[0].len()))
}

fn main() -> ExitCode {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&root);
    fs::create_dir_all(&root).unwrap();

    let mut results: Vec<(&str, &str, Verdict)> = vec![
        ("1", "additive credit exactness", additive_exactness()),
        ("2", "counterfactual baseline unbiasedness", baseline_unbiasedness()),
        ("3", "gradient correctness", gradient_correctness()),
        ("4", "counterfactual/Shapley agreement", additive_agreement()),
        ("5", "critic-call accounting", call_accounting()),
        ("6", "environment invariants", environment_invariants()),
    ];
    for (id, name, v) in &results {
        println!("criterion {id} ({name}): {} - {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    let (improves, beats, runs) = desk_scale_learning(&root.join("learning"));
    let late: Vec<(&str, &str, Verdict)> = vec![
        ("7a", "desk-scale learning improves", improves),
        ("7b", "counterfactual >= COMA at desk scale", beats),
        ("8", "EAS ablation", eas_ablation(&runs)),
        ("9", "response time", response_time()),
        ("10", "full determinism", full_determinism(&root.join("determinism"))),
    ];
    for (id, name, v) in &late {
        println!("criterion {id} ({name}): {} - {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    results.extend(late);
    let failed = results.iter().filter(|(_, _, v)| !v.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
