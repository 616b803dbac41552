use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn maca(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maca"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn tree_bytes(dir: &Path, skip: &str) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") && !p.ends_with(skip) {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn train_evaluate_plot_replay_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = root.join("run.toml");
    fs::write(&cfg, "[train]\neval_every = 400\neval_episodes = 2\n").unwrap();

    let mut csv_sets = Vec::new();
    for out in ["a", "b"] {
        let stdout = ok(&maca(
            &["train", "--scenario", "2U1O", "--method", "maca", "--seed", "4", "--steps", "800", "--out", out, "--config", "run.toml"],
            root,
        ));
        assert!(stdout.contains("trained"));
        let run = root.join(out).join("2U1O-maca-seed4");
        assert!(run.join("curve.csv").is_file() && run.join("checkpoint/meta.json").is_file());

        let ck = run.join("checkpoint");
        let stdout = ok(&maca(
            &["evaluate", "--checkpoint", ck.to_str().unwrap(), "--scenario", "2U1O", "--episodes", "10", "--eas", "on", "--seed", "3"],
            root,
        ));
        assert!(stdout.contains("failure_rate"));
        let eval_dir = run.join("eval-2U1O-eas-on-seed3");
        assert!(eval_dir.join("metrics.csv").is_file() && eval_dir.join("response_time.txt").is_file());
        csv_sets.push(tree_bytes(&root.join(out), "response_time.txt"));
    }
    assert_eq!(csv_sets[0], csv_sets[1], "repeated commands must give identical CSVs");

    let run = root.join("a/2U1O-maca-seed4");
    let stdout = ok(&maca(&["plot", "--run", run.to_str().unwrap()], root));
    assert!(stdout.contains("learning_curve.svg"));
    assert!(run.join("plots/summary.txt").is_file());

    let episode = run.join("eval-2U1O-eas-on-seed3/traces/episode_0000.csv");
    ok(&maca(&["replay", "--episode", episode.to_str().unwrap(), "--svg", "replay.svg"], root));
    assert!(fs::read_to_string(root.join("replay.svg")).unwrap().contains("uav-path"));
}

#[test]
fn scenario_mismatch_and_bad_input_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    ok(&maca(&["train", "--scenario", "2U1O", "--steps", "200", "--out", "r"], root));
    let ck = root.join("r/2U1O-maca-seed0/checkpoint");
    let out = maca(&["evaluate", "--checkpoint", ck.to_str().unwrap(), "--scenario", "4U2O", "--episodes", "2"], root);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("architecture mismatch"));

    assert!(!maca(&["train", "--method", "qmix", "--steps", "10"], root).status.success());
    assert!(!maca(&["train", "--scenario", "5U5O"], root).status.success());
    assert!(!maca(&["plot", "--run", "missing"], root).status.success());
}
