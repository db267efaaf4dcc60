use std::path::Path;
use std::process::{Command, Output};

fn ctrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctrl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn tiny_train(out: &Path, extra: &[&str]) -> Output {
    let out = out.to_str().unwrap();
    let mut args = vec![
        "train",
        "--out",
        out,
        "--serial",
        "--steps",
        "96",
        "--set",
        "ppo.num_envs=4",
        "--set",
        "ppo.n_timesteps=24",
        "--set",
        "ppo.n_samples=96",
        "--set",
        "ctrl.clusters=6",
        "--set",
        "gridworld.eval_end=204",
    ];
    args.extend_from_slice(extra);
    ctrl(&args)
}

#[test]
fn train_then_eval_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = tiny_train(&run, &["--no-pred", "--consecutive-t"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("ablations        consecutive-t, no-pred"),
        "{stdout}"
    );
    assert!(stdout.contains("held-out return"));
    let snapshot = std::fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(snapshot.contains("no_pred = true"));

    let ckpt = run.join("checkpoints/final.ckpt");
    let out = ctrl(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--seeds",
        "200..203",
        "--random-baseline",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("over 3 episodes") && stdout.contains("random"));

    let plots = dir.path().join("plots");
    let out = ctrl(&[
        "plot",
        "--metrics",
        run.join("metrics.csv").to_str().unwrap(),
        "--out",
        plots.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    for name in ["returns", "l_clust", "l_pred", "silhouette"] {
        assert!(plots.join(format!("{name}.svg")).exists());
    }
}

#[test]
fn eval_on_training_levels_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert!(tiny_train(&run, &[]).status.success());
    let ckpt = run.join("checkpoints/final.ckpt");
    let out = ctrl(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--seeds",
        "0..10",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("training set"));
}

#[test]
fn bad_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    std::fs::write(&cfg, "[ppo]\nclip = 0\n").unwrap();
    let out = ctrl(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ppo.clip"));
}

#[test]
fn malformed_metrics_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    std::fs::write(
        &csv,
        "epoch,env_steps,mean_train_return,l_clust,l_pred,l_rl,entropy,silhouette,occupied_clusters,anchors,mined_pairs\n0,1,,x,0,0,0,,0,0,0\n",
    )
    .unwrap();
    let out = ctrl(&["plot", "--metrics", csv.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn verification_commands_succeed() {
    let out = ctrl(&["verify-theorem", "--trials", "200"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("200/200"));
    let out = ctrl(&["grad-check", "--instances", "3"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
}
