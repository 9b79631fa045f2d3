//! End-to-end checks of the command-line interface: each subcommand is
//! exercised against real artifacts produced by the `run` subcommand.

use std::path::Path;
use std::process::Command;

fn harness() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qgraph-harness"))
}

fn write_config(dir: &Path, out: &Path) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    let text = format!(
        r#"
out = {out:?}
seeds = [0, 1]
episodes = 2

[agent]
epochs_per_episode = 1
max_minibatches_per_epoch = 2
actor_hidden = [8]
critic_hidden = [8]

[pointmass]
episode_length = 15
"#,
        out = out.to_string_lossy()
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_variance_plot_audit_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = write_config(dir.path(), &out);

    let status = harness()
        .args(["run", "--config"])
        .arg(&config)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("episodes.csv").is_file());
    assert!(out.join("meta.json").is_file());

    let status = harness()
        .args(["variance", "--runs"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("qgrid.csv").is_file());
    assert!(out.join("qgrid_spread.csv").is_file());

    let plots = dir.path().join("plots");
    let status = harness()
        .args(["plot", "--runs"])
        .arg(&out)
        .arg("--out")
        .arg(&plots)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(plots.join("learning_curves.svg").is_file());
    assert!(plots.join("spread_box.svg").is_file());
    let svg = std::fs::read_to_string(plots.join("learning_curves.svg")).unwrap();
    assert!(svg.starts_with("<svg "));

    let output = harness().args(["audit", "--run"]).arg(&out).output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stdout));
    assert!(String::from_utf8_lossy(&output.stdout).contains("audit passed"));
}

#[test]
fn overrides_change_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = write_config(dir.path(), &out);
    let status = harness()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--override", "seeds=[5]", "--override", "episodes=1"])
        .status()
        .unwrap();
    assert!(status.success());
    let episodes = std::fs::read_to_string(out.join("episodes.csv")).unwrap();
    let rows: Vec<&str> = episodes.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("5,0,"));
    assert!(out.join("actor_seed5.txt").is_file());
}

#[test]
fn matrix_sweep_produces_cells() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let config = dir.path().join("config.toml");
    let text = format!(
        r#"
out = {out:?}
seeds = [0]
episodes = 1

[agent]
epochs_per_episode = 1
max_minibatches_per_epoch = 1
actor_hidden = [4]
critic_hidden = [4]

[pointmass]
episode_length = 5

[matrix]
sigmas = [0.0, 0.1]
"#,
        out = out.to_string_lossy()
    );
    std::fs::write(&config, text).unwrap();
    let status = harness()
        .args(["matrix", "--config"])
        .arg(&config)
        .args(["--axis", "sigma"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("meta.json").is_file());
    assert!(out.join("sigma_0/episodes.csv").is_file());
    assert!(out.join("sigma_0.1/episodes.csv").is_file());
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &dir.path().join("run"));

    let output = harness()
        .args(["matrix", "--config"])
        .arg(&config)
        .args(["--axis", "flavor"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("unknown axis"));

    let output = harness()
        .args(["run", "--config"])
        .arg(dir.path().join("missing.toml"))
        .output()
        .unwrap();
    assert!(!output.status.success());

    let output = harness()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--override", "episodes=0"])
        .output()
        .unwrap();
    assert!(!output.status.success());
}
