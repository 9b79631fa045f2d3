//! Executes one configured experiment into a run directory.
//!
//! Artifacts per run: `meta.json` (resolved config, probe actions, per-unit
//! statuses), experiment CSVs, and for the point-mass task per-seed loss
//! logs, network checkpoints, and replay-graph dumps. Every unit of work
//! (one seed, one subset) is transactional: it either lands completely or is
//! recorded as failed without touching sibling artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use qgraph::agents::{DdpgAgent, LossReport, Method};
use qgraph::envs::{
    all_nonempty_subsets, baird_run, classify_subset, draw_seeds, edu_offline_experiment,
    pointmass_reset, pointmass_step, PointMassConfig,
};
use qgraph::finite_mdp::sync_bounds;
use qgraph::graph_memory::{DataGraph, GraphConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, ExperimentConfig};
use crate::records::{episodes_to_csv, EpisodeRecord};
use crate::variance::GIVEN_ACTIONS;
use crate::{write_atomic, HarnessError, ARTIFACT_VERSION};

/// Outcome of one unit of work inside a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStatus {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// `"ok"` or `"error: ..."`.
    pub status: String,
}

impl RunStatus {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// A finished (possibly partially failed) run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub statuses: Vec<RunStatus>,
}

impl RunSummary {
    pub fn all_ok(&self) -> bool {
        self.statuses.iter().all(RunStatus::is_ok)
    }
}

/// Runs the configured experiment, writing all artifacts under `config.out`.
///
/// Invalid configs fail before anything is written. Failures of individual
/// seeds/subsets are recorded in the manifest while the rest proceed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary, HarnessError> {
    config.validate()?;
    std::fs::create_dir_all(&config.out).map_err(|e| HarnessError::io(&config.out, e))?;
    let statuses = match config.experiment {
        Experiment::Pointmass => run_pointmass(config)?,
        Experiment::Baird => run_baird(config)?,
        Experiment::Edu => run_edu(config)?,
    };
    write_manifest(&config.out, config, &statuses)?;
    Ok(RunSummary {
        dir: config.out.clone(),
        statuses,
    })
}

/// Writes `meta.json`: artifact version, fully resolved config, the fixed
/// probe actions, and one status entry per unit of work.
pub fn write_manifest(
    dir: &Path,
    config: &ExperimentConfig,
    statuses: &[RunStatus],
) -> Result<(), HarnessError> {
    let manifest = serde_json::json!({
        "artifact_version": ARTIFACT_VERSION,
        "config": config,
        "given_actions": GIVEN_ACTIONS,
        "runs": statuses,
    });
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| HarnessError::Config(format!("manifest serialization: {e}")))?;
    text.push('\n');
    write_atomic(&dir.join("meta.json"), &text)
}

/// Reads the resolved config back out of a run directory's manifest.
pub fn read_manifest(dir: &Path) -> Result<(ExperimentConfig, Vec<RunStatus>), HarnessError> {
    let path = dir.join("meta.json");
    let text = crate::read_to_string(&path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| HarnessError::malformed(&path, format!("bad JSON: {e}")))?;
    let version = value.get("artifact_version").and_then(|v| v.as_str());
    if version != Some(ARTIFACT_VERSION) {
        return Err(HarnessError::malformed(
            &path,
            format!("artifact version {version:?}, expected {ARTIFACT_VERSION:?}"),
        ));
    }
    let config = value
        .get("config")
        .cloned()
        .ok_or_else(|| HarnessError::malformed(&path, "missing config"))?;
    let config: ExperimentConfig = serde_json::from_value(config)
        .map_err(|e| HarnessError::malformed(&path, format!("bad config: {e}")))?;
    let statuses = value
        .get("runs")
        .cloned()
        .ok_or_else(|| HarnessError::malformed(&path, "missing runs"))?;
    let statuses: Vec<RunStatus> = serde_json::from_value(statuses)
        .map_err(|e| HarnessError::malformed(&path, format!("bad runs: {e}")))?;
    Ok((config, statuses))
}

struct SeedArtifacts {
    records: Vec<EpisodeRecord>,
    losses_csv: String,
    actor_text: String,
    critic_text: String,
    graph_dump: String,
}

fn run_pointmass(config: &ExperimentConfig) -> Result<Vec<RunStatus>, HarnessError> {
    let env = config.pointmass.clone();
    let graph_config = config.graph_config();
    let mut statuses = Vec::new();
    let mut all_records = Vec::new();
    for &seed in &config.seeds {
        match run_pointmass_seed(config, &env, &graph_config, seed) {
            Ok(artifacts) => {
                write_atomic(
                    &config.out.join(format!("losses_seed{seed}.csv")),
                    &artifacts.losses_csv,
                )?;
                write_atomic(
                    &config.out.join(format!("actor_seed{seed}.txt")),
                    &artifacts.actor_text,
                )?;
                write_atomic(
                    &config.out.join(format!("critic_seed{seed}.txt")),
                    &artifacts.critic_text,
                )?;
                write_atomic(
                    &config.out.join(format!("graph_seed{seed}.txt")),
                    &artifacts.graph_dump,
                )?;
                all_records.extend(artifacts.records);
                statuses.push(RunStatus {
                    label: format!("seed{seed}"),
                    seed: Some(seed),
                    status: "ok".into(),
                });
            }
            Err(e) => statuses.push(RunStatus {
                label: format!("seed{seed}"),
                seed: Some(seed),
                status: format!("error: {e}"),
            }),
        }
    }
    write_atomic(&config.out.join("episodes.csv"), &episodes_to_csv(&all_records))?;
    Ok(statuses)
}

/// One fully deterministic training run: every random draw (network init,
/// exploration noise, environment noise, minibatch sampling) comes from one
/// seeded stream in a fixed order.
fn run_pointmass_seed(
    config: &ExperimentConfig,
    env: &PointMassConfig,
    graph_config: &GraphConfig,
    seed: u64,
) -> Result<SeedArtifacts, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agent_config = config.agent_config()?;
    let mut agent = DdpgAgent::new(agent_config, &mut rng)?;
    let mut graph = DataGraph::new(graph_config.clone())?;
    let mut records = Vec::with_capacity(config.episodes);
    let mut losses_csv = String::from(LossReport::csv_header());
    losses_csv.push('\n');
    let sigma = agent.config().exploration_sigma;
    let maintains_bounds = agent.config().method == Method::Qgraph;

    for episode in 0..config.episodes {
        let started = Instant::now();
        let mut state = pointmass_reset(env, &mut rng)?;
        let mut ret = 0.0;
        let mut steps = 0usize;
        for _ in 0..env.episode_length {
            let action = agent.select_action(&state, sigma, &mut rng)?;
            let step = pointmass_step(env, &state, &action, &mut rng)?;
            graph.add_transition(&state, &action, step.reward, &step.next_state, step.terminal)?;
            agent.observe_reward(step.reward);
            ret += step.reward;
            steps += 1;
            let terminal = step.terminal;
            state = step.next_state;
            if terminal {
                break;
            }
        }
        if maintains_bounds {
            sync_bounds(&mut graph, config.graph.sync_tolerance)?;
        }
        let minibatches = agent.config().minibatches_for(graph.len());
        let epochs = agent.config().epochs_per_episode;
        let mut clamp_sum = 0.0;
        let mut train_count = 0u64;
        for _ in 0..epochs {
            for _ in 0..minibatches {
                let report = agent.train_step(&graph, &mut rng)?;
                clamp_sum += report.clamp_rate;
                train_count += 1;
                losses_csv.push_str(&report.to_csv_row());
                losses_csv.push('\n');
            }
        }
        records.push(EpisodeRecord {
            seed,
            episode,
            ret,
            steps,
            clamp_rate: if train_count > 0 {
                clamp_sum / train_count as f64
            } else {
                0.0
            },
            graph_edges: graph.len(),
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }

    Ok(SeedArtifacts {
        records,
        losses_csv,
        actor_text: agent.actor().to_text(),
        critic_text: agent.critic().to_text(),
        graph_dump: graph.to_dump(),
    })
}

const BAIRD_HEADER: &str = "step,w0,w1,w2,w3,w4,w5,w6,w7,v1,v2,v3,v4,v5,v6,v7";

fn run_baird(config: &ExperimentConfig) -> Result<Vec<RunStatus>, HarnessError> {
    let baird_config = config.baird_config();
    let stride = config.baird.record_stride.max(1);
    let mut statuses = Vec::new();
    for &seed in &config.seeds {
        // The run is deterministic; per-seed runs document that explicitly in
        // the artifacts rather than pretending variation exists.
        let status = match baird_run(&baird_config) {
            Ok(trajectory) => {
                let last = trajectory.weights.len() - 1;
                let mut csv = String::from(BAIRD_HEADER);
                csv.push('\n');
                for (step, (w, v)) in trajectory
                    .weights
                    .iter()
                    .zip(&trajectory.values)
                    .enumerate()
                {
                    if step % stride != 0 && step != last {
                        continue;
                    }
                    csv.push_str(&step.to_string());
                    for x in w.iter().chain(v.iter()) {
                        csv.push_str(&format!(",{x:.17e}"));
                    }
                    csv.push('\n');
                }
                write_atomic(&config.out.join(format!("baird_seed{seed}.csv")), &csv)?;
                "ok".into()
            }
            Err(e) => format!("error: {e}"),
        };
        statuses.push(RunStatus {
            label: format!("seed{seed}"),
            seed: Some(seed),
            status,
        });
    }
    Ok(statuses)
}

const EDU_HEADER: &str = "subset,seed,transition,class,q";

fn run_edu(config: &ExperimentConfig) -> Result<Vec<RunStatus>, HarnessError> {
    let seeds = draw_seeds(config.edu.master_seed, config.edu.seed_count);
    let mut csv = String::from(EDU_HEADER);
    csv.push('\n');
    let mut statuses = Vec::new();
    for subset in all_nonempty_subsets() {
        let label = subset_label(&subset);
        let status = match edu_subset_rows(&subset, &seeds, config.edu.epochs) {
            Ok(rows) => {
                csv.push_str(&rows);
                "ok".into()
            }
            Err(e) => format!("error: {e}"),
        };
        statuses.push(RunStatus {
            label: format!("subset{label}"),
            seed: None,
            status,
        });
    }
    write_atomic(&config.out.join("edu.csv"), &csv)?;
    Ok(statuses)
}

pub fn subset_label(subset: &[usize]) -> String {
    subset
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("-")
}

fn edu_subset_rows(subset: &[usize], seeds: &[u64], epochs: usize) -> Result<String, HarnessError> {
    let classes = classify_subset(subset)?;
    let outcomes = edu_offline_experiment(subset, seeds, epochs)?;
    let label = subset_label(subset);
    let mut rows = String::new();
    for outcome in outcomes {
        for (pos, &(transition, q)) in outcome.q_values.iter().enumerate() {
            rows.push_str(&format!(
                "{label},{},{transition},{},{q:.17e}\n",
                outcome.seed,
                classes[pos].as_str(),
            ));
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn small_pointmass(dir: &Path, extra: &[&str]) -> ExperimentConfig {
        let mut overrides: Vec<String> = vec![
            format!("out={:?}", dir.join("run").to_string_lossy()),
            "seeds=[0, 1]".into(),
            "episodes=2".into(),
            "agent.epochs_per_episode=2".into(),
            "agent.max_minibatches_per_epoch=2".into(),
            "agent.actor_hidden=[8, 8]".into(),
            "agent.critic_hidden=[8, 8]".into(),
            "pointmass.episode_length=20".into(),
        ];
        overrides.extend(extra.iter().map(|s| s.to_string()));
        parse_config("", &overrides).unwrap()
    }

    #[test]
    fn pointmass_run_writes_expected_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_pointmass(dir.path(), &[]);
        let summary = run_experiment(&config).unwrap();
        assert!(summary.all_ok());
        for name in [
            "meta.json",
            "episodes.csv",
            "losses_seed0.csv",
            "actor_seed0.txt",
            "critic_seed1.txt",
            "graph_seed1.txt",
        ] {
            assert!(config.out.join(name).is_file(), "missing {name}");
        }
        let records = crate::records::read_episodes(&config.out.join("episodes.csv")).unwrap();
        assert_eq!(records.len(), 4);
        assert!(records.iter().all(|r| r.steps <= 20));
        let (back, statuses) = read_manifest(&config.out).unwrap();
        assert_eq!(back, config);
        assert_eq!(statuses.len(), 2);
    }

    #[test]
    fn reruns_are_byte_identical_outside_wall_times() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = small_pointmass(dir_a.path(), &[]);
        let b = small_pointmass(dir_b.path(), &[]);
        run_experiment(&a).unwrap();
        run_experiment(&b).unwrap();
        let strip = |path: &Path| {
            crate::read_to_string(path)
                .unwrap()
                .lines()
                .map(|l| l.rsplit_once(',').unwrap().0.to_string())
                .collect::<Vec<_>>()
        };
        assert_eq!(
            strip(&a.out.join("episodes.csv")),
            strip(&b.out.join("episodes.csv"))
        );
        for name in ["losses_seed0.csv", "actor_seed0.txt", "graph_seed0.txt"] {
            assert_eq!(
                crate::read_to_string(&a.out.join(name)).unwrap(),
                crate::read_to_string(&b.out.join(name)).unwrap(),
                "{name} differs between identical runs"
            );
        }
    }

    #[test]
    fn capacity_bounds_graph_size_column() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_pointmass(dir.path(), &["graph.capacity=30", "episodes=3"]);
        run_experiment(&config).unwrap();
        let records = crate::records::read_episodes(&config.out.join("episodes.csv")).unwrap();
        assert!(records.iter().all(|r| r.graph_edges <= 30));
    }

    #[test]
    fn baird_run_writes_trajectories() {
        let dir = tempfile::tempdir().unwrap();
        let config = parse_config(
            "",
            &[
                format!("out={:?}", dir.path().join("b").to_string_lossy()),
                "experiment=baird".into(),
                "seeds=[0]".into(),
                "baird.steps=300".into(),
                "baird.record_stride=50".into(),
            ],
        )
        .unwrap();
        let summary = run_experiment(&config).unwrap();
        assert!(summary.all_ok());
        let text = crate::read_to_string(&config.out.join("baird_seed0.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(BAIRD_HEADER));
        let rows: Vec<&str> = lines.collect();
        // Steps 0, 50, ..., 300 inclusive.
        assert_eq!(rows.len(), 7);
        assert!(rows[0].starts_with("0,"));
        assert!(rows.last().unwrap().starts_with("300,"));
    }

    #[test]
    fn edu_run_covers_all_subsets() {
        let dir = tempfile::tempdir().unwrap();
        let config = parse_config(
            "",
            &[
                format!("out={:?}", dir.path().join("e").to_string_lossy()),
                "experiment=edu".into(),
                "edu.seed_count=2".into(),
                "edu.epochs=5".into(),
            ],
        )
        .unwrap();
        let summary = run_experiment(&config).unwrap();
        assert!(summary.all_ok());
        assert_eq!(summary.statuses.len(), 15);
        let text = crate::read_to_string(&config.out.join("edu.csv")).unwrap();
        let rows = text.lines().skip(1).filter(|l| !l.is_empty()).count();
        // Sum over subsets of |subset| * seeds: 32 transitions * 2 seeds.
        assert_eq!(rows, 64);
    }

    #[test]
    fn invalid_config_fails_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("never");
        let mut config = ExperimentConfig::default();
        config.out = out.clone();
        config.episodes = 0;
        assert!(run_experiment(&config).is_err());
        assert!(!out.exists());
    }
}
