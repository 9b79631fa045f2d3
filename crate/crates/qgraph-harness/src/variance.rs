//! Cross-seed spread of critic predictions on a fixed probe grid.
//!
//! Loads the final actor/critic checkpoints of every successful seed in a
//! run, evaluates the critic at 27 grid states crossed with 11 fixed probe
//! actions plus each seed's own policy action, and reports the per-cell
//! standard deviation of the predictions across seeds. Low spread means the
//! seeds agree on the value surface; high spread means the estimates are
//! noise.

use std::path::Path;

use qgraph::envs::PointMassConfig;
use qgraph::neural::Mlp;

use crate::records::{
    qgrid_to_csv, read_qgrid, spreads_to_csv, ActionSource, QGridRecord, QGridSpread,
};
use crate::runner::read_manifest;
use crate::stats::std_pop;
use crate::{write_atomic, HarnessError};

/// Fixed probe actions: no-op, the six axis-aligned unit pushes, and four
/// corner diagonals spanning the action cube.
pub const GIVEN_ACTIONS: [[f64; 3]; 11] = [
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, 0.0, -1.0],
    [1.0, 1.0, 1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, -1.0],
    [-1.0, 1.0, -1.0],
];

/// Slot index used for the policy action in spread rows; probe actions use
/// their position in [`GIVEN_ACTIONS`].
pub const PI_SLOT: usize = GIVEN_ACTIONS.len();

/// The 27 probe states: quarter, half, and three-quarter points of the cube
/// along each axis, x varying slowest.
pub fn grid_states(env: &PointMassConfig) -> Vec<[f64; 3]> {
    let fractions = [0.25, 0.5, 0.75];
    let mut states = Vec::with_capacity(27);
    for &fx in &fractions {
        for &fy in &fractions {
            for &fz in &fractions {
                states.push([fx * env.cube_side, fy * env.cube_side, fz * env.cube_side]);
            }
        }
    }
    states
}

/// Everything computed by [`prediction_variance`].
#[derive(Debug, Clone)]
pub struct VarianceReport {
    /// One critic evaluation per (seed, state, action slot).
    pub records: Vec<QGridRecord>,
    /// Std over seeds per (state, action slot).
    pub spreads: Vec<QGridSpread>,
}

impl VarianceReport {
    /// Spread values restricted to one action source, in row order.
    pub fn spread_values(&self, source: ActionSource) -> Vec<f64> {
        self.spreads
            .iter()
            .filter(|s| s.source == source)
            .map(|s| s.std_q)
            .collect()
    }
}

/// Evaluates prediction spread for one finished run directory and writes
/// `qgrid.csv` (raw evaluations) and `qgrid_spread.csv` (per-cell stds)
/// alongside the run's other artifacts.
pub fn prediction_variance(run_dir: &Path) -> Result<VarianceReport, HarnessError> {
    let (config, statuses) = read_manifest(run_dir)?;
    let seeds: Vec<u64> = statuses
        .iter()
        .filter(|s| s.is_ok())
        .filter_map(|s| s.seed)
        .collect();
    if seeds.len() < 2 {
        return Err(HarnessError::Config(format!(
            "prediction spread needs at least 2 successful seeds, found {}",
            seeds.len()
        )));
    }

    let states = grid_states(&config.pointmass);
    let state_dim = 3;
    let mut records = Vec::with_capacity(seeds.len() * states.len() * (PI_SLOT + 1));
    // q_by_cell[state][slot] collects one value per seed.
    let mut q_by_cell = vec![vec![Vec::with_capacity(seeds.len()); PI_SLOT + 1]; states.len()];

    for &seed in &seeds {
        let actor = load_checkpoint(run_dir, &format!("actor_seed{seed}.txt"))?;
        let critic = load_checkpoint(run_dir, &format!("critic_seed{seed}.txt"))?;
        check_shapes(run_dir, seed, &actor, &critic, state_dim)?;
        for (si, state) in states.iter().enumerate() {
            for (slot, action) in GIVEN_ACTIONS.iter().enumerate() {
                let q = critic_q(&critic, state, action)?;
                records.push(QGridRecord {
                    seed,
                    state: *state,
                    action: *action,
                    source: ActionSource::Given,
                    q,
                });
                q_by_cell[si][slot].push(q);
            }
            let pi = actor.forward(state)?;
            let action = [pi[0].clamp(-1.0, 1.0), pi[1].clamp(-1.0, 1.0), pi[2].clamp(-1.0, 1.0)];
            let q = critic_q(&critic, state, &action)?;
            records.push(QGridRecord {
                seed,
                state: *state,
                action,
                source: ActionSource::Pi,
                q,
            });
            q_by_cell[si][PI_SLOT].push(q);
        }
    }

    let mut spreads = Vec::with_capacity(states.len() * (PI_SLOT + 1));
    for (si, state) in states.iter().enumerate() {
        for slot in 0..=PI_SLOT {
            spreads.push(QGridSpread {
                state: *state,
                slot,
                source: if slot == PI_SLOT {
                    ActionSource::Pi
                } else {
                    ActionSource::Given
                },
                std_q: std_pop(&q_by_cell[si][slot]),
            });
        }
    }

    write_atomic(&run_dir.join("qgrid.csv"), &qgrid_to_csv(&records))?;
    write_atomic(&run_dir.join("qgrid_spread.csv"), &spreads_to_csv(&spreads))?;
    Ok(VarianceReport { records, spreads })
}

/// Reads back a previously written `qgrid.csv`.
pub fn read_qgrid_file(run_dir: &Path) -> Result<Vec<QGridRecord>, HarnessError> {
    read_qgrid(&run_dir.join("qgrid.csv"))
}

fn load_checkpoint(run_dir: &Path, name: &str) -> Result<Mlp, HarnessError> {
    let path = run_dir.join(name);
    let text = crate::read_to_string(&path)?;
    Mlp::from_text(&text).map_err(|e| HarnessError::malformed(&path, e.to_string()))
}

fn check_shapes(
    run_dir: &Path,
    seed: u64,
    actor: &Mlp,
    critic: &Mlp,
    state_dim: usize,
) -> Result<(), HarnessError> {
    let action_dim = actor.spec().output_width();
    if actor.spec().input_width() != state_dim {
        return Err(HarnessError::malformed(
            &run_dir.join(format!("actor_seed{seed}.txt")),
            format!(
                "actor consumes {} inputs, probe states have {state_dim}",
                actor.spec().input_width()
            ),
        ));
    }
    if critic.spec().input_width() != state_dim + action_dim
        || critic.spec().output_width() != 1
    {
        return Err(HarnessError::malformed(
            &run_dir.join(format!("critic_seed{seed}.txt")),
            format!(
                "critic maps {} -> {}, expected {} -> 1",
                critic.spec().input_width(),
                critic.spec().output_width(),
                state_dim + action_dim
            ),
        ));
    }
    if action_dim != 3 {
        return Err(HarnessError::malformed(
            &run_dir.join(format!("actor_seed{seed}.txt")),
            format!("actor emits {action_dim} action components, expected 3"),
        ));
    }
    Ok(())
}

fn critic_q(critic: &Mlp, state: &[f64; 3], action: &[f64; 3]) -> Result<f64, HarnessError> {
    let mut input = [0.0; 6];
    input[..3].copy_from_slice(state);
    input[3..].copy_from_slice(action);
    Ok(critic.forward_scalar(&input)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::runner::run_experiment;

    fn tiny_run(dir: &Path) -> crate::config::ExperimentConfig {
        let config = parse_config(
            "",
            &[
                format!("out={:?}", dir.join("run").to_string_lossy()),
                "seeds=[0, 1, 2]".into(),
                "episodes=1".into(),
                "agent.epochs_per_episode=1".into(),
                "agent.max_minibatches_per_epoch=1".into(),
                "agent.actor_hidden=[6]".into(),
                "agent.critic_hidden=[6]".into(),
                "pointmass.episode_length=10".into(),
            ],
        )
        .unwrap();
        run_experiment(&config).unwrap();
        config
    }

    #[test]
    fn probe_actions_stay_inside_the_action_box() {
        for action in GIVEN_ACTIONS {
            assert!(action.iter().all(|a| (-1.0..=1.0).contains(a)));
        }
        // All probe actions are distinct.
        for i in 0..GIVEN_ACTIONS.len() {
            for j in i + 1..GIVEN_ACTIONS.len() {
                assert_ne!(GIVEN_ACTIONS[i], GIVEN_ACTIONS[j]);
            }
        }
    }

    #[test]
    fn grid_covers_interior_of_the_cube() {
        let env = PointMassConfig::default();
        let states = grid_states(&env);
        assert_eq!(states.len(), 27);
        for s in &states {
            assert!(s.iter().all(|&c| c > 0.0 && c < env.cube_side));
        }
        assert_eq!(states[0], [0.25 * env.cube_side; 3]);
        assert_eq!(states[13], [0.5 * env.cube_side; 3]);
    }

    #[test]
    fn variance_report_covers_every_cell() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_run(dir.path());
        let report = prediction_variance(&config.out).unwrap();
        assert_eq!(report.records.len(), 3 * 27 * 12);
        assert_eq!(report.spreads.len(), 27 * 12);
        assert_eq!(report.spread_values(ActionSource::Given).len(), 27 * 11);
        assert_eq!(report.spread_values(ActionSource::Pi).len(), 27);
        assert!(report.spreads.iter().all(|s| s.std_q.is_finite()));
        // Different seeds initialize differently, so spreads are nonzero.
        assert!(report.spreads.iter().any(|s| s.std_q > 0.0));
        let back = read_qgrid_file(&config.out).unwrap();
        assert_eq!(back, report.records);
        assert!(config.out.join("qgrid_spread.csv").is_file());
    }

    #[test]
    fn single_seed_runs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let config = parse_config(
            "",
            &[
                format!("out={:?}", dir.path().join("run").to_string_lossy()),
                "seeds=[7]".into(),
                "episodes=1".into(),
                "agent.epochs_per_episode=1".into(),
                "agent.max_minibatches_per_epoch=1".into(),
                "agent.actor_hidden=[4]".into(),
                "agent.critic_hidden=[4]".into(),
                "pointmass.episode_length=5".into(),
            ],
        )
        .unwrap();
        run_experiment(&config).unwrap();
        let err = prediction_variance(&config.out).unwrap_err();
        assert!(err.to_string().contains("at least 2"));
    }

    #[test]
    fn truncated_checkpoint_is_reported_with_its_path() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_run(dir.path());
        let path = config.out.join("critic_seed1.txt");
        let text = crate::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        let err = prediction_variance(&config.out).unwrap_err();
        assert!(err.to_string().contains("critic_seed1.txt"), "{err}");
    }
}
