//! Sweeps one configuration axis, running every cell into its own
//! subdirectory of the base output directory.
//!
//! A cell failure is recorded in the sweep manifest and never blocks or
//! corrupts sibling cells; each cell directory is a complete, independently
//! auditable run.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method};
use crate::runner::run_experiment;
use crate::{write_atomic, HarnessError, ARTIFACT_VERSION};

/// Which configuration axis a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixAxis {
    /// Actor/critic learning-rate cross product.
    Lr,
    /// Replay-graph capacity limits.
    Capacity,
    /// Environment action-noise levels.
    Sigma,
    /// Agent variants (vanilla DDPG and bound configurations).
    Variant,
}

impl FromStr for MatrixAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lr" => Ok(Self::Lr),
            "capacity" => Ok(Self::Capacity),
            "sigma" => Ok(Self::Sigma),
            "variant" => Ok(Self::Variant),
            other => Err(HarnessError::Config(format!(
                "unknown axis {other:?}; expected lr, capacity, sigma, or variant"
            ))),
        }
    }
}

impl fmt::Display for MatrixAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Self::Lr => "lr",
            Self::Capacity => "capacity",
            Self::Sigma => "sigma",
            Self::Variant => "variant",
        };
        f.write_str(name)
    }
}

/// Outcome of one sweep cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellOutcome {
    pub name: String,
    pub dir: PathBuf,
    /// `"ok"`, `"partial: ..."` when some seeds failed, or `"error: ..."`.
    pub status: String,
}

impl CellOutcome {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Applies one named agent variant to a config in place.
///
/// Variants fully pin the method and every bound toggle, so a cell's
/// behavior never depends on leftovers in the base config.
pub fn apply_variant(config: &mut ExperimentConfig, variant: &str) -> Result<(), HarnessError> {
    let b = &mut config.bounds;
    match variant {
        "vanilla" => {
            config.agent.method = Method::Vanilla;
            b.zero_action = false;
            b.graph_lb = false;
            b.apriori = false;
            b.empirical = false;
        }
        "qgraph" => {
            config.agent.method = Method::Qgraph;
            b.zero_action = true;
            b.graph_lb = true;
            b.apriori = false;
            b.empirical = false;
        }
        "qgraph_no_zero" => {
            apply_variant(config, "qgraph")?;
            config.bounds.zero_action = false;
        }
        "qgraph_apriori" => {
            apply_variant(config, "qgraph")?;
            config.bounds.apriori = true;
        }
        "qgraph_empirical" => {
            apply_variant(config, "qgraph")?;
            config.bounds.empirical = true;
        }
        other => {
            return Err(HarnessError::Config(format!(
                "unknown variant {other:?}"
            )))
        }
    }
    Ok(())
}

/// Compact learning-rate tag for directory names: `0.001` -> `1e-3`.
fn lr_tag(lr: f64) -> String {
    format!("{lr:e}")
}

/// Expands the chosen axis into named cell configs. Cell output dirs are not
/// set here; [`run_matrix`] assigns them under the base `out`.
pub fn expand_axis(
    base: &ExperimentConfig,
    axis: MatrixAxis,
) -> Result<Vec<(String, ExperimentConfig)>, HarnessError> {
    let mut cells = Vec::new();
    match axis {
        MatrixAxis::Lr => {
            for &actor_lr in &base.matrix.lr_values {
                for &critic_lr in &base.matrix.lr_values {
                    let mut cfg = base.clone();
                    cfg.agent.actor_lr = actor_lr;
                    cfg.agent.critic_lr = critic_lr;
                    cells.push((
                        format!("lr_a{}_c{}", lr_tag(actor_lr), lr_tag(critic_lr)),
                        cfg,
                    ));
                }
            }
        }
        MatrixAxis::Capacity => {
            for &capacity in &base.matrix.capacities {
                let mut cfg = base.clone();
                let name = if capacity == 0 {
                    cfg.graph.capacity = None;
                    "cap_unlimited".to_string()
                } else {
                    cfg.graph.capacity = Some(capacity);
                    format!("cap_{capacity}")
                };
                cells.push((name, cfg));
            }
        }
        MatrixAxis::Sigma => {
            for &sigma in &base.matrix.sigmas {
                let mut cfg = base.clone();
                cfg.pointmass.noise_sigma = sigma;
                cells.push((format!("sigma_{sigma}"), cfg));
            }
        }
        MatrixAxis::Variant => {
            for variant in &base.matrix.variants {
                let mut cfg = base.clone();
                apply_variant(&mut cfg, variant)?;
                cells.push((variant.clone(), cfg));
            }
        }
    }
    if cells.is_empty() {
        return Err(HarnessError::Config(format!(
            "axis {axis} expands to no cells; its value list is empty"
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for (name, _) in &cells {
        if !seen.insert(name.clone()) {
            return Err(HarnessError::Config(format!(
                "axis {axis} produces duplicate cell name {name:?}"
            )));
        }
    }
    Ok(cells)
}

/// Runs every cell of the sweep and writes the sweep manifest to
/// `<out>/meta.json`.
pub fn run_matrix(
    base: &ExperimentConfig,
    axis: MatrixAxis,
) -> Result<Vec<CellOutcome>, HarnessError> {
    base.validate()?;
    let cells = expand_axis(base, axis)?;
    std::fs::create_dir_all(&base.out).map_err(|e| HarnessError::io(&base.out, e))?;
    let mut outcomes = Vec::with_capacity(cells.len());
    for (name, mut cfg) in cells {
        cfg.out = base.out.join(&name);
        let status = match run_experiment(&cfg) {
            Ok(summary) if summary.all_ok() => "ok".to_string(),
            Ok(summary) => {
                let failed: Vec<&str> = summary
                    .statuses
                    .iter()
                    .filter(|s| !s.is_ok())
                    .map(|s| s.label.as_str())
                    .collect();
                format!("partial: failed {}", failed.join(", "))
            }
            Err(e) => format!("error: {e}"),
        };
        outcomes.push(CellOutcome {
            dir: cfg.out,
            name,
            status,
        });
    }
    let manifest = serde_json::json!({
        "artifact_version": ARTIFACT_VERSION,
        "axis": axis,
        "config": base,
        "cells": outcomes,
    });
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| HarnessError::Config(format!("manifest serialization: {e}")))?;
    text.push('\n');
    write_atomic(&base.out.join("meta.json"), &text)?;
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn base() -> ExperimentConfig {
        parse_config("", &[] as &[String]).unwrap()
    }

    #[test]
    fn lr_axis_crosses_actor_and_critic_rates() {
        let cells = expand_axis(&base(), MatrixAxis::Lr).unwrap();
        assert_eq!(cells.len(), 9);
        assert_eq!(cells[0].0, "lr_a1e-2_c1e-2");
        assert_eq!(cells[8].0, "lr_a1e-4_c1e-4");
        assert_eq!(cells[1].1.agent.actor_lr, 1e-2);
        assert_eq!(cells[1].1.agent.critic_lr, 1e-3);
    }

    #[test]
    fn capacity_axis_maps_zero_to_unlimited() {
        let cells = expand_axis(&base(), MatrixAxis::Capacity).unwrap();
        let names: Vec<&str> = cells.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["cap_1000", "cap_5000", "cap_unlimited"]);
        assert_eq!(cells[0].1.graph.capacity, Some(1000));
        assert_eq!(cells[2].1.graph.capacity, None);
    }

    #[test]
    fn sigma_axis_sets_environment_noise() {
        let cells = expand_axis(&base(), MatrixAxis::Sigma).unwrap();
        assert_eq!(cells.len(), 3);
        assert_eq!(cells[1].0, "sigma_0.1");
        assert_eq!(cells[1].1.pointmass.noise_sigma, 0.1);
    }

    #[test]
    fn variant_axis_pins_method_and_bounds() {
        let cells = expand_axis(&base(), MatrixAxis::Variant).unwrap();
        assert_eq!(cells.len(), 5);
        let vanilla = &cells[0].1;
        assert_eq!(vanilla.agent.method, Method::Vanilla);
        assert!(!vanilla.bounds.zero_action);
        let no_zero = &cells[2].1;
        assert_eq!(no_zero.agent.method, Method::Qgraph);
        assert!(!no_zero.bounds.zero_action);
        assert!(no_zero.bounds.graph_lb);
        assert!(cells[3].1.bounds.apriori);
        assert!(cells[4].1.bounds.empirical);
    }

    #[test]
    fn unknown_variant_and_empty_axis_are_rejected() {
        let mut cfg = base();
        assert!(apply_variant(&mut cfg, "mystery").is_err());
        cfg.matrix.sigmas.clear();
        assert!(expand_axis(&cfg, MatrixAxis::Sigma).is_err());
    }

    #[test]
    fn failed_cells_leave_siblings_intact() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = parse_config(
            "",
            &[
                format!("out={:?}", dir.path().join("sweep").to_string_lossy()),
                "seeds=[0]".into(),
                "episodes=1".into(),
                "agent.epochs_per_episode=1".into(),
                "agent.max_minibatches_per_epoch=1".into(),
                "agent.actor_hidden=[4]".into(),
                "agent.critic_hidden=[4]".into(),
                "pointmass.episode_length=5".into(),
            ],
        )
        .unwrap();
        // Middle capacity is invalid only at run time (capacity < minibatch
        // still valid; use capacities where one produces an error via
        // negative parse impossibility). Instead poison via sigma: negative
        // noise fails environment validation inside the cell run.
        cfg.matrix.sigmas = vec![0.0, -1.0, 0.1];
        let outcomes = run_matrix(&cfg, MatrixAxis::Sigma).unwrap();
        assert_eq!(outcomes.len(), 3);
        assert!(outcomes[0].is_ok());
        assert!(outcomes[1].status.starts_with("error:"), "{}", outcomes[1].status);
        assert!(outcomes[2].is_ok());
        assert!(outcomes[0].dir.join("episodes.csv").is_file());
        assert!(outcomes[2].dir.join("episodes.csv").is_file());
        assert!(dir.path().join("sweep/meta.json").is_file());
    }
}
