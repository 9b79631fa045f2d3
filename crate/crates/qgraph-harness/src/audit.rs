//! Post-hoc integrity check of a finished run directory.
//!
//! Reloads every persisted replay graph under the run's own configuration
//! and re-verifies its structural invariants, then cross-checks the episode
//! log against the config. A clean report means the artifacts are mutually
//! consistent, not merely parseable.

use std::path::Path;

use qgraph::graph_memory::DataGraph;

use crate::records::read_episodes;
use crate::runner::read_manifest;
use crate::HarnessError;

/// Result of auditing one run directory.
#[derive(Debug, Clone)]
pub struct AuditReport {
    /// Number of artifacts inspected.
    pub checks: usize,
    /// Human-readable violations; empty means the run passed.
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Audits the artifacts in `run_dir`.
///
/// Fails only when artifacts are unreadable or missing; internal
/// inconsistencies are collected as violations in the report.
pub fn audit_run(run_dir: &Path) -> Result<AuditReport, HarnessError> {
    let (config, statuses) = read_manifest(run_dir)?;
    let mut checks = 0usize;
    let mut violations = Vec::new();

    let graph_config = config.graph_config();
    for status in statuses.iter().filter(|s| s.is_ok()) {
        let Some(seed) = status.seed else { continue };
        let name = format!("graph_seed{seed}.txt");
        let path = run_dir.join(&name);
        if !path.is_file() {
            // Graph dumps exist only for the training experiment.
            continue;
        }
        checks += 1;
        let text = crate::read_to_string(&path)?;
        match DataGraph::from_dump(&text, graph_config.clone()) {
            Ok(graph) => {
                for violation in graph.audit() {
                    violations.push(format!("{name}: {violation}"));
                }
                if let Some(capacity) = graph_config.capacity {
                    if graph.len() > capacity {
                        violations.push(format!(
                            "{name}: {} edges exceed capacity {capacity}",
                            graph.len()
                        ));
                    }
                }
            }
            Err(e) => violations.push(format!("{name}: reload failed: {e}")),
        }
    }

    let episodes_path = run_dir.join("episodes.csv");
    if episodes_path.is_file() {
        checks += 1;
        let records = read_episodes(&episodes_path)?;
        let allowed: std::collections::HashSet<u64> = statuses
            .iter()
            .filter(|s| s.is_ok())
            .filter_map(|s| s.seed)
            .collect();
        for (i, r) in records.iter().enumerate() {
            let row = i + 2; // header is line 1
            if !allowed.contains(&r.seed) {
                violations.push(format!(
                    "episodes.csv:{row}: seed {} has no successful run",
                    r.seed
                ));
            }
            if r.steps == 0 || r.steps > config.pointmass.episode_length {
                violations.push(format!(
                    "episodes.csv:{row}: {} steps outside 1..={}",
                    r.steps, config.pointmass.episode_length
                ));
            }
            if r.episode >= config.episodes {
                violations.push(format!(
                    "episodes.csv:{row}: episode {} beyond configured {}",
                    r.episode, config.episodes
                ));
            }
            if !r.ret.is_finite() || !r.clamp_rate.is_finite() {
                violations.push(format!("episodes.csv:{row}: non-finite values"));
            }
            if !(0.0..=1.0).contains(&r.clamp_rate) {
                violations.push(format!(
                    "episodes.csv:{row}: clamp rate {} outside [0, 1]",
                    r.clamp_rate
                ));
            }
            if let Some(capacity) = graph_config.capacity {
                if r.graph_edges > capacity {
                    violations.push(format!(
                        "episodes.csv:{row}: {} edges exceed capacity {capacity}",
                        r.graph_edges
                    ));
                }
            }
        }
    }

    if checks == 0 {
        violations.push("run contains no auditable artifacts".into());
    }
    Ok(AuditReport { checks, violations })
}
