//! Experiment harness: configured runs, parameter sweeps, prediction-variance
//! reports, SVG plots, and structural audits of persisted run artifacts.
//!
//! Every run is single-threaded and fully determined by its config and seed
//! list; output files are written atomically and byte-stable across reruns,
//! except for recorded wall-clock columns.

pub mod audit;
pub mod config;
pub mod matrix;
pub mod plots;
pub mod records;
pub mod runner;
pub mod stats;
pub mod variance;

use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed artifact {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error(transparent)]
    Graph(#[from] qgraph::graph_memory::GraphError),
    #[error(transparent)]
    Mdp(#[from] qgraph::finite_mdp::MdpError),
    #[error(transparent)]
    Agent(#[from] qgraph::agents::AgentError),
    #[error(transparent)]
    Neural(#[from] qgraph::neural::NeuralError),
    #[error(transparent)]
    PointMass(#[from] qgraph::envs::PointMassError),
    #[error(transparent)]
    Baird(#[from] qgraph::envs::BairdError),
    #[error(transparent)]
    Edu(#[from] qgraph::envs::EduError),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn malformed(path: &Path, reason: impl Into<String>) -> Self {
        Self::Malformed {
            path: path.display().to_string(),
            reason: reason.into(),
        }
    }
}

/// Version tag written into every manifest; bump when any artifact schema
/// changes shape.
pub const ARTIFACT_VERSION: &str = "1";

/// Writes a file atomically: the content lands under a temporary name in the
/// same directory and is renamed into place, so readers never observe a
/// partial file.
pub fn write_atomic(path: &Path, content: &str) -> Result<(), HarnessError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let file_name = path
        .file_name()
        .ok_or_else(|| HarnessError::malformed(path, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
        f.write_all(content.as_bytes())
            .map_err(|e| HarnessError::io(&tmp, e))?;
        f.sync_all().map_err(|e| HarnessError::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn read_to_string(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}
