//! Run artifact records and their CSV forms.
//!
//! Reals are printed as `{:.17e}`, which round-trips every finite `f64`
//! exactly, so the CSV files double as lossless data interchange between the
//! runner, the variance tool, and the plot tool.

use std::path::Path;

use crate::HarnessError;

/// One training episode's bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub episode: usize,
    /// Undiscounted return of the collected episode.
    pub ret: f64,
    /// Environment steps taken (terminal episodes stop early).
    pub steps: usize,
    /// Mean fraction of clamped targets over this episode's train steps.
    pub clamp_rate: f64,
    /// Stored transitions after the episode's insertions.
    pub graph_edges: usize,
    pub wall_ms: u64,
}

pub const EPISODES_HEADER: &str = "seed,episode,return,steps,clamp_rate,graph_edges,wall_ms";

impl EpisodeRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{:.17e},{},{:.17e},{},{}",
            self.seed, self.episode, self.ret, self.steps, self.clamp_rate, self.graph_edges,
            self.wall_ms
        )
    }

    pub fn from_csv_row(row: &str) -> Result<Self, String> {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 7 {
            return Err(format!("expected 7 fields, got {}", fields.len()));
        }
        Ok(Self {
            seed: parse(fields[0], "seed")?,
            episode: parse(fields[1], "episode")?,
            ret: parse(fields[2], "return")?,
            steps: parse(fields[3], "steps")?,
            clamp_rate: parse(fields[4], "clamp_rate")?,
            graph_edges: parse(fields[5], "graph_edges")?,
            wall_ms: parse(fields[6], "wall_ms")?,
        })
    }
}

fn parse<T: std::str::FromStr>(field: &str, name: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    field
        .parse()
        .map_err(|e| format!("bad {name} {field:?}: {e}"))
}

/// Serializes records under the fixed header.
pub fn episodes_to_csv(records: &[EpisodeRecord]) -> String {
    let mut out = String::from(EPISODES_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

/// Parses a file written by [`episodes_to_csv`].
pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeRecord>, HarnessError> {
    let text = crate::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(EPISODES_HEADER) => {}
        other => {
            return Err(HarnessError::malformed(
                path,
                format!("bad header {other:?}"),
            ))
        }
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            EpisodeRecord::from_csv_row(l)
                .map_err(|e| HarnessError::malformed(path, format!("line {}: {e}", i + 2)))
        })
        .collect()
}

/// Whether a Q-grid evaluation used a fixed probe action or the actor's own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSource {
    Given,
    Pi,
}

impl ActionSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActionSource::Given => "given",
            ActionSource::Pi => "pi",
        }
    }

    pub fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "given" => Ok(ActionSource::Given),
            "pi" => Ok(ActionSource::Pi),
            other => Err(format!("bad action source {other:?}")),
        }
    }
}

/// One critic evaluation on the probe grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QGridRecord {
    pub seed: u64,
    pub state: [f64; 3],
    pub action: [f64; 3],
    pub source: ActionSource,
    pub q: f64,
}

pub const QGRID_HEADER: &str = "seed,sx,sy,sz,ax,ay,az,source,q";

impl QGridRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{:.17e}",
            self.seed,
            self.state[0],
            self.state[1],
            self.state[2],
            self.action[0],
            self.action[1],
            self.action[2],
            self.source.as_str(),
            self.q
        )
    }

    pub fn from_csv_row(row: &str) -> Result<Self, String> {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 9 {
            return Err(format!("expected 9 fields, got {}", fields.len()));
        }
        Ok(Self {
            seed: parse(fields[0], "seed")?,
            state: [
                parse(fields[1], "sx")?,
                parse(fields[2], "sy")?,
                parse(fields[3], "sz")?,
            ],
            action: [
                parse(fields[4], "ax")?,
                parse(fields[5], "ay")?,
                parse(fields[6], "az")?,
            ],
            source: ActionSource::from_str(fields[7])?,
            q: parse(fields[8], "q")?,
        })
    }
}

pub fn qgrid_to_csv(records: &[QGridRecord]) -> String {
    let mut out = String::from(QGRID_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

pub fn read_qgrid(path: &Path) -> Result<Vec<QGridRecord>, HarnessError> {
    let text = crate::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(QGRID_HEADER) => {}
        other => {
            return Err(HarnessError::malformed(
                path,
                format!("bad header {other:?}"),
            ))
        }
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            QGridRecord::from_csv_row(l)
                .map_err(|e| HarnessError::malformed(path, format!("line {}: {e}", i + 2)))
        })
        .collect()
}

/// Spread of predictions for one state and probe slot, aggregated over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct QGridSpread {
    pub state: [f64; 3],
    /// Probe index: 0..10 are the fixed actions, 11 is the actor's own.
    pub slot: usize,
    pub source: ActionSource,
    pub std_q: f64,
}

pub const QGRID_SPREAD_HEADER: &str = "sx,sy,sz,slot,source,std_q";

impl QGridSpread {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{:.17e},{:.17e},{:.17e},{},{},{:.17e}",
            self.state[0],
            self.state[1],
            self.state[2],
            self.slot,
            self.source.as_str(),
            self.std_q
        )
    }

    pub fn from_csv_row(row: &str) -> Result<Self, String> {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 6 {
            return Err(format!("expected 6 fields, got {}", fields.len()));
        }
        Ok(Self {
            state: [
                parse(fields[0], "sx")?,
                parse(fields[1], "sy")?,
                parse(fields[2], "sz")?,
            ],
            slot: parse(fields[3], "slot")?,
            source: ActionSource::from_str(fields[4])?,
            std_q: parse(fields[5], "std_q")?,
        })
    }
}

pub fn spreads_to_csv(spreads: &[QGridSpread]) -> String {
    let mut out = String::from(QGRID_SPREAD_HEADER);
    out.push('\n');
    for s in spreads {
        out.push_str(&s.to_csv_row());
        out.push('\n');
    }
    out
}

pub fn read_spreads(path: &Path) -> Result<Vec<QGridSpread>, HarnessError> {
    let text = crate::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(QGRID_SPREAD_HEADER) => {}
        other => {
            return Err(HarnessError::malformed(
                path,
                format!("bad header {other:?}"),
            ))
        }
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            QGridSpread::from_csv_row(l)
                .map_err(|e| HarnessError::malformed(path, format!("line {}: {e}", i + 2)))
        })
        .collect()
}
