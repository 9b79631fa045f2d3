//! Experiment configuration: a TOML file with nested sections, plus
//! `key.path=value` overrides applied before deserialization.

use std::path::{Path, PathBuf};

use qgraph::agents::{AgentConfig, BoundConfig};
use qgraph::envs::{PointMassConfig, EDU_MASTER_SEED};
pub use qgraph::agents::Method;
use qgraph::graph_memory::GraphConfig;
use qgraph::neural::{HiddenActivation, InitScheme, LayerSpec, OutputActivation};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// Which experiment a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Linear TD(0) divergence demo on the seven-state star.
    Baird,
    /// Offline four-transition regression across all transition subsets.
    Edu,
    /// DDPG on the point-mass insertion task.
    Pointmass,
}

/// Agent hyperparameters (pointmass experiment).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSection {
    pub method: Method,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub minibatch: usize,
    pub epochs_per_episode: usize,
    pub max_minibatches_per_epoch: usize,
    pub exploration_sigma: f64,
}

impl Default for AgentSection {
    fn default() -> Self {
        Self {
            method: Method::Qgraph,
            gamma: 0.99,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            actor_hidden: vec![64, 64, 64],
            critic_hidden: vec![64, 64, 64],
            minibatch: 64,
            epochs_per_episode: 50,
            max_minibatches_per_epoch: 15,
            exploration_sigma: 0.2,
        }
    }
}

/// Which target-bound sources are active, and whether the synthetic
/// zero-action self-loop augments insertions. Flags compose freely with the
/// method: turning everything off under the qgraph method reproduces vanilla
/// behavior exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundsSection {
    pub zero_action: bool,
    /// Graph-derived lower bounds on TD targets (only effective with the
    /// qgraph method, which maintains them).
    pub graph_lb: bool,
    /// Fixed bounds from the task's known reward range.
    pub apriori: bool,
    /// Known reward range for the a-priori bounds; defaults to the
    /// point-mass reward range.
    pub apriori_range: (f64, f64),
    /// Bounds from the lowest/highest rewards observed so far.
    pub empirical: bool,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            zero_action: true,
            graph_lb: true,
            apriori: false,
            apriori_range: (-1.0, 0.0),
            empirical: false,
        }
    }
}

/// Replay-graph knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphSection {
    /// Maximum stored transitions; omit for unlimited.
    pub capacity: Option<usize>,
    pub max_loop_search_depth: usize,
    pub propagation_epsilon: f64,
    /// Convergence tolerance of the per-episode exact bound refresh.
    pub sync_tolerance: f64,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self {
            capacity: None,
            max_loop_search_depth: 32,
            propagation_epsilon: 1e-9,
            sync_tolerance: 1e-9,
        }
    }
}

/// Seven-state star experiment parameters. The run is bounded iff the agent
/// method is `qgraph`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BairdSection {
    pub gamma: f64,
    pub lr: f64,
    pub initial_weights: [f64; 8],
    pub steps: usize,
    /// Every `record_stride`-th step lands in the trajectory CSV (step 0 and
    /// the final step always do).
    pub record_stride: usize,
}

impl Default for BairdSection {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            lr: 0.1,
            initial_weights: [10.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            steps: 100_000,
            record_stride: 100,
        }
    }
}

/// Offline regression experiment parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EduSection {
    /// Master seed from which the per-run seeds are drawn.
    pub master_seed: u64,
    pub seed_count: usize,
    pub epochs: usize,
}

impl Default for EduSection {
    fn default() -> Self {
        Self {
            master_seed: EDU_MASTER_SEED,
            seed_count: 10,
            epochs: 10_000,
        }
    }
}

/// Value lists for the sweep axes of the `matrix` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixSection {
    /// Learning rates; the sweep takes the Cartesian square over
    /// (actor, critic).
    pub lr_values: Vec<f64>,
    /// Graph capacities; 0 means unlimited.
    pub capacities: Vec<usize>,
    /// Environment noise standard deviations.
    pub sigmas: Vec<f64>,
    /// Method/bound variants by name; see [`crate::matrix::apply_variant`].
    pub variants: Vec<String>,
}

impl Default for MatrixSection {
    fn default() -> Self {
        Self {
            lr_values: vec![1e-2, 1e-3, 1e-4],
            capacities: vec![1000, 5000, 0],
            sigmas: vec![0.0, 0.1, 0.2],
            variants: vec![
                "vanilla".into(),
                "qgraph".into(),
                "qgraph_no_zero".into(),
                "qgraph_apriori".into(),
                "qgraph_empirical".into(),
            ],
        }
    }
}

/// One experiment's full configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Output directory of the run (created if missing).
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub agent: AgentSection,
    pub bounds: BoundsSection,
    pub graph: GraphSection,
    pub pointmass: PointMassConfig,
    pub baird: BairdSection,
    pub edu: EduSection,
    pub matrix: MatrixSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Pointmass,
            out: PathBuf::from("runs/out"),
            seeds: (0..10).collect(),
            episodes: 100,
            agent: AgentSection::default(),
            bounds: BoundsSection::default(),
            graph: GraphSection::default(),
            pointmass: PointMassConfig::default(),
            baird: BairdSection::default(),
            edu: EduSection::default(),
            matrix: MatrixSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must be nonempty".into()));
        }
        if self.episodes == 0 {
            return Err(HarnessError::Config("episodes must be >= 1".into()));
        }
        let (lo, hi) = self.bounds.apriori_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(HarnessError::Config(format!(
                "apriori_range [{lo}, {hi}] is not a valid interval"
            )));
        }
        match self.experiment {
            Experiment::Pointmass => {
                self.pointmass.validate()?;
                self.agent_config()?.validate()?;
                GraphConfig::try_from_section(self)?;
            }
            Experiment::Baird => self.baird_config().validate()?,
            Experiment::Edu => {
                if self.edu.seed_count < 2 {
                    return Err(HarnessError::Config(
                        "edu experiment needs at least 2 seeds for spreads".into(),
                    ));
                }
                if self.edu.epochs == 0 {
                    return Err(HarnessError::Config("edu epochs must be >= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Agent configuration for the point-mass task: 3-dimensional states and
    /// box actions, tanh actor initialized He-uniform, linear critic over the
    /// state-action concatenation initialized from a narrow Gaussian.
    pub fn agent_config(&self) -> Result<AgentConfig, HarnessError> {
        let a = &self.agent;
        let mut actor_sizes = vec![3];
        actor_sizes.extend_from_slice(&a.actor_hidden);
        actor_sizes.push(3);
        let mut critic_sizes = vec![6];
        critic_sizes.extend_from_slice(&a.critic_hidden);
        critic_sizes.push(1);
        let config = AgentConfig {
            method: a.method,
            actor_spec: LayerSpec::new(
                actor_sizes,
                HiddenActivation::Relu,
                OutputActivation::Tanh,
            )?,
            actor_init: InitScheme::HeUniform,
            actor_lr: a.actor_lr,
            critic_spec: LayerSpec::new(
                critic_sizes,
                HiddenActivation::Relu,
                OutputActivation::Linear,
            )?,
            critic_init: InitScheme::Gaussian {
                mean: 0.0,
                std: 0.001,
            },
            critic_lr: a.critic_lr,
            gamma: a.gamma,
            minibatch: a.minibatch,
            epochs_per_episode: a.epochs_per_episode,
            max_minibatches_per_epoch: a.max_minibatches_per_epoch,
            exploration_sigma: a.exploration_sigma,
            bounds: self.bound_config(),
        };
        Ok(config)
    }

    /// Effective bound sources: graph bounds require the qgraph method (the
    /// vanilla pipeline maintains none).
    pub fn bound_config(&self) -> BoundConfig {
        BoundConfig {
            use_graph_lb: self.agent.method == Method::Qgraph && self.bounds.graph_lb,
            apriori: self.bounds.apriori.then_some(self.bounds.apriori_range),
            empirical: self.bounds.empirical,
            gamma: self.agent.gamma,
        }
    }

    /// Replay-graph configuration for the point-mass task.
    pub fn graph_config(&self) -> GraphConfig {
        let mut config = GraphConfig::new(self.agent.gamma);
        config.capacity = self.graph.capacity;
        config.zero_action = self.bounds.zero_action.then(|| vec![0.0; 3]);
        config.max_loop_search_depth = self.graph.max_loop_search_depth;
        config.propagation_epsilon = self.graph.propagation_epsilon;
        config.reward_range = Some((-1.0, 0.0));
        config
    }

    pub fn baird_config(&self) -> qgraph::envs::BairdConfig {
        qgraph::envs::BairdConfig {
            gamma: self.baird.gamma,
            lr: self.baird.lr,
            initial_weights: self.baird.initial_weights,
            steps: self.baird.steps,
            bounded: self.agent.method == Method::Qgraph,
        }
    }
}

trait TryFromSection: Sized {
    fn try_from_section(config: &ExperimentConfig) -> Result<Self, HarnessError>;
}

impl TryFromSection for GraphConfig {
    fn try_from_section(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        let graph_config = config.graph_config();
        // Exercise the constructor's validation without keeping the graph.
        qgraph::graph_memory::DataGraph::new(graph_config.clone())?;
        Ok(graph_config)
    }
}

/// Parses a config file and applies `key.path=value` overrides, then
/// validates. Override values are parsed as TOML literals, falling back to
/// bare strings (`agent.method=vanilla` works without quotes).
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, HarnessError> {
    let text = crate::read_to_string(path)?;
    parse_config(&text, overrides)
}

/// [`load_config`] over in-memory text.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig, HarnessError> {
    let mut value: toml::Value = text
        .parse()
        .map_err(|e| HarnessError::Config(format!("bad TOML: {e}")))?;
    for ov in overrides {
        apply_override(&mut value, ov)?;
    }
    let config: ExperimentConfig = value
        .try_into()
        .map_err(|e| HarnessError::Config(format!("bad config: {e}")))?;
    config.validate()?;
    Ok(config)
}

fn apply_override(base: &mut toml::Value, spec: &str) -> Result<(), HarnessError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override {spec:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(HarnessError::Config(format!("override {spec:?} has no key")));
    }
    // A dotted-key TOML document builds the nested tables for us; non-literal
    // values are retried as quoted strings.
    let parsed: toml::Value = format!("{key} = {raw}")
        .parse()
        .or_else(|_| format!("{key} = {raw:?}").parse())
        .map_err(|e| HarnessError::Config(format!("override {spec:?}: {e}")))?;
    merge_value(base, parsed);
    Ok(())
}

/// Deep-merges tables; any other value replaces the base wholesale.
fn merge_value(base: &mut toml::Value, add: toml::Value) {
    match (base, add) {
        (toml::Value::Table(base_table), toml::Value::Table(add_table)) => {
            for (k, v) in add_table {
                match base_table.get_mut(&k) {
                    Some(slot) => merge_value(slot, v),
                    None => {
                        base_table.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
