//! DDPG actor-critic with bound-clamped temporal-difference targets.
//!
//! The critic regresses on targets `r + g Q(s', pi(s'))` (no target network).
//! Before the regression step, each target is clamped into the tightest
//! interval assembled from up to three sources: per-edge graph bounds, the
//! a-priori reward-range bounds, and bounds from the empirically observed
//! reward range. Samples with no bound from any source pass through
//! untouched, so with clamping disabled (or never active) the step is
//! bit-identical to vanilla DDPG.

use crate::graph_memory::{DataGraph, GraphError, TransitionBatch};
use crate::neural::{
    adam_step, backward_batch, mlp_forward_batch, mlp_init, AdamState, InitScheme, LayerSpec,
    Matrix, Mlp, MlpGrads, NeuralError,
};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
}

/// Which target-bound sources are active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    /// Clamp from below with per-sample graph bounds.
    pub use_graph_lb: bool,
    /// Task reward range, when known up front; yields both a lower and an
    /// upper bound via the attainable Q-value range.
    pub apriori: Option<(f64, f64)>,
    /// Derive the same style of bounds from the rewards observed so far.
    pub empirical: bool,
    pub gamma: f64,
}

impl BoundConfig {
    /// All sources off: targets pass through unchanged.
    pub fn disabled(gamma: f64) -> Self {
        Self {
            use_graph_lb: false,
            apriori: None,
            empirical: false,
            gamma,
        }
    }

    pub fn graph_only(gamma: f64) -> Self {
        Self {
            use_graph_lb: true,
            apriori: None,
            empirical: false,
            gamma,
        }
    }
}

/// Attainable Q-value range for rewards in `[r_min, r_max]`: the discounted
/// sum of a constant reward stream is `r/(1-g)` if the episode never ends and
/// `r` at an immediate terminal, so both ends must be covered.
pub fn apriori_bounds(r_min: f64, r_max: f64, gamma: f64) -> Result<(f64, f64), AgentError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(AgentError::InvalidConfig(format!(
            "gamma {gamma} outside (0,1)"
        )));
    }
    if r_min > r_max {
        return Err(AgentError::InvalidConfig(format!(
            "reward range [{r_min}, {r_max}] is inverted"
        )));
    }
    let lb = (r_min / (1.0 - gamma)).min(r_min);
    let ub = (r_max / (1.0 - gamma)).max(r_max);
    Ok((lb, ub))
}

/// Per-sample targets before and after clamping.
#[derive(Debug, Clone)]
pub struct TDTargets {
    pub raw: Vec<f64>,
    /// Tightest applied lower bound per sample; `-inf` when none.
    pub lower: Vec<f64>,
    /// Tightest applied upper bound per sample; `+inf` when none.
    pub upper: Vec<f64>,
    pub bounded: Vec<f64>,
    pub low_clamped: Vec<bool>,
    pub high_clamped: Vec<bool>,
}

impl TDTargets {
    /// Fraction of samples with either clamp flag set.
    pub fn clamp_rate(&self) -> f64 {
        if self.raw.is_empty() {
            return 0.0;
        }
        let clamped = self
            .low_clamped
            .iter()
            .zip(&self.high_clamped)
            .filter(|(&l, &h)| l || h)
            .count();
        clamped as f64 / self.raw.len() as f64
    }
}

/// Bootstrapped targets `r` (terminal) or `r + g Q(s', pi(s'))`, using the
/// current networks directly.
pub fn compute_raw_targets(
    batch: &TransitionBatch,
    critic: &Mlp,
    actor: &Mlp,
    gamma: f64,
) -> Result<Vec<f64>, AgentError> {
    let mut targets = Vec::with_capacity(batch.samples.len());
    for sample in &batch.samples {
        let target = if sample.terminal {
            sample.reward
        } else {
            let next_action = actor.forward(&sample.next_state)?;
            let mut input = sample.next_state.clone();
            input.extend_from_slice(&next_action);
            let q = critic.forward_scalar(&input)?;
            sample.reward + gamma * q
        };
        targets.push(target);
    }
    Ok(targets)
}

/// Clamps raw targets into `[LB, UB]` assembled per sample from the enabled
/// bound sources. `observed_rewards` is the empirical reward range collected
/// so far (ignored unless `config.empirical`).
pub fn apply_bounds(
    raw: &[f64],
    batch_lbs: &[Option<f64>],
    config: &BoundConfig,
    observed_rewards: Option<(f64, f64)>,
) -> TDTargets {
    debug_assert_eq!(raw.len(), batch_lbs.len());
    let apriori = config
        .apriori
        .map(|(lo, hi)| apriori_bounds(lo, hi, config.gamma).expect("validated config"));
    let empirical = if config.empirical {
        observed_rewards.map(|(lo, hi)| apriori_bounds(lo, hi, config.gamma).expect("finite rewards"))
    } else {
        None
    };
    let mut targets = TDTargets {
        raw: raw.to_vec(),
        lower: Vec::with_capacity(raw.len()),
        upper: Vec::with_capacity(raw.len()),
        bounded: Vec::with_capacity(raw.len()),
        low_clamped: Vec::with_capacity(raw.len()),
        high_clamped: Vec::with_capacity(raw.len()),
    };
    for (i, &r) in raw.iter().enumerate() {
        let mut lb = f64::NEG_INFINITY;
        let mut ub = f64::INFINITY;
        if config.use_graph_lb {
            if let Some(graph_lb) = batch_lbs[i] {
                lb = lb.max(graph_lb);
            }
        }
        if let Some((alo, ahi)) = apriori {
            lb = lb.max(alo);
            ub = ub.min(ahi);
        }
        if let Some((elo, ehi)) = empirical {
            lb = lb.max(elo);
            ub = ub.min(ehi);
        }
        let bounded = r.max(lb).min(ub);
        targets.low_clamped.push(r < lb);
        targets.high_clamped.push(r > ub);
        targets.lower.push(lb);
        targets.upper.push(ub);
        targets.bounded.push(bounded);
    }
    targets
}

/// Training method selector: plain DDPG or the graph-bounded variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Vanilla,
    Qgraph,
}

/// Full agent configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub method: Method,
    pub actor_spec: LayerSpec,
    pub actor_init: InitScheme,
    pub actor_lr: f64,
    pub critic_spec: LayerSpec,
    pub critic_init: InitScheme,
    pub critic_lr: f64,
    pub gamma: f64,
    pub minibatch: usize,
    /// Training epochs run after each collected episode.
    pub epochs_per_episode: usize,
    /// Upper limit on minibatches per epoch; the effective count also caps at
    /// one pass over the stored edges (see [`AgentConfig::minibatches_for`]).
    pub max_minibatches_per_epoch: usize,
    /// Gaussian exploration noise applied during data collection.
    pub exploration_sigma: f64,
    pub bounds: BoundConfig,
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        self.actor_spec.validate().map_err(AgentError::Neural)?;
        self.critic_spec.validate().map_err(AgentError::Neural)?;
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(AgentError::InvalidConfig("learning rates must be > 0".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(AgentError::InvalidConfig(format!(
                "gamma {} outside (0,1)",
                self.gamma
            )));
        }
        if self.minibatch == 0 {
            return Err(AgentError::InvalidConfig("minibatch must be positive".into()));
        }
        if let Some((lo, hi)) = self.bounds.apriori {
            if lo > hi {
                return Err(AgentError::InvalidConfig(format!(
                    "a-priori reward range [{lo}, {hi}] is inverted"
                )));
            }
        }
        if self.exploration_sigma < 0.0 {
            return Err(AgentError::InvalidConfig("exploration sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// Minibatches per epoch: the configured cap, or fewer when the graph is
    /// small (one batch per `minibatch` stored edges, rounded up).
    pub fn minibatches_for(&self, stored_edges: usize) -> usize {
        if stored_edges == 0 {
            return 0;
        }
        let passes = stored_edges.div_ceil(self.minibatch);
        passes.min(self.max_minibatches_per_epoch)
    }
}

/// Per-step loss bookkeeping.
#[derive(Debug, Clone, Copy)]
pub struct LossReport {
    pub step: u64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub clamp_rate: f64,
}

impl LossReport {
    pub fn csv_header() -> &'static str {
        "step,critic_loss,actor_loss,clamp_rate"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:.17e},{:.17e},{:.17e}",
            self.step, self.critic_loss, self.actor_loss, self.clamp_rate
        )
    }
}

/// DDPG agent: actor, critic, their optimizer states, and the observed
/// reward range for empirical bounds.
#[derive(Debug, Clone)]
pub struct DdpgAgent {
    config: AgentConfig,
    actor: Mlp,
    critic: Mlp,
    actor_opt: AdamState,
    critic_opt: AdamState,
    observed_rewards: Option<(f64, f64)>,
    train_steps: u64,
}

impl DdpgAgent {
    /// Initializes both networks from the given RNG (draw order: actor, then
    /// critic).
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, rng: &mut R) -> Result<Self, AgentError> {
        config.validate()?;
        let actor = mlp_init(&config.actor_spec, config.actor_init, rng)?;
        let critic = mlp_init(&config.critic_spec, config.critic_init, rng)?;
        let actor_opt = AdamState::new(&actor);
        let critic_opt = AdamState::new(&critic);
        Ok(Self {
            config,
            actor,
            critic,
            actor_opt,
            critic_opt,
            observed_rewards: None,
            train_steps: 0,
        })
    }

    /// Rebuilds an agent around existing networks (checkpoint restore).
    /// Optimizer moments restart at zero.
    pub fn from_networks(config: AgentConfig, actor: Mlp, critic: Mlp) -> Result<Self, AgentError> {
        config.validate()?;
        let actor_opt = AdamState::new(&actor);
        let critic_opt = AdamState::new(&critic);
        Ok(Self {
            config,
            actor,
            critic,
            actor_opt,
            critic_opt,
            observed_rewards: None,
            train_steps: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn observed_rewards(&self) -> Option<(f64, f64)> {
        self.observed_rewards
    }

    /// Folds one observed reward into the empirical range.
    pub fn observe_reward(&mut self, reward: f64) {
        self.observed_rewards = Some(match self.observed_rewards {
            None => (reward, reward),
            Some((lo, hi)) => (lo.min(reward), hi.max(reward)),
        });
    }

    /// Critic Q-value for an explicit state-action pair.
    pub fn q_value(&self, state: &[f64], action: &[f64]) -> Result<f64, AgentError> {
        let mut input = state.to_vec();
        input.extend_from_slice(action);
        Ok(self.critic.forward_scalar(&input)?)
    }

    /// Deterministic policy output.
    pub fn policy(&self, state: &[f64]) -> Result<Vec<f64>, AgentError> {
        Ok(self.actor.forward(state)?)
    }

    /// One optimization step: sample, build clamped targets, critic MSE step,
    /// then actor step through the freshly updated critic.
    ///
    /// Forward passes run batched (identical numbers, better weight reuse);
    /// gradient accumulation keeps sample order, so results match the
    /// one-sample-at-a-time formulation bit for bit.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        graph: &DataGraph,
        rng: &mut R,
    ) -> Result<LossReport, AgentError> {
        let batch = graph.sample_minibatch(self.config.minibatch, rng)?;
        let state_dim = self.config.actor_spec.input_width();
        let action_dim = self.config.actor_spec.output_width();
        for sample in &batch.samples {
            if sample.state.len() != state_dim || sample.next_state.len() != state_dim {
                return Err(AgentError::Neural(NeuralError::ShapeMismatch {
                    expected: state_dim,
                    got: sample.state.len().max(sample.next_state.len()),
                    context: "stored state",
                }));
            }
            if sample.action.len() != action_dim {
                return Err(AgentError::Neural(NeuralError::ShapeMismatch {
                    expected: action_dim,
                    got: sample.action.len(),
                    context: "stored action",
                }));
            }
        }
        let count = batch.samples.len();
        let n = count as f64;

        // Raw bootstrap targets r + g Q(s', pi(s')), r at terminals.
        let mut next_states = Matrix::zeros(count, state_dim);
        for (i, sample) in batch.samples.iter().enumerate() {
            next_states.row_mut(i).copy_from_slice(&sample.next_state);
        }
        let next_actions = mlp_forward_batch(&self.actor, &next_states)?;
        let mut next_inputs = Matrix::zeros(count, state_dim + action_dim);
        for (i, sample) in batch.samples.iter().enumerate() {
            let row = next_inputs.row_mut(i);
            row[..state_dim].copy_from_slice(&sample.next_state);
            row[state_dim..].copy_from_slice(next_actions.output().row(i));
        }
        let next_q = mlp_forward_batch(&self.critic, &next_inputs)?;
        let raw: Vec<f64> = batch
            .samples
            .iter()
            .enumerate()
            .map(|(i, sample)| {
                if sample.terminal {
                    sample.reward
                } else {
                    sample.reward + self.config.gamma * next_q.output().row(i)[0]
                }
            })
            .collect();
        let lbs: Vec<Option<f64>> = batch.samples.iter().map(|s| s.lower_bound).collect();
        let targets = apply_bounds(&raw, &lbs, &self.config.bounds, self.observed_rewards);

        // Critic regression on the clamped targets (mean squared error).
        let mut inputs = Matrix::zeros(count, state_dim + action_dim);
        for (i, sample) in batch.samples.iter().enumerate() {
            let row = inputs.row_mut(i);
            row[..state_dim].copy_from_slice(&sample.state);
            row[state_dim..].copy_from_slice(&sample.action);
        }
        let critic_trace = mlp_forward_batch(&self.critic, &inputs)?;
        let mut critic_grads = MlpGrads::zeros_like(&self.critic);
        let mut critic_loss = 0.0;
        let mut critic_out_grads = Matrix::zeros(count, 1);
        for (i, &target) in targets.bounded.iter().enumerate() {
            let err = critic_trace.output().row(i)[0] - target;
            critic_loss += err * err / n;
            critic_out_grads.row_mut(i)[0] = 2.0 * err / n;
        }
        backward_batch(
            &self.critic,
            &critic_trace,
            &critic_out_grads,
            Some(&mut critic_grads),
            false,
        )?;
        adam_step(
            &mut self.critic,
            &critic_grads,
            &mut self.critic_opt,
            self.config.critic_lr,
        )?;

        // Actor ascent on Q(s, pi(s)); gradients flow through the critic but
        // only the actor's parameters move.
        let mut states = Matrix::zeros(count, state_dim);
        for (i, sample) in batch.samples.iter().enumerate() {
            states.row_mut(i).copy_from_slice(&sample.state);
        }
        let actor_trace = mlp_forward_batch(&self.actor, &states)?;
        let mut policy_inputs = Matrix::zeros(count, state_dim + action_dim);
        for (i, sample) in batch.samples.iter().enumerate() {
            let row = policy_inputs.row_mut(i);
            row[..state_dim].copy_from_slice(&sample.state);
            row[state_dim..].copy_from_slice(actor_trace.output().row(i));
        }
        let q_trace = mlp_forward_batch(&self.critic, &policy_inputs)?;
        let mut actor_grads = MlpGrads::zeros_like(&self.actor);
        let mut actor_loss = 0.0;
        let mut q_out_grads = Matrix::zeros(count, 1);
        for i in 0..count {
            actor_loss -= q_trace.output().row(i)[0] / n;
            q_out_grads.row_mut(i)[0] = -1.0 / n;
        }
        let input_grads = backward_batch(&self.critic, &q_trace, &q_out_grads, None, true)?
            .expect("input gradients requested");
        let mut actor_out_grads = Matrix::zeros(count, action_dim);
        for i in 0..count {
            actor_out_grads
                .row_mut(i)
                .copy_from_slice(&input_grads.row(i)[state_dim..]);
        }
        backward_batch(
            &self.actor,
            &actor_trace,
            &actor_out_grads,
            Some(&mut actor_grads),
            false,
        )?;
        adam_step(
            &mut self.actor,
            &actor_grads,
            &mut self.actor_opt,
            self.config.actor_lr,
        )?;

        self.train_steps += 1;
        Ok(LossReport {
            step: self.train_steps,
            critic_loss,
            actor_loss,
            clamp_rate: targets.clamp_rate(),
        })
    }

    /// Policy output plus Gaussian noise, clipped to the action box.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        sigma: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>, AgentError> {
        select_action(&self.actor, state, sigma, rng)
    }
}

/// Policy output plus componentwise Gaussian(0, sigma) noise, clipped to
/// `[-1, 1]`. With `sigma = 0` the RNG is untouched and the output is exactly
/// the policy action.
pub fn select_action<R: Rng + ?Sized>(
    actor: &Mlp,
    state: &[f64],
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>, AgentError> {
    let mut action = actor.forward(state)?;
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma)
            .map_err(|e| AgentError::InvalidConfig(format!("bad sigma: {e}")))?;
        for a in &mut action {
            *a += noise.sample(rng);
        }
    }
    for a in &mut action {
        *a = a.clamp(-1.0, 1.0);
    }
    Ok(action)
}
