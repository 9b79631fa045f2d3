//! Exact solving of the finite MDP induced by a data graph.
//!
//! Dropping every loose end (a non-terminal transition whose target offers no
//! stored follow-up) leaves a subgraph in which each trajectory either ends
//! in a terminal or continues forever; tabular Q-iteration then converges to
//! the subgraph's exact Q-values by contraction. Because the real problem
//! offers at least every action the subgraph does, those values never exceed
//! the true optimal Q-values, which is what makes them usable as target
//! bounds. The brute-force solver here is the oracle side of that argument:
//! it solves a fully known MDP so tests can compare subgraph values against
//! the genuine optimum.

use crate::graph_memory::{state_key, ActionKey, DataGraph, GraphError, StateKey};
use rand::Rng;
use std::collections::{HashMap, HashSet, VecDeque};
use thiserror::Error;

/// Default sup-norm tolerance for the iterative solvers.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Default iteration cap; unreachable for any experiment gamma, guards
/// misconfiguration only.
pub const DEFAULT_MAX_ITERS: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("q-iteration did not reach tolerance {tol} in {iters} sweeps (residual {residual})")]
    NonConvergence { tol: f64, iters: u64, residual: f64 },
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Loose-end-free subgraph, as the set of surviving edge ids of a
/// [`DataGraph`] snapshot. Valid only against the graph state it was computed
/// from; callers own that snapshot discipline.
#[derive(Debug, Clone)]
pub struct PrunedSubgraph {
    pub kept: HashSet<u64>,
}

impl PrunedSubgraph {
    pub fn contains(&self, edge_id: u64) -> bool {
        self.kept.contains(&edge_id)
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }
}

/// Exact Q-values of the pruned subgraph, keyed by (state, action).
///
/// Parallel edges (same state and action, different outcome) can occur when
/// the environment is not perfectly deterministic; the table keeps the
/// maximum over them, while per-edge values drive bound synchronization.
#[derive(Debug, Clone)]
pub struct QTable {
    pub values: HashMap<(StateKey, ActionKey), f64>,
    pub gamma: f64,
    pub residual: f64,
}

impl QTable {
    pub fn get(&self, state: &StateKey, action: &ActionKey) -> Option<f64> {
        self.values.get(&(state.clone(), action.clone())).copied()
    }

    /// Text dump `state_hex;action_hex;qvalue`, 17 significant digits, sorted
    /// by key for deterministic output.
    pub fn to_dump(&self) -> String {
        let mut rows: Vec<_> = self.values.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for ((s, a), q) in rows {
            out.push_str(&format!("{};{};{:.16e}\n", s.to_hex(), a.to_hex(), q));
        }
        out
    }
}

/// The four structural roles a stored transition can play.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransitionClass {
    /// Ends an episode; its target is exact supervision.
    DirectlyConnected,
    /// A terminal remains reachable from its successor state.
    Connected,
    /// Its successor state has no stored continuation; pruned from the
    /// induced MDP and bootstrapped blindly by plain TD learning.
    LooseEnd,
    /// No terminal reachable, but an infinite stored path exists (a cycle),
    /// so exact values still exist for it.
    Disconnected,
}

impl TransitionClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            TransitionClass::DirectlyConnected => "directly_connected",
            TransitionClass::Connected => "connected",
            TransitionClass::LooseEnd => "loose_end",
            TransitionClass::Disconnected => "disconnected",
        }
    }
}

/// Iteratively removes edges whose target is non-terminal and has no
/// surviving outgoing edge, to fixpoint (reverse peeling, O(edges)).
pub fn prune_loose_ends(graph: &DataGraph) -> PrunedSubgraph {
    let mut kept: HashSet<u64> = graph.edge_ids().collect();
    // surviving out-degree per state
    let mut out_degree: HashMap<StateKey, usize> = HashMap::new();
    for edge in graph.edges() {
        *out_degree.entry(edge.from.clone()).or_insert(0) += 1;
    }
    let mut dead: VecDeque<StateKey> = Vec::from_iter(graph.states().map(|(k, _)| k.clone()))
        .into_iter()
        .filter(|s| !graph.is_terminal_state(s) && out_degree.get(s).copied().unwrap_or(0) == 0)
        .collect();
    let mut processed: HashSet<StateKey> = dead.iter().cloned().collect();
    while let Some(state) = dead.pop_front() {
        for edge in graph.predecessors(&state) {
            if !kept.remove(&edge.insertion_index) {
                continue;
            }
            let d = out_degree.get_mut(&edge.from).expect("counted above");
            *d -= 1;
            if *d == 0 && !graph.is_terminal_state(&edge.from) && processed.insert(edge.from.clone())
            {
                dead.push_back(edge.from.clone());
            }
        }
    }
    PrunedSubgraph { kept }
}

/// Synchronous tabular Q-iteration on the pruned subgraph, from all-zero
/// initialization, until the sup-norm change falls below `tol`.
///
/// Jacobi sweeps (new values computed entirely from old ones) make the
/// fixpoint bit-for-bit independent of edge enumeration order.
pub fn q_iteration(
    graph: &DataGraph,
    sub: &PrunedSubgraph,
    gamma: f64,
    tol: f64,
    max_iters: u64,
) -> Result<QTable, MdpError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(MdpError::Malformed(format!("gamma {gamma} outside (0,1)")));
    }
    if !(tol > 0.0) {
        return Err(MdpError::Malformed(format!("tol {tol} must be positive")));
    }
    let values = solve_edges(graph, sub, gamma, tol, max_iters)?;
    let mut table: HashMap<(StateKey, ActionKey), f64> = HashMap::new();
    let mut residual = 0.0;
    for ev in &values {
        residual = ev.residual;
        let edge = graph.edge_by_id(ev.id).unwrap();
        let key = (edge.from.clone(), edge.action_key.clone());
        table
            .entry(key)
            .and_modify(|q| *q = q.max(ev.q))
            .or_insert(ev.q);
    }
    Ok(QTable {
        values: table,
        gamma,
        residual,
    })
}

struct EdgeValue {
    id: u64,
    q: f64,
    residual: f64,
}

/// Per-edge fixpoint values; the building block behind both the public table
/// and bound synchronization.
fn solve_edges(
    graph: &DataGraph,
    sub: &PrunedSubgraph,
    gamma: f64,
    tol: f64,
    max_iters: u64,
) -> Result<Vec<EdgeValue>, MdpError> {
    let mut ids: Vec<u64> = sub.kept.iter().copied().collect();
    ids.sort_unstable();
    if ids.is_empty() {
        return Ok(Vec::new());
    }
    // Group kept edges by their from-state; bootstrap[i] is the group index
    // of edge i's successor state, or None for terminal-style anchors.
    let mut group_of_state: HashMap<&StateKey, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (pos, &id) in ids.iter().enumerate() {
        let edge = graph.edge_by_id(id).unwrap();
        let gi = *group_of_state.entry(&edge.from).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[gi].push(pos);
    }
    let mut rewards = Vec::with_capacity(ids.len());
    let mut bootstrap: Vec<Option<usize>> = Vec::with_capacity(ids.len());
    for &id in &ids {
        let edge = graph.edge_by_id(id).unwrap();
        rewards.push(edge.reward);
        if edge.terminal {
            bootstrap.push(None);
        } else {
            match group_of_state.get(&edge.to) {
                Some(&gi) => bootstrap.push(Some(gi)),
                None if graph.is_terminal_state(&edge.to) => bootstrap.push(None),
                None => {
                    return Err(MdpError::Malformed(format!(
                        "edge {id} is a loose end; prune before solving",
                    )))
                }
            }
        }
    }
    let mut q_old = vec![0.0; ids.len()];
    let mut q_new = vec![0.0; ids.len()];
    let mut group_max = vec![0.0; groups.len()];
    let mut residual = f64::INFINITY;
    let mut iters = 0u64;
    while residual >= tol {
        if iters >= max_iters {
            return Err(MdpError::NonConvergence {
                tol,
                iters,
                residual,
            });
        }
        for (gi, members) in groups.iter().enumerate() {
            let mut best = f64::NEG_INFINITY;
            for &pos in members {
                best = best.max(q_old[pos]);
            }
            group_max[gi] = best;
        }
        residual = 0.0;
        for i in 0..ids.len() {
            let next = match bootstrap[i] {
                None => 0.0,
                Some(gi) => group_max[gi],
            };
            q_new[i] = rewards[i] + gamma * next;
            let delta = (q_new[i] - q_old[i]).abs();
            if delta > residual {
                residual = delta;
            }
        }
        std::mem::swap(&mut q_old, &mut q_new);
        iters += 1;
    }
    Ok(ids
        .iter()
        .zip(&q_old)
        .map(|(&id, &q)| EdgeValue { id, q, residual })
        .collect())
}

/// Assigns each stored edge its structural class.
pub fn classify_transitions(graph: &DataGraph) -> HashMap<u64, TransitionClass> {
    // States from which a terminal state is reachable: reverse BFS from the
    // terminal set over stored edges.
    let mut can_reach: HashSet<StateKey> = graph
        .states()
        .map(|(k, _)| k.clone())
        .filter(|k| graph.is_terminal_state(k))
        .collect();
    let mut queue: VecDeque<StateKey> = can_reach.iter().cloned().collect();
    while let Some(state) = queue.pop_front() {
        for edge in graph.predecessors(&state) {
            if can_reach.insert(edge.from.clone()) {
                queue.push_back(edge.from.clone());
            }
        }
    }
    let pruned = prune_loose_ends(graph);
    let mut classes = HashMap::new();
    for edge in graph.edges() {
        let class = if edge.terminal {
            TransitionClass::DirectlyConnected
        } else if can_reach.contains(&edge.to) {
            TransitionClass::Connected
        } else if pruned.contains(edge.insertion_index) {
            TransitionClass::Disconnected
        } else {
            TransitionClass::LooseEnd
        };
        classes.insert(edge.insertion_index, class);
    }
    classes
}

/// Prunes, solves exactly, and raises each kept edge's lower bound to its
/// exact subgraph Q-value (never lowering an existing bound). Pruned edges
/// keep whatever bound they had. Returns the number of edges whose bound
/// changed.
pub fn sync_bounds(graph: &mut DataGraph, tol: f64) -> Result<usize, MdpError> {
    let gamma = graph.config().gamma;
    let sub = prune_loose_ends(graph);
    let values = solve_edges(graph, &sub, gamma, tol, DEFAULT_MAX_ITERS)?;
    let mut updated = 0;
    for ev in values {
        let current = graph.edge_by_id(ev.id).unwrap().lower_bound;
        let improves = match current {
            Some(lb) => ev.q > lb,
            None => true,
        };
        if improves {
            graph.set_lower_bound(ev.id, ev.q);
            updated += 1;
        }
    }
    Ok(updated)
}

/// Explicit deterministic finite MDP: per non-terminal state a list of
/// `(action id, reward, next state)`; terminal states have no actions.
#[derive(Debug, Clone)]
pub struct FiniteMdp {
    pub terminal: Vec<bool>,
    pub transitions: Vec<Vec<(usize, f64, usize)>>,
}

impl FiniteMdp {
    pub fn state_count(&self) -> usize {
        self.terminal.len()
    }

    /// Vector encoding used when feeding this MDP into a [`DataGraph`].
    pub fn state_vector(state: usize) -> Vec<f64> {
        vec![state as f64]
    }

    pub fn action_vector(action: usize) -> Vec<f64> {
        vec![action as f64]
    }

    /// All transitions in `(s, a, r, s', terminal)` vector form, in fixed
    /// (state, list) order.
    pub fn transition_list(&self) -> Vec<(Vec<f64>, Vec<f64>, f64, Vec<f64>, bool)> {
        let mut out = Vec::new();
        for (s, list) in self.transitions.iter().enumerate() {
            for &(a, r, next) in list {
                out.push((
                    Self::state_vector(s),
                    Self::action_vector(a),
                    r,
                    Self::state_vector(next),
                    self.terminal[next],
                ));
            }
        }
        out
    }

    fn validate(&self) -> Result<(), MdpError> {
        if self.transitions.len() != self.terminal.len() {
            return Err(MdpError::Malformed(
                "transitions and terminal lists differ in length".into(),
            ));
        }
        for (s, list) in self.transitions.iter().enumerate() {
            if self.terminal[s] && !list.is_empty() {
                return Err(MdpError::Malformed(format!(
                    "terminal state {s} has outgoing transitions"
                )));
            }
            if !self.terminal[s] && list.is_empty() {
                return Err(MdpError::Malformed(format!("non-terminal sink state {s}")));
            }
            let mut seen = HashSet::new();
            for &(a, r, next) in list {
                if next >= self.terminal.len() {
                    return Err(MdpError::Malformed(format!(
                        "state {s}: next state {next} out of range"
                    )));
                }
                if !r.is_finite() {
                    return Err(MdpError::Malformed(format!("state {s}: non-finite reward")));
                }
                if !seen.insert(a) {
                    return Err(MdpError::Malformed(format!(
                        "state {s}: duplicate action {a}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Exact optimal Q-values of a fully known deterministic MDP, by value
/// iteration to sup-norm tolerance `tol`.
pub fn brute_force_q(mdp: &FiniteMdp, gamma: f64, tol: f64) -> Result<QTable, MdpError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(MdpError::Malformed(format!("gamma {gamma} outside (0,1)")));
    }
    if !(tol > 0.0) {
        return Err(MdpError::Malformed(format!("tol {tol} must be positive")));
    }
    mdp.validate()?;
    let n = mdp.state_count();
    let mut v_old = vec![0.0; n];
    let mut v_new = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut iters = 0u64;
    while residual >= tol {
        if iters >= DEFAULT_MAX_ITERS {
            return Err(MdpError::NonConvergence {
                tol,
                iters,
                residual,
            });
        }
        residual = 0.0;
        for s in 0..n {
            v_new[s] = if mdp.terminal[s] {
                0.0
            } else {
                let mut best = f64::NEG_INFINITY;
                for &(_, r, next) in &mdp.transitions[s] {
                    let boot = if mdp.terminal[next] { 0.0 } else { v_old[next] };
                    best = best.max(r + gamma * boot);
                }
                best
            };
            residual = residual.max((v_new[s] - v_old[s]).abs());
        }
        std::mem::swap(&mut v_old, &mut v_new);
        iters += 1;
    }
    let mut values = HashMap::new();
    for (s, list) in mdp.transitions.iter().enumerate() {
        for &(a, r, next) in list {
            let boot = if mdp.terminal[next] { 0.0 } else { v_old[next] };
            let q = r + gamma * boot;
            values.insert(
                (
                    state_key(&FiniteMdp::state_vector(s))?,
                    crate::graph_memory::action_key(&FiniteMdp::action_vector(a))?,
                ),
                q,
            );
        }
    }
    Ok(QTable {
        values,
        gamma,
        residual,
    })
}

/// Samples a small deterministic MDP: at most `max_states` states (some
/// terminal), at most `max_actions` actions per non-terminal state, rewards
/// uniform in `reward_range`. Every non-terminal state gets at least one
/// action, so the result always validates.
pub fn random_mdp<R: Rng + ?Sized>(
    rng: &mut R,
    max_states: usize,
    max_actions: usize,
    reward_range: (f64, f64),
) -> FiniteMdp {
    assert!(max_states >= 2 && max_actions >= 1);
    let n = rng.gen_range(2..=max_states);
    let mut terminal: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.25)).collect();
    // Keep at least one non-terminal state so the MDP has transitions.
    if terminal.iter().all(|&t| t) {
        terminal[0] = false;
    }
    let mut transitions = Vec::with_capacity(n);
    for s in 0..n {
        if terminal[s] {
            transitions.push(Vec::new());
            continue;
        }
        let k = rng.gen_range(1..=max_actions);
        let mut list = Vec::with_capacity(k);
        for a in 0..k {
            let next = rng.gen_range(0..n);
            let reward = rng.gen_range(reward_range.0..=reward_range.1);
            list.push((a, reward, next));
        }
        transitions.push(list);
    }
    FiniteMdp {
        terminal,
        transitions,
    }
}
