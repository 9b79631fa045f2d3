//! Replay memory as a directed multigraph with incremental lower bounds.
//!
//! States are keyed by the exact bit pattern of their vectors (signed zero
//! normalized), so revisiting a state links transitions into a graph instead
//! of a flat buffer. Whenever an inserted edge closes a loop or reaches a
//! terminal, a geometric-series lower bound on its Q-value is recorded and
//! pushed backwards through predecessors. Bounds only ever increase; under
//! deterministic dynamics a bound once valid stays valid, so eviction keeps
//! the bounds of surviving edges untouched.

use indexmap::IndexMap;
use rand::Rng;
use std::collections::{HashMap, HashSet, VecDeque};
use thiserror::Error;

/// Errors from graph construction and access.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("non-finite component in {0}")]
    NonFinite(&'static str),
    #[error("graph is empty")]
    Empty,
    #[error("invalid graph config: {0}")]
    InvalidConfig(String),
    #[error("malformed graph dump: {0}")]
    MalformedDump(String),
}

/// Canonical byte encoding shared by state and action keys: big-endian bit
/// pattern per component, with -0.0 rewritten to +0.0 so the two compare
/// equal. NaN is rejected because no useful identity exists for it.
fn canonical_bytes(vector: &[f64], context: &'static str) -> Result<Box<[u8]>, GraphError> {
    let mut bytes = Vec::with_capacity(vector.len() * 8);
    for &v in vector {
        if v.is_nan() {
            return Err(GraphError::NonFinite(context));
        }
        let normalized = if v == 0.0 { 0.0 } else { v };
        bytes.extend_from_slice(&normalized.to_bits().to_be_bytes());
    }
    Ok(bytes.into_boxed_slice())
}

fn decode_bytes(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_bits(u64::from_be_bytes(c.try_into().unwrap())))
        .collect()
}

fn bytes_to_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn hex_to_bytes(hex: &str) -> Result<Box<[u8]>, GraphError> {
    if hex.len() % 16 != 0 {
        return Err(GraphError::MalformedDump(format!(
            "hex key length {} is not a multiple of 16",
            hex.len()
        )));
    }
    let mut bytes = Vec::with_capacity(hex.len() / 2);
    for i in (0..hex.len()).step_by(2) {
        let byte = u8::from_str_radix(&hex[i..i + 2], 16)
            .map_err(|e| GraphError::MalformedDump(format!("bad hex {hex:?}: {e}")))?;
        bytes.push(byte);
    }
    Ok(bytes.into_boxed_slice())
}

/// Bit-exact identity of a state vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(Box<[u8]>);

/// Bit-exact identity of an action vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionKey(Box<[u8]>);

/// Builds the canonical key of a state vector. Rejects NaN components.
pub fn state_key(vector: &[f64]) -> Result<StateKey, GraphError> {
    Ok(StateKey(canonical_bytes(vector, "state vector")?))
}

/// Builds the canonical key of an action vector. Rejects NaN components.
pub fn action_key(vector: &[f64]) -> Result<ActionKey, GraphError> {
    Ok(ActionKey(canonical_bytes(vector, "action vector")?))
}

impl StateKey {
    pub fn to_hex(&self) -> String {
        bytes_to_hex(&self.0)
    }

    pub fn from_hex(hex: &str) -> Result<Self, GraphError> {
        Ok(Self(hex_to_bytes(hex)?))
    }

    /// Recovers the vector (keys encode it losslessly).
    pub fn decode(&self) -> Vec<f64> {
        decode_bytes(&self.0)
    }
}

impl ActionKey {
    pub fn to_hex(&self) -> String {
        bytes_to_hex(&self.0)
    }

    pub fn from_hex(hex: &str) -> Result<Self, GraphError> {
        Ok(Self(hex_to_bytes(hex)?))
    }

    pub fn decode(&self) -> Vec<f64> {
        decode_bytes(&self.0)
    }
}

/// One stored transition.
#[derive(Debug, Clone)]
pub struct Edge {
    pub from: StateKey,
    pub action_key: ActionKey,
    pub action: Vec<f64>,
    pub reward: f64,
    pub to: StateKey,
    pub terminal: bool,
    pub lower_bound: Option<f64>,
    pub insertion_index: u64,
    pub synthetic: bool,
}

/// A detected cycle that an incoming edge would close.
///
/// `discounted_reward_sum` is `r_1 + g r_2 + ... + g^(n-1) r_n` taken in cycle
/// order starting at the new edge.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopInfo {
    pub length: usize,
    pub discounted_reward_sum: f64,
}

/// One sampled transition with its bound at sampling time.
#[derive(Debug, Clone)]
pub struct TransitionSample {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
    pub lower_bound: Option<f64>,
}

/// Uniformly sampled minibatch.
#[derive(Debug, Clone)]
pub struct TransitionBatch {
    pub samples: Vec<TransitionSample>,
}

/// Construction-time knobs of a [`DataGraph`].
#[derive(Debug, Clone)]
pub struct GraphConfig {
    /// Discount factor, strictly inside (0, 1).
    pub gamma: f64,
    /// Maximum number of stored edges; `None` means unlimited.
    pub capacity: Option<usize>,
    /// Action vector for synthetic self-loop augmentation of non-terminal
    /// transitions, or `None` to disable.
    pub zero_action: Option<Vec<f64>>,
    /// Longest predecessor path explored when closing loops; longer cycles
    /// are still recovered later by the exact solver.
    pub max_loop_search_depth: usize,
    /// Minimum improvement for a propagated bound to be accepted. Guarantees
    /// termination around cycles, where raw improvements shrink geometrically.
    pub propagation_epsilon: f64,
    /// Task reward range, when known; used by the structural audit to check
    /// that every bound stays inside the attainable Q-value range.
    pub reward_range: Option<(f64, f64)>,
}

impl GraphConfig {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            capacity: None,
            zero_action: None,
            max_loop_search_depth: 32,
            propagation_epsilon: 1e-9,
            reward_range: None,
        }
    }

    fn validate(&self) -> Result<(), GraphError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(GraphError::InvalidConfig(format!(
                "gamma must be in (0,1), got {}",
                self.gamma
            )));
        }
        if self.capacity == Some(0) {
            return Err(GraphError::InvalidConfig("capacity must be positive".into()));
        }
        if self.max_loop_search_depth == 0 {
            return Err(GraphError::InvalidConfig(
                "max_loop_search_depth must be positive".into(),
            ));
        }
        if !(self.propagation_epsilon > 0.0) {
            return Err(GraphError::InvalidConfig(
                "propagation_epsilon must be positive".into(),
            ));
        }
        if let Some(za) = &self.zero_action {
            canonical_bytes(za, "zero action")?;
        }
        Ok(())
    }
}

type EdgeId = u64;

/// The transition data graph.
///
/// Edges live in an insertion-ordered map keyed by their monotone insertion
/// index; successor, predecessor, and dedupe indexes refer to edges by that
/// id. All mutating operations keep the indexes mutually consistent, which
/// [`DataGraph::audit`] re-checks from scratch.
#[derive(Debug, Clone)]
pub struct DataGraph {
    config: GraphConfig,
    edges: IndexMap<EdgeId, Edge>,
    successors: HashMap<StateKey, Vec<EdgeId>>,
    predecessors: HashMap<StateKey, Vec<EdgeId>>,
    dedupe: HashMap<(StateKey, ActionKey, StateKey), EdgeId>,
    states: HashMap<StateKey, Vec<f64>>,
    terminal_states: HashSet<StateKey>,
    next_index: u64,
    reward_mismatches: u64,
}

impl DataGraph {
    pub fn new(config: GraphConfig) -> Result<Self, GraphError> {
        config.validate()?;
        Ok(Self {
            config,
            edges: IndexMap::new(),
            successors: HashMap::new(),
            predecessors: HashMap::new(),
            dedupe: HashMap::new(),
            states: HashMap::new(),
            terminal_states: HashSet::new(),
            next_index: 0,
            reward_mismatches: 0,
        })
    }

    pub fn config(&self) -> &GraphConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Count of duplicate insertions whose reward disagreed with the stored
    /// edge; nonzero values flag non-deterministic dynamics.
    pub fn reward_mismatches(&self) -> u64 {
        self.reward_mismatches
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn state_vector(&self, key: &StateKey) -> Option<&[f64]> {
        self.states.get(key).map(|v| v.as_slice())
    }

    pub fn is_terminal_state(&self, key: &StateKey) -> bool {
        self.terminal_states.contains(key)
    }

    pub fn states(&self) -> impl Iterator<Item = (&StateKey, &Vec<f64>)> {
        self.states.iter()
    }

    /// Outgoing edges of a state, in insertion order.
    pub fn successors(&self, key: &StateKey) -> impl Iterator<Item = &Edge> {
        self.successors
            .get(key)
            .into_iter()
            .flatten()
            .map(move |id| &self.edges[id])
    }

    /// Incoming edges of a state, in insertion order.
    pub fn predecessors(&self, key: &StateKey) -> impl Iterator<Item = &Edge> {
        self.predecessors
            .get(key)
            .into_iter()
            .flatten()
            .map(move |id| &self.edges[id])
    }

    pub fn find_edge(&self, from: &StateKey, action: &ActionKey, to: &StateKey) -> Option<&Edge> {
        self.dedupe
            .get(&(from.clone(), action.clone(), to.clone()))
            .map(|id| &self.edges[id])
    }

    fn best_successor_lb(&self, key: &StateKey) -> Option<f64> {
        let mut best: Option<f64> = None;
        for edge in self.successors(key) {
            if let Some(lb) = edge.lower_bound {
                best = Some(match best {
                    Some(b) if b >= lb => b,
                    _ => lb,
                });
            }
        }
        best
    }

    /// Breadth-first search for an existing path `to -> ... -> from` that a
    /// candidate edge `from -> to` (with reward `new_edge_reward`) would close
    /// into a cycle. Paths up to `max_loop_search_depth` edges are explored
    /// and the shortest found cycle wins; among equal-length paths the
    /// earliest-inserted edges win, which keeps the result deterministic.
    pub fn detect_loop(
        &self,
        from: &StateKey,
        to: &StateKey,
        new_edge_reward: f64,
    ) -> Option<LoopInfo> {
        if from == to {
            return Some(LoopInfo {
                length: 1,
                discounted_reward_sum: new_edge_reward,
            });
        }
        // parent[v] = (previous state, reward of the edge into v)
        let mut parent: HashMap<StateKey, (StateKey, f64)> = HashMap::new();
        let mut frontier = VecDeque::new();
        frontier.push_back((to.clone(), 0usize));
        let mut found = false;
        while let Some((node, depth)) = frontier.pop_front() {
            if depth >= self.config.max_loop_search_depth {
                continue;
            }
            for edge in self.successors(&node) {
                if parent.contains_key(&edge.to) || edge.to == *to {
                    continue;
                }
                parent.insert(edge.to.clone(), (node.clone(), edge.reward));
                if edge.to == *from {
                    found = true;
                    break;
                }
                frontier.push_back((edge.to.clone(), depth + 1));
            }
            if found {
                break;
            }
        }
        if !found {
            return None;
        }
        // Rewards along to -> ... -> from, recovered back to front.
        let mut rewards_reversed = Vec::new();
        let mut cursor = from.clone();
        while cursor != *to {
            let (prev, reward) = parent.get(&cursor).unwrap().clone();
            rewards_reversed.push(reward);
            cursor = prev;
        }
        let mut sum = new_edge_reward;
        let mut discount = 1.0;
        for &r in rewards_reversed.iter().rev() {
            discount *= self.config.gamma;
            sum += discount * r;
        }
        Some(LoopInfo {
            length: rewards_reversed.len() + 1,
            discounted_reward_sum: sum,
        })
    }

    /// Lower bound available for a transition about to be inserted, or `None`.
    ///
    /// Terminal transitions are exact: the bound is the reward itself. A
    /// non-terminal transition takes the tightest applicable anchor: a cycle
    /// it closes (`r_L / (1 - g^n)`, covering self-loops at `n = 1`) or a
    /// bootstrap through already-bounded successor edges (`r + g max LB`).
    pub fn lb_for_new_transition(
        &self,
        state: &[f64],
        _action: &[f64],
        reward: f64,
        next_state: &[f64],
        terminal: bool,
    ) -> Result<Option<f64>, GraphError> {
        if !reward.is_finite() {
            return Err(GraphError::NonFinite("reward"));
        }
        let from = state_key(state)?;
        let to = state_key(next_state)?;
        Ok(self.lb_for_keys(&from, reward, &to, terminal))
    }

    fn lb_for_keys(
        &self,
        from: &StateKey,
        reward: f64,
        to: &StateKey,
        terminal: bool,
    ) -> Option<f64> {
        if terminal {
            return Some(reward);
        }
        let mut best: Option<f64> = None;
        if let Some(info) = self.detect_loop(from, to, reward) {
            let geo = 1.0 - self.config.gamma.powi(info.length as i32);
            let candidate = info.discounted_reward_sum / geo;
            best = Some(candidate);
        }
        if let Some(succ_best) = self.best_successor_lb(to) {
            let candidate = reward + self.config.gamma * succ_best;
            best = Some(match best {
                Some(b) if b >= candidate => b,
                _ => candidate,
            });
        }
        best
    }

    /// Inserts one observed transition; returns the states whose outgoing
    /// bounds changed (first occurrence order).
    ///
    /// Duplicates on (from, action, to) are no-ops; a duplicate carrying a
    /// different reward increments [`DataGraph::reward_mismatches`]. When a
    /// zero action is configured, every non-terminal, non-self-loop insertion
    /// also records the synthetic self-loop `(s', a_z, r, s')`, turning the
    /// otherwise loose end `s'` into a bounded anchor.
    pub fn add_transition(
        &mut self,
        state: &[f64],
        action: &[f64],
        reward: f64,
        next_state: &[f64],
        terminal: bool,
    ) -> Result<Vec<StateKey>, GraphError> {
        let mut changed = Vec::new();
        self.add_transition_inner(state, action, reward, next_state, terminal, false, &mut changed)?;
        Ok(changed)
    }

    #[allow(clippy::too_many_arguments)]
    fn add_transition_inner(
        &mut self,
        state: &[f64],
        action: &[f64],
        reward: f64,
        next_state: &[f64],
        terminal: bool,
        synthetic: bool,
        changed: &mut Vec<StateKey>,
    ) -> Result<(), GraphError> {
        if !reward.is_finite() {
            return Err(GraphError::NonFinite("reward"));
        }
        let from = state_key(state)?;
        let action_k = action_key(action)?;
        let to = state_key(next_state)?;

        if let Some(&existing) = self.dedupe.get(&(from.clone(), action_k.clone(), to.clone())) {
            if self.edges[&existing].reward != reward {
                self.reward_mismatches += 1;
            }
            return Ok(());
        }

        let lb = self.lb_for_keys(&from, reward, &to, terminal);
        let id = self.next_index;
        self.next_index += 1;
        self.states.entry(from.clone()).or_insert_with(|| state.to_vec());
        self.states.entry(to.clone()).or_insert_with(|| next_state.to_vec());
        if terminal {
            self.terminal_states.insert(to.clone());
        }
        self.edges.insert(
            id,
            Edge {
                from: from.clone(),
                action_key: action_k.clone(),
                action: action.to_vec(),
                reward,
                to: to.clone(),
                terminal,
                lower_bound: lb,
                insertion_index: id,
                synthetic,
            },
        );
        self.successors.entry(from.clone()).or_default().push(id);
        self.predecessors.entry(to.clone()).or_default().push(id);
        self.dedupe.insert((from.clone(), action_k, to.clone()), id);
        if let Some(capacity) = self.config.capacity {
            while self.edges.len() > capacity {
                self.evict_oldest()?;
            }
        }
        if lb.is_some() && self.edges.contains_key(&id) {
            push_changed(changed, &from);
            self.propagate_lb_collect(&from, changed);
        }
        if self.config.zero_action.is_some() && !terminal && from != to {
            let zero_action = self.config.zero_action.clone().unwrap();
            self.add_transition_inner(
                next_state,
                &zero_action,
                reward,
                next_state,
                false,
                true,
                changed,
            )?;
        }
        Ok(())
    }

    /// Pushes improved bounds from `start` backwards through predecessors
    /// until no edge improves by more than `propagation_epsilon`. Returns the
    /// number of edge updates applied.
    pub fn propagate_lb(&mut self, start: &StateKey) -> usize {
        let mut changed = Vec::new();
        self.propagate_lb_collect(start, &mut changed)
    }

    fn propagate_lb_collect(&mut self, start: &StateKey, changed: &mut Vec<StateKey>) -> usize {
        let mut updates = 0usize;
        let mut queue = VecDeque::new();
        let mut queued = HashSet::new();
        queue.push_back(start.clone());
        queued.insert(start.clone());
        while let Some(node) = queue.pop_front() {
            queued.remove(&node);
            let Some(best) = self.best_successor_lb(&node) else {
                continue;
            };
            let pred_ids = match self.predecessors.get(&node) {
                Some(ids) => ids.clone(),
                None => continue,
            };
            for id in pred_ids {
                let edge = &self.edges[&id];
                // A terminal transition's bound is exact; bootstrapping
                // through its (nominally unreachable) successors would not be
                // sound, so propagation never touches it.
                if edge.terminal {
                    continue;
                }
                let candidate = edge.reward + self.config.gamma * best;
                let improves = match edge.lower_bound {
                    Some(current) => candidate > current + self.config.propagation_epsilon,
                    None => true,
                };
                if !improves {
                    continue;
                }
                let from = edge.from.clone();
                self.edges[&id].lower_bound = Some(candidate);
                updates += 1;
                push_changed(changed, &from);
                if queued.insert(from.clone()) {
                    queue.push_back(from);
                }
            }
        }
        updates
    }

    /// Removes the oldest stored edge and returns it. States left with no
    /// incident edges are dropped; bounds of remaining edges are kept as-is
    /// (still valid under deterministic dynamics, and deliberately so: they
    /// retain information from the evicted transition).
    pub fn evict_oldest(&mut self) -> Result<Edge, GraphError> {
        let (&id, _) = self.edges.first().ok_or(GraphError::Empty)?;
        let edge = self.edges.shift_remove(&id).unwrap();
        detach(&mut self.successors, &edge.from, id);
        detach(&mut self.predecessors, &edge.to, id);
        self.dedupe
            .remove(&(edge.from.clone(), edge.action_key.clone(), edge.to.clone()));
        for key in [&edge.from, &edge.to] {
            let incident = self.successors.get(key).map_or(0, Vec::len)
                + self.predecessors.get(key).map_or(0, Vec::len);
            if incident == 0 {
                self.states.remove(key);
                self.terminal_states.remove(key);
            }
        }
        Ok(edge)
    }

    /// Uniform with-replacement sample of `n` transitions with their current
    /// bounds attached.
    pub fn sample_minibatch<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<TransitionBatch, GraphError> {
        if self.edges.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let pos = rng.gen_range(0..self.edges.len());
            let (_, edge) = self.edges.get_index(pos).unwrap();
            samples.push(TransitionSample {
                state: self.states[&edge.from].clone(),
                action: edge.action.clone(),
                reward: edge.reward,
                next_state: self.states[&edge.to].clone(),
                terminal: edge.terminal,
                lower_bound: edge.lower_bound,
            });
        }
        Ok(TransitionBatch { samples })
    }

    /// Re-derives every index from the edge store and compares; returns the
    /// list of violations (empty means the graph is structurally sound).
    pub fn audit(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let mut succ: HashMap<StateKey, Vec<EdgeId>> = HashMap::new();
        let mut pred: HashMap<StateKey, Vec<EdgeId>> = HashMap::new();
        let mut triples = HashSet::new();
        let mut last_index = None;
        for (&id, edge) in &self.edges {
            if id != edge.insertion_index {
                violations.push(format!("edge {id}: stored index {}", edge.insertion_index));
            }
            if let Some(prev) = last_index {
                if id <= prev {
                    violations.push(format!("edge order violated at {id} after {prev}"));
                }
            }
            last_index = Some(id);
            succ.entry(edge.from.clone()).or_default().push(id);
            pred.entry(edge.to.clone()).or_default().push(id);
            if !triples.insert((edge.from.clone(), edge.action_key.clone(), edge.to.clone())) {
                violations.push(format!("duplicate (from, action, to) at edge {id}"));
            }
            if !edge.reward.is_finite() {
                violations.push(format!("edge {id}: non-finite reward"));
            }
            if let Some(lb) = edge.lower_bound {
                if !lb.is_finite() {
                    violations.push(format!("edge {id}: non-finite bound"));
                }
                if edge.terminal && lb < edge.reward {
                    violations.push(format!(
                        "edge {id}: terminal bound {lb} below reward {}",
                        edge.reward
                    ));
                }
                if let Some((r_min, r_max)) = self.config.reward_range {
                    let g = self.config.gamma;
                    let lo = (r_min / (1.0 - g)).min(r_min);
                    let hi = (r_max / (1.0 - g)).max(r_max);
                    if lb < lo - 1e-9 || lb > hi + 1e-9 {
                        violations.push(format!(
                            "edge {id}: bound {lb} outside attainable range [{lo}, {hi}]"
                        ));
                    }
                }
            }
            for (key, end) in [(&edge.from, "from"), (&edge.to, "to")] {
                match self.states.get(key) {
                    None => violations.push(format!("edge {id}: {end} state missing")),
                    Some(v) => {
                        if state_key(v).map(|k| k != *key).unwrap_or(true) {
                            violations.push(format!("edge {id}: {end} state vector mismatch"));
                        }
                    }
                }
            }
        }
        for (map, derived, name) in [
            (&self.successors, &succ, "successors"),
            (&self.predecessors, &pred, "predecessors"),
        ] {
            for (key, ids) in map {
                match derived.get(key) {
                    None if ids.is_empty() => {}
                    None => violations.push(format!("{name}: stale entry for {}", key.to_hex())),
                    Some(want) => {
                        let mut got = ids.clone();
                        let mut want = want.clone();
                        got.sort_unstable();
                        want.sort_unstable();
                        if got != want {
                            violations.push(format!("{name}: index mismatch at {}", key.to_hex()));
                        }
                    }
                }
            }
            for key in derived.keys() {
                if !map.contains_key(key) {
                    violations.push(format!("{name}: missing entry for {}", key.to_hex()));
                }
            }
        }
        if self.dedupe.len() != self.edges.len() {
            violations.push(format!(
                "dedupe index holds {} entries for {} edges",
                self.dedupe.len(),
                self.edges.len()
            ));
        }
        for ((from, action, to), id) in &self.dedupe {
            match self.edges.get(id) {
                None => violations.push(format!("dedupe points at missing edge {id}")),
                Some(e) => {
                    if e.from != *from || e.action_key != *action || e.to != *to {
                        violations.push(format!("dedupe triple mismatch at edge {id}"));
                    }
                }
            }
        }
        if let Some(capacity) = self.config.capacity {
            if self.edges.len() > capacity {
                violations.push(format!(
                    "{} edges exceed capacity {capacity}",
                    self.edges.len()
                ));
            }
        }
        for state in self.states.keys() {
            let incident = self.successors.get(state).map_or(0, Vec::len)
                + self.predecessors.get(state).map_or(0, Vec::len);
            if incident == 0 {
                violations.push(format!("orphan state {}", state.to_hex()));
            }
        }
        violations
    }

    /// Line-oriented dump: one edge per line in insertion order,
    /// `from;action;reward;to;terminal;lb_or_NA;index;synthetic` with keys in
    /// hex and reals at 17 significant digits (enough for exact round-trip).
    pub fn to_dump(&self) -> String {
        let mut out = String::new();
        for edge in self.edges.values() {
            out.push_str(&format!(
                "{};{};{};{};{};{};{};{}\n",
                edge.from.to_hex(),
                edge.action_key.to_hex(),
                format_real(edge.reward),
                edge.to.to_hex(),
                u8::from(edge.terminal),
                edge.lower_bound.map_or("NA".to_string(), format_real),
                edge.insertion_index,
                u8::from(edge.synthetic),
            ));
        }
        out
    }

    /// Rebuilds a graph from [`DataGraph::to_dump`] output. Bounds, indexes,
    /// and flags are restored verbatim rather than recomputed, so a dumped
    /// graph can be audited exactly as it was.
    pub fn from_dump(text: &str, config: GraphConfig) -> Result<Self, GraphError> {
        let mut graph = Self::new(config)?;
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(';').collect();
            if fields.len() != 8 {
                return Err(GraphError::MalformedDump(format!(
                    "line {}: expected 8 fields, got {}",
                    line_no + 1,
                    fields.len()
                )));
            }
            let from = StateKey::from_hex(fields[0])?;
            let action_k = ActionKey::from_hex(fields[1])?;
            let reward = parse_real(fields[2], line_no)?;
            let to = StateKey::from_hex(fields[3])?;
            let terminal = parse_flag(fields[4], line_no)?;
            let lower_bound = if fields[5] == "NA" {
                None
            } else {
                Some(parse_real(fields[5], line_no)?)
            };
            let index: u64 = fields[6].parse().map_err(|e| {
                GraphError::MalformedDump(format!("line {}: bad index: {e}", line_no + 1))
            })?;
            let synthetic = parse_flag(fields[7], line_no)?;
            if graph
                .dedupe
                .contains_key(&(from.clone(), action_k.clone(), to.clone()))
            {
                return Err(GraphError::MalformedDump(format!(
                    "line {}: duplicate (from, action, to)",
                    line_no + 1
                )));
            }
            if graph.edges.contains_key(&index) {
                return Err(GraphError::MalformedDump(format!(
                    "line {}: duplicate index {index}",
                    line_no + 1
                )));
            }
            graph
                .states
                .entry(from.clone())
                .or_insert_with(|| from.decode());
            graph.states.entry(to.clone()).or_insert_with(|| to.decode());
            if terminal {
                graph.terminal_states.insert(to.clone());
            }
            graph.edges.insert(
                index,
                Edge {
                    from: from.clone(),
                    action_key: action_k.clone(),
                    action: action_k.decode(),
                    reward,
                    to: to.clone(),
                    terminal,
                    lower_bound,
                    insertion_index: index,
                    synthetic,
                },
            );
            graph.successors.entry(from.clone()).or_default().push(index);
            graph.predecessors.entry(to.clone()).or_default().push(index);
            graph.dedupe.insert((from, action_k, to), index);
            graph.next_index = graph.next_index.max(index + 1);
        }
        graph.edges.sort_unstable_keys();
        Ok(graph)
    }

    /// Replaces the bound of an identified edge; used by the exact
    /// synchronization pass. The new bound must not be lower than the current
    /// one (bounds are monotone), and the edge must exist.
    pub(crate) fn set_lower_bound(&mut self, id: u64, lb: f64) {
        let edge = self.edges.get_mut(&id).expect("edge id from live graph");
        debug_assert!(edge.lower_bound.map_or(true, |old| lb >= old - 1e-12));
        edge.lower_bound = Some(lb);
    }

    pub(crate) fn edge_by_id(&self, id: u64) -> Option<&Edge> {
        self.edges.get(&id)
    }

    pub(crate) fn edge_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.edges.keys().copied()
    }
}

fn push_changed(changed: &mut Vec<StateKey>, key: &StateKey) {
    if !changed.contains(key) {
        changed.push(key.clone());
    }
}

fn detach(index: &mut HashMap<StateKey, Vec<EdgeId>>, key: &StateKey, id: EdgeId) {
    if let Some(ids) = index.get_mut(key) {
        ids.retain(|&e| e != id);
        if ids.is_empty() {
            index.remove(key);
        }
    }
}

fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_real(field: &str, line_no: usize) -> Result<f64, GraphError> {
    field
        .parse()
        .map_err(|e| GraphError::MalformedDump(format!("line {}: bad real: {e}", line_no + 1)))
}

fn parse_flag(field: &str, line_no: usize) -> Result<bool, GraphError> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(GraphError::MalformedDump(format!(
            "line {}: bad flag {other:?}",
            line_no + 1
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph(gamma: f64) -> DataGraph {
        DataGraph::new(GraphConfig::new(gamma)).unwrap()
    }

    /// Five-transition example: three non-terminal actions out of s0, a
    /// self-loop at s2, and a terminal hop s3 -> s4.
    fn star_example(gamma: f64) -> DataGraph {
        let mut g = graph(gamma);
        g.add_transition(&[0.0], &[0.0], -1.0, &[1.0], false).unwrap();
        g.add_transition(&[0.0], &[1.0], -1.0, &[2.0], false).unwrap();
        g.add_transition(&[2.0], &[2.0], -1.0, &[2.0], false).unwrap();
        g.add_transition(&[0.0], &[3.0], -1.0, &[3.0], false).unwrap();
        g.add_transition(&[3.0], &[4.0], 0.0, &[4.0], true).unwrap();
        g
    }

    fn lb_of(g: &DataGraph, action: f64) -> Option<f64> {
        g.edges()
            .find(|e| e.action == [action])
            .unwrap()
            .lower_bound
    }

    #[test]
    fn signed_zero_normalizes() {
        assert_eq!(
            state_key(&[0.0, 0.0]).unwrap(),
            state_key(&[-0.0, 0.0]).unwrap()
        );
    }

    #[test]
    fn keys_are_bit_exact() {
        let base = state_key(&[1.0, 1.0]).unwrap();
        let nudged = state_key(&[1.0, 1.0 + 2f64.powi(-50)]).unwrap();
        assert_ne!(base, nudged);
        assert_eq!(state_key(&[-1.0, 1.0]).unwrap(), state_key(&[-1.0, 1.0]).unwrap());
    }

    #[test]
    fn keys_reject_nan() {
        assert!(state_key(&[f64::NAN]).is_err());
        assert!(action_key(&[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn key_hex_round_trips() {
        let key = state_key(&[-1.5, 0.0, 3.25]).unwrap();
        let back = StateKey::from_hex(&key.to_hex()).unwrap();
        assert_eq!(key, back);
        assert_eq!(back.decode(), vec![-1.5, 0.0, 3.25]);
    }

    #[test]
    fn self_loop_bound_is_geometric_series() {
        let g = graph(0.99);
        let lb = g
            .lb_for_new_transition(&[1.0], &[0.0], -1.0, &[1.0], false)
            .unwrap();
        assert!((lb.unwrap() - (-100.0)).abs() < 1e-9);
    }

    #[test]
    fn terminal_bound_is_reward() {
        let g = graph(0.99);
        let lb = g
            .lb_for_new_transition(&[1.0], &[0.0], 0.0, &[2.0], true)
            .unwrap();
        assert_eq!(lb, Some(0.0));
    }

    #[test]
    fn successor_bound_bootstraps_one_step() {
        let mut g = graph(0.99);
        g.add_transition(&[3.0], &[4.0], 0.0, &[4.0], true).unwrap();
        let lb = g
            .lb_for_new_transition(&[0.0], &[3.0], -1.0, &[3.0], false)
            .unwrap();
        assert!((lb.unwrap() - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn two_edge_loop_bound_solves_cycle() {
        let mut g = graph(0.9);
        g.add_transition(&[2.0], &[0.0], -1.0, &[1.0], false).unwrap();
        let lb = g
            .lb_for_new_transition(&[1.0], &[1.0], -1.0, &[2.0], false)
            .unwrap();
        // r_L = -1 - 0.9 = -1.9; LB = -1.9 / (1 - 0.81) = -10.
        assert!((lb.unwrap() - (-10.0)).abs() < 1e-9);
    }

    #[test]
    fn detect_loop_self() {
        let g = graph(0.9);
        let k = state_key(&[1.0]).unwrap();
        let info = g.detect_loop(&k, &k, -2.5).unwrap();
        assert_eq!(info.length, 1);
        assert_eq!(info.discounted_reward_sum, -2.5);
    }

    #[test]
    fn detect_loop_two_cycle() {
        let mut g = graph(0.9);
        g.add_transition(&[2.0], &[0.0], -1.0, &[1.0], false).unwrap();
        let s = state_key(&[1.0]).unwrap();
        let s2 = state_key(&[2.0]).unwrap();
        let info = g.detect_loop(&s, &s2, -1.0).unwrap();
        assert_eq!(info.length, 2);
        assert!((info.discounted_reward_sum - (-1.9)).abs() < 1e-12);
    }

    #[test]
    fn detect_loop_absent_when_disconnected() {
        let mut g = graph(0.9);
        g.add_transition(&[5.0], &[0.0], -1.0, &[6.0], false).unwrap();
        let s = state_key(&[1.0]).unwrap();
        let s2 = state_key(&[2.0]).unwrap();
        assert!(g.detect_loop(&s, &s2, -1.0).is_none());
    }

    #[test]
    fn detect_loop_respects_depth_limit() {
        let mut config = GraphConfig::new(0.9);
        config.max_loop_search_depth = 2;
        let mut g = DataGraph::new(config).unwrap();
        // Chain 2 -> 3 -> 4 -> 1 needs three hops from s' = 2 back to s = 1.
        g.add_transition(&[2.0], &[0.0], -1.0, &[3.0], false).unwrap();
        g.add_transition(&[3.0], &[0.0], -1.0, &[4.0], false).unwrap();
        g.add_transition(&[4.0], &[0.0], -1.0, &[1.0], false).unwrap();
        let s = state_key(&[1.0]).unwrap();
        let s2 = state_key(&[2.0]).unwrap();
        assert!(g.detect_loop(&s, &s2, -1.0).is_none());
        let mut config = GraphConfig::new(0.9);
        config.max_loop_search_depth = 3;
        let mut g2 = DataGraph::new(config).unwrap();
        g2.add_transition(&[2.0], &[0.0], -1.0, &[3.0], false).unwrap();
        g2.add_transition(&[3.0], &[0.0], -1.0, &[4.0], false).unwrap();
        g2.add_transition(&[4.0], &[0.0], -1.0, &[1.0], false).unwrap();
        assert_eq!(g2.detect_loop(&s, &s2, -1.0).unwrap().length, 4);
    }

    #[test]
    fn star_example_bounds_match_hand_solution() {
        let g = star_example(0.99);
        assert_eq!(lb_of(&g, 0.0), None);
        assert!((lb_of(&g, 1.0).unwrap() - (-100.0)).abs() < 1e-7);
        assert!((lb_of(&g, 2.0).unwrap() - (-100.0)).abs() < 1e-7);
        assert!((lb_of(&g, 3.0).unwrap() - (-1.0)).abs() < 1e-12);
        assert_eq!(lb_of(&g, 4.0), Some(0.0));
        assert!(g.audit().is_empty());
    }

    #[test]
    fn simple_self_loop_insert() {
        let mut g = graph(0.9);
        g.add_transition(&[1.0], &[0.0], -1.0, &[1.0], false).unwrap();
        assert_eq!(g.len(), 1);
        let lb = g.edges().next().unwrap().lower_bound.unwrap();
        assert!((lb - (-10.0)).abs() < 1e-9);
    }

    #[test]
    fn duplicate_insert_is_noop_and_counts_mismatches() {
        let mut g = graph(0.9);
        g.add_transition(&[1.0], &[2.0], -1.0, &[3.0], false).unwrap();
        let changed = g.add_transition(&[1.0], &[2.0], -1.0, &[3.0], false).unwrap();
        assert!(changed.is_empty());
        assert_eq!(g.len(), 1);
        assert_eq!(g.reward_mismatches(), 0);
        g.add_transition(&[1.0], &[2.0], -0.5, &[3.0], false).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.reward_mismatches(), 1);
        // First reward wins.
        assert_eq!(g.edges().next().unwrap().reward, -1.0);
    }

    #[test]
    fn zero_action_augments_loose_ends() {
        let mut config = GraphConfig::new(0.9);
        config.zero_action = Some(vec![0.0]);
        let mut g = DataGraph::new(config).unwrap();
        g.add_transition(&[1.0], &[7.0], -0.5, &[2.0], false).unwrap();
        assert_eq!(g.len(), 2);
        let synthetic: Vec<_> = g.edges().filter(|e| e.synthetic).collect();
        assert_eq!(synthetic.len(), 1);
        let e = synthetic[0];
        assert_eq!(e.from, state_key(&[2.0]).unwrap());
        assert_eq!(e.to, state_key(&[2.0]).unwrap());
        assert_eq!(e.reward, -0.5);
        assert!((e.lower_bound.unwrap() - (-5.0)).abs() < 1e-9);
        // The physical edge picks up the propagated bound: -0.5 + 0.9 * -5.
        let physical = g.edges().find(|e| !e.synthetic).unwrap();
        assert!((physical.lower_bound.unwrap() - (-5.0)).abs() < 1e-9);
        assert!(g.audit().is_empty());
    }

    #[test]
    fn zero_action_skips_terminal_and_self_loops() {
        let mut config = GraphConfig::new(0.9);
        config.zero_action = Some(vec![0.0]);
        let mut g = DataGraph::new(config).unwrap();
        g.add_transition(&[1.0], &[7.0], 0.0, &[2.0], true).unwrap();
        assert_eq!(g.len(), 1);
        g.add_transition(&[3.0], &[7.0], -1.0, &[3.0], false).unwrap();
        assert_eq!(g.len(), 2);
        assert!(g.edges().all(|e| !e.synthetic));
    }

    #[test]
    fn propagation_without_predecessors_is_empty() {
        let mut g = star_example(0.99);
        let start = state_key(&[0.0]).unwrap();
        assert_eq!(g.propagate_lb(&start), 0);
    }

    #[test]
    fn propagation_reaches_fixpoint_on_cycle() {
        let mut g = graph(0.9);
        g.add_transition(&[2.0], &[0.0], -1.0, &[1.0], false).unwrap();
        g.add_transition(&[1.0], &[1.0], -1.0, &[2.0], false).unwrap();
        // Both edges sit at the exact cycle value -10 already.
        for e in g.edges() {
            assert!((e.lower_bound.unwrap() - (-10.0)).abs() < 1e-9);
        }
        let s2 = state_key(&[2.0]).unwrap();
        assert_eq!(g.propagate_lb(&s2), 0);
    }

    #[test]
    fn fifo_eviction_at_capacity_one() {
        let mut config = GraphConfig::new(0.9);
        config.capacity = Some(1);
        let mut g = DataGraph::new(config).unwrap();
        g.add_transition(&[1.0], &[0.0], -1.0, &[2.0], false).unwrap();
        g.add_transition(&[3.0], &[0.0], -1.0, &[4.0], false).unwrap();
        assert_eq!(g.len(), 1);
        let e = g.edges().next().unwrap();
        assert_eq!(e.from, state_key(&[3.0]).unwrap());
        assert!(g.audit().is_empty());
    }

    #[test]
    fn eviction_removes_oldest_first() {
        let mut g = star_example(0.99);
        let order: Vec<f64> = (0..5).map(|_| g.evict_oldest().unwrap().action[0]).collect();
        assert_eq!(order, [0.0, 1.0, 2.0, 3.0, 4.0]);
        assert!(g.is_empty());
        assert!(g.audit().is_empty());
    }

    #[test]
    fn stale_bound_survives_anchor_eviction() {
        // Insert the terminal anchor first so it is evicted first.
        let mut g = graph(0.99);
        g.add_transition(&[3.0], &[4.0], 0.0, &[4.0], true).unwrap();
        g.add_transition(&[0.0], &[3.0], -1.0, &[3.0], false).unwrap();
        let evicted = g.evict_oldest().unwrap();
        assert!(evicted.terminal);
        let rest = g.edges().next().unwrap();
        assert!((rest.lower_bound.unwrap() - (-1.0)).abs() < 1e-12);
        assert!(g.audit().is_empty());
    }

    #[test]
    fn evicting_empty_graph_errors() {
        let mut g = graph(0.9);
        g.add_transition(&[1.0], &[0.0], -1.0, &[2.0], false).unwrap();
        g.add_transition(&[2.0], &[0.0], -1.0, &[3.0], false).unwrap();
        g.evict_oldest().unwrap();
        g.evict_oldest().unwrap();
        assert!(g.evict_oldest().is_err());
        assert!(g.is_empty());
        assert!(g.states().next().is_none());
    }

    #[test]
    fn minibatch_on_single_edge_repeats_it() {
        let mut g = graph(0.9);
        g.add_transition(&[1.0], &[5.0], -1.0, &[2.0], false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = g.sample_minibatch(4, &mut rng).unwrap();
        assert_eq!(batch.samples.len(), 4);
        for s in &batch.samples {
            assert_eq!(s.state, vec![1.0]);
            assert_eq!(s.action, vec![5.0]);
        }
    }

    #[test]
    fn minibatch_is_seed_deterministic() {
        let g = star_example(0.99);
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        let b1 = g.sample_minibatch(16, &mut r1).unwrap();
        let b2 = g.sample_minibatch(16, &mut r2).unwrap();
        for (x, y) in b1.samples.iter().zip(&b2.samples) {
            assert_eq!(x.state, y.state);
            assert_eq!(x.action, y.action);
            assert_eq!(x.lower_bound, y.lower_bound);
        }
    }

    #[test]
    fn minibatch_carries_current_bounds() {
        let g = star_example(0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = g.sample_minibatch(64, &mut rng).unwrap();
        for s in &batch.samples {
            match s.action[0] as i64 {
                0 => assert_eq!(s.lower_bound, None),
                3 => assert!((s.lower_bound.unwrap() - (-1.0)).abs() < 1e-12),
                4 => assert_eq!(s.lower_bound, Some(0.0)),
                _ => assert!(s.lower_bound.is_some()),
            }
        }
        assert!(g.sample_minibatch(1, &mut ChaCha8Rng::seed_from_u64(0)).is_ok());
        let empty = graph(0.9);
        assert!(empty
            .sample_minibatch(1, &mut ChaCha8Rng::seed_from_u64(0))
            .is_err());
    }

    #[test]
    fn dump_round_trips() {
        let g = star_example(0.99);
        let dump = g.to_dump();
        let back = DataGraph::from_dump(&dump, GraphConfig::new(0.99)).unwrap();
        assert_eq!(back.len(), g.len());
        assert_eq!(back.to_dump(), dump);
        assert!(back.audit().is_empty());
        for (a, b) in g.edges().zip(back.edges()) {
            assert_eq!(a.from, b.from);
            assert_eq!(a.reward.to_bits(), b.reward.to_bits());
            assert_eq!(
                a.lower_bound.map(f64::to_bits),
                b.lower_bound.map(f64::to_bits)
            );
            assert_eq!(a.insertion_index, b.insertion_index);
            assert_eq!(a.terminal, b.terminal);
            assert_eq!(a.synthetic, b.synthetic);
        }
    }

    #[test]
    fn dump_rejects_malformed_lines() {
        let cfg = || GraphConfig::new(0.9);
        assert!(DataGraph::from_dump("a;b;c\n", cfg()).is_err());
        let ok = graph(0.9);
        let mut g = ok;
        g.add_transition(&[1.0], &[0.0], -1.0, &[2.0], false).unwrap();
        let line = g.to_dump();
        let doubled = format!("{line}{line}");
        assert!(DataGraph::from_dump(&doubled, cfg()).is_err());
    }

    #[test]
    fn audit_flags_corruption() {
        let mut g = star_example(0.99);
        assert!(g.audit().is_empty());
        // Corrupt the successor index behind the audit's back.
        let some_key = state_key(&[0.0]).unwrap();
        g.successors.get_mut(&some_key).unwrap().pop();
        assert!(!g.audit().is_empty());
    }

    #[test]
    fn bounds_never_decrease_over_insertions() {
        let mut g = graph(0.9);
        let transitions: Vec<(f64, f64, f64, bool)> = vec![
            (1.0, 2.0, -1.0, false),
            (2.0, 1.0, -1.0, false),
            (2.0, 3.0, -1.0, false),
            (3.0, 4.0, 0.0, true),
            (1.0, 1.0, -0.2, false),
        ];
        let mut history: HashMap<u64, f64> = HashMap::new();
        for (i, (s, t, r, term)) in transitions.iter().enumerate() {
            g.add_transition(&[*s], &[i as f64], *r, &[*t], *term).unwrap();
            for e in g.edges() {
                if let Some(lb) = e.lower_bound {
                    if let Some(&old) = history.get(&e.insertion_index) {
                        assert!(lb >= old - 1e-12, "bound decreased");
                    }
                    history.insert(e.insertion_index, lb);
                }
            }
        }
        assert!(g.audit().is_empty());
    }
}
