//! Randomized invariants of the data graph and its exact solver.
//!
//! Each case replays transitions from a generated deterministic MDP (or an
//! unconstrained stream) into a [`DataGraph`] under a random insertion order,
//! then checks stored bounds and indexes against brute-force ground truth.

use proptest::prelude::*;
use qgraph::finite_mdp::{
    brute_force_q, classify_transitions, prune_loose_ends, random_mdp, sync_bounds, FiniteMdp,
    QTable,
};
use qgraph::graph_memory::{action_key, ActionKey, DataGraph, Edge, GraphConfig, StateKey};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GAMMAS: [f64; 3] = [0.5, 0.9, 0.99];
const SOLVER_TOL: f64 = 1e-12;
/// Upper bound on transitions of a generated MDP (8 states x 3 actions), so a
/// fixed-width keep mask covers every index.
const MAX_TRANSITIONS: usize = 24;

type Transition = (Vec<f64>, Vec<f64>, f64, Vec<f64>, bool);

fn mdp_from_seed(seed: u64) -> FiniteMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_mdp(&mut rng, 8, 3, (-1.0, 1.0))
}

/// Kept transitions of `mdp` under `mask`, in a seed-determined order.
fn masked_shuffled(mdp: &FiniteMdp, mask: &[bool], order_seed: u64) -> Vec<Transition> {
    let mut kept: Vec<Transition> = mdp
        .transition_list()
        .into_iter()
        .enumerate()
        .filter(|(i, _)| mask.get(*i).copied().unwrap_or(false))
        .map(|(_, t)| t)
        .collect();
    kept.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));
    kept
}

fn bounded_graph(gamma: f64) -> DataGraph {
    let mut config = GraphConfig::new(gamma);
    config.reward_range = Some((-1.0, 1.0));
    DataGraph::new(config).unwrap()
}

fn insert_all(graph: &mut DataGraph, transitions: &[Transition]) {
    for (s, a, r, s2, term) in transitions {
        graph.add_transition(s, a, *r, s2, *term).unwrap();
    }
}

fn oracle_q(table: &QTable, edge: &Edge) -> f64 {
    table
        .get(&edge.from, &edge.action_key)
        .expect("every replayed pair exists in the full MDP")
}

/// First stored bound above the full-MDP optimal Q-value, if any.
fn admissibility_violation(graph: &DataGraph, table: &QTable, slack: f64) -> Option<String> {
    for edge in graph.edges() {
        if let Some(lb) = edge.lower_bound {
            let q = oracle_q(table, edge);
            if lb > q + slack {
                return Some(format!(
                    "edge {}: bound {lb} exceeds optimal {q}",
                    edge.insertion_index
                ));
            }
        }
    }
    None
}

/// First edge whose bound presence disagrees with loose-end pruning, or whose
/// classification is missing, if any.
fn pruning_mismatch(graph: &DataGraph) -> Option<String> {
    let pruned = prune_loose_ends(graph);
    let classes = classify_transitions(graph);
    if classes.len() != graph.len() {
        return Some(format!(
            "{} classes for {} edges",
            classes.len(),
            graph.len()
        ));
    }
    for edge in graph.edges() {
        if !classes.contains_key(&edge.insertion_index) {
            return Some(format!("edge {} unclassified", edge.insertion_index));
        }
        if edge.lower_bound.is_some() != pruned.contains(edge.insertion_index) {
            return Some(format!(
                "edge {}: bound presence {} disagrees with pruning",
                edge.insertion_index,
                edge.lower_bound.is_some()
            ));
        }
    }
    None
}

proptest! {
    /// Bounds are admissible for any replayed subset in any order, both from
    /// incremental propagation alone and after exact synchronization.
    #[test]
    fn stored_bounds_never_exceed_optimal_q(
        mdp_seed in any::<u64>(),
        mask in prop::collection::vec(any::<bool>(), MAX_TRANSITIONS),
        order_seed in any::<u64>(),
        gamma_idx in 0..GAMMAS.len(),
    ) {
        let gamma = GAMMAS[gamma_idx];
        let mdp = mdp_from_seed(mdp_seed);
        let table = brute_force_q(&mdp, gamma, SOLVER_TOL).unwrap();
        let mut graph = bounded_graph(gamma);
        insert_all(&mut graph, &masked_shuffled(&mdp, &mask, order_seed));
        let pre = admissibility_violation(&graph, &table, 1e-6);
        prop_assert!(pre.is_none(), "before sync: {}", pre.unwrap());
        sync_bounds(&mut graph, SOLVER_TOL).unwrap();
        let post = admissibility_violation(&graph, &table, 1e-6);
        prop_assert!(post.is_none(), "after sync: {}", post.unwrap());
        let violations = graph.audit();
        prop_assert!(violations.is_empty(), "{:?}", violations);
    }

    /// Replaying the whole MDP leaves no loose ends, so synchronization must
    /// reproduce the optimal Q-value on every edge; the solved graph also
    /// round-trips through its text dump bit-exactly.
    #[test]
    fn full_replay_recovers_exact_q_values(
        mdp_seed in any::<u64>(),
        order_seed in any::<u64>(),
        gamma_idx in 0..GAMMAS.len(),
    ) {
        let gamma = GAMMAS[gamma_idx];
        let mdp = mdp_from_seed(mdp_seed);
        let table = brute_force_q(&mdp, gamma, SOLVER_TOL).unwrap();
        let mut graph = bounded_graph(gamma);
        insert_all(&mut graph, &masked_shuffled(&mdp, &[true; MAX_TRANSITIONS], order_seed));
        sync_bounds(&mut graph, SOLVER_TOL).unwrap();
        for edge in graph.edges() {
            prop_assert!(
                edge.lower_bound.is_some(),
                "edge {} left unbounded",
                edge.insertion_index
            );
            let lb = edge.lower_bound.unwrap();
            let q = oracle_q(&table, edge);
            prop_assert!(
                (lb - q).abs() <= 1e-8,
                "edge {}: bound {lb} != optimal {q}",
                edge.insertion_index
            );
        }
        let dump = graph.to_dump();
        let restored = DataGraph::from_dump(&dump, graph.config().clone()).unwrap();
        prop_assert_eq!(restored.to_dump(), dump);
    }

    /// Without eviction, adding data never loosens an existing bound.
    #[test]
    fn bounds_only_rise_as_data_arrives(
        mdp_seed in any::<u64>(),
        order_seed in any::<u64>(),
        split_frac in 0.0..1.0f64,
    ) {
        let mdp = mdp_from_seed(mdp_seed);
        let all = masked_shuffled(&mdp, &[true; MAX_TRANSITIONS], order_seed);
        let split = (all.len() as f64 * split_frac) as usize;
        let mut graph = bounded_graph(0.9);
        insert_all(&mut graph, &all[..split]);
        sync_bounds(&mut graph, SOLVER_TOL).unwrap();
        let before: Vec<(StateKey, ActionKey, StateKey, Option<f64>)> = graph
            .edges()
            .map(|e| (e.from.clone(), e.action_key.clone(), e.to.clone(), e.lower_bound))
            .collect();
        insert_all(&mut graph, &all[split..]);
        sync_bounds(&mut graph, SOLVER_TOL).unwrap();
        for (from, action, to, old) in before {
            let new = graph
                .find_edge(&from, &action, &to)
                .expect("edges are never dropped without a capacity")
                .lower_bound;
            match (old, new) {
                (Some(o), Some(n)) => prop_assert!(n >= o, "bound fell from {o} to {n}"),
                (Some(o), None) => prop_assert!(false, "bound {o} vanished"),
                (None, _) => {}
            }
        }
    }

    /// Internal indexes survive arbitrary streams, including inconsistent
    /// terminal flags, capacity eviction, and zero-action augmentation; the
    /// result round-trips through its text dump bit-exactly.
    #[test]
    fn indexes_stay_sound_under_arbitrary_streams(
        stream in prop::collection::vec(
            (0..5usize, 0..2usize, 0..5usize, 0..5usize, any::<bool>()),
            0..40,
        ),
        capacity in prop::option::of(1..12usize),
        zero_action in any::<bool>(),
    ) {
        // Tiny value alphabets force key collisions, duplicate edges, and
        // reward mismatches.
        const STATE_VALUES: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];
        const REWARD_VALUES: [f64; 5] = [-1.0, -0.25, 0.0, 0.5, 1.0];
        let mut config = GraphConfig::new(0.9);
        config.capacity = capacity;
        config.zero_action = zero_action.then(|| vec![0.0]);
        config.reward_range = Some((-1.0, 1.0));
        let mut graph = DataGraph::new(config.clone()).unwrap();
        for (s, a, r, s2, term) in stream {
            graph
                .add_transition(
                    &[STATE_VALUES[s]],
                    &[a as f64],
                    REWARD_VALUES[r],
                    &[STATE_VALUES[s2]],
                    term,
                )
                .unwrap();
            let violations = graph.audit();
            prop_assert!(violations.is_empty(), "{:?}", violations);
            if let Some(cap) = capacity {
                prop_assert!(graph.len() <= cap, "{} edges over capacity {cap}", graph.len());
            }
        }
        let dump = graph.to_dump();
        let restored = DataGraph::from_dump(&dump, config).unwrap();
        prop_assert_eq!(restored.to_dump(), dump);
        prop_assert_eq!(restored.len(), graph.len());
        let violations = restored.audit();
        prop_assert!(violations.is_empty(), "{:?}", violations);
    }

    /// Without eviction, an edge carries a bound exactly when loose-end
    /// pruning keeps it, and every edge gets classified; this holds already
    /// from incremental propagation and survives synchronization.
    #[test]
    fn bound_presence_matches_pruned_subgraph(
        mdp_seed in any::<u64>(),
        mask in prop::collection::vec(any::<bool>(), MAX_TRANSITIONS),
        order_seed in any::<u64>(),
    ) {
        let mdp = mdp_from_seed(mdp_seed);
        let mut graph = bounded_graph(0.9);
        insert_all(&mut graph, &masked_shuffled(&mdp, &mask, order_seed));
        let pre = pruning_mismatch(&graph);
        prop_assert!(pre.is_none(), "before sync: {}", pre.unwrap());
        sync_bounds(&mut graph, SOLVER_TOL).unwrap();
        let post = pruning_mismatch(&graph);
        prop_assert!(post.is_none(), "after sync: {}", post.unwrap());
    }

    /// With a zero action configured, the target of every non-terminal,
    /// non-self-loop transition owns a zero-action self-loop whose bound is
    /// at least its own looping return.
    #[test]
    fn zero_action_self_loops_anchor_new_targets(
        mdp_seed in any::<u64>(),
        mask in prop::collection::vec(any::<bool>(), MAX_TRANSITIONS),
        order_seed in any::<u64>(),
    ) {
        let gamma = 0.9;
        let mut config = GraphConfig::new(gamma);
        config.zero_action = Some(vec![0.0]);
        config.reward_range = Some((-1.0, 1.0));
        let mut graph = DataGraph::new(config).unwrap();
        let mdp = mdp_from_seed(mdp_seed);
        insert_all(&mut graph, &masked_shuffled(&mdp, &mask, order_seed));
        let zero_key = action_key(&[0.0]).unwrap();
        for edge in graph.edges().filter(|e| e.synthetic) {
            prop_assert_eq!(&edge.from, &edge.to);
            prop_assert_eq!(&edge.action_key, &zero_key);
            prop_assert!(edge.lower_bound.is_some());
            let floor = edge.reward / (1.0 - gamma);
            let lb = edge.lower_bound.unwrap();
            prop_assert!(
                lb >= floor - 1e-12,
                "self-loop bound {lb} below looping return {floor}"
            );
        }
        // The anchor may be a real zero-action self-loop instead of a
        // synthetic one when the data happens to contain it.
        let targets: Vec<StateKey> = graph
            .edges()
            .filter(|e| !e.synthetic && !e.terminal && e.from != e.to)
            .map(|e| e.to.clone())
            .collect();
        for t in targets {
            prop_assert!(
                graph.find_edge(&t, &zero_key, &t).is_some(),
                "target {} lacks a zero-action self-loop",
                t.to_hex()
            );
        }
        let violations = graph.audit();
        prop_assert!(violations.is_empty(), "{:?}", violations);
    }
}
