//! Graph-structured replay memory for off-policy reinforcement learning.
//!
//! Replayed transitions are stored as a directed multigraph over exactly
//! repeated states. A loose-end-free subgraph of that data graph induces a
//! small finite MDP whose Q-values can be solved exactly; because every
//! action available in the subgraph is also available in the real problem,
//! those values are lower bounds on the true Q-function. The [`agents`]
//! module clamps temporal-difference targets against these bounds, which
//! suppresses the soft divergence that plain bootstrapped targets exhibit.
//!
//! Module map:
//! - [`neural`]: dense `f64` networks, reverse-mode gradients, Adam.
//! - [`graph_memory`]: the data graph, incremental lower bounds, eviction.
//! - [`finite_mdp`]: pruning, exact Q-iteration, transition taxonomy.
//! - [`agents`]: DDPG actor-critic with bounded TD targets.
//! - [`envs`]: the three study environments (linear-TD star counterexample,
//!   four-transition offline task, kinematic peg-in-hole).

pub mod agents;
pub mod envs;
pub mod finite_mdp;
pub mod graph_memory;
pub mod neural;
