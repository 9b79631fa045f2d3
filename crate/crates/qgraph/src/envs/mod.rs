//! Experiment environments: a linear counterexample for divergent TD
//! learning, a four-transition offline task on three states, and a kinematic
//! peg-in-hole surrogate with box actions.

pub mod baird;
pub mod edu;
pub mod pointmass;

pub use baird::{baird_run, BairdConfig, BairdError, BairdTrajectory};
pub use edu::{
    all_nonempty_subsets, classify_subset, draw_seeds, edu_exact_q, edu_graph,
    edu_offline_experiment, edu_seed_is_degenerate, edu_transitions, EduError, EduSeedOutcome,
    EduTransition, EDU_GAMMA, EDU_MASTER_SEED,
};
pub use pointmass::{pointmass_reset, pointmass_step, PointMassConfig, PointMassError};

/// One environment transition as seen by an agent.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}
