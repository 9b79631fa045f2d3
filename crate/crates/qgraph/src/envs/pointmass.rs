//! Kinematic peg-in-hole surrogate: a point peg moves in a 0.2 m cube
//! containing a centered block with a vertical hole; reward is a saturating
//! function of distance to the hole bottom.
//!
//! Geometry is axis-aligned. The block spans the cube floor up to
//! `block_height`, its square footprint is centered in the cube, and the hole
//! is a vertical cylinder through the block center. The peg is a point; the
//! hole's effective radius for that point is the clearance between hole and
//! peg, `(hole_diameter - peg_diameter) / 2`.

use super::EnvStep;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PointMassError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("bad state: {0}")]
    BadState(String),
}

/// Geometry and dynamics parameters, in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointMassConfig {
    pub cube_side: f64,
    pub block_width: f64,
    pub block_height: f64,
    pub hole_diameter: f64,
    pub peg_diameter: f64,
    /// Meters moved per unit action component.
    pub step_scale: f64,
    /// Length scale of the distance reward.
    pub reward_scale: f64,
    pub terminal_radius: f64,
    pub episode_length: usize,
    pub goal: [f64; 3],
    /// Std of Gaussian noise added to the executed action; 0 = deterministic.
    pub noise_sigma: f64,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        Self {
            cube_side: 0.20,
            block_width: 0.05,
            block_height: 0.05,
            hole_diameter: 0.02,
            peg_diameter: 0.01,
            step_scale: 0.01,
            reward_scale: 0.03,
            terminal_radius: 0.005,
            episode_length: 200,
            // Hole-bottom center.
            goal: [0.10, 0.10, 0.0],
            noise_sigma: 0.0,
        }
    }
}

impl PointMassConfig {
    pub fn validate(&self) -> Result<(), PointMassError> {
        let lengths = [
            ("cube_side", self.cube_side),
            ("block_width", self.block_width),
            ("block_height", self.block_height),
            ("hole_diameter", self.hole_diameter),
            ("peg_diameter", self.peg_diameter),
            ("step_scale", self.step_scale),
            ("reward_scale", self.reward_scale),
            ("terminal_radius", self.terminal_radius),
        ];
        for (name, v) in lengths {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PointMassError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.peg_diameter >= self.hole_diameter {
            return Err(PointMassError::InvalidConfig(
                "peg must be narrower than the hole".into(),
            ));
        }
        if self.block_width >= self.cube_side || self.block_height >= self.cube_side {
            return Err(PointMassError::InvalidConfig(
                "block must fit inside the cube".into(),
            ));
        }
        if self.hole_diameter >= self.block_width {
            return Err(PointMassError::InvalidConfig(
                "hole must fit inside the block".into(),
            ));
        }
        if !self.goal.iter().all(|&g| g.is_finite() && (0.0..=self.cube_side).contains(&g)) {
            return Err(PointMassError::InvalidConfig(format!(
                "goal {:?} outside cube",
                self.goal
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(PointMassError::InvalidConfig(
                "noise sigma must be >= 0".into(),
            ));
        }
        if self.episode_length == 0 {
            return Err(PointMassError::InvalidConfig(
                "episode length must be positive".into(),
            ));
        }
        Ok(())
    }

    fn block_center(&self) -> (f64, f64) {
        (self.cube_side / 2.0, self.cube_side / 2.0)
    }

    /// Effective hole radius for the point peg.
    fn clearance_radius(&self) -> f64 {
        (self.hole_diameter - self.peg_diameter) / 2.0
    }

    /// True when the point sits inside solid block material.
    pub fn in_material(&self, p: &[f64; 3]) -> bool {
        if p[2] >= self.block_height {
            return false;
        }
        let (cx, cy) = self.block_center();
        let half = self.block_width / 2.0;
        if (p[0] - cx).abs() > half || (p[1] - cy).abs() > half {
            return false;
        }
        let horizontal = ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt();
        horizontal >= self.clearance_radius()
    }

    fn in_cube(&self, p: &[f64]) -> bool {
        p.iter().all(|&x| (0.0..=self.cube_side).contains(&x))
    }
}

fn as_point(state: &[f64]) -> Result<[f64; 3], PointMassError> {
    if state.len() != 3 || state.iter().any(|x| !x.is_finite()) {
        return Err(PointMassError::BadState(format!(
            "expected 3 finite coordinates, got {state:?}"
        )));
    }
    Ok([state[0], state[1], state[2]])
}

/// Applies one action: noisy clipped execution, a kinematic move clipped to
/// the cube, then collision resolution against the block. Approaches from
/// above land on the block top; sideways pushes into material lose their
/// horizontal component. Reward is `exp(-d/scale) - 1` for the resulting
/// distance `d` to the goal; the step is terminal once `d` is within the
/// terminal radius.
pub fn pointmass_step<R: Rng + ?Sized>(
    config: &PointMassConfig,
    state: &[f64],
    action: &[f64],
    rng: &mut R,
) -> Result<EnvStep, PointMassError> {
    config.validate()?;
    let p = as_point(state)?;
    if !config.in_cube(&p) {
        return Err(PointMassError::BadState(format!("state {p:?} outside cube")));
    }
    if action.len() != 3 || action.iter().any(|a| !a.is_finite()) {
        return Err(PointMassError::BadState(format!(
            "expected 3 finite action components, got {action:?}"
        )));
    }
    let mut executed = [action[0], action[1], action[2]];
    if config.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, config.noise_sigma).expect("validated sigma");
        for a in &mut executed {
            *a += noise.sample(rng);
        }
    }
    for a in &mut executed {
        *a = a.clamp(-1.0, 1.0);
    }
    let mut next = [0.0; 3];
    for i in 0..3 {
        next[i] = (p[i] + config.step_scale * executed[i]).clamp(0.0, config.cube_side);
    }
    if config.in_material(&next) {
        if p[2] >= config.block_height {
            // Came from above: rest on the block top.
            next[2] = config.block_height;
        } else {
            // Sideways push into the block: vertical motion only.
            next[0] = p[0];
            next[1] = p[1];
        }
    }
    let delta = distance(&next, &config.goal);
    Ok(EnvStep {
        next_state: next.to_vec(),
        reward: (-delta / config.reward_scale).exp() - 1.0,
        terminal: delta <= config.terminal_radius,
    })
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Uniform initial state in the free slab above the block top.
pub fn pointmass_reset<R: Rng + ?Sized>(
    config: &PointMassConfig,
    rng: &mut R,
) -> Result<Vec<f64>, PointMassError> {
    config.validate()?;
    let x = rng.gen_range(0.0..=config.cube_side);
    let y = rng.gen_range(0.0..=config.cube_side);
    let z = rng.gen_range(config.block_height..=config.cube_side);
    Ok(vec![x, y, z])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> PointMassConfig {
        PointMassConfig::default()
    }

    #[test]
    fn default_config_valid() {
        cfg().validate().unwrap();
    }

    #[test]
    fn reward_at_goal_is_zero() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let step = pointmass_step(&c, &c.goal, &[0.0; 3], &mut rng).unwrap();
        assert_eq!(step.reward, 0.0);
        assert!(step.terminal);
    }

    #[test]
    fn reward_at_scale_distance() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // 0.03 m from the goal, outside the block footprint.
        let state = [c.goal[0] + 0.03, c.goal[1], c.goal[2]];
        let step = pointmass_step(&c, &state, &[0.0; 3], &mut rng).unwrap();
        let expected = (-1.0f64).exp() - 1.0;
        assert!((step.reward - expected).abs() < 1e-12);
        assert!((step.reward - (-0.6321)).abs() < 1e-4);
    }

    #[test]
    fn zero_action_is_fixpoint_when_deterministic() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for state in [[0.02, 0.02, 0.02], [0.10, 0.10, 0.12], [0.199, 0.15, 0.06]] {
            let step = pointmass_step(&c, &state, &[0.0; 3], &mut rng).unwrap();
            assert_eq!(step.next_state, state.to_vec());
        }
    }

    #[test]
    fn noise_is_reproducible_and_only_source_of_randomness() {
        let mut c = cfg();
        c.noise_sigma = 0.1;
        let state = [0.05, 0.05, 0.10];
        let a = pointmass_step(&c, &state, &[0.2, -0.3, 0.1], &mut ChaCha8Rng::seed_from_u64(7))
            .unwrap();
        let b = pointmass_step(&c, &state, &[0.2, -0.3, 0.1], &mut ChaCha8Rng::seed_from_u64(7))
            .unwrap();
        assert_eq!(a, b);
        c.noise_sigma = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let before = rng.clone();
        pointmass_step(&c, &state, &[0.2, -0.3, 0.1], &mut rng).unwrap();
        assert_eq!(rng, before, "deterministic step must not consume the rng");
    }

    #[test]
    fn descent_from_above_lands_on_block_top() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // Directly over block material, just above the top, pushing down.
        let state = [0.08, 0.10, 0.052];
        let step = pointmass_step(&c, &state, &[0.0, 0.0, -1.0], &mut rng).unwrap();
        assert_eq!(step.next_state[2], c.block_height);
        assert!(!c.in_material(&[step.next_state[0], step.next_state[1], step.next_state[2]]));
    }

    #[test]
    fn descent_into_hole_passes_block_top() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // On the hole axis: clearance admits the peg.
        let state = [0.10, 0.10, 0.052];
        let step = pointmass_step(&c, &state, &[0.0, 0.0, -1.0], &mut rng).unwrap();
        assert!(step.next_state[2] < c.block_height);
        assert!((step.next_state[2] - 0.042).abs() < 1e-12);
    }

    #[test]
    fn sideways_push_into_block_is_stopped() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // Beside the block, below its top, pushing straight at it.
        let state = [0.074, 0.10, 0.02];
        let step = pointmass_step(&c, &state, &[1.0, 0.0, 0.0], &mut rng).unwrap();
        assert_eq!(step.next_state[0], state[0]);
        assert_eq!(step.next_state[1], state[1]);
    }

    #[test]
    fn collision_never_enters_material_and_bounds_displacement() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let max_step = c.step_scale * 3.0f64.sqrt() + 1e-12;
        let mut state = pointmass_reset(&c, &mut rng).unwrap();
        for _ in 0..5000 {
            let action: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let step = pointmass_step(&c, &state, &action, &mut rng).unwrap();
            let p = as_point(&step.next_state).unwrap();
            assert!(!c.in_material(&p), "entered material at {p:?}");
            assert!(c.in_cube(&step.next_state));
            let moved = distance(&as_point(&state).unwrap(), &p);
            assert!(moved <= max_step, "moved {moved} from {state:?}");
            state = if step.terminal {
                pointmass_reset(&c, &mut rng).unwrap()
            } else {
                step.next_state
            };
        }
    }

    #[test]
    fn reward_range_is_bracketed() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let state = pointmass_reset(&c, &mut rng).unwrap();
            let action: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let step = pointmass_step(&c, &state, &action, &mut rng).unwrap();
            assert!(step.reward > -1.0 && step.reward <= 0.0);
        }
    }

    #[test]
    fn reset_is_free_and_reproducible() {
        let c = cfg();
        let a = pointmass_reset(&c, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = pointmass_reset(&c, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        for seed in 0..50 {
            let s = pointmass_reset(&c, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(c.in_cube(&s));
            assert!(s[2] >= c.block_height);
            assert!(!c.in_material(&as_point(&s).unwrap()));
        }
    }

    #[test]
    fn rejects_state_outside_cube() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(pointmass_step(&c, &[0.3, 0.1, 0.1], &[0.0; 3], &mut rng).is_err());
        assert!(pointmass_step(&c, &[0.1, 0.1], &[0.0; 3], &mut rng).is_err());
    }

    #[test]
    fn rejects_bad_geometry() {
        let mut c = cfg();
        c.hole_diameter = 0.06;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.peg_diameter = 0.03;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.goal = [0.5, 0.1, 0.1];
        assert!(c.validate().is_err());
    }
}
