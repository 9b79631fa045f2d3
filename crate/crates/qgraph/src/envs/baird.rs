//! Seven-state star with linear value features, the classic setting where
//! off-policy semi-gradient TD(0) makes the weights spiral to infinity.
//!
//! Values are linear in eight weights: `V_i = w0 + 2*w_i` for states 1..6 and
//! `V_7 = 2*w0 + w7`. Every transition jumps to state 7 with reward 0, so the
//! common TD target is `g * V_7`. In bounded mode the target is clamped from
//! below at 0, the exact value guaranteed by state 7's zero-reward self-loop.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BairdError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Configuration for one synchronous TD(0) run.
#[derive(Debug, Clone, PartialEq)]
pub struct BairdConfig {
    pub gamma: f64,
    pub lr: f64,
    /// Initial weights `w0..w7`.
    pub initial_weights: [f64; 8],
    pub steps: usize,
    /// Clamp each target at `max(0, g * V_7)`.
    pub bounded: bool,
}

impl BairdConfig {
    /// Reference configuration: the divergence demo needs all weights
    /// positive with `w0` largest.
    pub fn reference(bounded: bool) -> Self {
        Self {
            gamma: 0.9,
            lr: 0.1,
            initial_weights: [10.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            steps: 100_000,
            bounded,
        }
    }

    pub fn validate(&self) -> Result<(), BairdError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(BairdError::InvalidConfig(format!(
                "gamma {} outside (0,1)",
                self.gamma
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(BairdError::InvalidConfig("lr must be positive".into()));
        }
        if self.initial_weights.iter().any(|w| !w.is_finite()) {
            return Err(BairdError::InvalidConfig("non-finite initial weight".into()));
        }
        Ok(())
    }
}

/// Recorded run: index 0 holds the initial weights/values, index `t` the
/// state after update `t`.
#[derive(Debug, Clone)]
pub struct BairdTrajectory {
    /// Per recorded step, the 8 weights.
    pub weights: Vec<[f64; 8]>,
    /// Per recorded step, the 7 state values.
    pub values: Vec<[f64; 7]>,
    /// First step at which a weight stopped being finite, if any; the run
    /// halts there (divergence is an observation, not an error).
    pub non_finite_at: Option<usize>,
}

impl BairdTrajectory {
    pub fn final_weights(&self) -> &[f64; 8] {
        self.weights.last().expect("trajectory never empty")
    }

    pub fn final_values(&self) -> &[f64; 7] {
        self.values.last().expect("trajectory never empty")
    }

    /// Largest weight two-norm seen anywhere in the run.
    pub fn max_weight_norm(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| w.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Largest absolute state value in the final recorded step.
    pub fn final_max_abs_value(&self) -> f64 {
        self.final_values().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Feature vector of state `i` (0-based): states 0..5 map to `e0 + 2*e_{i+1}`,
/// state 6 to `2*e0 + e7`.
fn feature(i: usize) -> [f64; 8] {
    let mut phi = [0.0; 8];
    if i < 6 {
        phi[0] = 1.0;
        phi[i + 1] = 2.0;
    } else {
        phi[0] = 2.0;
        phi[7] = 1.0;
    }
    phi
}

fn values_of(w: &[f64; 8]) -> [f64; 7] {
    let mut v = [0.0; 7];
    for (i, vi) in v.iter_mut().enumerate() {
        let phi = feature(i);
        *vi = phi.iter().zip(w).map(|(p, wj)| p * wj).sum();
    }
    v
}

/// Runs synchronous semi-gradient TD(0) over all seven states: every state
/// shares the target `g * V_7` (reward 0), deltas are summed into one weight
/// update per step. Returns the full weight/value trajectory; if a weight
/// becomes non-finite the run stops and records where.
pub fn baird_run(config: &BairdConfig) -> Result<BairdTrajectory, BairdError> {
    config.validate()?;
    let mut w = config.initial_weights;
    let mut trajectory = BairdTrajectory {
        weights: vec![w],
        values: vec![values_of(&w)],
        non_finite_at: None,
    };
    for step in 1..=config.steps {
        let v = values_of(&w);
        let mut target = config.gamma * v[6];
        if config.bounded {
            target = target.max(0.0);
        }
        let mut w_next = w;
        for (i, vi) in v.iter().enumerate() {
            let delta = target - vi;
            let phi = feature(i);
            for (wj, pj) in w_next.iter_mut().zip(&phi) {
                *wj += config.lr * delta * pj;
            }
        }
        w = w_next;
        trajectory.weights.push(w);
        trajectory.values.push(values_of(&w));
        if w.iter().any(|x| !x.is_finite()) {
            trajectory.non_finite_at = Some(step);
            break;
        }
    }
    Ok(trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_reproduce_value_form() {
        let w = [3.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0];
        let v = values_of(&w);
        for i in 0..6 {
            assert_eq!(v[i], w[0] + 2.0 * w[i + 1]);
        }
        assert_eq!(v[6], 2.0 * w[0] + w[7]);
    }

    #[test]
    fn vanilla_reference_diverges() {
        let cfg = BairdConfig {
            steps: 2000,
            ..BairdConfig::reference(false)
        };
        let t = baird_run(&cfg).unwrap();
        assert!(t.max_weight_norm() > 1e3);
        // The documented reference run crosses 1e3 well before step 1000.
        let crossing = t
            .weights
            .iter()
            .position(|w| w.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e3)
            .unwrap();
        assert!(crossing < 1000, "crossed at {crossing}");
    }

    #[test]
    fn bounded_reference_converges_to_zero_values() {
        let t = baird_run(&BairdConfig::reference(true)).unwrap();
        assert!(t.non_finite_at.is_none());
        assert!(t.final_max_abs_value() < 1e-2);
    }

    #[test]
    fn zero_init_is_fixpoint_in_both_modes() {
        for bounded in [false, true] {
            let cfg = BairdConfig {
                gamma: 0.9,
                lr: 0.1,
                initial_weights: [0.0; 8],
                steps: 100,
                bounded,
            };
            let t = baird_run(&cfg).unwrap();
            assert!(t.weights.iter().all(|w| w.iter().all(|&x| x == 0.0)));
            assert!(t.values.iter().all(|v| v.iter().all(|&x| x == 0.0)));
        }
    }

    #[test]
    fn trajectory_records_initial_state() {
        let cfg = BairdConfig {
            steps: 5,
            ..BairdConfig::reference(true)
        };
        let t = baird_run(&cfg).unwrap();
        assert_eq!(t.weights.len(), 6);
        assert_eq!(t.weights[0], cfg.initial_weights);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = BairdConfig::reference(false);
        cfg.gamma = 1.0;
        assert!(baird_run(&cfg).is_err());
    }
}
