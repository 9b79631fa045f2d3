//! Finite-difference verification of the reverse-mode gradients.
//!
//! The check treats the loss `L = g . f(x)` for a fixed random weighting `g`
//! of the network output. Reverse mode with output gradient `g` must then
//! match central differences of `L` in every parameter.

use super::{
    adam_step, mlp_backward, mlp_forward, mlp_init, AdamState, HiddenActivation, InitScheme,
    LayerSpec, Mlp, MlpGrads, NeuralError, OutputActivation,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Configuration for [`finite_difference_check`].
#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Number of random (architecture, input) pairs to test.
    pub trials: usize,
    /// Central-difference step.
    pub step: f64,
    /// Maximum allowed relative error per parameter.
    pub tolerance: f64,
    /// Seed for the trial generator.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            trials: 50,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0x9ec0_57a1,
        }
    }
}

/// Outcome of a gradient check sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub trials: usize,
    pub parameters_checked: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

/// Runs the finite-difference sweep over random small networks.
///
/// Architectures are drawn with 0 to 2 hidden layers of width at most 8, all
/// hidden/output activation combinations, and all three init schemes. The
/// relative error denominator is floored at 1e-3: analytic and numeric
/// gradients agree to roughly 1e-11 absolute when correct, while genuine
/// backprop bugs show up orders of magnitude above the floor.
pub fn finite_difference_check(config: &GradCheckConfig) -> Result<GradCheckReport, NeuralError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut max_rel = 0.0_f64;
    let mut parameters_checked = 0usize;
    for _ in 0..config.trials {
        let spec = random_spec(&mut rng);
        let scheme = match rng.gen_range(0..3) {
            0 => InitScheme::Gaussian { mean: 0.0, std: 0.5 },
            1 => InitScheme::XavierUniform,
            _ => InitScheme::HeUniform,
        };
        let mut net = mlp_init(&spec, scheme, &mut rng)?;
        // Random biases as well: zero biases would leave half of each ReLU
        // layer's kink structure untested.
        let mut params = net.flatten();
        for p in &mut params {
            *p += rng.gen_range(-0.1..0.1);
        }
        net.unflatten(&params)?;
        let input: Vec<f64> = (0..spec.input_width())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let output_grad: Vec<f64> = (0..spec.output_width())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let (grads, _) = mlp_backward(&net, &input, &output_grad)?;
        let analytic = flatten_grads(&grads);
        let numeric = central_differences(&mut net, &input, &output_grad, config.step)?;
        debug_assert_eq!(analytic.len(), numeric.len());
        for (a, n) in analytic.iter().zip(&numeric) {
            let denom = a.abs().max(n.abs()).max(1e-3);
            let rel = (a - n).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
        parameters_checked += analytic.len();
    }
    Ok(GradCheckReport {
        trials: config.trials,
        parameters_checked,
        max_relative_error: max_rel,
        tolerance: config.tolerance,
    })
}

fn random_spec<R: Rng + ?Sized>(rng: &mut R) -> LayerSpec {
    let depth = rng.gen_range(0..=2);
    let mut sizes = vec![rng.gen_range(1..=8)];
    for _ in 0..depth {
        sizes.push(rng.gen_range(1..=8));
    }
    sizes.push(rng.gen_range(1..=4));
    let hidden = if rng.gen_bool(0.5) {
        HiddenActivation::Relu
    } else {
        HiddenActivation::Tanh
    };
    let output = if rng.gen_bool(0.5) {
        OutputActivation::Linear
    } else {
        OutputActivation::Tanh
    };
    LayerSpec::new(sizes, hidden, output).unwrap()
}

fn flatten_grads(grads: &MlpGrads) -> Vec<f64> {
    let mut out = Vec::new();
    for l in 0..grads.weights.len() {
        out.extend_from_slice(&grads.weights[l].data);
        out.extend_from_slice(&grads.biases[l]);
    }
    out
}

fn central_differences(
    net: &mut Mlp,
    input: &[f64],
    output_grad: &[f64],
    h: f64,
) -> Result<Vec<f64>, NeuralError> {
    let base = net.flatten();
    let mut numeric = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut params = base.clone();
        params[i] = base[i] + h;
        net.unflatten(&params)?;
        let plus = weighted_output(net, input, output_grad)?;
        params[i] = base[i] - h;
        net.unflatten(&params)?;
        let minus = weighted_output(net, input, output_grad)?;
        numeric.push((plus - minus) / (2.0 * h));
    }
    net.unflatten(&base)?;
    Ok(numeric)
}

fn weighted_output(net: &Mlp, input: &[f64], weights: &[f64]) -> Result<f64, NeuralError> {
    let out = mlp_forward(net, input)?;
    Ok(out.iter().zip(weights).map(|(o, w)| o * w).sum())
}

/// Drives a one-parameter quadratic to its minimum with Adam; used as a
/// smoke test that the optimizer actually descends.
pub fn adam_descends_quadratic() -> Result<f64, NeuralError> {
    let spec = LayerSpec::new(
        vec![1, 1],
        HiddenActivation::Relu,
        OutputActivation::Linear,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut net = mlp_init(&spec, InitScheme::XavierUniform, &mut rng)?;
    let mut state = AdamState::new(&net);
    // Loss (f(1) - 3)^2 via output gradient 2 (f - 3).
    for _ in 0..5_000 {
        let y = net.forward_scalar(&[1.0])?;
        let (grads, _) = mlp_backward(&net, &[1.0], &[2.0 * (y - 3.0)])?;
        adam_step(&mut net, &grads, &mut state, 1e-2)?;
    }
    let y = net.forward_scalar(&[1.0])?;
    Ok((y - 3.0).abs())
}
