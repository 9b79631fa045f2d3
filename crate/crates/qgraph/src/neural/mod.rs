//! Minimal dense feed-forward networks with reverse-mode gradients and Adam.
//!
//! Everything runs on `f64`: the divergence experiments in this crate measure
//! value drift over hundreds of thousands of updates, and `f32` accumulation
//! error is large enough to muddy those measurements. Networks are plain
//! structs with value semantics; there is no shared mutable state, no graph
//! compilation, and no implicit global RNG.

pub mod gradcheck;

pub use gradcheck::{finite_difference_check, GradCheckConfig, GradCheckReport};

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from network construction, evaluation, and optimization.
#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    ShapeMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
}

/// Activation applied after every hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Relu,
    Tanh,
}

/// Activation applied after the output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Linear,
    Tanh,
}

/// Architecture of a dense feed-forward network.
///
/// `sizes` lists every layer width including input and output, so a critic
/// taking a 7-dimensional state-action vector through two hidden layers of 64
/// units onto a scalar is `[7, 64, 64, 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub sizes: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

impl LayerSpec {
    pub fn new(
        sizes: Vec<usize>,
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
    ) -> Result<Self, NeuralError> {
        let spec = Self {
            sizes,
            hidden_activation,
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.sizes.len() < 2 {
            return Err(NeuralError::InvalidSpec(format!(
                "need at least input and output widths, got {:?}",
                self.sizes
            )));
        }
        if self.sizes.iter().any(|&w| w == 0) {
            return Err(NeuralError::InvalidSpec(format!(
                "zero-width layer in {:?}",
                self.sizes
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Number of weight/bias layers (one fewer than `sizes`).
    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }
}

/// Weight initialization scheme. Biases are always initialized to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    Gaussian { mean: f64, std: f64 },
    XavierUniform,
    HeUniform,
}

/// Dense matrix in row-major order, shape `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// A dense feed-forward network: per-layer weights, biases, and the spec that
/// fixes activations and shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: LayerSpec,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

/// Per-parameter gradients with the same shapes as the network.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows, w.cols))
                .collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            for v in &mut w.data {
                *v *= factor;
            }
        }
        for b in &mut self.biases {
            for v in b {
                *v *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.data.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Layer-by-layer record of one forward pass, kept for backpropagation.
///
/// `activations[0]` is the input; `activations[l + 1]` is the post-activation
/// output of layer `l`. Post-activations are enough to recover every
/// activation derivative used here (relu: `y > 0`; tanh: `1 - y^2`).
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

/// Initializes a network: weights drawn from `scheme`, biases exactly zero.
///
/// Xavier-uniform draws from `±sqrt(6 / (fan_in + fan_out))`, He-uniform from
/// `±sqrt(6 / fan_in)`. Draw order is fixed (layer by layer, row-major), so a
/// seeded RNG reproduces the same parameters bit for bit.
pub fn mlp_init<R: Rng + ?Sized>(
    spec: &LayerSpec,
    scheme: InitScheme,
    rng: &mut R,
) -> Result<Mlp, NeuralError> {
    spec.validate()?;
    if let InitScheme::Gaussian { std, .. } = scheme {
        if !(std > 0.0) {
            return Err(NeuralError::InvalidSpec(format!(
                "gaussian init needs std > 0, got {std}"
            )));
        }
    }
    let mut weights = Vec::with_capacity(spec.layer_count());
    let mut biases = Vec::with_capacity(spec.layer_count());
    for l in 0..spec.layer_count() {
        let fan_in = spec.sizes[l];
        let fan_out = spec.sizes[l + 1];
        let mut m = Matrix::zeros(fan_out, fan_in);
        match scheme {
            InitScheme::Gaussian { mean, std } => {
                let dist = Normal::new(mean, std)
                    .map_err(|e| NeuralError::InvalidSpec(e.to_string()))?;
                for v in &mut m.data {
                    *v = dist.sample(rng);
                }
            }
            InitScheme::XavierUniform => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                for v in &mut m.data {
                    *v = dist.sample(rng);
                }
            }
            InitScheme::HeUniform => {
                let bound = (6.0 / fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                for v in &mut m.data {
                    *v = dist.sample(rng);
                }
            }
        }
        weights.push(m);
        biases.push(vec![0.0; fan_out]);
    }
    Ok(Mlp {
        spec: spec.clone(),
        weights,
        biases,
    })
}

/// Evaluates the network on one input vector.
pub fn mlp_forward(net: &Mlp, input: &[f64]) -> Result<Vec<f64>, NeuralError> {
    Ok(mlp_forward_trace(net, input)?.activations.pop().unwrap())
}

/// Evaluates the network and keeps every layer activation for backprop.
pub fn mlp_forward_trace(net: &Mlp, input: &[f64]) -> Result<ForwardTrace, NeuralError> {
    if input.len() != net.spec.input_width() {
        return Err(NeuralError::ShapeMismatch {
            expected: net.spec.input_width(),
            got: input.len(),
            context: "forward input",
        });
    }
    if !input.iter().all(|v| v.is_finite()) {
        return Err(NeuralError::NonFinite("forward input"));
    }
    let layer_count = net.spec.layer_count();
    let mut activations = Vec::with_capacity(layer_count + 1);
    activations.push(input.to_vec());
    let mut wt = Vec::new();
    for l in 0..layer_count {
        let w = &net.weights[l];
        transpose_into(w, &mut wt);
        let x = activations.last().unwrap();
        let mut y = vec![0.0; w.rows];
        affine_into(&wt, &net.biases[l], x, &mut y);
        let last = l + 1 == layer_count;
        apply_activation(&mut y, net.activation_at(l, last));
        if !y.iter().all(|v| v.is_finite()) {
            return Err(NeuralError::NonFinite("forward activation"));
        }
        activations.push(y);
    }
    Ok(ForwardTrace { activations })
}

/// Reverse-mode gradients of the forward map.
///
/// Returns the parameter gradients and the gradient with respect to the input,
/// for `output_gradient` the loss gradient at the network output.
pub fn mlp_backward(
    net: &Mlp,
    input: &[f64],
    output_gradient: &[f64],
) -> Result<(MlpGrads, Vec<f64>), NeuralError> {
    let trace = mlp_forward_trace(net, input)?;
    let mut grads = MlpGrads::zeros_like(net);
    let input_grad = accumulate_gradients(net, &trace, output_gradient, &mut grads)?;
    Ok((grads, input_grad))
}

/// Backward pass over a stored trace, adding into `grads` (batch accumulation
/// without reallocating). Returns the input gradient.
pub fn accumulate_gradients(
    net: &Mlp,
    trace: &ForwardTrace,
    output_gradient: &[f64],
    grads: &mut MlpGrads,
) -> Result<Vec<f64>, NeuralError> {
    backward_rows(
        net,
        |l| trace.activations[l].as_slice(),
        output_gradient,
        Some(grads),
        true,
    )
    .map(|ig| ig.expect("input gradient requested"))
}

/// Input gradient only, skipping the parameter-gradient outer products. Used
/// when a loss flows through this network into an upstream one.
pub fn mlp_input_gradient(
    net: &Mlp,
    trace: &ForwardTrace,
    output_gradient: &[f64],
) -> Result<Vec<f64>, NeuralError> {
    backward_rows(
        net,
        |l| trace.activations[l].as_slice(),
        output_gradient,
        None,
        true,
    )
    .map(|ig| ig.expect("input gradient requested"))
}

/// Backward core over any per-layer activation source. `acts(l)` must return
/// the post-activation of layer `l` (`acts(0)` is the input). Parameter
/// gradients are added into `param_grads` when given; the input gradient is
/// computed only when asked for.
fn backward_rows<'a, F>(
    net: &Mlp,
    acts: F,
    output_gradient: &[f64],
    mut param_grads: Option<&mut MlpGrads>,
    want_input_grad: bool,
) -> Result<Option<Vec<f64>>, NeuralError>
where
    F: Fn(usize) -> &'a [f64],
{
    let layer_count = net.spec.layer_count();
    if output_gradient.len() != net.spec.output_width() {
        return Err(NeuralError::ShapeMismatch {
            expected: net.spec.output_width(),
            got: output_gradient.len(),
            context: "output gradient",
        });
    }
    // delta holds dLoss/d(pre-activation) of the current layer.
    let mut delta = output_gradient.to_vec();
    for l in (0..layer_count).rev() {
        let last = l + 1 == layer_count;
        let post = acts(l + 1);
        match net.activation_at(l, last) {
            Activation::Linear => {}
            Activation::Relu => {
                for (d, &y) in delta.iter_mut().zip(post) {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (d, &y) in delta.iter_mut().zip(post) {
                    *d *= 1.0 - y * y;
                }
            }
        }
        if let Some(grads) = param_grads.as_deref_mut() {
            let x = acts(l);
            let gw = &mut grads.weights[l];
            for (r, &d) in delta.iter().enumerate() {
                axpy(d, x, gw.row_mut(r));
            }
            for (gb, &d) in grads.biases[l].iter_mut().zip(&delta) {
                *gb += d;
            }
        }
        if l == 0 && !want_input_grad {
            return Ok(None);
        }
        // Propagate delta through W^T as a sum of scaled rows, keeping memory
        // access contiguous.
        let mut prev = vec![0.0; net.weights[l].cols];
        for (r, &d) in delta.iter().enumerate() {
            axpy(d, net.weights[l].row(r), &mut prev);
        }
        delta = prev;
    }
    Ok(Some(delta))
}

/// Batch forward pass: layer activations for every row of `inputs` at once.
///
/// Row `s` of every stored matrix belongs to sample `s`; per-sample numbers
/// are identical to [`mlp_forward_trace`] on that row, the batch layout only
/// improves weight-matrix reuse.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    /// `activations[0]` is the input matrix; `activations[l + 1]` the
    /// post-activation output of layer `l`.
    pub activations: Vec<Matrix>,
}

impl BatchTrace {
    pub fn output(&self) -> &Matrix {
        self.activations.last().unwrap()
    }

    /// Activation slices of sample `s`, ordered input to output.
    pub fn sample_acts(&self, s: usize, l: usize) -> &[f64] {
        self.activations[l].row(s)
    }
}

/// Evaluates the network on every row of `inputs`.
pub fn mlp_forward_batch(net: &Mlp, inputs: &Matrix) -> Result<BatchTrace, NeuralError> {
    if inputs.cols != net.spec.input_width() {
        return Err(NeuralError::ShapeMismatch {
            expected: net.spec.input_width(),
            got: inputs.cols,
            context: "batch forward input",
        });
    }
    if !inputs.data.iter().all(|v| v.is_finite()) {
        return Err(NeuralError::NonFinite("batch forward input"));
    }
    let layer_count = net.spec.layer_count();
    let n = inputs.rows;
    let mut activations = Vec::with_capacity(layer_count + 1);
    activations.push(inputs.clone());
    let mut wt = Vec::new();
    for l in 0..layer_count {
        let w = &net.weights[l];
        transpose_into(w, &mut wt);
        let b = &net.biases[l];
        let x = activations.last().unwrap();
        let mut y = Matrix::zeros(n, w.rows);
        affine_batch_into(&wt, b, x, &mut y);
        let last = l + 1 == layer_count;
        apply_activation(&mut y.data, net.activation_at(l, last));
        if !y.data.iter().all(|v| v.is_finite()) {
            return Err(NeuralError::NonFinite("batch forward activation"));
        }
        activations.push(y);
    }
    Ok(BatchTrace { activations })
}

/// Per-sample backward over a batch trace; same contract as
/// [`accumulate_gradients`] restricted to row `s`. The input gradient is
/// computed only when `want_input_grad` is set.
pub fn accumulate_gradients_batch(
    net: &Mlp,
    trace: &BatchTrace,
    s: usize,
    output_gradient: &[f64],
    grads: &mut MlpGrads,
    want_input_grad: bool,
) -> Result<Option<Vec<f64>>, NeuralError> {
    backward_rows(
        net,
        |l| trace.sample_acts(s, l),
        output_gradient,
        Some(grads),
        want_input_grad,
    )
}

/// Input-gradient-only backward over a batch trace row.
pub fn mlp_input_gradient_batch(
    net: &Mlp,
    trace: &BatchTrace,
    s: usize,
    output_gradient: &[f64],
) -> Result<Vec<f64>, NeuralError> {
    backward_rows(net, |l| trace.sample_acts(s, l), output_gradient, None, true)
        .map(|ig| ig.expect("input gradient requested"))
}

/// Layer-synchronous backward over a whole batch trace.
///
/// Row `s` of `output_gradients` is the loss gradient at sample `s`'s
/// output. Equivalent, bit for bit, to running the per-sample backward over
/// rows `0..n` in order: every parameter-gradient cell accumulates its
/// per-sample terms in ascending sample order, and each sample's delta
/// propagation applies weight rows in the same ascending order as
/// [`accumulate_gradients_batch`]. Only the operand kept cache-resident
/// changes, which is what makes this the fast path for training.
///
/// Returns the per-sample input gradients as a matrix when asked.
pub fn backward_batch(
    net: &Mlp,
    trace: &BatchTrace,
    output_gradients: &Matrix,
    mut param_grads: Option<&mut MlpGrads>,
    want_input_grads: bool,
) -> Result<Option<Matrix>, NeuralError> {
    let layer_count = net.spec.layer_count();
    let n = trace.activations[0].rows;
    if output_gradients.cols != net.spec.output_width() || output_gradients.rows != n {
        return Err(NeuralError::ShapeMismatch {
            expected: net.spec.output_width() * n,
            got: output_gradients.cols * output_gradients.rows,
            context: "batch output gradients",
        });
    }
    // delta holds dLoss/d(pre-activation) for every sample of the current
    // layer, one row per sample.
    let mut delta = output_gradients.clone();
    for l in (0..layer_count).rev() {
        let last = l + 1 == layer_count;
        let post = &trace.activations[l + 1];
        debug_assert_eq!(post.cols, delta.cols);
        match net.activation_at(l, last) {
            Activation::Linear => {}
            Activation::Relu => {
                for (d, &y) in delta.data.iter_mut().zip(&post.data) {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (d, &y) in delta.data.iter_mut().zip(&post.data) {
                    *d *= 1.0 - y * y;
                }
            }
        }
        let out = delta.cols;
        let quads = out / 4 * 4;
        if let Some(grads) = param_grads.as_deref_mut() {
            let x = &trace.activations[l];
            let gw = &mut grads.weights[l];
            // Outer products, four gradient rows at a time: the quad stays
            // hot and shares each activation load while the activations
            // stream past once per quad.
            for r0 in (0..quads).step_by(4) {
                for s in 0..n {
                    let ds = delta.row(s);
                    let (g0, g1, g2, g3) = four_rows_mut(gw, r0);
                    scale4(
                        [ds[r0], ds[r0 + 1], ds[r0 + 2], ds[r0 + 3]],
                        x.row(s),
                        g0,
                        g1,
                        g2,
                        g3,
                    );
                }
            }
            for r in quads..out {
                for s in 0..n {
                    axpy(delta.row(s)[r], x.row(s), gw.row_mut(r));
                }
            }
            let gb = &mut grads.biases[l];
            for s in 0..n {
                for (g, &d) in gb.iter_mut().zip(delta.row(s)) {
                    *g += d;
                }
            }
        }
        if l == 0 && !want_input_grads {
            return Ok(None);
        }
        // Propagate every sample's delta through W^T, four weight rows per
        // pass, reused across a block of samples.
        let w = &net.weights[l];
        let mut prev = Matrix::zeros(n, w.cols);
        let mut s0 = 0;
        while s0 < n {
            let s1 = (s0 + BLOCK).min(n);
            for r in (0..quads).step_by(4) {
                let rows = [w.row(r), w.row(r + 1), w.row(r + 2), w.row(r + 3)];
                for s in s0..s1 {
                    let ds = delta.row(s);
                    axpy4(
                        [ds[r], ds[r + 1], ds[r + 2], ds[r + 3]],
                        rows,
                        prev.row_mut(s),
                    );
                }
            }
            for r in quads..out {
                let wr = w.row(r);
                for s in s0..s1 {
                    axpy(delta.row(s)[r], wr, prev.row_mut(s));
                }
            }
            s0 = s1;
        }
        delta = prev;
    }
    Ok(Some(delta))
}

/// Activation resolved for a concrete layer position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Activation {
    Linear,
    Relu,
    Tanh,
}

fn apply_activation(values: &mut [f64], act: Activation) {
    match act {
        Activation::Linear => {}
        Activation::Relu => {
            for v in values {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Activation::Tanh => {
            for v in values {
                *v = v.tanh();
            }
        }
    }
}

/// Writes `w` transposed into `wt` (`cols x rows`, row-major), so a row of
/// `wt` holds one input column's weights contiguously.
fn transpose_into(w: &Matrix, wt: &mut Vec<f64>) {
    wt.clear();
    wt.resize(w.rows * w.cols, 0.0);
    for r in 0..w.rows {
        let row = w.row(r);
        for (c, &v) in row.iter().enumerate() {
            wt[c * w.rows + r] = v;
        }
    }
}

/// `y = b + W x`, accumulated one input column at a time in ascending order.
///
/// `wt` is `W` transposed. Each output element is its own serial sum, with no
/// cross-element reduction, so the compiler can vectorize across outputs at
/// any register width without changing the result bits. The transpose is paid
/// once per layer and is cheap next to the multiply-adds it unlocks.
#[inline]
fn affine_into(wt: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    let rows = b.len();
    debug_assert_eq!(wt.len(), rows * x.len());
    y.copy_from_slice(b);
    for (c, &xc) in x.iter().enumerate() {
        axpy(xc, &wt[c * rows..(c + 1) * rows], y);
    }
}

/// Matrix-operand blocking: small enough that a block of rows stays
/// cache-resident while the streamed operand passes over it.
const BLOCK: usize = 8;

/// Row-wise [`affine_into`] over a whole batch: `y[s] = b + W x[s]`.
///
/// Samples are processed in blocks so each transposed weight column is
/// reused across the block instead of re-streaming the whole matrix per
/// sample. Every output cell still accumulates its input columns in the
/// same ascending order as the single-sample path, so the results match it
/// bit for bit.
fn affine_batch_into(wt: &[f64], b: &[f64], x: &Matrix, y: &mut Matrix) {
    let rows = b.len();
    debug_assert_eq!(x.rows, y.rows);
    debug_assert_eq!(y.cols, rows);
    debug_assert_eq!(wt.len(), rows * x.cols);
    let n = x.rows;
    let quads = x.cols / 4 * 4;
    let mut s0 = 0;
    while s0 < n {
        let s1 = (s0 + BLOCK).min(n);
        for s in s0..s1 {
            y.row_mut(s).copy_from_slice(b);
        }
        for c in (0..quads).step_by(4) {
            let cols = [
                &wt[c * rows..(c + 1) * rows],
                &wt[(c + 1) * rows..(c + 2) * rows],
                &wt[(c + 2) * rows..(c + 3) * rows],
                &wt[(c + 3) * rows..(c + 4) * rows],
            ];
            for s in s0..s1 {
                let xs = x.row(s);
                axpy4([xs[c], xs[c + 1], xs[c + 2], xs[c + 3]], cols, y.row_mut(s));
            }
        }
        for c in quads..x.cols {
            let col = &wt[c * rows..(c + 1) * rows];
            for s in s0..s1 {
                axpy(x.row(s)[c], col, y.row_mut(s));
            }
        }
        s0 = s1;
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for i in 0..x.len() {
        y[i] += alpha * x[i];
    }
}

/// Four ordered scaled adds into one destination. Per element the four terms
/// are added strictly in source order, exactly like four consecutive [`axpy`]
/// calls; fusing them quadruples the arithmetic per pass over `y` without
/// touching any per-element addition order.
#[inline]
fn axpy4(a: [f64; 4], x: [&[f64]; 4], y: &mut [f64]) {
    let len = y.len();
    let x0 = &x[0][..len];
    let x1 = &x[1][..len];
    let x2 = &x[2][..len];
    let x3 = &x[3][..len];
    for i in 0..len {
        let mut t = y[i];
        t += a[0] * x0[i];
        t += a[1] * x1[i];
        t += a[2] * x2[i];
        t += a[3] * x3[i];
        y[i] = t;
    }
}

/// One source scaled into four destinations: `y_k += a_k * x`. Each
/// destination element receives exactly one add, so this equals four
/// consecutive [`axpy`] calls; the shared `x` load is what makes it faster.
#[inline]
fn scale4(
    a: [f64; 4],
    x: &[f64],
    y0: &mut [f64],
    y1: &mut [f64],
    y2: &mut [f64],
    y3: &mut [f64],
) {
    let len = x.len();
    let y0 = &mut y0[..len];
    let y1 = &mut y1[..len];
    let y2 = &mut y2[..len];
    let y3 = &mut y3[..len];
    for i in 0..len {
        let xi = x[i];
        y0[i] += a[0] * xi;
        y1[i] += a[1] * xi;
        y2[i] += a[2] * xi;
        y3[i] += a[3] * xi;
    }
}

/// Four consecutive rows of `m` starting at `r0`, mutably.
#[inline]
fn four_rows_mut(m: &mut Matrix, r0: usize) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
    let cols = m.cols;
    let s = &mut m.data[r0 * cols..(r0 + 4) * cols];
    let (a, s) = s.split_at_mut(cols);
    let (b, s) = s.split_at_mut(cols);
    let (c, d) = s.split_at_mut(cols);
    (a, b, c, d)
}

impl Mlp {
    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    fn activation_at(&self, _layer: usize, last: bool) -> Activation {
        if last {
            match self.spec.output_activation {
                OutputActivation::Linear => Activation::Linear,
                OutputActivation::Tanh => Activation::Tanh,
            }
        } else {
            match self.spec.hidden_activation {
                HiddenActivation::Relu => Activation::Relu,
                HiddenActivation::Tanh => Activation::Tanh,
            }
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NeuralError> {
        mlp_forward(self, input)
    }

    /// Scalar convenience for single-output networks (critics).
    pub fn forward_scalar(&self, input: &[f64]) -> Result<f64, NeuralError> {
        let out = mlp_forward(self, input)?;
        debug_assert_eq!(out.len(), 1);
        Ok(out[0])
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.data.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Flattens all parameters in checkpoint order (per layer: weight rows,
    /// then biases).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in 0..self.weights.len() {
            out.extend_from_slice(&self.weights[l].data);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    /// Writes flattened values back; the inverse of [`Mlp::flatten`].
    pub fn unflatten(&mut self, values: &[f64]) -> Result<(), NeuralError> {
        if values.len() != self.parameter_count() {
            return Err(NeuralError::ShapeMismatch {
                expected: self.parameter_count(),
                got: values.len(),
                context: "unflatten",
            });
        }
        let mut it = values.iter();
        for l in 0..self.weights.len() {
            for v in &mut self.weights[l].data {
                *v = *it.next().unwrap();
            }
            for v in &mut self.biases[l] {
                *v = *it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Serializes shapes and parameters as text.
    ///
    /// Values are written as hexadecimal `f64` bit patterns, so the round trip
    /// through [`Mlp::from_text`] is exact for every representable value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("mlp v1\n");
        out.push_str("sizes");
        for s in &self.spec.sizes {
            out.push_str(&format!(" {s}"));
        }
        out.push('\n');
        out.push_str(match self.spec.hidden_activation {
            HiddenActivation::Relu => "hidden relu\n",
            HiddenActivation::Tanh => "hidden tanh\n",
        });
        out.push_str(match self.spec.output_activation {
            OutputActivation::Linear => "output linear\n",
            OutputActivation::Tanh => "output tanh\n",
        });
        for l in 0..self.weights.len() {
            out.push_str(&format!("W{l}"));
            for v in &self.weights[l].data {
                out.push_str(&format!(" {:016x}", v.to_bits()));
            }
            out.push('\n');
            out.push_str(&format!("b{l}"));
            for v in &self.biases[l] {
                out.push_str(&format!(" {:016x}", v.to_bits()));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the output of [`Mlp::to_text`].
    pub fn from_text(text: &str) -> Result<Self, NeuralError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| NeuralError::MalformedCheckpoint("empty file".into()))?;
        if header.trim() != "mlp v1" {
            return Err(NeuralError::MalformedCheckpoint(format!(
                "unknown header {header:?}"
            )));
        }
        let sizes_line = lines
            .next()
            .ok_or_else(|| NeuralError::MalformedCheckpoint("missing sizes".into()))?;
        let mut parts = sizes_line.split_whitespace();
        if parts.next() != Some("sizes") {
            return Err(NeuralError::MalformedCheckpoint("missing sizes".into()));
        }
        let sizes = parts
            .map(|p| {
                p.parse::<usize>()
                    .map_err(|e| NeuralError::MalformedCheckpoint(format!("bad size {p:?}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let hidden = match lines.next().map(str::trim) {
            Some("hidden relu") => HiddenActivation::Relu,
            Some("hidden tanh") => HiddenActivation::Tanh,
            other => {
                return Err(NeuralError::MalformedCheckpoint(format!(
                    "bad hidden activation line {other:?}"
                )))
            }
        };
        let output = match lines.next().map(str::trim) {
            Some("output linear") => OutputActivation::Linear,
            Some("output tanh") => OutputActivation::Tanh,
            other => {
                return Err(NeuralError::MalformedCheckpoint(format!(
                    "bad output activation line {other:?}"
                )))
            }
        };
        let spec = LayerSpec::new(sizes, hidden, output)?;
        let mut weights = Vec::with_capacity(spec.layer_count());
        let mut biases = Vec::with_capacity(spec.layer_count());
        for l in 0..spec.layer_count() {
            let rows = spec.sizes[l + 1];
            let cols = spec.sizes[l];
            let w = parse_tensor_line(lines.next(), &format!("W{l}"), rows * cols)?;
            weights.push(Matrix {
                rows,
                cols,
                data: w,
            });
            biases.push(parse_tensor_line(lines.next(), &format!("b{l}"), rows)?);
        }
        Ok(Mlp {
            spec,
            weights,
            biases,
        })
    }
}

fn parse_tensor_line(
    line: Option<&str>,
    tag: &str,
    expected: usize,
) -> Result<Vec<f64>, NeuralError> {
    let line =
        line.ok_or_else(|| NeuralError::MalformedCheckpoint(format!("missing tensor {tag}")))?;
    let mut parts = line.split_whitespace();
    let got_tag = parts.next().unwrap_or("");
    if got_tag != tag {
        return Err(NeuralError::MalformedCheckpoint(format!(
            "expected tensor {tag}, got {got_tag:?}"
        )));
    }
    let values = parts
        .map(|p| {
            u64::from_str_radix(p, 16)
                .map(f64::from_bits)
                .map_err(|e| NeuralError::MalformedCheckpoint(format!("bad value {p:?}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != expected {
        return Err(NeuralError::MalformedCheckpoint(format!(
            "tensor {tag}: expected {expected} values, got {}",
            values.len()
        )));
    }
    Ok(values)
}

/// Adam optimizer state for one network: first and second moment accumulators
/// plus the step counter used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_weights: Vec<Matrix>,
    v_weights: Vec<Matrix>,
    m_biases: Vec<Vec<f64>>,
    v_biases: Vec<Vec<f64>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Zero moments with the standard defaults (beta1 0.9, beta2 0.999,
    /// epsilon 1e-8).
    pub fn new(net: &Mlp) -> Self {
        Self {
            m_weights: net
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows, w.cols))
                .collect(),
            v_weights: net
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows, w.cols))
                .collect(),
            m_biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update.
///
/// `m = b1 m + (1-b1) g`, `v = b2 v + (1-b2) g^2`, then
/// `p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)`.
pub fn adam_step(
    net: &mut Mlp,
    grads: &MlpGrads,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), NeuralError> {
    if !(lr > 0.0) {
        return Err(NeuralError::InvalidSpec(format!("lr must be > 0, got {lr}")));
    }
    if !grads.is_finite() {
        return Err(NeuralError::NonFinite("adam gradients"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for l in 0..net.weights.len() {
        adam_update_slice(
            &mut net.weights[l].data,
            &grads.weights[l].data,
            &mut state.m_weights[l].data,
            &mut state.v_weights[l].data,
            state.beta1,
            state.beta2,
            state.epsilon,
            lr,
            bc1,
            bc2,
        );
        adam_update_slice(
            &mut net.biases[l],
            &grads.biases[l],
            &mut state.m_biases[l],
            &mut state.v_biases[l],
            state.beta1,
            state.beta2,
            state.epsilon,
            lr,
            bc1,
            bc2,
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn adam_update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}
