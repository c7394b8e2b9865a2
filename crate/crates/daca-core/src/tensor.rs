//! Dense linear algebra for small multi-layer perceptrons.
//!
//! Everything is f64 and single-threaded. Forward passes record the
//! activation trace needed for exact backprop; gradients are hand-derived
//! and validated against central finite differences in the test suite.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to this band before any `log`, so saturated
/// sigmoids cannot produce infinite losses.
pub const PROB_CLAMP: f64 = 1e-7;

/// Clamp a probability into `[PROB_CLAMP, 1 - PROB_CLAMP]`.
#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Numerically stable logistic function. Strictly inside (0, 1) up to
/// f64 rounding; saturates for |z| beyond roughly 37.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Row-major dense matrix of f64 values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    /// Identity matrix (square).
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        let mut values = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            values.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            values,
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    /// Validates the length invariant and that all entries are finite.
    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.rows * self.cols {
            return Err(Error::DimensionMismatch {
                context: "matrix storage".into(),
                expected: self.rows * self.cols,
                actual: self.values.len(),
            });
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries".into()));
        }
        Ok(())
    }
}

/// Element-wise activation applied after an affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn forward(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative at pre-activation `z`, given the post-activation `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

/// One affine layer: `z = W x + b`; weight shape is (out_dim, in_dim).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn in_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows
    }
}

/// Parameters of a multi-layer perceptron.
///
/// Hidden layers use `hidden_activation` (relu or tanh); the final layer
/// uses `output_activation` (identity or sigmoid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<LayerParams>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpParams {
    /// Builds an MLP with Xavier-uniform init: each weight drawn from
    /// `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init<R: Rng + ?Sized>(
        dims: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "mlp needs at least an input and an output dimension".into(),
            ));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidConfig("mlp layer dims must be > 0".into()));
        }
        match hidden_activation {
            Activation::Relu | Activation::Tanh => {}
            other => {
                return Err(Error::InvalidConfig(format!(
                    "hidden activation must be relu or tanh, got {other:?}"
                )))
            }
        }
        match output_activation {
            Activation::Identity | Activation::Sigmoid => {}
            other => {
                return Err(Error::InvalidConfig(format!(
                    "output activation must be identity or sigmoid, got {other:?}"
                )))
            }
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            let values = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
            layers.push(LayerParams {
                weight: DenseMatrix {
                    rows: fan_out,
                    cols: fan_in,
                    values,
                },
                bias: vec![0.0; fan_out],
            });
        }
        Ok(Self {
            layers,
            hidden_activation,
            output_activation,
        })
    }

    /// Single identity layer; useful as a pass-through transform.
    pub fn identity(dim: usize) -> Self {
        Self {
            layers: vec![LayerParams {
                weight: DenseMatrix::identity(dim),
                bias: vec![0.0; dim],
            }],
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").out_dim()
    }

    /// Checks dimension chaining and finiteness of every parameter.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("mlp has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.weight.validate()?;
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::DimensionMismatch {
                    context: format!("layer {i} bias"),
                    expected: layer.out_dim(),
                    actual: layer.bias.len(),
                });
            }
            if layer.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} bias")));
            }
            if i + 1 < self.layers.len() && layer.out_dim() != self.layers[i + 1].in_dim() {
                return Err(Error::DimensionMismatch {
                    context: format!("layer {i} -> {} chain", i + 1),
                    expected: layer.out_dim(),
                    actual: self.layers[i + 1].in_dim(),
                });
            }
        }
        Ok(())
    }

    fn activation_at(&self, layer_idx: usize) -> Activation {
        if layer_idx + 1 == self.layers.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    /// Total number of scalar parameters, in the fixed flattening order
    /// (layer 0 weight row-major, layer 0 bias, layer 1 weight, ...).
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.values.len() + l.bias.len())
            .sum()
    }

    pub fn copy_flat_into(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend_from_slice(&layer.weight.values);
            out.extend_from_slice(&layer.bias);
        }
    }

    /// Overwrites parameters from a flat slice in flattening order.
    /// Returns the number of scalars consumed.
    pub fn set_from_flat(&mut self, src: &[f64]) -> usize {
        let mut at = 0;
        for layer in &mut self.layers {
            let wn = layer.weight.values.len();
            layer.weight.values.copy_from_slice(&src[at..at + wn]);
            at += wn;
            let bn = layer.bias.len();
            layer.bias.copy_from_slice(&src[at..at + bn]);
            at += bn;
        }
        at
    }
}

/// Trace of one forward pass: per layer, the input, pre-activation, and
/// post-activation vectors. Sufficient for exact backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    layers: Vec<LayerTrace>,
}

#[derive(Debug, Clone)]
struct LayerTrace {
    input: Vec<f64>,
    pre: Vec<f64>,
    post: Vec<f64>,
}

impl ForwardTrace {
    /// The final output of the traced forward pass.
    pub fn output(&self) -> &[f64] {
        &self.layers.last().expect("non-empty trace").post
    }
}

/// Gradients with the same shape as an [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerParams>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: DenseMatrix::zeros(l.out_dim(), l.in_dim()),
                    bias: vec![0.0; l.out_dim()],
                })
                .collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        assert_eq!(self.layers.len(), other.layers.len(), "grad shape mismatch");
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.values.iter_mut().zip(&b.weight.values) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for layer in &mut self.layers {
            for v in &mut layer.weight.values {
                *v *= s;
            }
            for v in &mut layer.bias {
                *v *= s;
            }
        }
    }

    /// Element-wise negation; the backward-pass effect of a gradient
    /// reversal layer applied at this parameter set's boundary.
    pub fn negated(&self) -> Self {
        let mut out = self.clone();
        out.scale(-1.0);
        out
    }

    pub fn copy_flat_into(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend_from_slice(&layer.weight.values);
            out.extend_from_slice(&layer.bias);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.values.iter().chain(l.bias.iter()))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight
                .values
                .iter()
                .chain(l.bias.iter())
                .all(|v| v.is_finite())
        })
    }
}

/// Runs the MLP on `x`, returning the output and the trace needed by
/// [`mlp_backward`]. Errors if `x` does not match the first layer's in-dim.
pub fn mlp_forward(params: &MlpParams, x: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
    if x.len() != params.in_dim() {
        return Err(Error::DimensionMismatch {
            context: "mlp input".into(),
            expected: params.in_dim(),
            actual: x.len(),
        });
    }
    let mut traces = Vec::with_capacity(params.layers.len());
    let mut current = x.to_vec();
    for (i, layer) in params.layers.iter().enumerate() {
        let act = params.activation_at(i);
        let mut pre = layer.bias.clone();
        for (o, p) in pre.iter_mut().enumerate() {
            let row = &layer.weight.values[o * layer.in_dim()..(o + 1) * layer.in_dim()];
            for (w, xv) in row.iter().zip(&current) {
                *p += w * xv;
            }
        }
        let post: Vec<f64> = pre.iter().map(|&z| act.forward(z)).collect();
        traces.push(LayerTrace {
            input: std::mem::replace(&mut current, post.clone()),
            pre,
            post,
        });
    }
    Ok((current, ForwardTrace { layers: traces }))
}

/// Backpropagates `upstream` (dL/d output) through a traced forward pass.
/// Returns parameter gradients and the gradient with respect to the input.
pub fn mlp_backward(
    params: &MlpParams,
    trace: &ForwardTrace,
    upstream: &[f64],
) -> Result<(MlpGrads, Vec<f64>)> {
    if trace.layers.len() != params.layers.len() {
        return Err(Error::InvalidInput(
            "forward trace does not match mlp layer count".into(),
        ));
    }
    if upstream.len() != params.out_dim() {
        return Err(Error::DimensionMismatch {
            context: "mlp upstream gradient".into(),
            expected: params.out_dim(),
            actual: upstream.len(),
        });
    }
    let mut grads = MlpGrads::zeros_like(params);
    let mut g = upstream.to_vec();
    for (i, layer) in params.layers.iter().enumerate().rev() {
        let t = &trace.layers[i];
        if t.input.len() != layer.in_dim() || t.pre.len() != layer.out_dim() {
            return Err(Error::InvalidInput(format!(
                "stale forward trace at layer {i}"
            )));
        }
        let act = params.activation_at(i);
        let gl = &mut grads.layers[i];
        let mut g_input = vec![0.0; layer.in_dim()];
        for (o, &go) in g.iter().enumerate().take(layer.out_dim()) {
            let dz = go * act.derivative(t.pre[o], t.post[o]);
            gl.bias[o] += dz;
            let row_start = o * layer.in_dim();
            for (idx, &xv) in t.input.iter().enumerate() {
                gl.weight.values[row_start + idx] += dz * xv;
                g_input[idx] += layer.weight.values[row_start + idx] * dz;
            }
        }
        g = g_input;
    }
    Ok((grads, g))
}

/// Backward path of the gradient reversal layer: the forward pass is the
/// identity, so this simply negates the upstream gradient.
pub fn reverse_gradient(upstream: &[f64]) -> Vec<f64> {
    upstream.iter().map(|g| -g).collect()
}

/// Adam optimizer state for one parameter set, stored flat in the same
/// order as [`MlpParams::copy_flat_into`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }
}

/// One Adam update with bias correction. Deterministic; errors on
/// non-finite gradients so the trainer can surface divergence.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &MlpGrads,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    if params.param_count() != state.m.len() {
        return Err(Error::DimensionMismatch {
            context: "adam state".into(),
            expected: params.param_count(),
            actual: state.m.len(),
        });
    }
    state.step += 1;
    let bc1 = 1.0 - state.beta1.powi(state.step as i32);
    let bc2 = 1.0 - state.beta2.powi(state.step as i32);
    let mut at = 0;
    for (layer, gl) in params.layers.iter_mut().zip(&grads.layers) {
        for (p, &g) in layer
            .weight
            .values
            .iter_mut()
            .chain(layer.bias.iter_mut())
            .zip(gl.weight.values.iter().chain(gl.bias.iter()))
        {
            let m = &mut state.m[at];
            let v = &mut state.v[at];
            *m = state.beta1 * *m + (1.0 - state.beta1) * g;
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
            at += 1;
        }
    }
    Ok(())
}

/// Compares the analytic gradient of `loss_and_grad` against central finite
/// differences at `params`, returning the maximum relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
///
/// `loss_and_grad` must return the loss value and its full gradient for the
/// given flat parameter vector, and must be deterministic.
pub fn finite_diff_check<F>(mut loss_and_grad: F, params: &[f64], step: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss_and_grad(params);
    assert_eq!(analytic.len(), params.len(), "gradient length mismatch");
    let mut work = params.to_vec();
    let mut max_err = 0.0_f64;
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + step;
        let (plus, _) = loss_and_grad(&work);
        work[i] = orig - step;
        let (minus, _) = loss_and_grad(&work);
        work[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-12);
        max_err = max_err.max((analytic[i] - numeric).abs() / denom);
    }
    max_err
}
