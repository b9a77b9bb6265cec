//! Fully-connected softmax classifier with exact backpropagation.
//!
//! Parameters are one flat vector: for each layer in order, the weight matrix
//! (`d_out x d_in`, row-major) followed by the bias vector.

use std::ops::{Deref, DerefMut};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NeuralError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Relu,
}

impl Activation {
    fn apply(self, z: &mut [f64]) {
        match self {
            Activation::Sigmoid => z.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp())),
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
        }
    }

    /// Multiplies `delta` by the derivative, expressed through the activation output.
    fn backprop(self, out: &[f64], delta: &mut [f64]) {
        match self {
            Activation::Sigmoid => delta
                .iter_mut()
                .zip(out)
                .for_each(|(d, &a)| *d *= a * (1.0 - a)),
            Activation::Relu => delta
                .iter_mut()
                .zip(out)
                .for_each(|(d, &a)| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
        }
    }
}

/// Layer widths and hidden activations; the output layer is always softmax.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    dims: Vec<usize>,
    activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(dims: Vec<usize>, activations: Vec<Activation>) -> Result<Self, NeuralError> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(NeuralError::InvalidSpec("need at least two non-zero layer widths".into()));
        }
        if *dims.last().unwrap() < 2 {
            return Err(NeuralError::InvalidSpec("output dimension must be at least 2".into()));
        }
        if activations.len() != dims.len() - 2 {
            return Err(NeuralError::InvalidSpec(format!(
                "{} hidden layers but {} activations",
                dims.len() - 2,
                activations.len()
            )));
        }
        Ok(MlpSpec { dims, activations })
    }

    /// `d_in -> 100 -> 50 -> d_out` with sigmoid then ReLU, the layout shared
    /// by both receivers.
    pub fn three_layer(d_in: usize, d_out: usize) -> Self {
        MlpSpec::new(vec![d_in, 100, 50, d_out], vec![Activation::Sigmoid, Activation::Relu])
            .expect("valid layout")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.dims.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|(i, o)| i * o + o).sum()
    }

    /// Offsets of (weights, biases) for each layer.
    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut at = 0;
        self.layers()
            .map(|(i, o)| {
                let w = at;
                at += i * o;
                let b = at;
                at += o;
                (w, b)
            })
            .collect()
    }
}

/// Flat parameter vector of an [`MlpSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// FNV-1a over the raw bit patterns, for bit-identity audits.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.0 {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Splits into per-layer (weights, biases) slices.
    pub fn unflatten<'a>(&'a self, spec: &MlpSpec) -> Vec<(&'a [f64], &'a [f64])> {
        spec.offsets()
            .into_iter()
            .zip(spec.layers())
            .map(|((w, b), (i, o))| (&self.0[w..w + i * o], &self.0[b..b + o]))
            .collect()
    }

    /// Inverse of [`ParamVector::unflatten`].
    pub fn flatten(layers: &[(&[f64], &[f64])]) -> Self {
        let mut out = Vec::new();
        for (w, b) in layers {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        ParamVector(out)
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

/// Glorot-uniform weights, zero biases.
pub fn mlp_init<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> ParamVector {
    let mut p = ParamVector::zeros(spec.param_count());
    for ((w, _), (i, o)) in spec.offsets().into_iter().zip(spec.layers()) {
        let bound = (6.0 / (i + o) as f64).sqrt();
        for v in &mut p.0[w..w + i * o] {
            *v = rng.gen_range(-bound..=bound);
        }
    }
    p
}

/// Training examples: `M` rows of `d_in` inputs with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    dim: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(dim: usize, inputs: Vec<f64>, labels: Vec<usize>) -> Result<Self, NeuralError> {
        if dim == 0 || inputs.len() != dim * labels.len() {
            return Err(NeuralError::DimensionMismatch {
                expected: dim * labels.len(),
                actual: inputs.len(),
            });
        }
        Ok(LabeledBatch { dim, inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows selected by `indices`, in that order.
    pub fn select(&self, indices: impl IntoIterator<Item = usize>) -> LabeledBatch {
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in indices {
            inputs.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
        }
        LabeledBatch {
            dim: self.dim,
            inputs,
            labels,
        }
    }

    /// Concatenates batches of equal input dimension.
    pub fn concat(batches: &[LabeledBatch]) -> Result<LabeledBatch, NeuralError> {
        let dim = batches.first().map_or(0, |b| b.dim);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for b in batches {
            if b.dim != dim {
                return Err(NeuralError::DimensionMismatch {
                    expected: dim,
                    actual: b.dim,
                });
            }
            inputs.extend_from_slice(&b.inputs);
            labels.extend_from_slice(&b.labels);
        }
        LabeledBatch::new(dim, inputs, labels)
    }
}

/// `c (m x n) = a (m x k) * b (k x n) + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slices cover every index reachable from the given shapes and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward pass over `m` rows; returns every layer's output (post-activation
/// for hidden layers, raw logits for the last one).
fn forward_layers(spec: &MlpSpec, params: &[f64], inputs: &[f64], m: usize) -> Vec<Vec<f64>> {
    let mut outs: Vec<Vec<f64>> = Vec::with_capacity(spec.dims.len() - 1);
    let n_layers = spec.dims.len() - 1;
    for (li, ((w, b), (d_in, d_out))) in spec.offsets().into_iter().zip(spec.layers()).enumerate() {
        let x: &[f64] = if li == 0 { inputs } else { &outs[li - 1] };
        let bias = &params[b..b + d_out];
        let mut z = Vec::with_capacity(m * d_out);
        for _ in 0..m {
            z.extend_from_slice(bias);
        }
        gemm(m, d_in, d_out, x, d_in, 1, &params[w..], 1, d_in, 1.0, &mut z);
        if li + 1 < n_layers {
            spec.activations[li].apply(&mut z);
        }
        outs.push(z);
    }
    outs
}

/// Row-wise log-softmax in place.
fn log_softmax_rows(z: &mut [f64], width: usize) {
    for row in z.chunks_exact_mut(width) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
}

fn check_input(spec: &MlpSpec, params: &[f64], input_len: usize, rows: usize) -> Result<(), NeuralError> {
    if params.len() != spec.param_count() {
        return Err(NeuralError::DimensionMismatch {
            expected: spec.param_count(),
            actual: params.len(),
        });
    }
    if input_len != rows * spec.input_dim() {
        return Err(NeuralError::DimensionMismatch {
            expected: rows * spec.input_dim(),
            actual: input_len,
        });
    }
    Ok(())
}

/// Class probabilities for one input vector.
pub fn forward(spec: &MlpSpec, params: &[f64], x: &[f64]) -> Result<Vec<f64>, NeuralError> {
    let mut lp = log_probs_batch(spec, params, x, 1)?;
    lp.iter_mut().for_each(|v| *v = v.exp());
    Ok(lp)
}

/// Log class probabilities for `rows` stacked inputs (`rows x d_out`).
pub fn log_probs_batch(
    spec: &MlpSpec,
    params: &[f64],
    inputs: &[f64],
    rows: usize,
) -> Result<Vec<f64>, NeuralError> {
    check_input(spec, params, inputs.len(), rows)?;
    let mut logits = forward_layers(spec, params, inputs, rows).pop().unwrap();
    log_softmax_rows(&mut logits, spec.output_dim());
    Ok(logits)
}

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-30;

/// Mean cross-entropy and its exact gradient.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: ParamVector,
    /// Number of examples whose true-class probability hit [`PROB_FLOOR`].
    pub clamped: usize,
}

/// Mean cross-entropy `-(1/M) Σ log p(label | x)` and its gradient.
pub fn loss_and_grad(
    spec: &MlpSpec,
    params: &[f64],
    batch: &LabeledBatch,
) -> Result<LossGrad, NeuralError> {
    let m = batch.len();
    if m == 0 {
        return Err(NeuralError::EmptyBatch);
    }
    check_input(spec, params, batch.inputs.len(), m)?;
    let d_out = spec.output_dim();
    if let Some(&bad) = batch.labels.iter().find(|&&l| l >= d_out) {
        return Err(NeuralError::LabelOutOfRange { label: bad, classes: d_out });
    }

    let mut outs = forward_layers(spec, params, &batch.inputs, m);
    let floor_ln = PROB_FLOOR.ln();
    let mut loss = 0.0;
    let mut clamped = 0;
    {
        let logits = outs.last_mut().unwrap();
        log_softmax_rows(logits, d_out);
        let inv_m = 1.0 / m as f64;
        for (row, &label) in logits.chunks_exact_mut(d_out).zip(&batch.labels) {
            let lp = row[label];
            if lp < floor_ln {
                clamped += 1;
                loss -= floor_ln;
            } else {
                loss -= lp;
            }
            // Overwrite with dL/dz = (p - onehot) / M.
            row.iter_mut().for_each(|v| *v = v.exp() * inv_m);
            row[label] -= inv_m;
        }
        loss *= inv_m;
    }

    let offsets = spec.offsets();
    let dims: Vec<(usize, usize)> = spec.layers().collect();
    let mut grad = ParamVector::zeros(spec.param_count());
    let mut delta = outs.pop().unwrap();
    for li in (0..dims.len()).rev() {
        let (d_in, d_out) = dims[li];
        let (w, b) = offsets[li];
        let x: &[f64] = if li == 0 { &batch.inputs } else { &outs[li - 1] };
        // dW = delta^T x
        gemm(d_out, m, d_in, &delta, 1, d_out, x, d_in, 1, 0.0, &mut grad.0[w..w + d_in * d_out]);
        let gb = &mut grad.0[b..b + d_out];
        for row in delta.chunks_exact(d_out) {
            gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
        }
        if li > 0 {
            let mut prev = vec![0.0; m * d_in];
            gemm(m, d_out, d_in, &delta, d_out, 1, &params[w..], d_in, 1, 0.0, &mut prev);
            spec.activations[li - 1].backprop(&outs[li - 1], &mut prev);
            delta = prev;
        }
    }
    Ok(LossGrad { loss, grad, clamped })
}
