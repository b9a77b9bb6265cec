//! Small softmax classifiers, their gradients and optimizers.

pub mod checkpoint;
pub mod mlp;
pub mod optim;

use thiserror::Error;

pub use mlp::{
    forward, log_probs_batch, loss_and_grad, mlp_init, Activation, LabeledBatch, LossGrad,
    MlpSpec, ParamVector,
};
pub use optim::{adam_step, sgd_step, AdamState, Optimizer, OptimizerKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
}

/// A differentiable scalar loss of a flat parameter vector.
pub trait Objective {
    fn loss_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>);
}

/// Cross-entropy of an MLP on a fixed batch.
#[derive(Clone, Copy, Debug)]
pub struct MlpObjective<'a> {
    pub spec: &'a MlpSpec,
    pub batch: &'a LabeledBatch,
}

impl Objective for MlpObjective<'_> {
    fn loss_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let lg = mlp::loss_and_grad(self.spec, params, self.batch)
            .expect("batch and parameters match the spec");
        (lg.loss, lg.grad.into_inner())
    }
}

/// Central-difference Hessian-vector product
/// `(∇L(p + εv) - ∇L(p - εv)) / 2ε`.
pub fn hvp_central<O: Objective + ?Sized>(objective: &O, params: &[f64], v: &[f64], step: f64) -> Vec<f64> {
    let shifted = |sign: f64| -> Vec<f64> {
        params.iter().zip(v).map(|(p, d)| p + sign * step * d).collect()
    };
    let (_, g_plus) = objective.loss_and_grad(&shifted(1.0));
    let (_, g_minus) = objective.loss_and_grad(&shifted(-1.0));
    g_plus
        .iter()
        .zip(&g_minus)
        .map(|(a, b)| (a - b) / (2.0 * step))
        .collect()
}

/// Hessian-vector product of the batch cross-entropy by finite differences.
pub fn hvp_finite_diff(
    spec: &MlpSpec,
    params: &[f64],
    batch: &LabeledBatch,
    v: &[f64],
    step: f64,
) -> Result<ParamVector, NeuralError> {
    if v.len() != params.len() {
        return Err(NeuralError::DimensionMismatch {
            expected: params.len(),
            actual: v.len(),
        });
    }
    mlp::loss_and_grad(spec, params, batch)?;
    Ok(ParamVector(hvp_central(&MlpObjective { spec, batch }, params, v, step)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct HalfNormSq;
    impl Objective for HalfNormSq {
        fn loss_and_grad(&self, p: &[f64]) -> (f64, Vec<f64>) {
            (0.5 * p.iter().map(|v| v * v).sum::<f64>(), p.to_vec())
        }
    }

    struct Linear(Vec<f64>);
    impl Objective for Linear {
        fn loss_and_grad(&self, p: &[f64]) -> (f64, Vec<f64>) {
            (p.iter().zip(&self.0).map(|(a, b)| a * b).sum(), self.0.clone())
        }
    }

    #[test]
    fn hvp_of_quadratic_is_identity() {
        let v = vec![0.5, -1.5, 2.0];
        let h = hvp_central(&HalfNormSq, &[1.0, 2.0, 3.0], &v, 1e-3);
        for (a, b) in h.iter().zip(&v) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn hvp_of_linear_is_zero() {
        let h = hvp_central(&Linear(vec![3.0, -1.0]), &[0.2, 0.4], &[1.0, 1.0], 1e-3);
        assert!(h.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn hvp_is_symmetric_on_tiny_net() {
        let spec = MlpSpec::new(vec![2, 4, 3], vec![Activation::Sigmoid]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = mlp_init(&spec, &mut rng);
        let inputs: Vec<f64> = (0..16).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let batch = LabeledBatch::new(2, inputs, vec![0, 1, 2, 0, 1, 2, 0, 1]).unwrap();
        let n = spec.param_count();
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let hv = hvp_finite_diff(&spec, &p, &batch, &v, 1e-4).unwrap();
        let hu = hvp_finite_diff(&spec, &p, &batch, &u, 1e-4).unwrap();
        let u_hv: f64 = u.iter().zip(hv.iter()).map(|(a, b)| a * b).sum();
        let v_hu: f64 = v.iter().zip(hu.iter()).map(|(a, b)| a * b).sum();
        assert!((u_hv - v_hu).abs() <= 1e-3 * u_hv.abs().max(v_hu.abs()), "{u_hv} vs {v_hu}");
    }
}
