//! DeepSIC: iterative soft interference cancellation with one small
//! classifier per (user, iteration) module.
//!
//! Module `(k, q)` sees the `N` antenna outputs plus the previous iteration's
//! probability of +1 for every other user, and outputs a two-class PMF for
//! user `k` (class 0 = +1, class 1 = -1). Iteration 0 estimates are 0.5.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::Rng;
use thiserror::Error;

use crate::block::{Block, ObservationBlock, SymbolBlock};
use crate::neural::checkpoint::{read_mlp, write_mlp, CheckpointError, Lines};
use crate::neural::{log_probs_batch, mlp_init, LabeledBatch, MlpSpec, ParamVector};
use crate::viterbinet::symbol_to_digit;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeepSicError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("user index {index} out of range for {users} users")]
    IndexOutOfRange { index: usize, users: usize },
}

/// A module address, 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModuleId {
    pub user: usize,
    pub iteration: usize,
}

pub type ModuleSet = BTreeSet<ModuleId>;

/// Probability of +1 per user and time: `estimates[k][i]`.
pub type SoftEstimates = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq)]
pub struct DeepSicNet {
    users: usize,
    antennas: usize,
    iterations: usize,
    spec: MlpSpec,
    modules: Vec<ParamVector>,
}

impl DeepSicNet {
    /// Module layout `(N + K - 1) -> 100 -> 50 -> 2`.
    pub fn module_spec(antennas: usize, users: usize) -> MlpSpec {
        MlpSpec::three_layer(antennas + users - 1, 2)
    }

    /// Every module Glorot-initialized.
    pub fn random<R: Rng + ?Sized>(users: usize, antennas: usize, iterations: usize, rng: &mut R) -> Self {
        let spec = Self::module_spec(antennas, users);
        let modules = (0..users * iterations).map(|_| mlp_init(&spec, rng)).collect();
        DeepSicNet {
            users,
            antennas,
            iterations,
            spec,
            modules,
        }
    }

    /// Every module all-zero (uniform outputs).
    pub fn zeros(users: usize, antennas: usize, iterations: usize) -> Self {
        let spec = Self::module_spec(antennas, users);
        let modules = vec![ParamVector::zeros(spec.param_count()); users * iterations];
        DeepSicNet {
            users,
            antennas,
            iterations,
            spec,
            modules,
        }
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    fn slot(&self, id: ModuleId) -> usize {
        assert!(id.user < self.users && id.iteration < self.iterations);
        id.user * self.iterations + id.iteration
    }

    pub fn module(&self, id: ModuleId) -> &ParamVector {
        &self.modules[self.slot(id)]
    }

    pub fn set_module(&mut self, id: ModuleId, params: ParamVector) {
        assert_eq!(params.len(), self.spec.param_count());
        let slot = self.slot(id);
        self.modules[slot] = params;
    }

    pub fn module_ids(&self) -> impl Iterator<Item = ModuleId> + '_ {
        (0..self.users).flat_map(move |user| {
            (0..self.iterations).map(move |iteration| ModuleId { user, iteration })
        })
    }

    /// Uniform estimates used as iteration-0 input.
    pub fn initial_estimates(&self, len: usize) -> SoftEstimates {
        vec![vec![0.5; len]; self.users]
    }

    fn check_obs(&self, y: &ObservationBlock) -> Result<(), DeepSicError> {
        if y.rows() != self.antennas {
            return Err(DeepSicError::DimensionMismatch {
                expected: self.antennas,
                actual: y.rows(),
            });
        }
        Ok(())
    }

    /// Output of module `(k, q)` for every time index given the previous
    /// iteration's estimates.
    pub fn module_output(&self, id: ModuleId, y: &ObservationBlock, prev: &SoftEstimates) -> Vec<f64> {
        let inputs = module_inputs(id.user, y, prev);
        let lp = log_probs_batch(&self.spec, self.module(id), &inputs, y.cols())
            .expect("module inputs match spec");
        lp.chunks_exact(2).map(|r| r[0].exp()).collect()
    }

    /// Estimates after iteration `q` given those after `q - 1`.
    pub fn iterate(&self, iteration: usize, y: &ObservationBlock, prev: &SoftEstimates) -> SoftEstimates {
        (0..self.users)
            .map(|user| self.module_output(ModuleId { user, iteration }, y, prev))
            .collect()
    }

    /// Runs all `Q` iterations. Returns the estimates of every iteration
    /// (index 0 is the uniform start) and the hard decisions of the last one.
    pub fn forward(&self, y: &ObservationBlock) -> Result<(Vec<SoftEstimates>, SymbolBlock), DeepSicError> {
        self.check_obs(y)?;
        let mut all = vec![self.initial_estimates(y.cols())];
        for q in 0..self.iterations {
            let next = self.iterate(q, y, all.last().unwrap());
            all.push(next);
        }
        let hard = hard_decisions(all.last().unwrap());
        Ok((all, hard))
    }

    pub fn detect(&self, y: &ObservationBlock) -> Result<SymbolBlock, DeepSicError> {
        Ok(self.forward(y)?.1)
    }

    /// Writes a `deepsic K Q N` header followed by the `K·Q` modules,
    /// user-major.
    pub fn write_checkpoint<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "deepsic {} {} {}", self.users, self.iterations, self.antennas)?;
        for p in &self.modules {
            write_mlp(out, &self.spec, p)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(reader: R) -> Result<Self, CheckpointError> {
        let mut lines = Lines::new(reader);
        let header = lines.next_line()?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let dims: Option<Vec<usize>> = match parts.as_slice() {
            ["deepsic", rest @ ..] if rest.len() == 3 => rest.iter().map(|p| p.parse().ok()).collect(),
            _ => None,
        };
        let dims = dims.ok_or_else(|| lines.error("expected `deepsic K Q N` header"))?;
        let (users, iterations, antennas) = (dims[0], dims[1], dims[2]);
        let spec = Self::module_spec(antennas, users);
        let mut modules = Vec::with_capacity(users * iterations);
        for _ in 0..users * iterations {
            let (s, p) = read_mlp(&mut lines)?;
            if s != spec {
                return Err(lines.error("module spec does not match header"));
            }
            modules.push(p);
        }
        Ok(DeepSicNet {
            users,
            antennas,
            iterations,
            spec,
            modules,
        })
    }
}

/// Hard decisions from probabilities of +1; ties go to +1.
pub fn hard_decisions(estimates: &SoftEstimates) -> SymbolBlock {
    let rows: Vec<Vec<f64>> = estimates
        .iter()
        .map(|row| row.iter().map(|&p| if p >= 0.5 { 1.0 } else { -1.0 }).collect())
        .collect();
    Block::from_rows(&rows)
}

/// Row-major `B x (N + K - 1)` inputs of user `k`'s module.
pub fn module_inputs(user: usize, y: &ObservationBlock, prev: &SoftEstimates) -> Vec<f64> {
    let (n_ant, len) = (y.rows(), y.cols());
    let width = n_ant + prev.len() - 1;
    let mut out = Vec::with_capacity(len * width);
    for i in 0..len {
        for n in 0..n_ant {
            out.push(y.get(n, i));
        }
        for (other, est) in prev.iter().enumerate() {
            if other != user {
                out.push(est[i]);
            }
        }
    }
    out
}

/// Training examples for module `(k, q)`: inputs from the iteration `q - 1`
/// estimates, labels from user `k`'s symbols.
pub fn module_batch(user: usize, y: &ObservationBlock, prev: &SoftEstimates, labels: &[f64]) -> LabeledBatch {
    assert_eq!(labels.len(), y.cols());
    let width = y.rows() + prev.len() - 1;
    LabeledBatch::new(
        width,
        module_inputs(user, y, prev),
        labels.iter().map(|&s| symbol_to_digit(s)).collect(),
    )
    .expect("module input width")
}

/// Modules of the mobile user (0-based) across all iterations.
pub fn dynamic_module_set(user: usize, users: usize, iterations: usize) -> Result<ModuleSet, DeepSicError> {
    if user >= users {
        return Err(DeepSicError::IndexOutOfRange { index: user, users });
    }
    Ok((0..iterations).map(|iteration| ModuleId { user, iteration }).collect())
}

/// Every module of a `K x Q` net.
pub fn all_modules(users: usize, iterations: usize) -> ModuleSet {
    (0..users)
        .flat_map(|user| (0..iterations).map(move |iteration| ModuleId { user, iteration }))
        .collect()
}

/// Sequential DeepSIC training.
///
/// Iteration `q` modules are trained on inputs produced by the already
/// trained iterations `0..q`, so each module sees the input distribution it
/// meets at inference. Only modules in `trainable` are touched; `train` gets
/// the module id, its current parameters and its batch, and returns the new
/// parameters.
pub fn train_sequential<F>(
    net: &mut DeepSicNet,
    symbols: &SymbolBlock,
    y: &ObservationBlock,
    trainable: &ModuleSet,
    mut train: F,
) -> Result<(), DeepSicError>
where
    F: FnMut(ModuleId, &ParamVector, &LabeledBatch) -> ParamVector,
{
    net.check_obs(y)?;
    if symbols.rows() != net.users || symbols.cols() != y.cols() {
        return Err(DeepSicError::DimensionMismatch {
            expected: net.users * y.cols(),
            actual: symbols.rows() * symbols.cols(),
        });
    }
    let mut prev = net.initial_estimates(y.cols());
    for q in 0..net.iterations {
        for k in 0..net.users {
            let id = ModuleId { user: k, iteration: q };
            if trainable.contains(&id) {
                let batch = module_batch(k, y, &prev, symbols.row(k));
                let updated = train(id, net.module(id), &batch);
                net.set_module(id, updated);
            }
        }
        if q + 1 < net.iterations {
            prev = net.iterate(q, y, &prev);
        }
    }
    Ok(())
}

/// Estimates entering iteration `q` (i.e. after iteration `q - 1`) for a block.
pub fn estimates_before(net: &DeepSicNet, iteration: usize, y: &ObservationBlock) -> SoftEstimates {
    let mut prev = net.initial_estimates(y.cols());
    for q in 0..iteration {
        prev = net.iterate(q, y, &prev);
    }
    prev
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_obs(rows: usize, cols: usize, seed: u64) -> Block {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Block::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect())
    }

    #[test]
    fn zero_net_is_uniform_and_ties_to_plus_one() {
        let net = DeepSicNet::zeros(3, 3, 4);
        let (est, hard) = net.forward(&random_obs(3, 10, 1)).unwrap();
        assert_eq!(est.len(), 5);
        assert!(est.iter().flatten().flatten().all(|&p| p == 0.5));
        assert!(hard.as_slice().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn paper_sized_net_shapes() {
        let net = DeepSicNet::random(4, 4, 5, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(net.spec().input_dim(), 7);
        assert_eq!(net.module_ids().count(), 20);
        let (est, hard) = net.forward(&random_obs(4, 152, 3)).unwrap();
        assert_eq!((hard.rows(), hard.cols()), (4, 152));
        assert!(est.iter().flatten().flatten().all(|p| (0.0..=1.0).contains(p)));
        assert!(net.forward(&random_obs(3, 152, 3)).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let net = DeepSicNet::random(2, 3, 3, &mut ChaCha8Rng::seed_from_u64(4));
        let y = random_obs(3, 20, 5);
        assert_eq!(net.forward(&y).unwrap(), net.forward(&y).unwrap());
    }

    #[test]
    fn module_batch_layout() {
        let y = random_obs(4, 152, 6);
        let prev = vec![vec![0.5; 152]; 4];
        let labels: Vec<f64> = (0..152).map(|i| if i % 3 == 0 { -1.0 } else { 1.0 }).collect();
        let b = module_batch(1, &y, &prev, &labels);
        assert_eq!((b.len(), b.dim()), (152, 7));
        assert!(b.input(10)[4..].iter().all(|&p| p == 0.5));
        assert_eq!(&b.input(10)[..4], &y.column(10)[..]);
        assert!(b.labels().iter().all(|&l| l < 2));
        assert_eq!(b.labels()[0], 1);
    }

    #[test]
    fn module_sets() {
        let d = dynamic_module_set(1, 4, 5).unwrap();
        assert_eq!(d.len(), 5);
        assert!(d.iter().all(|m| m.user == 1));
        let all = all_modules(4, 5);
        assert_eq!(all.difference(&d).count() + d.len(), 20);
        assert_eq!(dynamic_module_set(0, 1, 5).unwrap(), all_modules(1, 5));
        assert!(matches!(
            dynamic_module_set(4, 4, 5),
            Err(DeepSicError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn training_only_touches_trainable() {
        let mut net = DeepSicNet::random(3, 3, 2, &mut ChaCha8Rng::seed_from_u64(7));
        let before = net.clone();
        let y = random_obs(3, 16, 8);
        let s = Block::from_vec(3, 16, vec![1.0; 48]);
        let trainable = dynamic_module_set(2, 3, 2).unwrap();
        let mut seen = Vec::new();
        train_sequential(&mut net, &s, &y, &trainable, |id, p, b| {
            seen.push((id, b.len()));
            ParamVector(p.iter().map(|v| v + 1.0).collect())
        })
        .unwrap();
        assert_eq!(seen.len(), 2);
        for id in net.module_ids().collect::<Vec<_>>() {
            let same = net.module(id).fingerprint() == before.module(id).fingerprint();
            assert_eq!(same, !trainable.contains(&id));
        }
    }

    #[test]
    fn single_user_has_no_interference_inputs() {
        let net = DeepSicNet::zeros(1, 3, 2);
        assert_eq!(net.spec().input_dim(), 3);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = DeepSicNet::random(2, 2, 2, &mut ChaCha8Rng::seed_from_u64(9));
        let mut buf = Vec::new();
        net.write_checkpoint(&mut buf).unwrap();
        assert_eq!(DeepSicNet::read_checkpoint(&buf[..]).unwrap(), net);
        assert!(DeepSicNet::read_checkpoint(&b"deepsic 2 2\n"[..]).is_err());
    }
}
