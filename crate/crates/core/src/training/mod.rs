//! Training regimes: pooled joint training, self-supervised online
//! fine-tuning, and predictive meta-learning of the training initialization.
//!
//! Meta-learning adapts an initialization `θ` such that a single support step
//! `φ̂ = θ - α∇L_s(θ)` on block `j'` yields low loss on block `j' + 1`.
//! Online fine-tuning then starts every block from `θ` instead of from the
//! previous block's weights.

pub mod buffer;
pub mod deepsic;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{ObservationBlock, SymbolBlock};
use crate::neural::{hvp_central, loss_and_grad, mlp_init, LabeledBatch, MlpSpec, Objective, Optimizer, OptimizerKind, ParamVector};

pub use buffer::{BufferEntry, PairBuffer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainingError {
    #[error("block index {index} is not newer than {newest}")]
    NonMonotonicIndex { index: usize, newest: usize },
    #[error("no consecutive block pair available")]
    NoValidPair,
    #[error("need at least two consecutive pilot blocks")]
    InsufficientPilots,
    #[error("invalid training setting `{field}`: {message}")]
    InvalidConfig { field: &'static str, message: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaMode {
    /// Query gradient at `φ̂`, ignoring the support step's Jacobian.
    #[default]
    FirstOrder,
    /// `(I - α H_s(θ)) ∇L_q(φ̂)` with a finite-difference Hessian-vector product.
    ExactHvp,
}

/// Hyperparameters shared by all regimes.
///
/// `lr` drives online fine-tuning and joint training. Meta-learning uses
/// `support_lr` for the inner step and `meta_lr` with `meta_optimizer` for
/// the update of `θ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub support_lr: f64,
    pub meta_lr: f64,
    pub sgd_iterations: usize,
    pub meta_iterations: usize,
    pub meta_every: usize,
    pub gate_threshold: f64,
    pub batch_size: usize,
    pub meta_mode: MetaMode,
    pub optimizer: OptimizerKind,
    pub meta_optimizer: OptimizerKind,
    pub meta_pair_draws: usize,
    pub buffer_capacity: usize,
    pub joint_epochs: usize,
    pub meta_init_sweeps: usize,
    pub hvp_step: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            support_lr: 0.01,
            meta_lr: 1e-3,
            sgd_iterations: 200,
            meta_iterations: 200,
            meta_every: 5,
            gate_threshold: 0.02,
            batch_size: 64,
            meta_mode: MetaMode::FirstOrder,
            optimizer: OptimizerKind::Adam,
            meta_optimizer: OptimizerKind::Adam,
            meta_pair_draws: 1,
            buffer_capacity: 20,
            joint_epochs: 5,
            meta_init_sweeps: 40,
            hvp_step: 1e-5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |field: &'static str, message: &str| {
            Err(TrainingError::InvalidConfig {
                field,
                message: message.to_string(),
            })
        };
        for (field, v) in [("lr", self.lr), ("support_lr", self.support_lr), ("meta_lr", self.meta_lr)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(field, "must be finite and non-negative");
            }
        }
        if self.meta_every == 0 {
            return bad("meta_every", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.gate_threshold) {
            return bad("gate_threshold", "must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.buffer_capacity < 2 {
            return bad("buffer_capacity", "must hold at least one pair");
        }
        if !(self.hvp_step.is_finite() && self.hvp_step > 0.0) {
            return bad("hvp_step", "must be positive");
        }
        Ok(())
    }
}

/// `size` distinct rows drawn uniformly, or the whole batch if it is smaller.
pub fn sample_minibatch<R: Rng + ?Sized>(batch: &LabeledBatch, size: usize, rng: &mut R) -> LabeledBatch {
    if size >= batch.len() {
        return batch.clone();
    }
    batch.select(rand::seq::index::sample(rng, batch.len(), size).into_iter())
}

/// Cross-entropy of an MLP on an owned batch.
pub struct BatchObjective<'a> {
    pub spec: &'a MlpSpec,
    pub batch: LabeledBatch,
}

impl Objective for BatchObjective<'_> {
    fn loss_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let lg = loss_and_grad(self.spec, params, &self.batch).expect("batch matches spec");
        (lg.loss, lg.grad.into_inner())
    }
}

/// `I_sgd` optimizer steps from `init` on minibatches of `batch`.
pub fn online_train<R: Rng + ?Sized>(
    init: &ParamVector,
    spec: &MlpSpec,
    batch: &LabeledBatch,
    cfg: &TrainConfig,
    rng: &mut R,
) -> ParamVector {
    let mut params = init.clone();
    let mut opt = Optimizer::new(cfg.optimizer, params.len());
    for _ in 0..cfg.sgd_iterations {
        let mb = sample_minibatch(batch, cfg.batch_size, rng);
        let lg = loss_and_grad(spec, &params, &mb).expect("batch matches spec");
        opt.step(&mut params, &lg.grad, cfg.lr);
    }
    params
}

/// Gradient of `L_q(θ - α∇L_s(θ))` with respect to `θ` (exact) or its
/// first-order surrogate.
pub fn meta_gradient<S, Q>(theta: &[f64], support: &S, query: &Q, support_lr: f64, mode: MetaMode, hvp_step: f64) -> Vec<f64>
where
    S: Objective + ?Sized,
    Q: Objective + ?Sized,
{
    let (_, g_support) = support.loss_and_grad(theta);
    let adapted: Vec<f64> = theta.iter().zip(&g_support).map(|(t, g)| t - support_lr * g).collect();
    let (_, g_query) = query.loss_and_grad(&adapted);
    match mode {
        MetaMode::FirstOrder => g_query,
        MetaMode::ExactHvp => {
            let hv = hvp_central(support, theta, &g_query, hvp_step);
            g_query.iter().zip(&hv).map(|(g, h)| g - support_lr * h).collect()
        }
    }
}

/// Stateful outer-loop optimizer for one parameter vector.
pub struct MetaLearner {
    opt: Optimizer,
}

impl MetaLearner {
    pub fn new(cfg: &TrainConfig, len: usize) -> Self {
        MetaLearner {
            opt: Optimizer::new(cfg.meta_optimizer, len),
        }
    }

    pub fn step<S: Objective + ?Sized, Q: Objective + ?Sized>(
        &mut self,
        theta: &mut [f64],
        support: &S,
        query: &Q,
        cfg: &TrainConfig,
    ) {
        let g = meta_gradient(theta, support, query, cfg.support_lr, cfg.meta_mode, cfg.hvp_step);
        self.opt.step(theta, &g, cfg.meta_lr);
    }
}

/// `iterations` meta steps from `theta`; `draw` supplies a (support, query)
/// objective pair per step.
pub fn meta_descend<O, F>(theta: &ParamVector, iterations: usize, cfg: &TrainConfig, mut draw: F) -> ParamVector
where
    O: Objective,
    F: FnMut() -> (O, O),
{
    let mut out = theta.clone();
    let mut learner = MetaLearner::new(cfg, out.len());
    for _ in 0..iterations {
        let (s, q) = draw();
        learner.step(&mut out, &s, &q, cfg);
    }
    out
}

/// Draws `meta_pair_draws` consecutive pairs from the buffer and runs
/// `I_meta` meta steps on each. Returns the new `θ` and the number of steps
/// taken (zero when the buffer holds no pair).
pub fn meta_update<R, B>(
    theta: &ParamVector,
    buffer: &PairBuffer,
    spec: &MlpSpec,
    build: B,
    cfg: &TrainConfig,
    rng: &mut R,
) -> (ParamVector, usize)
where
    R: Rng + ?Sized,
    B: Fn(&SymbolBlock, &ObservationBlock) -> LabeledBatch,
{
    let mut out = theta.clone();
    let mut steps = 0;
    for _ in 0..cfg.meta_pair_draws {
        let (support, query) = match buffer.sample_consecutive_pair(rng) {
            Ok((s, q)) => (build(&s.symbols, &s.observations), build(&q.symbols, &q.observations)),
            Err(_) => continue,
        };
        out = meta_descend(&out, cfg.meta_iterations, cfg, || {
            (
                BatchObjective {
                    spec,
                    batch: sample_minibatch(&support, cfg.batch_size, rng),
                },
                BatchObjective {
                    spec,
                    batch: sample_minibatch(&query, cfg.batch_size, rng),
                },
            )
        });
        steps += cfg.meta_iterations;
    }
    (out, steps)
}

/// Positions `p` in a pilot list such that pilots `p - 1` and `p` are
/// consecutive blocks.
pub fn consecutive_positions(pilots: &[BufferEntry]) -> Vec<usize> {
    (1..pilots.len())
        .filter(|&p| pilots[p - 1].index + 1 == pilots[p].index)
        .collect()
}

/// Shuffled sweeps over the consecutive pairs, one meta step per pair.
pub(crate) fn init_schedule<R: Rng + ?Sized>(pilots: &[BufferEntry], sweeps: usize, rng: &mut R) -> Result<Vec<usize>, TrainingError> {
    let positions = consecutive_positions(pilots);
    if positions.is_empty() {
        return Err(TrainingError::InsufficientPilots);
    }
    let mut schedule = Vec::with_capacity(sweeps * positions.len());
    for _ in 0..sweeps {
        let mut sweep = positions.clone();
        sweep.shuffle(rng);
        schedule.extend(sweep);
    }
    Ok(schedule)
}

/// Meta-trains the initial `θ₀` on the pilot set from a random init.
/// Returns `θ₀` and the number of meta steps.
pub fn meta_train_initial<R, B>(
    pilots: &[BufferEntry],
    spec: &MlpSpec,
    build: B,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(ParamVector, usize), TrainingError>
where
    R: Rng + ?Sized,
    B: Fn(&SymbolBlock, &ObservationBlock) -> LabeledBatch,
{
    if consecutive_positions(pilots).is_empty() {
        return Err(TrainingError::InsufficientPilots);
    }
    let init = mlp_init(spec, rng);
    let schedule = init_schedule(pilots, cfg.meta_init_sweeps, rng)?;
    let batches: Vec<LabeledBatch> = pilots.iter().map(|p| build(&p.symbols, &p.observations)).collect();
    let mut next = schedule.iter();
    let theta = meta_descend(&init, schedule.len(), cfg, || {
        let p = *next.next().expect("schedule length");
        (
            BatchObjective {
                spec,
                batch: sample_minibatch(&batches[p - 1], cfg.batch_size, rng),
            },
            BatchObjective {
                spec,
                batch: sample_minibatch(&batches[p], cfg.batch_size, rng),
            },
        )
    });
    Ok((theta, schedule.len()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointOutcome {
    pub params: ParamVector,
    /// Mean minibatch loss per epoch.
    pub loss_trace: Vec<f64>,
    pub steps: usize,
}

/// Epochs of shuffled minibatch training on the pooled examples of all
/// batches, starting from `init`.
pub fn joint_train<R: Rng + ?Sized>(
    init: &ParamVector,
    spec: &MlpSpec,
    batches: &[LabeledBatch],
    cfg: &TrainConfig,
    rng: &mut R,
) -> JointOutcome {
    let pooled = LabeledBatch::concat(batches).expect("batches share the input width");
    let mut params = init.clone();
    let mut opt = Optimizer::new(cfg.optimizer, params.len());
    let mut loss_trace = Vec::with_capacity(cfg.joint_epochs);
    let mut steps = 0;
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    for _ in 0..cfg.joint_epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut count = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let mb = pooled.select(chunk.iter().copied());
            let lg = loss_and_grad(spec, &params, &mb).expect("batch matches spec");
            opt.step(&mut params, &lg.grad, cfg.lr);
            total += lg.loss;
            count += 1;
            steps += 1;
        }
        loss_trace.push(if count > 0 { total / count as f64 } else { 0.0 });
    }
    JointOutcome {
        params,
        loss_trace,
        steps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::Block;
    use crate::channel::{siso_transmit, ChannelConfig};
    use crate::viterbinet::{viterbinet_training_batch, ViterbiNet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `½(φ - c)²`.
    struct Quad(f64);
    impl Objective for Quad {
        fn loss_and_grad(&self, p: &[f64]) -> (f64, Vec<f64>) {
            (0.5 * (p[0] - self.0).powi(2), vec![p[0] - self.0])
        }
    }

    fn sgd_cfg(support_lr: f64, mode: MetaMode) -> TrainConfig {
        TrainConfig {
            support_lr,
            meta_lr: 1.0,
            meta_mode: mode,
            meta_optimizer: OptimizerKind::Sgd,
            optimizer: OptimizerKind::Sgd,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn scalar_meta_gradients() {
        let g = meta_gradient(&[0.0], &Quad(1.0), &Quad(2.0), 0.1, MetaMode::ExactHvp, 1e-5);
        assert!((g[0] + 1.71).abs() < 1e-10, "{}", g[0]);
        let g = meta_gradient(&[0.0], &Quad(1.0), &Quad(2.0), 0.1, MetaMode::FirstOrder, 1e-5);
        assert!((g[0] + 1.9).abs() < 1e-10, "{}", g[0]);
        let theta = meta_descend(&ParamVector(vec![0.0]), 1, &sgd_cfg(0.1, MetaMode::ExactHvp), || (Quad(1.0), Quad(2.0)));
        assert!((theta[0] - 1.71).abs() < 1e-10);
    }

    #[test]
    fn validate_rejects_bad_values() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            meta_every: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(c.validate(), Err(TrainingError::InvalidConfig { field: "meta_every", .. })));
        let c = TrainConfig {
            gate_threshold: 1.5,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            lr: -1.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    fn siso_block(taps: &[f64], sigma: f64, len: usize, rng: &mut ChaCha8Rng) -> (Block, Block) {
        let s: Vec<f64> = (0..len).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let s = Block::row_vector(s);
        let cfg = ChannelConfig {
            sigma,
            ..ChannelConfig::from_snr_db(0.0)
        };
        let y = siso_transmit(&s, taps, &cfg, rng);
        (s, y)
    }

    fn filled_buffer(memory: usize, blocks: usize, rng: &mut ChaCha8Rng) -> PairBuffer {
        let mut buf = PairBuffer::new(20);
        for j in 0..blocks {
            let (s, y) = siso_block(&[1.0, 0.5 + 0.05 * j as f64][..memory], 0.3, 136, rng);
            buf.push(j, s, y).unwrap();
        }
        buf
    }

    #[test]
    fn online_train_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = ViterbiNet::spec_for(1);
        let init = mlp_init(&spec, &mut rng);
        let (s, y) = siso_block(&[1.0], 0.1, 136, &mut rng);
        let batch = viterbinet_training_batch(&s, &y, 1);
        let none = TrainConfig {
            sgd_iterations: 0,
            ..TrainConfig::default()
        };
        assert_eq!(online_train(&init, &spec, &batch, &none, &mut rng), init);
        let frozen = TrainConfig {
            lr: 0.0,
            optimizer: OptimizerKind::Sgd,
            ..TrainConfig::default()
        };
        assert_eq!(online_train(&init, &spec, &batch, &frozen, &mut rng), init);
    }

    #[test]
    fn online_train_fits_noiseless_single_tap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = ViterbiNet::spec_for(1);
        let init = mlp_init(&spec, &mut rng);
        let (s, y) = siso_block(&[1.0], 1e-9, 136, &mut rng);
        let batch = viterbinet_training_batch(&s, &y, 1);
        let trained = online_train(&init, &spec, &batch, &TrainConfig::default(), &mut rng);
        let loss = loss_and_grad(&spec, &trained, &batch).unwrap().loss;
        assert!(loss < 0.1, "{loss}");
    }

    #[test]
    fn meta_update_skips_and_freezes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ViterbiNet::spec_for(2);
        let theta = mlp_init(&spec, &mut rng);
        let build = |s: &Block, y: &Block| viterbinet_training_batch(s, y, 2);
        let cfg = TrainConfig {
            meta_iterations: 5,
            ..TrainConfig::default()
        };
        let (out, steps) = meta_update(&theta, &PairBuffer::new(20), &spec, build, &cfg, &mut rng);
        assert_eq!((out.clone(), steps), (theta.clone(), 0));
        let buf = filled_buffer(2, 4, &mut rng);
        let frozen = TrainConfig { meta_lr: 0.0, ..cfg.clone() };
        let (out, steps) = meta_update(&theta, &buf, &spec, build, &frozen, &mut rng);
        assert_eq!((out, steps), (theta.clone(), 5));
        let (out, _) = meta_update(&theta, &buf, &spec, build, &cfg, &mut rng);
        assert_ne!(out, theta);
    }

    #[test]
    fn exact_and_first_order_converge_as_support_lr_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = ViterbiNet::spec_for(2);
        let theta = mlp_init(&spec, &mut rng);
        let buf = filled_buffer(2, 2, &mut rng);
        let build = |s: &Block, y: &Block| viterbinet_training_batch(s, y, 2);
        let mut gaps = Vec::new();
        for eta in [1e-2, 1e-3, 1e-4] {
            let run = |mode| {
                let cfg = TrainConfig {
                    support_lr: eta,
                    meta_mode: mode,
                    meta_iterations: 3,
                    batch_size: 1000,
                    ..TrainConfig::default()
                };
                meta_update(&theta, &buf, &spec, build, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).0
            };
            let (a, b) = (run(MetaMode::ExactHvp), run(MetaMode::FirstOrder));
            let gap = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            gaps.push(gap / eta);
        }
        let c = gaps[0].max(1e-12) * 10.0;
        assert!(gaps.iter().all(|&g| g <= c), "{gaps:?}");
    }

    #[test]
    fn meta_train_initial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = ViterbiNet::spec_for(2);
        let build = |s: &Block, y: &Block| viterbinet_training_batch(s, y, 2);
        let buf = filled_buffer(2, 3, &mut rng);
        let pilots: Vec<BufferEntry> = buf.entries().cloned().collect();
        assert_eq!(
            meta_train_initial(&pilots[..1], &spec, build, &TrainConfig::default(), &mut rng).unwrap_err(),
            TrainingError::InsufficientPilots
        );
        let frozen = TrainConfig {
            meta_lr: 0.0,
            meta_init_sweeps: 2,
            ..TrainConfig::default()
        };
        let (theta, steps) = meta_train_initial(&pilots, &spec, build, &frozen, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(steps, 4);
        assert_eq!(theta, mlp_init(&spec, &mut ChaCha8Rng::seed_from_u64(6)));
    }

    #[test]
    fn joint_train_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = ViterbiNet::spec_for(2);
        let init = mlp_init(&spec, &mut rng);
        let buf = filled_buffer(2, 6, &mut rng);
        let batches: Vec<LabeledBatch> = buf
            .entries()
            .map(|e| viterbinet_training_batch(&e.symbols, &e.observations, 2))
            .collect();
        let none = TrainConfig {
            joint_epochs: 0,
            ..TrainConfig::default()
        };
        assert_eq!(joint_train(&init, &spec, &batches, &none, &mut rng).params, init);
        let cfg = TrainConfig {
            joint_epochs: 8,
            ..TrainConfig::default()
        };
        let out = joint_train(&init, &spec, &batches, &cfg, &mut ChaCha8Rng::seed_from_u64(8));
        assert_eq!(out.steps, 8 * 13);
        for w in out.loss_trace.windows(2) {
            assert!(w[1] <= w[0] * 1.05, "{:?}", out.loss_trace);
        }
        let again = joint_train(&init, &spec, &[LabeledBatch::concat(&batches).unwrap()], &cfg, &mut ChaCha8Rng::seed_from_u64(8));
        assert_eq!(again.params, out.params);
    }
}
