//! Regimes applied module-wise to a DeepSIC receiver.
//!
//! A per-module hyperparameter map has the same shape as the receiver, so it
//! is stored as a [`DeepSicNet`] as well. Module inputs for block batches are
//! produced by the receiver whose modules are being adapted.

use rand::Rng;

use super::{init_schedule, joint_train, online_train, sample_minibatch, BatchObjective, BufferEntry, MetaLearner, PairBuffer, TrainConfig, TrainingError};
use crate::block::{Block, ObservationBlock, SymbolBlock};
use crate::deepsic::{all_modules, module_batch, train_sequential, DeepSicNet, ModuleId, ModuleSet, SoftEstimates};
use crate::neural::{LabeledBatch, ParamVector};

/// Iteration-input estimates of every iteration for one block.
fn iteration_inputs(net: &DeepSicNet, y: &ObservationBlock) -> Vec<SoftEstimates> {
    net.forward(y).expect("observation rows match the receiver").0
}

fn batch_for(id: ModuleId, s: &SymbolBlock, y: &ObservationBlock, inputs: &[SoftEstimates]) -> LabeledBatch {
    module_batch(id.user, y, &inputs[id.iteration], s.row(id.user))
}

/// Sequential joint training on all pilots pooled into one long block.
/// Returns the number of optimizer steps.
pub fn deepsic_joint_train<R: Rng + ?Sized>(net: &mut DeepSicNet, pilots: &[BufferEntry], cfg: &TrainConfig, rng: &mut R) -> usize {
    let s = Block::hconcat(&pilots.iter().map(|p| p.symbols.clone()).collect::<Vec<_>>());
    let y = Block::hconcat(&pilots.iter().map(|p| p.observations.clone()).collect::<Vec<_>>());
    let spec = net.spec().clone();
    let mut steps = 0;
    train_sequential(net, &s, &y, &all_modules(net.users(), net.iterations()), |_, init, batch| {
        let out = joint_train(init, &spec, std::slice::from_ref(batch), cfg, rng);
        steps += out.steps;
        out.params
    })
    .expect("pilot blocks match the receiver");
    steps
}

/// Online training of the modules in `trainable` on one block. Each module
/// starts from its entry in `init` when given, otherwise from its current
/// weights. Returns the number of optimizer steps.
pub fn deepsic_online_train<R: Rng + ?Sized>(
    net: &mut DeepSicNet,
    init: Option<&DeepSicNet>,
    symbols: &SymbolBlock,
    observations: &ObservationBlock,
    trainable: &ModuleSet,
    cfg: &TrainConfig,
    rng: &mut R,
) -> usize {
    let spec = net.spec().clone();
    train_sequential(net, symbols, observations, trainable, |id, current, batch| {
        let start = init.map_or(current, |theta| theta.module(id));
        online_train(start, &spec, batch, cfg, rng)
    })
    .expect("block matches the receiver");
    trainable.len() * cfg.sgd_iterations
}

/// Dynamic modules only, from the hyperparameter map.
pub fn modular_online_train<R: Rng + ?Sized>(
    net: &mut DeepSicNet,
    theta: &DeepSicNet,
    symbols: &SymbolBlock,
    observations: &ObservationBlock,
    dynamic: &ModuleSet,
    cfg: &TrainConfig,
    rng: &mut R,
) -> usize {
    deepsic_online_train(net, Some(theta), symbols, observations, dynamic, cfg, rng)
}

/// Meta-updates the hyperparameters of the modules in `dynamic`; every other
/// module's hyperparameter becomes a copy of its current weight in `phi`.
/// Returns the new map and the number of meta steps.
pub fn modular_meta_update<R: Rng + ?Sized>(
    theta: &DeepSicNet,
    phi: &DeepSicNet,
    buffer: &PairBuffer,
    dynamic: &ModuleSet,
    cfg: &TrainConfig,
    rng: &mut R,
) -> (DeepSicNet, usize) {
    let mut out = theta.clone();
    for id in phi.module_ids().collect::<Vec<_>>() {
        if !dynamic.contains(&id) {
            out.set_module(id, phi.module(id).clone());
        }
    }
    let spec = phi.spec().clone();
    let mut steps = 0;
    for _ in 0..cfg.meta_pair_draws {
        let Ok((sup, qry)) = buffer.sample_consecutive_pair(rng) else {
            continue;
        };
        let sup_inputs = iteration_inputs(phi, &sup.observations);
        let qry_inputs = iteration_inputs(phi, &qry.observations);
        for &id in dynamic {
            let support = batch_for(id, &sup.symbols, &sup.observations, &sup_inputs);
            let query = batch_for(id, &qry.symbols, &qry.observations, &qry_inputs);
            let mut params: ParamVector = out.module(id).clone();
            let mut learner = MetaLearner::new(cfg, params.len());
            for _ in 0..cfg.meta_iterations {
                let s = BatchObjective {
                    spec: &spec,
                    batch: sample_minibatch(&support, cfg.batch_size, rng),
                };
                let q = BatchObjective {
                    spec: &spec,
                    batch: sample_minibatch(&query, cfg.batch_size, rng),
                };
                learner.step(&mut params, &s, &q, cfg);
            }
            out.set_module(id, params);
            steps += cfg.meta_iterations;
        }
    }
    (out, steps)
}

/// Meta-trains every module's initial hyperparameter on the pilot set,
/// starting from `theta`. Module inputs come from the map itself as it
/// evolves. Returns the number of meta steps.
pub fn deepsic_meta_train_initial<R: Rng + ?Sized>(
    theta: &mut DeepSicNet,
    pilots: &[BufferEntry],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<usize, TrainingError> {
    let schedule = init_schedule(pilots, cfg.meta_init_sweeps, rng)?;
    let spec = theta.spec().clone();
    let ids: Vec<ModuleId> = theta.module_ids().collect();
    let mut learners: Vec<MetaLearner> = ids.iter().map(|_| MetaLearner::new(cfg, spec.param_count())).collect();
    for &p in &schedule {
        let (sup, qry) = (&pilots[p - 1], &pilots[p]);
        let sup_inputs = iteration_inputs(theta, &sup.observations);
        let qry_inputs = iteration_inputs(theta, &qry.observations);
        for (id, learner) in ids.iter().zip(learners.iter_mut()) {
            let s = BatchObjective {
                spec: &spec,
                batch: sample_minibatch(&batch_for(*id, &sup.symbols, &sup.observations, &sup_inputs), cfg.batch_size, rng),
            };
            let q = BatchObjective {
                spec: &spec,
                batch: sample_minibatch(&batch_for(*id, &qry.symbols, &qry.observations, &qry_inputs), cfg.batch_size, rng),
            };
            let mut params = theta.module(*id).clone();
            learner.step(&mut params, &s, &q, cfg);
            theta.set_module(*id, params);
        }
    }
    Ok(schedule.len() * ids.len())
}
