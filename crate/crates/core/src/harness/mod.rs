//! Experiment orchestration: trials, SNR and meta-frequency sweeps, results
//! files.

pub mod config;
pub mod selftest;
pub mod trial;

use std::io::Write;

use thiserror::Error;

use crate::channel::ChannelError;
use crate::fec::FecError;
use crate::par::par_map;
use crate::training::TrainingError;

pub use config::{ConfigError, ExperimentConfig, ReceiverKind, Regime, Scenario};
pub use trial::{expected_data_steps, generate_blocks, run_trial, run_trial_on, BlockRecord, TrialOutcome, TxBlock};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("channel: {0}")]
    Channel(#[from] ChannelError),
    #[error("coding: {0}")]
    Fec(#[from] FecError),
    #[error("training: {0}")]
    Training(#[from] TrainingError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub(crate) fn invalid(path: &str, message: impl Into<String>) -> Self {
        HarnessError::Config(ConfigError::Invalid {
            path: path.to_string(),
            message: message.into(),
        })
    }

    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config(_))
    }
}

/// Regimes actually distinct for the configured receiver (the perfect-CSI
/// receiver never trains, so one regime suffices).
pub fn effective_regimes(cfg: &ExperimentConfig) -> Vec<Regime> {
    if cfg.receiver == ReceiverKind::ViterbiCsi {
        cfg.regimes[..1].to_vec()
    } else {
        cfg.regimes.clone()
    }
}

/// Runs every configured regime at one SNR and seed on a shared block stream.
pub fn run_regimes(cfg: &ExperimentConfig, snr_db: f64, seed: u64) -> Result<Vec<TrialOutcome>, HarnessError> {
    cfg.validate()?;
    let blocks = generate_blocks(cfg, snr_db, seed)?;
    let regimes = effective_regimes(cfg);
    par_map(&regimes, |&r| run_trial_on(cfg, r, snr_db, seed, &blocks))
        .into_iter()
        .collect()
}

/// Final cumulative BER of one (regime, SNR) point over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub regime: Regime,
    pub snr_db: f64,
    pub meta_every: usize,
    pub mean_ber: f64,
    /// `(seed, final BER)` in seed-list order.
    pub per_seed: Vec<(u64, f64)>,
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    values.sum::<f64>() / n as f64
}

/// Every (SNR, seed, regime) trial; one row per (regime, SNR), SNR-major in
/// configuration order.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>, HarnessError> {
    cfg.validate()?;
    let regimes = effective_regimes(cfg);
    let mut jobs: Vec<(f64, u64, Regime)> = Vec::new();
    for &snr in &cfg.snr_db {
        for &seed in &cfg.seeds {
            jobs.extend(regimes.iter().map(|&r| (snr, seed, r)));
        }
    }
    let outcomes = par_map(&jobs, |&(snr, seed, r)| run_trial(cfg, r, snr, seed).map(|o| o.final_ber()));
    let bers: Vec<f64> = outcomes.into_iter().collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for &snr in &cfg.snr_db {
        for &r in &regimes {
            let per_seed: Vec<(u64, f64)> = jobs
                .iter()
                .zip(&bers)
                .filter(|((s, _, reg), _)| *s == snr && *reg == r)
                .map(|((_, seed, _), &b)| (*seed, b))
                .collect();
            rows.push(SweepRow {
                regime: r,
                snr_db: snr,
                meta_every: cfg.train.meta_every,
                mean_ber: mean(per_seed.iter().map(|p| p.1)),
                per_seed,
            });
        }
    }
    Ok(rows)
}

/// Meta-learning at the first configured SNR for each meta frequency;
/// rows sorted by frequency.
pub fn run_f_sweep(cfg: &ExperimentConfig, frequencies: &[usize]) -> Result<Vec<SweepRow>, HarnessError> {
    cfg.validate()?;
    let regime = cfg.regimes.iter().copied().find(|r| r.is_meta()).ok_or_else(|| HarnessError::invalid("regimes", "a meta regime is required"))?;
    if let Some(i) = frequencies.iter().position(|&f| f == 0) {
        return Err(HarnessError::invalid(&format!("f[{i}]"), "meta frequency must be at least 1"));
    }
    let mut sorted = frequencies.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let snr = cfg.snr_db[0];
    let jobs: Vec<(usize, u64)> = sorted.iter().flat_map(|&f| cfg.seeds.iter().map(move |&s| (f, s))).collect();
    let bers: Vec<f64> = par_map(&jobs, |&(f, seed)| {
        let mut c = cfg.clone();
        c.train.meta_every = f;
        run_trial(&c, regime, snr, seed).map(|o| o.final_ber())
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    Ok(sorted
        .iter()
        .map(|&f| {
            let per_seed: Vec<(u64, f64)> = jobs
                .iter()
                .zip(&bers)
                .filter(|((ff, _), _)| *ff == f)
                .map(|((_, s), &b)| (*s, b))
                .collect();
            SweepRow {
                regime,
                snr_db: snr,
                meta_every: f,
                mean_ber: mean(per_seed.iter().map(|p| p.1)),
                per_seed,
            }
        })
        .collect())
}

pub const RESULTS_HEADER: [&str; 8] = ["block_index", "regime", "snr_db", "seed", "gate_valid", "bit_errors", "cum_ber", "grad_steps"];

/// Per-block results, one row per record of every outcome.
pub fn write_results_csv<W: Write>(out: W, outcomes: &[TrialOutcome]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for o in outcomes {
        for r in &o.records {
            w.write_record([
                r.block_index.to_string(),
                o.regime.name().to_string(),
                o.snr_db.to_string(),
                o.seed.to_string(),
                r.gate_valid.to_string(),
                r.bit_errors.to_string(),
                r.cumulative_ber.to_string(),
                r.grad_steps.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Sweep summary: mean and per-seed final BER (`seed:ber` pairs separated by
/// `;`).
pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["regime", "snr_db", "meta_every", "mean_ber", "per_seed"])?;
    for r in rows {
        let per_seed: Vec<String> = r.per_seed.iter().map(|(s, b)| format!("{s}:{b}")).collect();
        w.write_record([
            r.regime.name().to_string(),
            r.snr_db.to_string(),
            r.meta_every.to_string(),
            r.mean_ber.to_string(),
            per_seed.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}
