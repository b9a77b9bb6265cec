//! Block-fading channel simulation.
//!
//! SISO finite-memory channels convolve the block with the taps `h_j` (symbols
//! before the block start are zero), MIMO channels apply `y = H_j s`. Both add
//! real white Gaussian noise and can pass the result through `tanh(C ·)`.

pub mod mimo;
pub mod taps;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{Block, ObservationBlock, SymbolBlock};

pub use mimo::{exp_decay_matrix, mimo_transmit, MimoChannelSpec, MimoProfile};
pub use taps::{
    load_tap_trace, random_tap_profile, save_tap_trace, synth_tap_profile, test_tap_specs,
    train_tap_specs, TapProfile, TapSpec,
};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("tap profile must have at least one tap and one block")]
    EmptyProfile,
    #[error("non-finite channel value {0}")]
    NonFinite(f64),
    #[error("tap period must be positive, got {0}")]
    InvalidPeriod(f64),
}

/// Receiver front-end distortion applied after noise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    #[default]
    None,
    /// `y -> tanh(scale * y)`.
    Tanh { scale: f64 },
}

impl Nonlinearity {
    pub fn apply(&self, v: f64) -> f64 {
        match *self {
            Nonlinearity::None => v,
            Nonlinearity::Tanh { scale } => (scale * v).tanh(),
        }
    }
}

/// Noise level and front-end model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelConfig {
    pub sigma: f64,
    pub nonlinearity: Nonlinearity,
}

impl ChannelConfig {
    /// Linear channel at the given SNR (`1/σ²`, in dB).
    pub fn from_snr_db(snr_db: f64) -> Self {
        ChannelConfig {
            sigma: snr_to_sigma(snr_db),
            nonlinearity: Nonlinearity::None,
        }
    }

    pub fn with_nonlinearity(mut self, nonlinearity: Nonlinearity) -> Self {
        self.nonlinearity = nonlinearity;
        self
    }

    pub fn snr_db(&self) -> f64 {
        -20.0 * self.sigma.log10()
    }
}

/// `σ = 10^(-snr_db / 20)`, i.e. SNR = 1/σ².
pub fn snr_to_sigma(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 20.0)
}

/// Noiseless ISI output `Σ_l h_l s_{i-l}` with zero guard before the block.
pub fn convolve(symbols: &[f64], taps: &[f64]) -> Vec<f64> {
    (0..symbols.len())
        .map(|i| {
            taps.iter()
                .enumerate()
                .take(i + 1)
                .map(|(l, &h)| h * symbols[i - l])
                .sum()
        })
        .collect()
}

/// Sends one `1 x B` block through a finite-memory SISO channel.
pub fn siso_transmit<R: Rng + ?Sized>(
    symbols: &SymbolBlock,
    taps: &[f64],
    cfg: &ChannelConfig,
    rng: &mut R,
) -> ObservationBlock {
    let clean = convolve(symbols.row(0), taps);
    let y = clean
        .into_iter()
        .map(|v| {
            let w: f64 = rng.sample(StandardNormal);
            cfg.nonlinearity.apply(v + cfg.sigma * w)
        })
        .collect();
    Block::row_vector(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quiet() -> ChannelConfig {
        ChannelConfig {
            sigma: 1e-12,
            nonlinearity: Nonlinearity::None,
        }
    }

    #[test]
    fn snr_conversion() {
        assert_eq!(snr_to_sigma(0.0), 1.0);
        assert!((snr_to_sigma(20.0) - 0.1).abs() < 1e-15);
        assert!((snr_to_sigma(12.0) - 0.251_188_643_150_958).abs() < 1e-12);
        assert!((ChannelConfig::from_snr_db(7.5).snr_db() - 7.5).abs() < 1e-12);
    }

    #[test]
    fn identity_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = Block::row_vector(vec![1.0, -1.0, -1.0, 1.0]);
        let y = siso_transmit(&s, &[1.0], &quiet(), &mut rng);
        for (a, b) in y.row(0).iter().zip(s.row(0)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn two_tap_with_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = Block::row_vector(vec![1.0, 1.0, -1.0]);
        let y = siso_transmit(&s, &[1.0, 1.0], &quiet(), &mut rng);
        let expected = [1.0, 2.0, 0.0];
        for (a, b) in y.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn tanh_front_end() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = quiet().with_nonlinearity(Nonlinearity::Tanh { scale: 0.5 });
        let y = siso_transmit(&Block::row_vector(vec![1.0]), &[1.0], &cfg, &mut rng);
        assert!((y.get(0, 0) - 0.5f64.tanh()).abs() < 1e-9);
        assert!((y.get(0, 0) - 0.4621).abs() < 1e-4);
    }

    #[test]
    fn tanh_wraps_noise_too() {
        // Same seed, same noise draw: nonlinear output = tanh(C * linear output).
        let s = Block::row_vector(vec![1.0, -1.0, 1.0, 1.0]);
        let lin = ChannelConfig::from_snr_db(3.0);
        let nl = lin.with_nonlinearity(Nonlinearity::Tanh { scale: 0.5 });
        let a = siso_transmit(&s, &[0.9, 0.3], &lin, &mut ChaCha8Rng::seed_from_u64(5));
        let b = siso_transmit(&s, &[0.9, 0.3], &nl, &mut ChaCha8Rng::seed_from_u64(5));
        for (x, y) in a.row(0).iter().zip(b.row(0)) {
            assert!(((0.5 * x).tanh() - y).abs() < 1e-15);
            assert!(y.abs() < 1.0);
        }
    }

    #[test]
    fn noiseless_output_is_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let b = rng.gen_range(1..40);
            let l = rng.gen_range(1..6);
            let s: Vec<f64> = (0..b).map(|_| if rng.gen() { 1.0 } else { -1.0 }).collect();
            let h: Vec<f64> = (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // Direct definition with an explicit zero-padded history.
            let mut padded = vec![0.0; l - 1];
            padded.extend_from_slice(&s);
            let y = siso_transmit(&Block::row_vector(s.clone()), &h, &quiet(), &mut rng);
            for i in 0..b {
                let want: f64 = (0..l).map(|k| h[k] * padded[i + l - 1 - k]).sum();
                assert!((y.get(0, i) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn noise_variance_matches_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = ChannelConfig::from_snr_db(6.0);
        let n = 100_000;
        let s = Block::row_vector(vec![1.0; n]);
        let y = siso_transmit(&s, &[0.7, 0.2], &cfg, &mut rng);
        let clean = convolve(s.row(0), &[0.7, 0.2]);
        let var: f64 = y.row(0).iter().zip(&clean).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
        let s2 = cfg.sigma * cfg.sigma;
        assert!((var - s2).abs() / s2 < 0.03, "var {var} vs {s2}");
    }

    #[test]
    fn guard_interval_ignores_previous_block() {
        let h = [1.0, 0.5, 0.25];
        let s = vec![-1.0, 1.0, 1.0, -1.0];
        let y = convolve(&s, &h);
        assert_eq!(y[0], -1.0);
        assert_eq!(y[1], 1.0 - 0.5);
    }
}
