//! Forward error correction: GF(256) arithmetic, shortened Reed–Solomon codes,
//! BPSK mapping and the self-supervision gate.
//!
//! Bits are stored one per `u8` (values 0 or 1). Bytes are serialized
//! most-significant bit first. BPSK maps bit 0 to +1 and bit 1 to -1.

pub mod gf256;
pub mod rs;

use thiserror::Error;

pub use gf256::{gf_inv, gf_mul, Gf256};
pub use rs::{rs_decode, rs_encode, Decoded, RsParams};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FecError {
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid RS parameters n={n}, k={k}")]
    InvalidParams { n: usize, k: usize },
    #[error("uncorrectable block")]
    DecodeFailure,
}

/// Maps bits to BPSK symbols: 0 -> +1, 1 -> -1.
pub fn bits_to_bpsk(bits: &[u8]) -> Vec<f64> {
    bits.iter()
        .map(|&b| if b == 0 { 1.0 } else { -1.0 })
        .collect()
}

/// Sign slicer: non-negative values give bit 0, negative give bit 1.
pub fn bpsk_hard(values: &[f64]) -> Vec<u8> {
    values.iter().map(|&v| u8::from(v < 0.0)).collect()
}

/// Packs bits (MSB first) into field symbols.
pub fn bits_to_symbols(bits: &[u8]) -> Result<Vec<Gf256>, FecError> {
    if bits.len() % 8 != 0 {
        return Err(FecError::LengthMismatch {
            expected: bits.len().div_ceil(8) * 8,
            actual: bits.len(),
        });
    }
    Ok(bits
        .chunks_exact(8)
        .map(|c| Gf256(c.iter().fold(0u8, |acc, &b| (acc << 1) | (b & 1))))
        .collect())
}

/// Unpacks field symbols into bits (MSB first).
pub fn symbols_to_bits(symbols: &[Gf256]) -> Vec<u8> {
    symbols
        .iter()
        .flat_map(|s| (0..8).rev().map(move |i| (s.0 >> i) & 1))
        .collect()
}

/// Encodes a message of `8k` bits into `8n` codeword bits.
pub fn encode_bits(message_bits: &[u8], params: &RsParams) -> Result<Vec<u8>, FecError> {
    let msg = bits_to_symbols(message_bits)?;
    Ok(symbols_to_bits(&rs_encode(&msg, params)?))
}

/// Outcome of the self-supervision gate for one codeword.
#[derive(Clone, Debug, PartialEq)]
pub struct GateResult {
    pub valid: bool,
    /// Re-encoded BPSK word, present only when the gate accepts the block.
    pub reencoded_symbols: Option<Vec<f64>>,
    /// Fraction of re-encoded bits that disagree with the hard channel word.
    pub normalized_distance: f64,
    pub decode_failed: bool,
    /// Decoded message bits, or the systematic part of the hard decisions
    /// when decoding failed.
    pub message_bits: Vec<u8>,
}

/// Demodulates, decodes and re-encodes a detected word and decides whether
/// it can serve as a training label.
///
/// The block is accepted iff RS decoding succeeds and the re-encoded word is
/// within normalized Hamming distance `threshold` of `hard_channel_bits`.
pub fn self_supervision_gate(
    detected: &[f64],
    params: &RsParams,
    hard_channel_bits: &[u8],
    threshold: f64,
) -> Result<GateResult, FecError> {
    let n_bits = params.codeword_bits();
    if detected.len() != n_bits {
        return Err(FecError::LengthMismatch {
            expected: n_bits,
            actual: detected.len(),
        });
    }
    if hard_channel_bits.len() != n_bits {
        return Err(FecError::LengthMismatch {
            expected: n_bits,
            actual: hard_channel_bits.len(),
        });
    }
    let detected_bits = bpsk_hard(detected);
    let received = bits_to_symbols(&detected_bits)?;
    match rs_decode(&received, params) {
        Err(FecError::DecodeFailure) => Ok(GateResult {
            valid: false,
            reencoded_symbols: None,
            normalized_distance: 1.0,
            decode_failed: true,
            message_bits: detected_bits[..params.message_bits()].to_vec(),
        }),
        Err(e) => Err(e),
        Ok(decoded) => {
            let reencoded = symbols_to_bits(&rs_encode(&decoded.message, params)?);
            let distance = hamming_fraction(&reencoded, hard_channel_bits);
            let valid = distance <= threshold;
            Ok(GateResult {
                valid,
                reencoded_symbols: valid.then(|| bits_to_bpsk(&reencoded)),
                normalized_distance: distance,
                decode_failed: false,
                message_bits: symbols_to_bits(&decoded.message),
            })
        }
    }
}

fn hamming_fraction(a: &[u8], b: &[u8]) -> f64 {
    let diff = a.iter().zip(b).filter(|(x, y)| x != y).count();
    diff as f64 / a.len() as f64
}
