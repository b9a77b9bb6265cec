//! Systematic shortened Reed–Solomon codes over GF(256).
//!
//! The generator polynomial has consecutive roots `α^1 .. α^(n-k)`. A shortened
//! `[n, k]` code is the length-255 mother code with `255 - n` leading zero
//! message symbols. Those zeros contribute nothing to any polynomial
//! evaluation, so encoding and decoding work on the `n` transmitted symbols
//! directly and treat an error located in the padding as a decoding failure.

use serde::{Deserialize, Serialize};

use super::gf256::Gf256;
use super::FecError;

/// Code dimensions of a shortened RS code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRsParams", into = "RawRsParams")]
pub struct RsParams {
    n: usize,
    k: usize,
}

#[derive(Serialize, Deserialize)]
struct RawRsParams {
    n: usize,
    k: usize,
}

impl TryFrom<RawRsParams> for RsParams {
    type Error = FecError;
    fn try_from(raw: RawRsParams) -> Result<Self, FecError> {
        RsParams::new(raw.n, raw.k)
    }
}

impl From<RsParams> for RawRsParams {
    fn from(p: RsParams) -> Self {
        RawRsParams { n: p.n, k: p.k }
    }
}

impl RsParams {
    pub fn new(n: usize, k: usize) -> Result<Self, FecError> {
        if k == 0 || k >= n || n > 255 {
            return Err(FecError::InvalidParams { n, k });
        }
        Ok(RsParams { n, k })
    }

    /// The [17,15] code used for the SISO experiments.
    pub fn siso_default() -> Self {
        RsParams { n: 17, k: 15 }
    }

    /// The [19,15] code used for the MIMO experiments.
    pub fn mimo_default() -> Self {
        RsParams { n: 19, k: 15 }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn parity(&self) -> usize {
        self.n - self.k
    }

    /// Number of correctable symbol errors.
    pub fn t(&self) -> usize {
        self.parity() / 2
    }

    /// Codeword length in bits.
    pub fn codeword_bits(&self) -> usize {
        8 * self.n
    }

    /// Message length in bits.
    pub fn message_bits(&self) -> usize {
        8 * self.k
    }

    fn generator(&self) -> Vec<Gf256> {
        // Descending coefficients, monic.
        let mut g = vec![Gf256::ONE];
        for i in 1..=self.parity() {
            let root = Gf256::alpha_pow(i);
            let mut next = vec![Gf256::ZERO; g.len() + 1];
            for (j, &c) in g.iter().enumerate() {
                next[j] += c;
                next[j + 1] += c * root;
            }
            g = next;
        }
        g
    }
}

/// Systematic encoding: the message followed by `n - k` parity symbols.
pub fn rs_encode(msg: &[Gf256], params: &RsParams) -> Result<Vec<Gf256>, FecError> {
    if msg.len() != params.k {
        return Err(FecError::LengthMismatch {
            expected: params.k,
            actual: msg.len(),
        });
    }
    let gen = params.generator();
    let nsym = params.parity();
    let mut work: Vec<Gf256> = msg.to_vec();
    work.resize(params.n, Gf256::ZERO);
    for i in 0..params.k {
        let coef = work[i];
        if coef != Gf256::ZERO {
            for (j, &g) in gen.iter().enumerate().skip(1) {
                work[i + j] += g * coef;
            }
        }
    }
    let mut out = msg.to_vec();
    out.extend_from_slice(&work[params.k..params.k + nsym]);
    Ok(out)
}

/// Successful decoding result.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoded {
    pub message: Vec<Gf256>,
    pub corrected: usize,
}

fn eval_desc(poly: &[Gf256], x: Gf256) -> Gf256 {
    poly.iter().fold(Gf256::ZERO, |acc, &c| acc * x + c)
}

fn eval_asc(poly: &[Gf256], x: Gf256) -> Gf256 {
    poly.iter().rev().fold(Gf256::ZERO, |acc, &c| acc * x + c)
}

fn syndromes(recv: &[Gf256], nsym: usize) -> Vec<Gf256> {
    (1..=nsym)
        .map(|i| eval_desc(recv, Gf256::alpha_pow(i)))
        .collect()
}

/// Berlekamp–Massey; returns the error locator in ascending powers.
fn error_locator(synd: &[Gf256]) -> Vec<Gf256> {
    let mut c = vec![Gf256::ONE];
    let mut b = vec![Gf256::ONE];
    let mut l = 0usize;
    let mut m = 1usize;
    let mut last_d = Gf256::ONE;
    for n in 0..synd.len() {
        let mut d = synd[n];
        for i in 1..=l.min(c.len() - 1) {
            d += c[i] * synd[n - i];
        }
        if d == Gf256::ZERO {
            m += 1;
            continue;
        }
        let scale = d * last_d.inv().expect("discrepancy is non-zero");
        let mut next = c.clone();
        if next.len() < b.len() + m {
            next.resize(b.len() + m, Gf256::ZERO);
        }
        for (i, &bi) in b.iter().enumerate() {
            next[i + m] += scale * bi;
        }
        if 2 * l <= n {
            b = std::mem::replace(&mut c, next);
            l = n + 1 - l;
            last_d = d;
            m = 1;
        } else {
            c = next;
            m += 1;
        }
    }
    c.truncate(l + 1);
    c
}

/// Hard-decision bounded-distance decoding.
///
/// Returns the message and the number of corrected symbols, or
/// [`FecError::DecodeFailure`] when the error pattern is not correctable.
pub fn rs_decode(recv: &[Gf256], params: &RsParams) -> Result<Decoded, FecError> {
    let n = params.n;
    if recv.len() != n {
        return Err(FecError::LengthMismatch {
            expected: n,
            actual: recv.len(),
        });
    }
    let nsym = params.parity();
    let synd = syndromes(recv, nsym);
    if synd.iter().all(|&s| s == Gf256::ZERO) {
        return Ok(Decoded {
            message: recv[..params.k].to_vec(),
            corrected: 0,
        });
    }

    let locator = error_locator(&synd);
    let n_err = locator.len() - 1;
    if n_err == 0 || n_err > params.t() {
        return Err(FecError::DecodeFailure);
    }

    // Chien search restricted to the transmitted positions.
    let mut positions = Vec::with_capacity(n_err);
    for p in 0..n {
        let x_inv = Gf256::alpha_pow(255 - (n - 1 - p) % 255);
        if eval_asc(&locator, x_inv) == Gf256::ZERO {
            positions.push(p);
        }
    }
    if positions.len() != n_err {
        return Err(FecError::DecodeFailure);
    }

    // Forney with first consecutive root α^1: e = Ω(X⁻¹) / Λ'(X⁻¹).
    let mut omega = vec![Gf256::ZERO; nsym];
    for (i, &s) in synd.iter().enumerate() {
        for (j, &l) in locator.iter().enumerate() {
            if i + j < nsym {
                omega[i + j] += s * l;
            }
        }
    }
    let derivative: Vec<Gf256> = locator
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, &c)| if i % 2 == 1 { c } else { Gf256::ZERO })
        .collect();

    let mut fixed = recv.to_vec();
    for &p in &positions {
        let x_inv = Gf256::alpha_pow(255 - (n - 1 - p) % 255);
        let denom = eval_asc(&derivative, x_inv);
        let denom_inv = denom.inv().map_err(|_| FecError::DecodeFailure)?;
        let magnitude = eval_asc(&omega, x_inv) * denom_inv;
        if magnitude == Gf256::ZERO {
            return Err(FecError::DecodeFailure);
        }
        fixed[p] += magnitude;
    }
    if syndromes(&fixed, nsym).iter().any(|&s| s != Gf256::ZERO) {
        return Err(FecError::DecodeFailure);
    }
    Ok(Decoded {
        message: fixed[..params.k].to_vec(),
        corrected: positions.len(),
    })
}
