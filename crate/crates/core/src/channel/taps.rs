//! Per-block tap profiles: synthetic oscillating taps, i.i.d. random taps and
//! CSV trace ingestion.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ChannelError;

/// Channel taps for every block: `taps[l][j]` is tap `l` of block `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct TapProfile {
    memory: usize,
    blocks: usize,
    // Row-major L x J.
    taps: Vec<f64>,
}

impl TapProfile {
    /// Builds a profile from `L` rows of `J` values each.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ChannelError> {
        let memory = rows.len();
        let blocks = rows.first().map_or(0, Vec::len);
        if memory == 0 || blocks == 0 {
            return Err(ChannelError::EmptyProfile);
        }
        let mut taps = Vec::with_capacity(memory * blocks);
        for row in &rows {
            if row.len() != blocks {
                return Err(ChannelError::DimensionMismatch {
                    expected: blocks,
                    actual: row.len(),
                });
            }
            if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
                return Err(ChannelError::NonFinite(*bad));
            }
            taps.extend_from_slice(row);
        }
        Ok(TapProfile {
            memory,
            blocks,
            taps,
        })
    }

    /// Channel memory `L`.
    pub fn memory(&self) -> usize {
        self.memory
    }

    /// Number of blocks `J`.
    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn tap(&self, l: usize, j: usize) -> f64 {
        self.taps[l * self.blocks + j]
    }

    /// The tap vector `h_j`. Indices past the end wrap around so short traces
    /// can drive long runs.
    pub fn block_taps(&self, j: usize) -> Vec<f64> {
        let j = j % self.blocks;
        (0..self.memory).map(|l| self.tap(l, j)).collect()
    }
}

/// One oscillating tap: `a * (0.8 + 0.2 cos(2πj / P + ψ))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TapSpec {
    pub amplitude: f64,
    /// Period in blocks; `f64::INFINITY` gives a constant tap.
    pub period: f64,
    pub phase: f64,
}

impl TapSpec {
    pub fn value(&self, j: usize) -> f64 {
        let angle = if self.period.is_infinite() {
            0.0
        } else {
            2.0 * PI * j as f64 / self.period
        };
        self.amplitude * (0.8 + 0.2 * (angle + self.phase).cos())
    }
}

/// Deterministic synthetic profile, one row per tap spec.
pub fn synth_tap_profile(specs: &[TapSpec], blocks: usize) -> Result<TapProfile, ChannelError> {
    if let Some(s) = specs.iter().find(|s| !(s.period > 0.0)) {
        return Err(ChannelError::InvalidPeriod(s.period));
    }
    let rows = specs
        .iter()
        .map(|s| (0..blocks).map(|j| s.value(j)).collect())
        .collect();
    TapProfile::from_rows(rows)
}

/// Decaying amplitudes `0.8^l`.
pub fn default_amplitudes(memory: usize) -> Vec<f64> {
    (0..memory).map(|l| 0.8f64.powi(l as i32)).collect()
}

const TRAIN_PERIODS: [f64; 6] = [400.0, 300.0, 250.0, 200.0, 170.0, 150.0];
const TEST_PERIODS: [f64; 6] = [37.0, 27.0, 19.0, 14.0, 11.0, 9.0];

fn periodic_specs(memory: usize, periods: &[f64], phase_step: f64) -> Vec<TapSpec> {
    default_amplitudes(memory)
        .into_iter()
        .enumerate()
        .map(|(l, amplitude)| TapSpec {
            amplitude,
            period: periods[l % periods.len()],
            phase: phase_step * l as f64,
        })
        .collect()
}

/// Tap specs for the pilot (training) phase.
pub fn train_tap_specs(memory: usize) -> Vec<TapSpec> {
    periodic_specs(memory, &TRAIN_PERIODS, 0.0)
}

/// Tap specs for the data (test) phase; periods differ from the training set.
pub fn test_tap_specs(memory: usize) -> Vec<TapSpec> {
    periodic_specs(memory, &TEST_PERIODS, PI / 3.0)
}

/// Unstructured profile: every tap of every block drawn independently from
/// `a_l * U[0.6, 1.0]`, the same range the oscillating profile covers.
pub fn random_tap_profile<R: Rng + ?Sized>(
    memory: usize,
    blocks: usize,
    rng: &mut R,
) -> Result<TapProfile, ChannelError> {
    let rows = default_amplitudes(memory)
        .into_iter()
        .map(|a| (0..blocks).map(|_| a * rng.gen_range(0.6..=1.0)).collect())
        .collect();
    TapProfile::from_rows(rows)
}

/// Reads a tap trace: one block per row, one tap per column, no header.
pub fn load_tap_trace(path: impl AsRef<Path>) -> Result<TapProfile, ChannelError> {
    let mut text = String::new();
    File::open(path.as_ref())?.read_to_string(&mut text)?;
    parse_tap_trace(&text)
}

/// Parses tap-trace CSV text. See [`load_tap_trace`].
pub fn parse_tap_trace(text: &str) -> Result<TapProfile, ChannelError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut by_block: Vec<Vec<f64>> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ChannelError::Parse {
            row: row + 1,
            column: 0,
            message: e.to_string(),
        })?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let mut values = Vec::with_capacity(record.len());
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| ChannelError::Parse {
                row: row + 1,
                column: col + 1,
                message: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(ChannelError::Parse {
                    row: row + 1,
                    column: col + 1,
                    message: "non-finite value".into(),
                });
            }
            values.push(v);
        }
        if let Some(first) = by_block.first() {
            if first.len() != values.len() {
                return Err(ChannelError::Parse {
                    row: row + 1,
                    column: values.len().min(first.len()) + 1,
                    message: format!("expected {} columns, found {}", first.len(), values.len()),
                });
            }
        }
        by_block.push(values);
    }
    if by_block.is_empty() {
        return Err(ChannelError::Parse {
            row: 0,
            column: 0,
            message: "empty trace".into(),
        });
    }
    let memory = by_block[0].len();
    let rows = (0..memory)
        .map(|l| by_block.iter().map(|b| b[l]).collect())
        .collect();
    TapProfile::from_rows(rows)
}

/// Writes a profile in the trace format read by [`load_tap_trace`].
/// Values use the shortest round-trip representation, so reloading is exact.
pub fn save_tap_trace(profile: &TapProfile, path: impl AsRef<Path>) -> Result<(), ChannelError> {
    let mut file = File::create(path.as_ref())?;
    file.write_all(format_tap_trace(profile).as_bytes())?;
    Ok(())
}

pub fn format_tap_trace(profile: &TapProfile) -> String {
    let mut out = String::new();
    for j in 0..profile.blocks() {
        let row: Vec<String> = (0..profile.memory())
            .map(|l| format!("{}", profile.tap(l, j)))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
