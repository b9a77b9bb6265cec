//! Viterbi sequence detection over the `2^L`-state BPSK trellis, with branch
//! metrics either learned (ViterbiNet) or computed from known taps.
//!
//! State encoding: the state at time `i` holds the last `L` symbols, with
//! `s_i` in the least-significant digit and `s_{i-L+1}` in the most
//! significant one. Digit 0 is +1 and digit 1 is -1, so the all-guard history
//! before the block is state 0.

use crate::block::{ObservationBlock, SymbolBlock};
use crate::neural::{log_probs_batch, LabeledBatch, MlpSpec, NeuralError, ParamVector};

/// Binary trellis of memory `L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trellis {
    memory: usize,
}

impl Trellis {
    pub fn new(memory: usize) -> Self {
        assert!((1..=16).contains(&memory), "memory must be in 1..=16");
        Trellis { memory }
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn num_states(&self) -> usize {
        1 << self.memory
    }

    /// State reached from `state` after sending the symbol with `digit`.
    pub fn next(&self, state: usize, digit: usize) -> usize {
        ((state << 1) | digit) & (self.num_states() - 1)
    }

    /// Symbol sent `lag` steps before the newest one in `state`.
    pub fn symbol_at(&self, state: usize, lag: usize) -> f64 {
        digit_to_symbol((state >> lag) & 1)
    }

    /// State index of the window ending at time `i` (zero-padded before 0).
    pub fn state_of(&self, symbols: &[f64], i: usize) -> usize {
        (0..self.memory)
            .filter(|&lag| lag <= i)
            .fold(0, |acc, lag| acc | (symbol_to_digit(symbols[i - lag]) << lag))
    }
}

pub fn symbol_to_digit(s: f64) -> usize {
    usize::from(s < 0.0)
}

pub fn digit_to_symbol(d: usize) -> f64 {
    if d == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Per-time, per-state branch metrics (`B x 2^L`).
#[derive(Clone, Debug, PartialEq)]
pub struct LoglikTable {
    states: usize,
    data: Vec<f64>,
}

impl LoglikTable {
    pub fn new(states: usize, data: Vec<f64>) -> Self {
        assert!(states > 0 && data.len() % states == 0);
        LoglikTable { states, data }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.states
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.states..(i + 1) * self.states]
    }
}

/// Maximum-metric path from the zero-history state.
///
/// Ties go to the lexicographically smallest symbol sequence with +1 before
/// -1. This is exact: a backward pass computes each state's best achievable
/// suffix metric, then a forward pass takes the first symbol whose branch
/// attains it.
pub fn viterbi_detect(table: &LoglikTable, trellis: &Trellis) -> Vec<f64> {
    let n_states = trellis.num_states();
    assert_eq!(table.states(), n_states, "table width must equal state count");
    let len = table.len();
    // to_go[i][s]: best metric of times i.. given the state after time i-1 is s.
    let mut to_go = vec![0.0; (len + 1) * n_states];
    for i in (0..len).rev() {
        let row = table.row(i);
        for s in 0..n_states {
            let mut best = f64::NEG_INFINITY;
            for d in 0..2 {
                let nx = trellis.next(s, d);
                let v = row[nx] + to_go[(i + 1) * n_states + nx];
                if v > best {
                    best = v;
                }
            }
            to_go[i * n_states + s] = best;
        }
    }
    let mut out = Vec::with_capacity(len);
    let mut state = 0;
    for i in 0..len {
        let row = table.row(i);
        let target = to_go[i * n_states + state];
        let digit = (0..2)
            .find(|&d| {
                let nx = trellis.next(state, d);
                row[nx] + to_go[(i + 1) * n_states + nx] == target
            })
            .expect("one branch attains the maximum");
        state = trellis.next(state, digit);
        out.push(digit_to_symbol(digit));
    }
    out
}

/// Learned metrics `log p̂(state | y_i)`.
pub fn nn_loglik_table(spec: &MlpSpec, params: &ParamVector, y: &[f64]) -> Result<LoglikTable, NeuralError> {
    let lp = log_probs_batch(spec, params, y, y.len())?;
    Ok(LoglikTable::new(spec.output_dim(), lp))
}

/// Gaussian metrics `-(y_i - Σ_l h_l s_{i-l})² / 2σ²` from known taps;
/// symbols before the block start count as zero.
pub fn true_loglik_table(taps: &[f64], sigma: f64, y: &[f64]) -> LoglikTable {
    assert!(sigma > 0.0, "sigma must be positive");
    let trellis = Trellis::new(taps.len());
    let n_states = trellis.num_states();
    let scale = 1.0 / (2.0 * sigma * sigma);
    let mut data = Vec::with_capacity(y.len() * n_states);
    for (i, &yi) in y.iter().enumerate() {
        for s in 0..n_states {
            let mean: f64 = taps
                .iter()
                .enumerate()
                .take(i + 1)
                .map(|(lag, h)| h * trellis.symbol_at(s, lag))
                .sum();
            data.push(-(yi - mean).powi(2) * scale);
        }
    }
    LoglikTable::new(n_states, data)
}

/// One example per time index: input `y_i`, label the state index of the
/// window ending at `i`.
pub fn viterbinet_training_batch(
    symbols: &SymbolBlock,
    observations: &ObservationBlock,
    memory: usize,
) -> LabeledBatch {
    let s = symbols.row(0);
    let y = observations.row(0);
    assert_eq!(s.len(), y.len(), "symbol and observation lengths differ");
    let trellis = Trellis::new(memory);
    let labels = (0..s.len()).map(|i| trellis.state_of(s, i)).collect();
    LabeledBatch::new(1, y.to_vec(), labels).expect("one scalar input per label")
}

/// A ViterbiNet receiver: trellis plus the learned metric network.
#[derive(Clone, Debug, PartialEq)]
pub struct ViterbiNet {
    pub trellis: Trellis,
    pub spec: MlpSpec,
    pub params: ParamVector,
}

impl ViterbiNet {
    /// `1 -> 100 -> 50 -> 2^L` classifier.
    pub fn spec_for(memory: usize) -> MlpSpec {
        MlpSpec::three_layer(1, 1 << memory)
    }

    pub fn new(memory: usize, params: ParamVector) -> Self {
        ViterbiNet {
            trellis: Trellis::new(memory),
            spec: Self::spec_for(memory),
            params,
        }
    }

    pub fn detect(&self, y: &[f64]) -> Vec<f64> {
        let table = nn_loglik_table(&self.spec, &self.params, y).expect("params match spec");
        viterbi_detect(&table, &self.trellis)
    }
}

/// Viterbi equalizer with perfect channel knowledge.
pub fn viterbi_csi_detect(taps: &[f64], sigma: f64, y: &[f64]) -> Vec<f64> {
    viterbi_detect(&true_loglik_table(taps, sigma, y), &Trellis::new(taps.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::Block;
    use crate::channel::convolve;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_sequences(len: usize) -> impl Iterator<Item = Vec<f64>> {
        (0..1usize << len).map(move |m| (0..len).map(|i| digit_to_symbol((m >> i) & 1)).collect())
    }

    fn path_metric(table: &LoglikTable, trellis: &Trellis, seq: &[f64]) -> f64 {
        (0..seq.len()).map(|i| table.row(i)[trellis.state_of(seq, i)]).sum()
    }

    #[test]
    fn trellis_is_regular() {
        let t = Trellis::new(3);
        let mut incoming = vec![0; 8];
        for s in 0..8 {
            for d in 0..2 {
                incoming[t.next(s, d)] += 1;
            }
        }
        assert!(incoming.iter().all(|&c| c == 2));
        let seq = [1.0, -1.0, -1.0, 1.0];
        assert_eq!(t.state_of(&seq, 0), 0);
        assert_eq!(t.state_of(&seq, 2), 0b011);
        assert_eq!(t.state_of(&seq, 3), 0b110);
    }

    #[test]
    fn memoryless_is_pointwise_argmax() {
        let table = LoglikTable::new(2, vec![0.1, 0.5, 0.9, -1.0, -2.0, -1.5]);
        assert_eq!(viterbi_detect(&table, &Trellis::new(1)), vec![-1.0, 1.0, -1.0]);
    }

    #[test]
    fn constant_table_ties_to_plus_one() {
        let table = LoglikTable::new(4, vec![0.0; 4 * 7]);
        assert_eq!(viterbi_detect(&table, &Trellis::new(2)), vec![1.0; 7]);
    }

    #[test]
    fn matches_brute_force_on_random_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let trellis = Trellis::new(2);
        for _ in 0..50 {
            let data: Vec<f64> = (0..6 * 4).map(|_| rng.gen_range(-3.0..0.0)).collect();
            let table = LoglikTable::new(4, data);
            let best = all_sequences(6)
                .max_by(|a, b| {
                    path_metric(&table, &trellis, a)
                        .partial_cmp(&path_metric(&table, &trellis, b))
                        .unwrap()
                })
                .unwrap();
            assert_eq!(viterbi_detect(&table, &trellis), best);
        }
    }

    #[test]
    fn row_offsets_do_not_change_decision() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let trellis = Trellis::new(3);
        let data: Vec<f64> = (0..10 * 8).map(|_| rng.gen_range(-3.0..0.0)).collect();
        let table = LoglikTable::new(8, data.clone());
        let shifted: Vec<f64> = data
            .chunks(8)
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |v| v + 0.37 * i as f64 - 1.0).collect::<Vec<_>>())
            .collect();
        assert_eq!(
            viterbi_detect(&table, &trellis),
            viterbi_detect(&LoglikTable::new(8, shifted), &trellis)
        );
    }

    #[test]
    fn true_metrics_prefer_matching_symbol() {
        let t = true_loglik_table(&[1.0], 0.5, &[1.0]);
        assert!(t.row(0)[0] > t.row(0)[1]);
    }

    #[test]
    fn csi_detection_inverts_noiseless_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let taps = [1.0, 0.8, 0.64, 0.51];
        let s: Vec<f64> = (0..136).map(|_| if rng.gen() { 1.0 } else { -1.0 }).collect();
        let y = convolve(&s, &taps);
        assert_eq!(viterbi_csi_detect(&taps, 1e-3, &y), s);
        // Sigma only rescales metrics.
        assert_eq!(viterbi_csi_detect(&taps, 7.0, &y), s);
    }

    #[test]
    fn zero_network_gives_uniform_table() {
        let spec = ViterbiNet::spec_for(4);
        let p = ParamVector::zeros(spec.param_count());
        let y: Vec<f64> = (0..136).map(|i| (i as f64).sin()).collect();
        let t = nn_loglik_table(&spec, &p, &y).unwrap();
        assert_eq!((t.len(), t.states()), (136, 16));
        assert!(t.row(17).iter().all(|v| (v - (1.0f64 / 16.0).ln()).abs() < 1e-12));
    }

    #[test]
    fn training_batch_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s: Vec<f64> = (0..136).map(|_| if rng.gen() { 1.0 } else { -1.0 }).collect();
        let y: Vec<f64> = s.iter().map(|v| v * 0.9).collect();
        let batch = viterbinet_training_batch(&Block::row_vector(s.clone()), &Block::row_vector(y), 4);
        assert_eq!(batch.len(), 136);
        assert!(batch.labels().iter().all(|&l| l < 16));
        assert_eq!(batch.labels()[0], symbol_to_digit(s[0]));
    }
}
