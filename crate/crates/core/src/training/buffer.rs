use std::collections::VecDeque;

use rand::Rng;

use super::TrainingError;
use crate::block::{ObservationBlock, SymbolBlock};

#[derive(Clone, Debug, PartialEq)]
pub struct BufferEntry {
    pub index: usize,
    pub symbols: SymbolBlock,
    pub observations: ObservationBlock,
}

/// FIFO of labeled blocks with strictly increasing block indices.
#[derive(Clone, Debug)]
pub struct PairBuffer {
    capacity: usize,
    entries: VecDeque<BufferEntry>,
}

impl PairBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "buffer capacity must be positive");
        PairBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn newest_index(&self) -> Option<usize> {
        self.entries.back().map(|e| e.index)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = &BufferEntry> {
        self.entries.iter()
    }

    /// Appends block `index`, evicting the oldest entry when full.
    pub fn push(&mut self, index: usize, symbols: SymbolBlock, observations: ObservationBlock) -> Result<(), TrainingError> {
        if let Some(newest) = self.newest_index() {
            if index <= newest {
                return Err(TrainingError::NonMonotonicIndex { index, newest });
            }
        }
        self.entries.push_back(BufferEntry {
            index,
            symbols,
            observations,
        });
        if self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
        Ok(())
    }

    /// Positions `p` such that entries `p - 1` and `p` hold consecutive blocks.
    fn query_positions(&self) -> Vec<usize> {
        (1..self.entries.len())
            .filter(|&p| self.entries[p - 1].index + 1 == self.entries[p].index)
            .collect()
    }

    pub fn pair_count(&self) -> usize {
        self.query_positions().len()
    }

    /// Uniformly draws a query block whose predecessor is stored and returns
    /// `(support, query)`.
    pub fn sample_consecutive_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(&BufferEntry, &BufferEntry), TrainingError> {
        let positions = self.query_positions();
        if positions.is_empty() {
            return Err(TrainingError::NoValidPair);
        }
        let p = positions[rng.gen_range(0..positions.len())];
        Ok((&self.entries[p - 1], &self.entries[p]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::Block;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn filled(indices: &[usize], capacity: usize) -> PairBuffer {
        let mut b = PairBuffer::new(capacity);
        for &j in indices {
            b.push(j, Block::zeros(1, 2), Block::zeros(1, 2)).unwrap();
        }
        b
    }

    #[test]
    fn push_and_evict() {
        assert_eq!(filled(&[0], 3).len(), 1);
        let b = filled(&[1, 2, 3, 4], 3);
        assert_eq!(b.indices(), vec![2, 3, 4]);
    }

    #[test]
    fn rejects_non_increasing_index() {
        let mut b = filled(&[3], 3);
        assert_eq!(
            b.push(3, Block::zeros(1, 1), Block::zeros(1, 1)),
            Err(TrainingError::NonMonotonicIndex { index: 3, newest: 3 })
        );
        assert!(b.push(1, Block::zeros(1, 1), Block::zeros(1, 1)).is_err());
    }

    #[test]
    fn pair_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = filled(&[1, 2], 5);
        let (s, q) = b.sample_consecutive_pair(&mut rng).unwrap();
        assert_eq!((s.index, q.index), (1, 2));
        let b = filled(&[1, 3, 5], 5);
        assert_eq!(b.sample_consecutive_pair(&mut rng).unwrap_err(), TrainingError::NoValidPair);
        assert_eq!(PairBuffer::new(2).sample_consecutive_pair(&mut rng).unwrap_err(), TrainingError::NoValidPair);
    }

    #[test]
    fn pair_frequencies_are_uniform() {
        let b = filled(&[1, 2, 3], 5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut first = 0usize;
        let draws = 10_000;
        for _ in 0..draws {
            let (s, q) = b.sample_consecutive_pair(&mut rng).unwrap();
            assert_eq!(q.index, s.index + 1);
            assert!(s.index == 1 || s.index == 2);
            first += (s.index == 1) as usize;
        }
        let freq = first as f64 / draws as f64;
        assert!((freq - 0.5).abs() < 0.05, "{freq}");
    }

    proptest! {
        #[test]
        fn buffer_bounded_sorted_and_pairs_consecutive(
            gaps in prop::collection::vec(1usize..3, 1..40),
            capacity in 1usize..8,
            seed in any::<u64>(),
        ) {
            let mut b = PairBuffer::new(capacity);
            let mut j = 0;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for g in gaps {
                j += g;
                b.push(j, Block::zeros(1, 1), Block::zeros(1, 1)).unwrap();
                prop_assert!(b.len() <= capacity);
                let idx = b.indices();
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
                if let Ok((s, q)) = b.sample_consecutive_pair(&mut rng) {
                    prop_assert_eq!(s.index + 1, q.index);
                }
            }
        }
    }
}
