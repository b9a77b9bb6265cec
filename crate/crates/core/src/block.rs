/// Dense row-major real matrix holding one coherence block.
///
/// Rows index users (symbols) or receive antennas (observations); columns
/// index time within the block.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Transmitted symbols, `K x B`.
pub type SymbolBlock = Block;
/// Channel outputs, `N x B`.
pub type ObservationBlock = Block;

impl Block {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Block {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a block from row-major data. Panics if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "block data length");
        Block { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Block {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// A single-row block.
    pub fn row_vector(values: Vec<f64>) -> Self {
        Block {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Column `c` copied out (one time instant across rows).
    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Blocks with equal row counts placed side by side in time.
    pub fn hconcat(blocks: &[Block]) -> Block {
        let rows = blocks.first().map_or(0, |b| b.rows);
        assert!(blocks.iter().all(|b| b.rows == rows), "row counts differ");
        let merged: Vec<Vec<f64>> = (0..rows)
            .map(|r| blocks.iter().flat_map(|b| b.row(r).iter().copied()).collect())
            .collect();
        let cols = blocks.iter().map(|b| b.cols).sum();
        if rows == 0 {
            return Block::zeros(0, cols);
        }
        Block::from_rows(&merged)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hconcat_joins_in_time() {
        let a = Block::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Block::from_rows(&[vec![5.0], vec![6.0]]);
        let c = Block::hconcat(&[a, b]);
        assert_eq!((c.rows(), c.cols()), (2, 3));
        assert_eq!(c.row(1), &[3.0, 4.0, 6.0]);
    }
}
