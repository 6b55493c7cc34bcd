//! Row-major embedding batches and class-membership weights.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// Maximum deviation from unit norm tolerated on an embedding row.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// `N` unit-norm embeddings of one modality, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    vectors: DMatrix<f64>,
    sample_ids: Vec<usize>,
}

impl EmbeddingBatch {
    /// Validates unit-norm rows and unique sample ids.
    pub fn new(vectors: DMatrix<f64>, sample_ids: Vec<usize>) -> Result<Self> {
        if vectors.nrows() == 0 {
            return Err(invalid!("embedding batch must contain at least one row"));
        }
        if sample_ids.len() != vectors.nrows() {
            return Err(invalid!(
                "{} sample ids for {} rows",
                sample_ids.len(),
                vectors.nrows()
            ));
        }
        for (i, row) in vectors.row_iter().enumerate() {
            let norm = row.norm();
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(invalid!("row {i} has norm {norm}, expected 1"));
            }
        }
        let mut sorted = sample_ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid!("sample ids are not unique"));
        }
        Ok(Self {
            vectors,
            sample_ids,
        })
    }

    /// Normalizes every row and numbers samples `0..N`.
    pub fn from_rows_normalized(mut vectors: DMatrix<f64>) -> Result<Self> {
        normalize_rows(&mut vectors);
        let n = vectors.nrows();
        Self::new(vectors, (0..n).collect())
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn sample_ids(&self) -> &[usize] {
        &self.sample_ids
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn into_vectors(self) -> DMatrix<f64> {
        self.vectors
    }
}

/// Scales each nonzero row to unit L2 norm. Zero rows are left untouched.
pub fn normalize_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
}

/// Soft or hard assignment of `N` samples to `k` classes.
///
/// Row `i` holds the membership of sample `i`; hard assignments are one-hot.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionWeights {
    membership: DMatrix<f64>,
    counts: Vec<f64>,
}

impl PartitionWeights {
    pub fn new(membership: DMatrix<f64>) -> Result<Self> {
        for (i, row) in membership.row_iter().enumerate() {
            if row.iter().any(|&w| !w.is_finite() || w < 0.0) {
                return Err(invalid!("membership row {i} has a negative or non-finite entry"));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(invalid!("membership row {i} sums to {total}, expected 1"));
            }
        }
        let counts = membership.column_iter().map(|c| c.sum()).collect();
        Ok(Self { membership, counts })
    }

    /// One-hot rows from integer labels in `0..k`.
    pub fn from_labels(labels: &[usize], k: usize) -> Result<Self> {
        let mut membership = DMatrix::zeros(labels.len(), k);
        for (i, &label) in labels.iter().enumerate() {
            if label >= k {
                return Err(invalid!("label {label} out of range for {k} classes"));
            }
            membership[(i, label)] = 1.0;
        }
        Self::new(membership)
    }

    pub fn membership(&self) -> &DMatrix<f64> {
        &self.membership
    }

    /// Column sums `N_j`.
    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn num_samples(&self) -> usize {
        self.membership.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.membership.ncols()
    }

    /// Same classes with the rows reordered: row `i` of the result is row `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let k = self.num_classes();
        let rows: Vec<f64> = order
            .iter()
            .flat_map(|&i| (0..k).map(move |j| (i, j)))
            .map(|(i, j)| self.membership[(i, j)])
            .collect();
        Self::new(DMatrix::from_row_slice(order.len(), k, &rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_unit_rows() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]);
        assert!(EmbeddingBatch::new(m, alloc::vec![0, 1]).is_err());
    }

    #[test]
    fn rejects_duplicate_ids() {
        let m = DMatrix::identity(2, 2);
        assert!(EmbeddingBatch::new(m, alloc::vec![3, 3]).is_err());
    }

    #[test]
    fn partition_counts_are_column_sums() {
        let p = PartitionWeights::from_labels(&[0, 2, 2, 0, 2], 3).unwrap();
        assert_eq!(p.counts(), &[2.0, 0.0, 3.0]);
    }

    #[test]
    fn partition_rejects_negative_weights() {
        let m = DMatrix::from_row_slice(1, 2, &[1.5, -0.5]);
        assert!(PartitionWeights::new(m).is_err());
    }
}
