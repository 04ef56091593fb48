//! Datasets for owners, consumer validation/test sets and the public
//! distillation pool.

mod blobs;
mod idx;
mod partition;

pub use blobs::gen_blobs;
pub use idx::{load_idx, parse_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use partition::{build_market_partition, ConsumerShards, MarketPartition, OwnerShard, PartitionSpec};

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::{ClassId, LabelSet};

/// Feature matrix (one sample per row) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<ClassId>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<ClassId>, num_classes: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!("{} feature rows but {} labels", features.nrows(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Shape(format!("label {bad} outside 0..{num_classes}")));
        }
        Ok(Self { features, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    /// Classes that actually occur.
    pub fn label_set(&self) -> LabelSet {
        self.labels.iter().copied().collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Samples whose label is in `keep`.
    pub fn filter_labels(&self, keep: &LabelSet) -> Self {
        let rows: Vec<usize> = (0..self.len()).filter(|&r| keep.contains(&self.labels[r])).collect();
        self.subset(&rows)
    }

    /// Row-wise concatenation. All parts must share dimension and K.
    pub fn concat(parts: &[&LabeledDataset]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyDataset("concat input"))?;
        if parts.iter().any(|p| p.dim() != first.dim() || p.num_classes != first.num_classes) {
            return Err(Error::Shape("concatenating datasets of different shapes".into()));
        }
        let views: Vec<_> = parts.iter().map(|p| p.features.view()).collect();
        let features = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
        let labels = parts.iter().flat_map(|p| p.labels.iter().copied()).collect();
        Ok(Self { features, labels, num_classes: first.num_classes })
    }

    pub fn strip_labels(&self) -> UnlabeledDataset {
        UnlabeledDataset { features: self.features.clone() }
    }
}

/// Feature vectors without labels.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    features: Array2<f64>,
}

impl UnlabeledDataset {
    pub fn new(features: Array2<f64>) -> Self {
        Self { features }
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn validates_labels_and_rows() {
        assert!(LabeledDataset::new(array![[0.0], [1.0]], vec![0], 2).is_err());
        assert!(LabeledDataset::new(array![[0.0]], vec![2], 2).is_err());
    }

    #[test]
    fn filter_and_concat() {
        let d = LabeledDataset::new(array![[0.0], [1.0], [2.0]], vec![0, 1, 2], 3).unwrap();
        let f = d.filter_labels(&LabelSet::from([0, 2]));
        assert_eq!(f.labels(), &[0, 2]);
        assert_eq!(f.features(), &array![[0.0], [2.0]]);
        let c = LabeledDataset::concat(&[&d, &f]).unwrap();
        assert_eq!(c.len(), 5);
        assert_eq!(c.class_counts(), vec![2, 1, 2]);
    }
}
