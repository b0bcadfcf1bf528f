//! Dataset loading, synthetic data generation and client partitioning.

mod cifar;
mod idx;
mod partition;
mod synthetic;

pub use cifar::{load_cifar10, load_cifar100};
pub use idx::load_idx;
pub use partition::{
    partition, partition_with_validation, EvalSets, Partition, PartitionMode, PartitionSpec,
    VALIDATION_FRACTION,
};
pub use synthetic::generate_synthetic;

use crate::tensor::Tensor;
use crate::{Error, Result};

/// An in-memory classification dataset. Features are stored contiguously,
/// one row per example, normalized to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<f64>,
    feature_shape: Vec<usize>,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        feature_shape: Vec<usize>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        let feature_len: usize = feature_shape.iter().product();
        if feature_len == 0 {
            return Err(Error::Data("empty feature shape".into()));
        }
        if features.len() != feature_len * labels.len() {
            return Err(Error::Data(format!(
                "{} feature values do not form {} examples of {} values",
                features.len(),
                labels.len(),
                feature_len
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Dataset {
            features,
            feature_shape,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_shape(&self) -> &[usize] {
        &self.feature_shape
    }

    pub fn feature_len(&self) -> usize {
        self.feature_shape.iter().product()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        let len = self.feature_len();
        &self.features[i * len..(i + 1) * len]
    }

    /// Keep only the first `limit` examples.
    pub fn truncate(&mut self, limit: usize) {
        if limit >= self.len() {
            return;
        }
        self.labels.truncate(limit);
        self.features.truncate(limit * self.feature_len());
    }

    /// Gather the examples at `indices` into a `[batch, ..feature_shape]`
    /// tensor plus their labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let len = self.feature_len();
        let mut values = Vec::with_capacity(indices.len() * len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.feature(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.feature_shape);
        (
            Tensor::new(shape, values).expect("batch shape consistent by construction"),
            labels,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_must_match() {
        assert!(Dataset::new(vec![0.0; 6], vec![3], vec![0, 1], 2).is_ok());
        assert!(Dataset::new(vec![0.0; 5], vec![3], vec![0, 1], 2).is_err());
        assert!(Dataset::new(vec![0.0; 6], vec![3], vec![0, 2], 2).is_err());
    }

    #[test]
    fn batch_gathers_rows() {
        let ds = Dataset::new(
            vec![0.0, 0.1, 1.0, 1.1, 2.0, 2.1],
            vec![2],
            vec![0, 1, 0],
            2,
        )
        .unwrap();
        let (x, labels) = ds.batch(&[2, 0]);
        assert_eq!(x.shape(), &[2, 2]);
        assert_eq!(x.values(), &[2.0, 2.1, 0.0, 0.1]);
        assert_eq!(labels, vec![0, 0]);
    }

    #[test]
    fn truncate_keeps_prefix() {
        let mut ds = Dataset::new(
            vec![0.0, 0.1, 1.0, 1.1, 2.0, 2.1],
            vec![2],
            vec![0, 1, 0],
            2,
        )
        .unwrap();
        ds.truncate(2);
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.feature(1), &[1.0, 1.1]);
    }
}
