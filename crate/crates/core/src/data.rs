//! Labelled samples in row-major storage.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n` samples of a `p`-dimensional feature vector with a label in {-1, +1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<i8>,
    dim: usize,
}

impl Dataset {
    /// Builds a dataset from row-major features.
    pub fn from_flat(features: Vec<f64>, labels: Vec<i8>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be >= 1".into()));
        }
        if labels.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a dataset needs at least 2 samples, got {}",
                labels.len()
            )));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                got: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if let Some(bad) = labels.iter().find(|&&a| a != 1 && a != -1) {
            return Err(Error::InvalidArgument(format!("label {bad} is not in {{-1, +1}}")));
        }
        Ok(Self {
            features,
            labels,
            dim,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<i8>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
        Self::from_flat(rows.concat(), labels, dim)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.dim)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn label(&self, i: usize) -> i8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&a| a == 1).count()
    }

    pub fn n_negative(&self) -> usize {
        self.len() - self.n_positive()
    }

    pub fn has_both_classes(&self) -> bool {
        let pos = self.n_positive();
        pos > 0 && pos < self.len()
    }

    /// Copies the listed samples, in order, into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::from_flat(features, labels, self.dim)
    }

    /// Splits into (train, test) with `train_fraction` of each class in the
    /// training part. Each class contributes at least one sample to both sides
    /// whenever it has two or more samples.
    pub fn stratified_split<R: Rng + ?Sized>(
        &self,
        train_fraction: f64,
        rng: &mut R,
    ) -> Result<(Self, Self)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train fraction {train_fraction} must lie in (0, 1)"
            )));
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in [1i8, -1] {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == class).collect();
            idx.shuffle(rng);
            let m = idx.len();
            let mut k = (train_fraction * m as f64).round() as usize;
            if m >= 2 {
                k = k.clamp(1, m - 1);
            }
            train.extend_from_slice(&idx[..k]);
            test.extend_from_slice(&idx[k..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train)?, self.subset(&test)?))
    }
}
