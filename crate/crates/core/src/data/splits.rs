use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tabular::Normalization;
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Features with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Labeled {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Dimension(format!("{} rows but {} labels", features.rows(), labels.len())));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self { features: self.features.select_rows(idx), labels: idx.iter().map(|&i| self.labels[i]).collect() }
    }

    /// Seeded uniform subsample of `n` rows (all rows if `n ≥ len`).
    pub fn subsample(&self, n: usize, seed: u64) -> Self {
        if n >= self.len() {
            return self.clone();
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(n);
        idx.sort_unstable();
        self.select(&idx)
    }

    pub fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut c = vec![0; n_classes];
        for &l in &self.labels {
            if l < n_classes {
                c[l] += 1;
            }
        }
        c
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPolicy {
    pub public_fraction_of_test: f64,
    pub seed: u64,
}

impl SplitPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.public_fraction_of_test > 0.0 && self.public_fraction_of_test < 1.0) {
            return Err(Error::Config(format!("public fraction {} must lie in (0, 1)", self.public_fraction_of_test)));
        }
        Ok(())
    }
}

/// Private training data, public data and the held-out test set, plus the
/// original test-set indices behind the public/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub private: Labeled,
    pub public: Labeled,
    pub test: Labeled,
    pub normalization: Normalization,
    pub public_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl DatasetBundle {
    pub fn feature_dim(&self) -> usize {
        self.private.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.private.n_classes().max(self.public.n_classes()).max(self.test.n_classes())
    }
}

/// Private = the whole training set; public and test come from a seeded
/// shuffle of the original test set, `floor(fraction · n)` rows going public.
pub fn make_splits(name: &str, train: Labeled, test_set: Labeled, normalization: Normalization, policy: SplitPolicy) -> Result<DatasetBundle> {
    policy.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData("training set is empty".into()));
    }
    if train.features.cols() != test_set.features.cols() {
        return Err(Error::Dimension(format!(
            "training rows have {} features, test rows {}",
            train.features.cols(),
            test_set.features.cols()
        )));
    }
    let n = test_set.len();
    let n_public = (policy.public_fraction_of_test * n as f64).floor() as usize;
    if n_public == 0 || n_public == n {
        return Err(Error::InsufficientData(format!("a {n}-row test set cannot be split at {}", policy.public_fraction_of_test)));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(policy.seed));
    let test_indices = idx.split_off(n_public);
    let public_indices = idx;
    Ok(DatasetBundle {
        name: name.to_string(),
        public: test_set.select(&public_indices),
        test: test_set.select(&test_indices),
        private: train,
        normalization,
        public_indices,
        test_indices,
    })
}
