//! Dataset loading (IDX images, schema-driven CSV), scaling and splits.

mod idx;
mod splits;
pub mod synthetic;
mod tabular;

pub use idx::{encode_idx_images, encode_idx_labels, load_idx, load_mnist, parse_idx_images, parse_idx_labels, IMAGES_MAGIC, LABELS_MAGIC};
pub use splits::{make_splits, DatasetBundle, Labeled, SplitPolicy};
pub use tabular::{load_csv, read_csv, ColumnKind, ColumnSpec, CsvSchema, CsvTable, Normalization, UnknownCategory};

use std::path::Path;

use crate::error::Result;

/// MNIST with the 90/10 public/held-out split of the test set. Pixels are
/// already in `[0, 1]`, so the stored normalization is the identity.
pub fn mnist_bundle(dir: impl AsRef<Path>, seed: u64) -> Result<DatasetBundle> {
    let ((xtr, ytr), (xte, yte)) = load_mnist(dir)?;
    let cols = xtr.cols();
    make_splits(
        "mnist",
        Labeled::new(xtr, ytr)?,
        Labeled::new(xte, yte)?,
        Normalization::identity(cols),
        SplitPolicy { public_fraction_of_test: 0.9, seed },
    )
}

/// A tabular dataset from a training and a test CSV, scaled with training
/// statistics, with the test set split evenly into public and held-out halves.
pub fn csv_bundle(name: &str, train: impl AsRef<Path>, test: impl AsRef<Path>, schema: &CsvSchema, seed: u64) -> Result<DatasetBundle> {
    let tr = read_csv(train, schema)?;
    let te = read_csv(test, schema)?;
    let norm = Normalization::fit(&tr.features)?;
    make_splits(
        name,
        Labeled::new(norm.normalize(&tr.features)?, tr.labels)?,
        Labeled::new(norm.normalize(&te.features)?, te.labels)?,
        norm,
        SplitPolicy { public_fraction_of_test: 0.5, seed },
    )
}
