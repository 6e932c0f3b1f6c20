//! Dataset invariants.

use std::path::Path;

use dpgen::data::{load_mnist, make_splits, Labeled, Normalization, SplitPolicy};
use dpgen::nn::Matrix;
use proptest::prelude::*;

proptest! {
    #[test]
    fn normalization_round_trips(rows in 2usize..8, cols in 1usize..5, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1e3..1e3)).collect();
        let x = Matrix::from_vec(rows, cols, data).unwrap();
        let n = Normalization::fit(&x).unwrap();
        let z = n.normalize(&x).unwrap();
        prop_assert!(z.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        let back = n.denormalize(&z).unwrap();
        for (a, b) in back.as_slice().iter().zip(x.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn splits_partition_the_test_set(n in 2usize..300, frac in 0.01f64..0.99, seed in any::<u64>()) {
        let n_public = (frac * n as f64).floor() as usize;
        prop_assume!(n_public > 0 && n_public < n);
        let test = Labeled::new(Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap(), vec![0; n]).unwrap();
        let train = Labeled::new(Matrix::zeros(3, 1), vec![0; 3]).unwrap();
        let b = make_splits("t", train, test, Normalization::identity(1), SplitPolicy { public_fraction_of_test: frac, seed }).unwrap();
        prop_assert_eq!(b.public.len(), n_public);
        let mut all: Vec<usize> = b.public_indices.iter().chain(&b.test_indices).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        for (row, &i) in b.public.features.iter_rows().zip(&b.public_indices) {
            prop_assert_eq!(row[0], i as f64);
        }
    }
}

#[test]
fn mnist_files_when_present() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    if !dir.join("train-images-idx3-ubyte").exists() {
        eprintln!("MNIST not found under {}, skipping", dir.display());
        return;
    }
    let ((xtr, ytr), (xte, yte)) = load_mnist(&dir).unwrap();
    assert_eq!((xtr.rows(), xtr.cols()), (60000, 784));
    assert_eq!((xte.rows(), yte.len()), (10000, 10000));
    assert_eq!(ytr.len(), 60000);
    assert!(xtr.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
}
