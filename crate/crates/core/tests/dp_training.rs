//! DP-SGD against reference loops and sampling statistics.

use dpgen::dp::{noisy_mean, poisson_batch, train_dp, DpSgdConfig, Optimizer};
use dpgen::nn::{init_network, one_hot, LayerSpec, LossKind, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn regression_data(n: usize, seed: u64) -> (Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    (Matrix::from_vec(n, 3, x).unwrap(), Matrix::from_vec(n, 2, t).unwrap())
}

/// Minibatch SGD on a linear least-squares model written out by hand:
/// per-example loss `mean_k (y_k − t_k)²`, step `θ -= η · Σ_batch ∇ / B`.
fn oracle_sgd(x: &Matrix, t: &Matrix, mut w: Vec<Vec<f64>>, mut b: Vec<f64>, cfg: &DpSgdConfig) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = x.rows();
    let q = cfg.batch_size as f64 / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps = cfg.epochs * n.div_ceil(cfg.batch_size);
    let m = b.len();
    for _ in 0..steps {
        let idx = poisson_batch(n, q, &mut rng);
        let mut gw = vec![vec![0.0; m]; w.len()];
        let mut gb = vec![0.0; m];
        for &i in &idx {
            let xi = x.row(i);
            for k in 0..m {
                let y: f64 = b[k] + (0..xi.len()).map(|j| xi[j] * w[j][k]).sum::<f64>();
                let d = 2.0 * (y - t.row(i)[k]) / m as f64;
                gb[k] += d;
                for j in 0..xi.len() {
                    gw[j][k] += xi[j] * d;
                }
            }
        }
        let scale = cfg.learning_rate / cfg.batch_size as f64;
        for k in 0..m {
            b[k] -= scale * gb[k];
            for j in 0..w.len() {
                w[j][k] -= scale * gw[j][k];
            }
        }
    }
    (w, b)
}

#[test]
fn non_private_mode_matches_plain_sgd_for_100_steps() {
    let (x, t) = regression_data(20, 1);
    let net = init_network(&[LayerSpec::identity(3, 2)], 4).unwrap();
    let cfg = DpSgdConfig {
        clip_norm: f64::INFINITY,
        noise_multiplier: 0.0,
        batch_size: 5,
        learning_rate: 0.05,
        epochs: 25,
        seed: 9,
        optimizer: Optimizer::Sgd,
    };
    let w0: Vec<Vec<f64>> = net.weights()[0].iter_rows().map(|r| r.to_vec()).collect();
    let (w, b) = oracle_sgd(&x, &t, w0, net.biases()[0].clone(), &cfg);
    let out = train_dp(net, &x, &t, LossKind::Mse, &cfg, 1e-5).unwrap();
    assert_eq!(out.accountant.steps, 100);
    assert!(out.spent.epsilon.is_infinite());
    let trained = &out.model;
    for (j, row) in trained.weights()[0].iter_rows().enumerate() {
        for k in 0..2 {
            assert!((row[k] - w[j][k]).abs() <= 1e-10, "w[{j}][{k}] {} vs {}", row[k], w[j][k]);
        }
    }
    for k in 0..2 {
        assert!((trained.biases()[0][k] - b[k]).abs() <= 1e-10);
    }
}

#[test]
fn unit_noise_has_unit_variance() {
    let n = 100_000;
    let draws: Vec<f64> = (0..n).map(|s| noisy_mean(&[vec![0.0]], 1.0, 1.0, 1, s as u64)[0]).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (2.0 / (n - 1) as f64).sqrt();
    assert!((var - 1.0).abs() <= 3.0 * se, "variance {var}, se {se}");
}

fn blobs(n: usize, seed: u64) -> (Matrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let centre = if c == 0 { -1.0 } else { 1.0 };
        data.push(centre + 0.3 * rng.random_range(-1.0..1.0));
        data.push(centre + 0.3 * rng.random_range(-1.0..1.0));
        labels.push(c);
    }
    (Matrix::from_vec(n, 2, data).unwrap(), labels)
}

#[test]
fn private_training_reduces_loss_on_blobs() {
    let (x, y) = blobs(200, 2);
    let net = init_network(&[LayerSpec::sigmoid(2, 8), LayerSpec::softmax(8, 2)], 1).unwrap();
    let cfg = DpSgdConfig { clip_norm: 1.0, noise_multiplier: 1.0, batch_size: 20, learning_rate: 0.5, epochs: 5, seed: 3, optimizer: Optimizer::Sgd };
    let out = train_dp(net, &x, &one_hot(&y, 2), LossKind::CrossEntropy, &cfg, 1e-5).unwrap();
    let l = &out.epoch_losses;
    assert_eq!(l.len(), 5);
    assert!(l[4] < l[0], "losses {l:?}");
    assert!(out.spent.epsilon.is_finite() && out.spent.epsilon > 0.0);
}

#[test]
fn update_rule_does_not_change_accounting() {
    let (x, y) = blobs(100, 5);
    let net = init_network(&[LayerSpec::softmax(2, 2)], 1).unwrap();
    let cfg = DpSgdConfig { clip_norm: 1.0, noise_multiplier: 1.1, batch_size: 10, learning_rate: 0.05, epochs: 3, seed: 3, optimizer: Optimizer::Sgd };
    let t = one_hot(&y, 2);
    let sgd = train_dp(net.clone(), &x, &t, LossKind::CrossEntropy, &cfg, 1e-5).unwrap();
    let adam = train_dp(net, &x, &t, LossKind::CrossEntropy, &DpSgdConfig { optimizer: Optimizer::Adam, ..cfg }, 1e-5).unwrap();
    assert_eq!(sgd.accountant, adam.accountant);
    assert_eq!(sgd.spent, adam.spent);
    assert_ne!(sgd.model, adam.model);
}
