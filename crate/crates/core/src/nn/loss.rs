use std::fmt;

use serde::{Deserialize, Serialize};

use super::layer::{activation_backward, Activation};
use super::Matrix;
use crate::error::{Error, Result};

/// Lower bound applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Per-example mean over output coordinates of the squared error.
    Mse,
    /// Negative log-likelihood of (one-hot or soft) targets under a softmax output.
    CrossEntropy,
    /// Negative evidence lower bound of a variational autoencoder.
    VaeElbo,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::VaeElbo => "vae_elbo",
        })
    }
}

/// Per-example losses and `dL_i/dz` for the final layer of a plain network.
pub(crate) fn output_loss_and_delta(
    kind: LossKind,
    act: Activation,
    output: &Matrix,
    targets: &Matrix,
) -> Result<(Vec<f64>, Matrix)> {
    if targets.shape() != output.shape() {
        return Err(Error::Dimension(format!(
            "targets are {}x{}, outputs are {}x{}",
            targets.rows(),
            targets.cols(),
            output.rows(),
            output.cols()
        )));
    }
    let n = output.rows();
    let d = output.cols() as f64;
    match kind {
        LossKind::Mse => {
            let mut losses = Vec::with_capacity(n);
            let mut grad = Matrix::zeros(output.rows(), output.cols());
            for i in 0..n {
                let (y, t) = (output.row(i), targets.row(i));
                let mut l = 0.0;
                for (g, (a, b)) in grad.row_mut(i).iter_mut().zip(y.iter().zip(t)) {
                    let e = a - b;
                    l += e * e;
                    *g = 2.0 * e / d;
                }
                losses.push(l / d);
            }
            Ok((losses, activation_backward(act, output, &grad)))
        }
        LossKind::CrossEntropy => {
            if act != Activation::Softmax {
                return Err(Error::Config("cross-entropy requires a softmax output layer".into()));
            }
            let mut losses = Vec::with_capacity(n);
            let mut dz = Matrix::zeros(output.rows(), output.cols());
            for i in 0..n {
                let (p, t) = (output.row(i), targets.row(i));
                let mut l = 0.0;
                // mass of the targets whose probability is above the floor
                let mut active = 0.0;
                for (pk, tk) in p.iter().zip(t) {
                    if *tk != 0.0 {
                        l -= tk * pk.max(PROB_FLOOR).ln();
                        if *pk > PROB_FLOOR {
                            active += tk;
                        }
                    }
                }
                for (j, g) in dz.row_mut(i).iter_mut().enumerate() {
                    let own = if p[j] > PROB_FLOOR { t[j] } else { 0.0 };
                    *g = p[j] * active - own;
                }
                losses.push(l);
            }
            Ok((losses, dz))
        }
        LossKind::VaeElbo => Err(Error::Config("vae_elbo is evaluated by the VAE model".into())),
    }
}

/// `KL(N(mu, exp(logvar)) || N(0, 1))` summed over latent coordinates.
pub fn gaussian_kl(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter().zip(logvar).map(|(m, lv)| -0.5 * (1.0 + lv - m * m - lv.exp())).sum()
}

/// One-hot encodes class labels.
pub fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        m.set(i, l, 1.0);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::activate;

    #[test]
    fn uniform_softmax_cross_entropy_is_ln_ten() {
        let mut out = Matrix::zeros(3, 10);
        activate(Activation::Softmax, &mut out);
        let t = one_hot(&[0, 4, 9], 10);
        let (losses, _) = output_loss_and_delta(LossKind::CrossEntropy, Activation::Softmax, &out, &t).unwrap();
        for l in losses {
            assert!((l - 10f64.ln()).abs() < 1e-12);
            assert!((l - 2.302585).abs() < 1e-6);
        }
    }

    #[test]
    fn mse_of_exact_targets_is_zero() {
        let y = Matrix::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let (losses, dz) = output_loss_and_delta(LossKind::Mse, Activation::Identity, &y, &y).unwrap();
        assert_eq!(losses, vec![0.0, 0.0]);
        assert!(dz.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn cross_entropy_requires_softmax() {
        let y = Matrix::filled(1, 2, 0.5);
        assert!(output_loss_and_delta(LossKind::CrossEntropy, Activation::Sigmoid, &y, &y).is_err());
    }

    #[test]
    fn underflowing_probability_is_floored() {
        let p = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let t = one_hot(&[1], 2);
        let (losses, _) = output_loss_and_delta(LossKind::CrossEntropy, Activation::Softmax, &p, &t).unwrap();
        assert!((losses[0] - (-PROB_FLOOR.ln())).abs() < 1e-9);
        assert!(losses[0].is_finite());
    }

    #[test]
    fn standard_normal_kl_is_zero() {
        assert_eq!(gaussian_kl(&[0.0; 5], &[0.0; 5]), 0.0);
        assert!(gaussian_kl(&[1.0], &[0.0]) > 0.0);
    }
}
