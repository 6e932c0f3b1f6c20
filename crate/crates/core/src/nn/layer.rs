use serde::{Deserialize, Serialize};

use super::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Relu,
    Identity,
    Softmax,
}

/// One fully connected layer: `in_dim -> out_dim` followed by `activation`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub const fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self { in_dim, out_dim, activation }
    }

    pub const fn sigmoid(in_dim: usize, out_dim: usize) -> Self {
        Self::new(in_dim, out_dim, Activation::Sigmoid)
    }

    pub const fn relu(in_dim: usize, out_dim: usize) -> Self {
        Self::new(in_dim, out_dim, Activation::Relu)
    }

    pub const fn identity(in_dim: usize, out_dim: usize) -> Self {
        Self::new(in_dim, out_dim, Activation::Identity)
    }

    pub const fn softmax(in_dim: usize, out_dim: usize) -> Self {
        Self::new(in_dim, out_dim, Activation::Softmax)
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Applies `act` in place to a matrix of pre-activations.
pub(crate) fn activate(act: Activation, z: &mut Matrix) {
    match act {
        Activation::Identity => {}
        Activation::Sigmoid => z.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid(*v)),
        Activation::Relu => z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Softmax => {
            for r in 0..z.rows() {
                let row = z.row_mut(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                row.iter_mut().for_each(|v| *v /= sum);
            }
        }
    }
}

/// Maps `dL/dy` to `dL/dz` given the layer output `y = act(z)`.
pub(crate) fn activation_backward(act: Activation, y: &Matrix, grad_y: &Matrix) -> Matrix {
    debug_assert_eq!(y.shape(), grad_y.shape());
    let mut out = grad_y.clone();
    match act {
        Activation::Identity => {}
        Activation::Sigmoid => {
            for (o, &y) in out.as_mut_slice().iter_mut().zip(y.as_slice()) {
                *o *= y * (1.0 - y);
            }
        }
        Activation::Relu => {
            for (o, &y) in out.as_mut_slice().iter_mut().zip(y.as_slice()) {
                if y <= 0.0 {
                    *o = 0.0;
                }
            }
        }
        Activation::Softmax => {
            for r in 0..y.rows() {
                let yr = y.row(r);
                let gr = grad_y.row(r);
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                    *o = yr[c] * (gr[c] - dot);
                }
            }
        }
    }
    out
}
