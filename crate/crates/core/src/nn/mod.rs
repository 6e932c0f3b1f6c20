//! Dense feed-forward networks with per-example backpropagation.
//!
//! Every trainable model exposes its gradients as a list of [`LayerTrace`]s:
//! for a dense layer the per-example weight gradient is the outer product
//! `a_i ⊗ δ_i` of the layer input and the pre-activation delta, and the bias
//! gradient is `δ_i`. That structure lets DP-SGD compute per-example norms
//! (`‖a_i‖²‖δ_i‖² + ‖δ_i‖²`) and clipped sums (`Aᵀ diag(c) Δ`) without
//! materializing one gradient vector per example.

mod layer;
mod loss;
mod matrix;
mod network;

pub use layer::{Activation, LayerSpec};
pub(crate) use layer::{sigmoid, softplus};
pub use loss::{gaussian_kl, one_hot, LossKind, PROB_FLOOR};
pub use matrix::Matrix;
pub use network::{init_network, validate_specs, ForwardCache, Network, NetworkFile, Role, NETWORK_FORMAT_VERSION};

use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Input activations and pre-activation deltas of one dense layer for a batch.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// `n x in_dim`.
    pub inputs: Matrix,
    /// `n x out_dim`, `dL_i/dz` for each example `i` (not divided by the batch size).
    pub deltas: Matrix,
}

/// Result of a forward/backward pass over a batch.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub losses: Vec<f64>,
    /// One entry per dense layer, in flattened-parameter order.
    pub layers: Vec<LayerTrace>,
}

impl Backprop {
    pub fn batch_size(&self) -> usize {
        self.losses.len()
    }

    pub fn mean_loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len().max(1) as f64
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|t| t.inputs.cols() * t.deltas.cols() + t.deltas.cols()).sum()
    }

    /// Materializes one flattened gradient per example.
    pub fn per_example_gradients(&self) -> Vec<Vec<f64>> {
        let p = self.param_count();
        (0..self.batch_size())
            .map(|i| {
                let mut g = Vec::with_capacity(p);
                for t in &self.layers {
                    let (a, d) = (t.inputs.row(i), t.deltas.row(i));
                    for &ar in a {
                        g.extend(d.iter().map(|&dc| ar * dc));
                    }
                    g.extend_from_slice(d);
                }
                g
            })
            .collect()
    }

    /// Squared L2 norm of each example's full gradient.
    pub fn per_example_sq_norms(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.batch_size()];
        for t in &self.layers {
            for (i, o) in out.iter_mut().enumerate() {
                let a2: f64 = t.inputs.row(i).iter().map(|v| v * v).sum();
                let d2: f64 = t.deltas.row(i).iter().map(|v| v * v).sum();
                *o += a2 * d2 + d2;
            }
        }
        out
    }

    /// `Σ_i weights[i] · g_i` in flattened-parameter order.
    pub fn weighted_gradient_sum(&self, weights: &[f64]) -> Result<Vec<f64>> {
        debug_assert_eq!(weights.len(), self.batch_size());
        let mut out = Vec::with_capacity(self.param_count());
        for t in &self.layers {
            let mut scaled = t.deltas.clone();
            for (i, &w) in weights.iter().enumerate() {
                scaled.row_mut(i).iter_mut().for_each(|v| *v *= w);
            }
            let gw = t.inputs.matmul_tn(&scaled)?;
            out.extend_from_slice(gw.as_slice());
            let mut gb = vec![0.0; scaled.cols()];
            for row in scaled.iter_rows() {
                gb.iter_mut().zip(row).for_each(|(b, v)| *b += v);
            }
            out.extend(gb);
        }
        Ok(out)
    }

    /// Gradient of the batch-mean loss.
    pub fn mean_gradient(&self) -> Result<Vec<f64>> {
        let n = self.batch_size();
        self.weighted_gradient_sum(&vec![1.0 / n as f64; n])
    }
}

/// A model trainable by (DP-)SGD over a flat parameter vector.
pub trait Differentiable {
    fn param_count(&self) -> usize;

    /// Forward and backward pass. Stochastic models draw their noise from `rng`.
    fn backprop(&self, batch: &Matrix, targets: &Matrix, loss: LossKind, rng: &mut ChaCha8Rng) -> Result<Backprop>;

    /// Per-example losses without the backward pass.
    fn losses(&self, batch: &Matrix, targets: &Matrix, loss: LossKind, rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;

    fn flat_params(&self) -> Vec<f64>;

    fn set_flat_params(&mut self, params: &[f64]) -> Result<()>;

    /// `θ ← θ − learning_rate · grad`.
    fn apply_update(&mut self, grad: &[f64], learning_rate: f64);
}

/// One flattened gradient vector per example.
pub fn per_example_gradients<M: Differentiable + ?Sized>(
    model: &M,
    batch: &Matrix,
    targets: &Matrix,
    loss: LossKind,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    Ok(model.backprop(batch, targets, loss, rng)?.per_example_gradients())
}

/// Mean loss over the batch.
pub fn loss_eval<M: Differentiable + ?Sized>(
    model: &M,
    batch: &Matrix,
    targets: &Matrix,
    loss: LossKind,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let l = model.losses(batch, targets, loss, rng)?;
    let mean = l.iter().sum::<f64>() / l.len().max(1) as f64;
    if !mean.is_finite() {
        return Err(crate::error::Error::NonFinite("loss".into()));
    }
    Ok(mean)
}
