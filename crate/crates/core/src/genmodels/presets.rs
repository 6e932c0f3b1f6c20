//! Architectures from the model tables, plus dense stand-ins for the
//! convolutional MNIST classifiers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{validate_specs, LayerSpec};

/// An autoencoder as a layer list plus the number of leading layers that form
/// the published encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderSpec {
    pub layers: Vec<LayerSpec>,
    pub encoder_depth: usize,
}

impl AutoencoderSpec {
    pub fn validate(&self) -> Result<()> {
        validate_specs(&self.layers)?;
        if self.encoder_depth == 0 || self.encoder_depth >= self.layers.len() {
            return Err(Error::Config(format!(
                "encoder depth {} must leave at least one decoder layer out of {}",
                self.encoder_depth,
                self.layers.len()
            )));
        }
        let (d_in, d_out) = (self.layers[0].in_dim, self.layers[self.layers.len() - 1].out_dim);
        if d_in != d_out {
            return Err(Error::Config(format!("autoencoder maps {d_in} inputs to {d_out} outputs")));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn bottleneck_dim(&self) -> usize {
        self.layers[self.encoder_depth - 1].out_dim
    }

    pub fn encoder_layers(&self) -> &[LayerSpec] {
        &self.layers[..self.encoder_depth]
    }
}

/// VAE layout: trunk, the two single-layer latent heads, decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeSpec {
    pub trunk: Vec<LayerSpec>,
    pub mu_head: LayerSpec,
    pub logvar_head: LayerSpec,
    pub decoder: Vec<LayerSpec>,
}

impl VaeSpec {
    /// Builds a throwaway instance, which runs every shape and activation check.
    pub fn validate(&self) -> Result<()> {
        validate_specs(&self.trunk)?;
        validate_specs(&self.decoder)?;
        super::vae::Vae::new(&self.trunk, self.mu_head, self.logvar_head, &self.decoder, 0).map(|_| ())
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_head.out_dim
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.first().map_or(0, |l| l.in_dim)
    }
}

fn ae(dims: &[usize], encoder_depth: usize) -> AutoencoderSpec {
    let layers = dims.windows(2).map(|w| LayerSpec::sigmoid(w[0], w[1])).collect();
    AutoencoderSpec { layers, encoder_depth }
}

/// 784 → 400 → 256 | 256 → 400 → 784, all sigmoid.
pub fn augm_mnist() -> AutoencoderSpec {
    ae(&[784, 400, 256, 400, 784], 2)
}

/// `input_dim` → 6 | 6 → `input_dim`. The table lists a 100-wide output layer,
/// i.e. the width of the one-hot encoded records.
pub fn augm_adult(input_dim: usize) -> AutoencoderSpec {
    ae(&[input_dim, 6, input_dim], 1)
}

/// 776 → 400 | 400 → 776.
pub fn augm_hospital() -> AutoencoderSpec {
    ae(&[776, 400, 776], 1)
}

/// 142 → 50 | 50 → 142.
pub fn augm_malware() -> AutoencoderSpec {
    ae(&[142, 50, 142], 1)
}

/// 784 → 500 → 500, heads 500 → 20 (sigmoid), decoder 20 → 500 → 500 → 784.
pub fn vaegm_mnist() -> VaeSpec {
    VaeSpec {
        trunk: vec![LayerSpec::sigmoid(784, 500), LayerSpec::sigmoid(500, 500)],
        mu_head: LayerSpec::sigmoid(500, 20),
        logvar_head: LayerSpec::sigmoid(500, 20),
        decoder: vec![LayerSpec::sigmoid(20, 500), LayerSpec::sigmoid(500, 500), LayerSpec::sigmoid(500, 784)],
    }
}

fn relu_stack(dims: &[usize]) -> Vec<LayerSpec> {
    let mut out: Vec<LayerSpec> = dims.windows(2).map(|w| LayerSpec::relu(w[0], w[1])).collect();
    if let Some(last) = out.last_mut() {
        *last = LayerSpec::softmax(last.in_dim, last.out_dim);
    }
    out
}

/// Dense classifier over `input_dim` features with one ReLU hidden layer.
pub fn dense_classifier(input_dim: usize, hidden: usize, classes: usize) -> Vec<LayerSpec> {
    relu_stack(&[input_dim, hidden, classes])
}

/// Stand-in for the convolutional MNIST classifier used after DP-AuGM (input: 256 encoded features).
pub fn classifier_mnist_augm() -> Vec<LayerSpec> {
    dense_classifier(256, 256, 10)
}

/// Stand-in for the convolutional MNIST classifier used after DP-VaeGM (input: raw pixels).
pub fn classifier_mnist_vaegm() -> Vec<LayerSpec> {
    dense_classifier(784, 256, 10)
}

pub fn classifier_adult() -> Vec<LayerSpec> {
    relu_stack(&[6, 16, 16, 2])
}

pub fn classifier_hospital() -> Vec<LayerSpec> {
    relu_stack(&[400, 200, 100, 10])
}

pub fn classifier_malware() -> Vec<LayerSpec> {
    relu_stack(&[50, 4, 3, 2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shapes() {
        for (spec, d, b) in [(augm_mnist(), 784, 256), (augm_adult(14), 14, 6), (augm_hospital(), 776, 400), (augm_malware(), 142, 50)] {
            spec.validate().unwrap();
            assert_eq!((spec.input_dim(), spec.bottleneck_dim()), (d, b));
        }
        assert_eq!(vaegm_mnist().latent_dim(), 20);
        for c in [classifier_mnist_augm(), classifier_mnist_vaegm(), classifier_adult(), classifier_hospital(), classifier_malware()] {
            validate_specs(&c).unwrap();
        }
    }

    #[test]
    fn bad_autoencoders() {
        assert!(AutoencoderSpec { encoder_depth: 4, ..augm_mnist() }.validate().is_err());
        assert!(ae(&[10, 4, 9], 1).validate().is_err());
    }
}
