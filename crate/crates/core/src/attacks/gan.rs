use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genmodels::standard_normal;
use crate::nn::{one_hot, Backprop, Differentiable, LayerSpec, LossKind, Matrix, Network, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanConfig {
    pub noise_dim: usize,
    pub batch: usize,
    pub generator_steps: usize,
    pub generator_lr: f64,
    /// Updates of the attacker's local model on fakes labeled as the extra class.
    pub discriminator_steps: usize,
    pub discriminator_lr: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self { noise_dim: 100, batch: 64, generator_steps: 1, generator_lr: 0.01, discriminator_steps: 1, discriminator_lr: 0.01 }
    }
}

/// `noise_dim → 256 (ReLU) → out_dim (sigmoid)`.
pub fn gan_generator(noise_dim: usize, out_dim: usize, seed: u64) -> Result<Network> {
    Network::new(Role::Generator, &[LayerSpec::relu(noise_dim, 256), LayerSpec::sigmoid(256, out_dim)], seed)
}

/// One adversarial round: the generator is pushed towards samples the shared
/// model assigns to `victim_class`, then the attacker's copy of the shared model
/// learns to put fresh fakes into `fake_class`. Returns the batch generated
/// after both updates.
pub fn gan_attack_round(
    generator: &mut Network,
    discriminator: &mut Network,
    victim_class: usize,
    fake_class: usize,
    cfg: &GanConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Matrix> {
    let classes = discriminator.output_dim();
    if victim_class >= classes || fake_class >= classes {
        return Err(Error::Config(format!("classes {victim_class}/{fake_class} outside 0..{classes}")));
    }
    if generator.output_dim() != discriminator.input_dim() || generator.input_dim() != cfg.noise_dim {
        return Err(Error::Dimension("generator does not feed the shared model".into()));
    }
    let victim = one_hot(&vec![victim_class; cfg.batch], classes);
    for _ in 0..cfg.generator_steps {
        let z = standard_normal(cfg.batch, cfg.noise_dim, rng);
        let g_cache = generator.forward_cached(&z)?;
        let x = g_cache.output().clone();
        let mut scratch = crate::dp::sgd::model_stream(0);
        let d = discriminator.backprop(&x, &victim, LossKind::CrossEntropy, &mut scratch)?;
        let dx = discriminator.input_gradient(&d.layers[0])?;
        let layers = generator.backward_from_output_grad(g_cache, &dx)?;
        let grad = Backprop { losses: d.losses, layers }.mean_gradient()?;
        generator.apply_update(&grad, cfg.generator_lr);
    }
    let fake = one_hot(&vec![fake_class; cfg.batch], classes);
    for _ in 0..cfg.discriminator_steps {
        let x = generator.predict(&standard_normal(cfg.batch, cfg.noise_dim, rng))?;
        let bp = discriminator.backprop(&x, &fake, LossKind::CrossEntropy, &mut crate::dp::sgd::model_stream(0))?;
        discriminator.apply_update(&bp.mean_gradient()?, cfg.discriminator_lr);
    }
    generator.predict(&standard_normal(cfg.batch, cfg.noise_dim, rng))
}
