use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{GeneratedDataset, Provenance};
use super::presets::VaeSpec;
use super::vae::{standard_normal, Vae};
use crate::dp::{train_dp, AccountantState, DpSgdConfig, PrivacySpec};
use crate::error::{Error, Result};
use crate::nn::{LossKind, Matrix, Network};

/// A VAE trained on the records of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeComponent {
    pub class_label: usize,
    pub vae: Vae,
    pub latent_dim: usize,
    pub accountant: AccountantState,
    pub spent: PrivacySpec,
    /// Noise multiplier this component was trained with.
    pub noise_multiplier: f64,
    #[serde(with = "crate::serde_util::vec_f64_nonfinite")]
    pub epoch_losses: Vec<f64>,
}

impl VaeComponent {
    /// Encoder trunk followed by the mean head.
    pub fn encoder_mu(&self) -> Result<Network> {
        stack(self.vae.trunk(), self.vae.mu_head())
    }

    /// Encoder trunk followed by the log-variance head.
    pub fn encoder_logvar(&self) -> Result<Network> {
        stack(self.vae.trunk(), self.vae.logvar_head())
    }

    pub fn decoder(&self) -> &Network {
        self.vae.decoder()
    }
}

fn stack(a: &Network, b: &Network) -> Result<Network> {
    let mut specs = a.specs().to_vec();
    specs.extend_from_slice(b.specs());
    let mut weights = a.weights().to_vec();
    weights.extend_from_slice(b.weights());
    let mut biases = a.biases().to_vec();
    biases.extend_from_slice(b.biases());
    Network::from_parts(a.role(), specs, weights, biases)
}

/// One generator per class; the union is private with the common budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaegmEnsemble {
    pub components: Vec<VaeComponent>,
    pub spent: PrivacySpec,
}

/// How the noise of each component is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSchedule {
    /// Use `cfg.noise_multiplier` for every class.
    Fixed,
    /// Calibrate each class separately (its sampling rate depends on its size)
    /// so that every component spends at most this budget.
    Target(PrivacySpec),
}

/// Trains one VAE per class with DP-SGD on that class's rows only.
pub fn train_vaegm(
    private_data: &Matrix,
    labels: &[usize],
    n_classes: usize,
    spec: &VaeSpec,
    cfg: &DpSgdConfig,
    delta: f64,
    schedule: NoiseSchedule,
) -> Result<VaegmEnsemble> {
    if private_data.rows() != labels.len() {
        return Err(Error::Dimension(format!("{} rows but {} labels", private_data.rows(), labels.len())));
    }
    if n_classes == 0 {
        return Err(Error::Config("need at least one class".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Config(format!("label {bad} outside 0..{n_classes}")));
    }
    if let NoiseSchedule::Target(t) = schedule {
        if t.delta != delta {
            return Err(Error::Config(format!("target delta {} differs from accounting delta {delta}", t.delta)));
        }
    }
    let mut slices: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        slices[l].push(i);
    }
    for (c, s) in slices.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::InsufficientData(format!("class {c} has no examples")));
        }
        if s.len() < cfg.batch_size {
            return Err(Error::InsufficientData(format!(
                "class {c} has {} examples, fewer than the batch size {}",
                s.len(),
                cfg.batch_size
            )));
        }
    }

    let mut components = Vec::with_capacity(n_classes);
    for (c, idx) in slices.iter().enumerate() {
        let x = private_data.select_rows(idx);
        let seed = cfg.seed.wrapping_add(c as u64);
        let mut ccfg = DpSgdConfig { seed, ..cfg.clone() };
        if let NoiseSchedule::Target(t) = schedule {
            ccfg = ccfg.calibrated(x.rows(), t)?;
        }
        let vae = Vae::new(&spec.trunk, spec.mu_head, spec.logvar_head, &spec.decoder, seed)?;
        let trained = train_dp(vae, &x, &x, LossKind::VaeElbo, &ccfg, delta)?;
        components.push(VaeComponent {
            class_label: c,
            latent_dim: trained.model.latent_dim(),
            vae: trained.model,
            accountant: trained.accountant,
            spent: trained.spent,
            noise_multiplier: ccfg.noise_multiplier,
            epoch_losses: trained.epoch_losses,
        });
    }
    let spent = ensemble_budget(&components)?;
    Ok(VaegmEnsemble { components, spent })
}

/// Largest component ε; all components must share δ.
pub fn ensemble_budget(components: &[VaeComponent]) -> Result<PrivacySpec> {
    let first = components.first().ok_or_else(|| Error::Config("empty ensemble".into()))?;
    let mut eps = first.spent.epsilon;
    for c in components {
        if c.spent.delta != first.spent.delta {
            return Err(Error::Config("components were accounted with different deltas".into()));
        }
        eps = eps.max(c.spent.epsilon);
    }
    Ok(PrivacySpec { epsilon: eps, delta: first.spent.delta })
}

/// Decodes `per_class_count` standard-normal latents through every component, in class order.
pub fn sample_vaegm(ensemble: &VaegmEnsemble, per_class_count: usize, seed: u64) -> Result<GeneratedDataset> {
    if per_class_count == 0 {
        return Err(Error::Config("per-class count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features: Option<Matrix> = None;
    let mut labels = Vec::with_capacity(per_class_count * ensemble.components.len());
    for comp in &ensemble.components {
        let z = standard_normal(per_class_count, comp.latent_dim, &mut rng);
        let x = comp.vae.decode(&z)?;
        features = Some(match features {
            None => x,
            Some(f) => f.vstack(&x)?,
        });
        labels.extend(std::iter::repeat_n(comp.class_label, per_class_count));
    }
    let features = features.ok_or_else(|| Error::Config("empty ensemble".into()))?;
    GeneratedDataset::new(features, labels, Provenance::Vaegm, ensemble.spent)
}

impl VaegmEnsemble {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
