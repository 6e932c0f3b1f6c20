use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{GeneratedDataset, Provenance};
use super::presets::AutoencoderSpec;
use crate::dp::{train_dp, AccountantState, DpSgdConfig, PrivacySpec};
use crate::error::{Error, Result};
use crate::nn::{LossKind, Matrix, Network, NetworkFile, Role};

/// The published half of a privately trained autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmModel {
    pub encoder: Network,
    pub bottleneck_dim: usize,
    pub accountant: AccountantState,
    pub spent: PrivacySpec,
    pub epoch_losses: Vec<f64>,
}

/// On-disk form. Holds the encoder only; there is no field a decoder could hide in.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmFile {
    pub encoder: NetworkFile,
    pub bottleneck_dim: usize,
    pub accountant: AccountantState,
    pub spent: PrivacySpec,
    #[serde(default, with = "crate::serde_util::vec_f64_nonfinite")]
    pub epoch_losses: Vec<f64>,
}

/// Trains the whole autoencoder with DP-SGD on reconstruction error, then keeps
/// only the encoder.
pub fn train_augm(private_data: &Matrix, spec: &AutoencoderSpec, cfg: &DpSgdConfig, delta: f64) -> Result<AugmModel> {
    train_augm_with_init(private_data, spec, cfg.seed, cfg, delta)
}

/// As [`train_augm`], but the initial weights come from `init_seed` while
/// batch sampling and noise still follow `cfg.seed`.
pub fn train_augm_with_init(private_data: &Matrix, spec: &AutoencoderSpec, init_seed: u64, cfg: &DpSgdConfig, delta: f64) -> Result<AugmModel> {
    spec.validate()?;
    if private_data.cols() != spec.input_dim() {
        return Err(Error::Dimension(format!(
            "private data has {} columns, autoencoder expects {}",
            private_data.cols(),
            spec.input_dim()
        )));
    }
    let ae = Network::new(Role::Autoencoder, &spec.layers, init_seed)?;
    let trained = train_dp(ae, private_data, private_data, LossKind::Mse, cfg, delta)?;
    let encoder = trained.model.truncate(spec.encoder_depth, Role::Encoder)?;
    Ok(AugmModel {
        bottleneck_dim: encoder.output_dim(),
        encoder,
        accountant: trained.accountant,
        spent: trained.spent,
        epoch_losses: trained.epoch_losses,
    })
}

/// Encodes public rows. Post-processing: the model is only read.
pub fn generate_augm(model: &AugmModel, public_data: &Matrix, public_labels: &[usize]) -> Result<GeneratedDataset> {
    if public_data.cols() != model.encoder.input_dim() {
        return Err(Error::Dimension(format!(
            "public data has {} columns, encoder expects {}",
            public_data.cols(),
            model.encoder.input_dim()
        )));
    }
    let features = model.encoder.predict(public_data)?;
    GeneratedDataset::new(features, public_labels.to_vec(), Provenance::Augm, model.spent)
}

impl AugmModel {
    pub fn to_file(&self) -> AugmFile {
        AugmFile {
            encoder: (&self.encoder).into(),
            bottleneck_dim: self.bottleneck_dim,
            accountant: self.accountant.clone(),
            spent: self.spent,
            epoch_losses: self.epoch_losses.clone(),
        }
    }

    pub fn from_file(f: AugmFile) -> Result<Self> {
        let encoder: Network = f.encoder.try_into()?;
        if encoder.role() != Role::Encoder {
            return Err(Error::Config(format!("expected an encoder, file holds a {}", encoder.role())));
        }
        if encoder.output_dim() != f.bottleneck_dim {
            return Err(Error::Dimension(format!(
                "encoder emits {} features, file declares bottleneck {}",
                encoder.output_dim(),
                f.bottleneck_dim
            )));
        }
        Ok(Self { encoder, bottleneck_dim: f.bottleneck_dim, accountant: f.accountant, spent: f.spent, epoch_losses: f.epoch_losses })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
