//! DP-AuGM (private autoencoder, encoder published, public data encoded) and
//! DP-VaeGM (one private VAE per class, sampled from the prior).

mod augm;
mod dataset;
mod downstream;
pub mod presets;
mod vae;
mod vaegm;

pub use augm::{generate_augm, train_augm, train_augm_with_init, AugmFile, AugmModel};
pub use dataset::{DatasetMeta, GeneratedDataset, Provenance};
pub use downstream::{accuracy, argmax_rows, train_downstream, DownstreamModel, Standardizer};
pub use presets::{AutoencoderSpec, VaeSpec};
pub use vae::{reparameterize, standard_normal, Vae, VaeFile};
pub use vaegm::{ensemble_budget, sample_vaegm, train_vaegm, NoiseSchedule, VaeComponent, VaegmEnsemble};
