//! Experiment configuration files.

use std::path::{Path, PathBuf};

use dpgen::attacks::MembershipConfig;
use dpgen::data::synthetic::{adult_schema, hospital_schema, malware_schema, synthetic_binary};
use dpgen::data::{csv_bundle, make_splits, mnist_bundle, CsvSchema, DatasetBundle, Normalization, SplitPolicy};
use dpgen::dp::{DpSgdConfig, Optimizer, PrivacySpec, SgdConfig};
use dpgen::fedsim::{FedConfig, FedDefense};
use dpgen::genmodels::{presets, AutoencoderSpec, Provenance, VaeSpec};
use dpgen::nn::{validate_specs, Activation, LayerSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// IDX files under `dir`; the private split can be subsampled for speed.
    Mnist {
        dir: PathBuf,
        #[serde(default)]
        private_subsample: Option<usize>,
        #[serde(default)]
        split_seed: u64,
    },
    Csv {
        name: String,
        train: PathBuf,
        test: PathBuf,
        schema: SchemaRef,
        #[serde(default)]
        split_seed: u64,
    },
    /// Seeded Bernoulli-prototype records.
    Synthetic {
        features: usize,
        classes: usize,
        rows: usize,
        test_rows: usize,
        #[serde(default)]
        seed: u64,
    },
}

/// `"adult"`, `"hospital"`, `"malware"`, or a full schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaRef {
    Preset(String),
    Inline(CsvSchema),
}

impl SchemaRef {
    pub fn resolve(&self) -> Result<CsvSchema, String> {
        match self {
            SchemaRef::Inline(s) => Ok(s.clone()),
            SchemaRef::Preset(name) => match name.as_str() {
                "adult" => Ok(adult_schema()),
                "hospital" => Ok(hospital_schema()),
                "malware" => Ok(malware_schema()),
                other => Err(format!("unknown schema preset {other:?}")),
            },
        }
    }
}

impl DatasetConfig {
    pub fn mnist(dir: impl Into<PathBuf>) -> Self {
        DatasetConfig::Mnist { dir: dir.into(), private_subsample: None, split_seed: 0 }
    }

    pub fn load(&self) -> dpgen::Result<DatasetBundle> {
        match self {
            DatasetConfig::Mnist { dir, private_subsample, split_seed } => {
                let mut b = mnist_bundle(dir, *split_seed)?;
                if let Some(n) = private_subsample {
                    b.private = b.private.subsample(*n, *split_seed);
                }
                Ok(b)
            }
            DatasetConfig::Csv { name, train, test, schema, split_seed } => {
                let schema = schema.resolve().map_err(dpgen::Error::Config)?;
                csv_bundle(name, train, test, &schema, *split_seed)
            }
            DatasetConfig::Synthetic { features, classes, rows, test_rows, seed } => {
                let all = synthetic_binary(*features, *classes, rows + test_rows, *seed);
                let train = all.select(&(0..*rows).collect::<Vec<_>>());
                let test = all.select(&(*rows..rows + test_rows).collect::<Vec<_>>());
                make_splits("synthetic", train, test, Normalization::identity(*features), SplitPolicy { public_fraction_of_test: 0.5, seed: *seed })
            }
        }
    }

    /// Feature width and class count when known without reading data.
    fn shape(&self) -> Option<(usize, usize)> {
        match self {
            DatasetConfig::Mnist { .. } => Some((784, 10)),
            DatasetConfig::Synthetic { features, classes, .. } => Some((*features, *classes)),
            DatasetConfig::Csv { schema, .. } => {
                let s = schema.resolve().ok()?;
                s.label_categories.as_ref().map(|c| (s.encoded_dim(), c.len()))
            }
        }
    }

    fn preset_name(&self) -> &str {
        match self {
            DatasetConfig::Mnist { .. } => "mnist",
            DatasetConfig::Csv { schema: SchemaRef::Preset(p), .. } => p,
            _ => "",
        }
    }

    fn seed(&self) -> u64 {
        match self {
            DatasetConfig::Mnist { split_seed, .. } | DatasetConfig::Csv { split_seed, .. } => *split_seed,
            DatasetConfig::Synthetic { seed, .. } => *seed,
        }
    }
}

/// Rows a classifier is trained on when no generator is used.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RawSource {
    #[default]
    Private,
    Public,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorConfig {
    /// Missing `autoencoder` selects the dataset's preset.
    Augm {
        #[serde(default)]
        autoencoder: Option<AutoencoderSpec>,
    },
    Vaegm {
        #[serde(default)]
        vae: Option<VaeSpec>,
        samples_per_class: usize,
    },
    None {
        #[serde(default)]
        source: RawSource,
    },
}

impl GeneratorConfig {
    pub fn provenance(&self) -> Provenance {
        match self {
            GeneratorConfig::Augm { .. } => Provenance::Augm,
            GeneratorConfig::Vaegm { .. } => Provenance::Vaegm,
            GeneratorConfig::None { .. } => Provenance::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Missing selects a dense preset for the dataset and generator.
    #[serde(default)]
    pub layers: Option<Vec<LayerSpec>>,
    pub sgd: SgdConfig,
    /// z-score the training features; defaults to on for encoded rows only.
    #[serde(default)]
    pub standardize: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembershipSettings {
    pub attack: MembershipConfig,
    /// Raw-feature classifier for the shadow models; defaults to the undefended preset.
    #[serde(default)]
    pub shadow_layers: Option<Vec<LayerSpec>>,
    /// Defaults to the classifier's SGD settings.
    #[serde(default)]
    pub shadow_sgd: Option<SgdConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Defaults to every class.
    #[serde(default)]
    pub classes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttacksConfig {
    #[serde(default)]
    pub membership: Option<MembershipSettings>,
    #[serde(default)]
    pub inversion: Option<InversionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub generator: GeneratorConfig,
    /// Target budget of the generator. The noise multiplier is calibrated to it;
    /// `epsilon: null` keeps `dp_sgd.noise_multiplier` as given.
    pub privacy: PrivacySpec,
    pub dp_sgd: DpSgdConfig,
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub attacks: AttacksConfig,
    /// Run directory. The service assigns its own.
    #[serde(default)]
    pub output_dir: PathBuf,
}

fn check(errs: &mut Vec<String>, what: &str, r: dpgen::Result<()>) {
    if let Err(e) = r {
        errs.push(format!("{what}: {e}"));
    }
}

/// Every problem found in a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{} configuration error(s):", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

impl ExperimentConfig {
    /// Desk-scale MNIST settings (10k private rows) for `generator` in
    /// `augm`, `vaegm`, `none` (raw private rows) or `public` (raw public rows).
    pub fn mnist_preset(dir: impl Into<PathBuf>, generator: &str, privacy: PrivacySpec) -> Result<Self, String> {
        let dp = |clip_norm, batch_size, learning_rate, epochs, optimizer| DpSgdConfig { clip_norm, noise_multiplier: 1.0, batch_size, learning_rate, epochs, seed: 7, optimizer };
        let (generator, dp_sgd) = match generator {
            "augm" => (GeneratorConfig::Augm { autoencoder: None }, dp(0.1, 100, 1.0, 5, Optimizer::Sgd)),
            "vaegm" => (GeneratorConfig::Vaegm { vae: None, samples_per_class: 600 }, dp(1.0, 50, 0.003, 10, Optimizer::Adam)),
            "none" => (GeneratorConfig::None { source: RawSource::Private }, dp(0.1, 100, 1.0, 5, Optimizer::Sgd)),
            "public" => (GeneratorConfig::None { source: RawSource::Public }, dp(0.1, 100, 1.0, 5, Optimizer::Sgd)),
            other => return Err(format!("unknown generator {other:?}")),
        };
        Ok(Self {
            dataset: DatasetConfig::Mnist { dir: dir.into(), private_subsample: Some(10_000), split_seed: 0 },
            generator,
            privacy,
            dp_sgd,
            classifier: ClassifierConfig {
                layers: None,
                sgd: SgdConfig { learning_rate: 0.01, batch_size: 32, epochs: 30, seed: 3, momentum: 0.9, optimizer: Optimizer::Sgd },
                standardize: None,
            },
            attacks: AttacksConfig::default(),
            output_dir: PathBuf::from("runs/run"),
        })
    }

    pub fn from_json(s: &str) -> Result<Self, ConfigErrors> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| ConfigErrors(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigErrors> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigErrors(vec![format!("{}: {e}", path.display())]))?;
        Self::from_json(&text)
    }

    pub fn autoencoder(&self) -> Option<AutoencoderSpec> {
        match &self.generator {
            GeneratorConfig::Augm { autoencoder: Some(a) } => Some(a.clone()),
            GeneratorConfig::Augm { autoencoder: None } => Some(match self.dataset.preset_name() {
                "mnist" => presets::augm_mnist(),
                "hospital" => presets::augm_hospital(),
                "malware" => presets::augm_malware(),
                _ => presets::augm_adult(self.dataset.shape().map_or(0, |s| s.0)),
            }),
            _ => None,
        }
    }

    pub fn vae(&self) -> Option<VaeSpec> {
        match &self.generator {
            GeneratorConfig::Vaegm { vae: Some(v), .. } => Some(v.clone()),
            GeneratorConfig::Vaegm { vae: None, .. } => Some(presets::vaegm_mnist()),
            _ => None,
        }
    }

    /// Classifier layers for a dataset with `features` columns and `classes` labels.
    pub fn classifier_layers(&self, features: usize, classes: usize) -> Vec<LayerSpec> {
        if let Some(l) = &self.classifier.layers {
            return l.clone();
        }
        let input = self.autoencoder().map_or(features, |a| a.bottleneck_dim());
        match (self.dataset.preset_name(), &self.generator) {
            ("mnist", GeneratorConfig::Augm { .. }) if input == 256 => presets::classifier_mnist_augm(),
            ("mnist", _) if input == 784 => presets::classifier_mnist_vaegm(),
            _ => presets::dense_classifier(input, 64, classes),
        }
    }

    pub fn standardize(&self) -> bool {
        self.classifier.standardize.unwrap_or(matches!(self.generator, GeneratorConfig::Augm { .. }))
    }

    pub fn split_seed(&self) -> u64 {
        self.dataset.seed()
    }

    /// Checks everything that can be checked without training and reports all failures at once.
    pub fn validate(&self) -> Result<(), ConfigErrors> {
        let mut errs = Vec::new();
        check(&mut errs, "privacy", self.privacy.validate());
        check(&mut errs, "dp_sgd", self.dp_sgd.validate(usize::MAX));
        check(&mut errs, "classifier.sgd", self.classifier.sgd.validate());
        if let Some(l) = &self.classifier.layers {
            check(&mut errs, "classifier.layers", validate_specs(l));
            if l.last().map(|s| s.activation) != Some(Activation::Softmax) {
                errs.push("classifier.layers: output layer must be softmax".into());
            }
        }
        match &self.generator {
            GeneratorConfig::Augm { autoencoder: Some(a) } => check(&mut errs, "generator.autoencoder", a.validate()),
            GeneratorConfig::Vaegm { vae, samples_per_class } => {
                if let Some(v) = vae {
                    check(&mut errs, "generator.vae", v.validate());
                }
                if *samples_per_class == 0 {
                    errs.push("generator.samples_per_class: must be positive".into());
                }
            }
            _ => {}
        }
        match &self.dataset {
            DatasetConfig::Mnist { dir, private_subsample, .. } => {
                if !dir.is_dir() {
                    errs.push(format!("dataset.dir: {} is not a directory", dir.display()));
                }
                if *private_subsample == Some(0) {
                    errs.push("dataset.private_subsample: must be positive".into());
                }
            }
            DatasetConfig::Csv { train, test, schema, .. } => {
                for p in [train, test] {
                    if !p.is_file() {
                        errs.push(format!("dataset: {} does not exist", p.display()));
                    }
                }
                if let Err(e) = schema.resolve() {
                    errs.push(format!("dataset.schema: {e}"));
                }
            }
            DatasetConfig::Synthetic { features, classes, rows, test_rows, .. } => {
                if *features == 0 || *classes < 2 || *rows == 0 || *test_rows < 2 {
                    errs.push("dataset: synthetic data needs features > 0, classes >= 2, rows > 0, test_rows >= 2".into());
                }
            }
        }
        if let Some((features, classes)) = self.dataset.shape() {
            if let Some(a) = self.autoencoder() {
                if a.input_dim() != features {
                    errs.push(format!("generator.autoencoder: input width {} but the dataset has {features} features", a.input_dim()));
                }
            }
            if let Some(v) = self.vae() {
                if v.input_dim() != features {
                    errs.push(format!("generator.vae: input width {} but the dataset has {features} features", v.input_dim()));
                }
            }
            let layers = self.classifier_layers(features, classes);
            let want_in = self.autoencoder().map_or(features, |a| a.bottleneck_dim());
            if layers.first().map(|l| l.in_dim) != Some(want_in) {
                errs.push(format!("classifier.layers: input width must be {want_in}"));
            }
            if layers.last().map(|l| l.out_dim) != Some(classes) {
                errs.push(format!("classifier.layers: output width must be {classes}"));
            }
            if let Some(m) = &self.attacks.membership {
                if let Some(l) = &m.shadow_layers {
                    if l.first().map(|s| s.in_dim) != Some(features) || l.last().map(|s| s.out_dim) != Some(classes) {
                        errs.push(format!("attacks.membership.shadow_layers: must map {features} features to {classes} classes"));
                    }
                }
            }
        }
        if let Some(m) = &self.attacks.membership {
            check(&mut errs, "attacks.membership.attack", m.attack.validate());
            if let Some(s) = &m.shadow_sgd {
                check(&mut errs, "attacks.membership.shadow_sgd", s.validate());
            }
        }
        if let Some(i) = &self.attacks.inversion {
            if !(i.step_size > 0.0 && i.step_size.is_finite()) {
                errs.push("attacks.inversion.step_size: must be positive".into());
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            errs.push("output_dir: must not be empty".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(errs))
        }
    }
}

/// Input of the `fedsim` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedRunConfig {
    pub dataset: DatasetConfig,
    /// Missing selects a one-hidden-layer dense model over the users' features,
    /// with an extra output unit when an attacker is configured.
    #[serde(default)]
    pub model_layers: Option<Vec<LayerSpec>>,
    pub fed: FedConfig,
    pub output_dir: PathBuf,
}

impl FedRunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigErrors> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigErrors(vec![format!("{}: {e}", path.display())]))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| ConfigErrors(vec![e.to_string()]))?;
        cfg.fed.validate().map_err(|e| ConfigErrors(vec![format!("fed: {e}")]))?;
        Ok(cfg)
    }

    pub fn layers(&self, features: usize, classes: usize) -> Vec<LayerSpec> {
        if let Some(l) = &self.model_layers {
            return l.clone();
        }
        let input = match &self.fed.defense {
            FedDefense::Augm { autoencoder, .. } => autoencoder.bottleneck_dim(),
            FedDefense::None => features,
        };
        let outputs = classes + usize::from(self.fed.attacker.is_some());
        presets::dense_classifier(input, if features >= 256 { 256 } else { 64 }, outputs)
    }
}
