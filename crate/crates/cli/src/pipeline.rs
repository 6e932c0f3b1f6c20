//! End-to-end runs: generator, downstream classifier, optional attacks, artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dpgen::attacks::{class_mean, model_inversion, write_pgm, AttackReport, ConfidenceModel, Defense, InversionResult, ShadowAttack};
use dpgen::data::{DatasetBundle, Labeled};
use dpgen::dp::{DpSgdConfig, PrivacySpec};
use dpgen::genmodels::{
    generate_augm, sample_vaegm, train_augm, train_downstream, train_vaegm, AugmModel, DownstreamModel, GeneratedDataset, NoiseSchedule,
    Provenance, VaegmEnsemble,
};
use dpgen::nn::{LayerSpec, Matrix};
use dpgen::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, GeneratorConfig, RawSource};

/// A trained generator plus the classifier fitted on its output.
pub struct Fitted {
    pub classifier: DownstreamModel,
    pub generated: GeneratedDataset,
    pub encoder: Option<AugmModel>,
    pub ensemble: Option<VaegmEnsemble>,
    /// Noise multiplier actually used (per component for VaeGM).
    pub noise_multipliers: Vec<f64>,
}

impl Fitted {
    pub fn spent(&self) -> PrivacySpec {
        self.generated.source_budget
    }
}

/// DP-SGD settings with the noise calibrated to the target budget, unless the
/// target is non-private.
pub fn dp_settings(cfg: &ExperimentConfig, n_examples: usize) -> Result<DpSgdConfig> {
    if cfg.privacy.epsilon.is_finite() {
        cfg.dp_sgd.calibrated(n_examples, cfg.privacy)
    } else {
        Ok(cfg.dp_sgd.clone())
    }
}

pub fn train_encoder(cfg: &ExperimentConfig, private: &Labeled) -> Result<AugmModel> {
    let spec = cfg.autoencoder().ok_or_else(|| Error::Config("generator is not augm".into()))?;
    let dp = dp_settings(cfg, private.len())?;
    train_augm(&private.features, &spec, &dp, cfg.privacy.delta)
}

pub fn train_ensemble(cfg: &ExperimentConfig, private: &Labeled, n_classes: usize) -> Result<VaegmEnsemble> {
    let spec = cfg.vae().ok_or_else(|| Error::Config("generator is not vaegm".into()))?;
    let schedule = if cfg.privacy.epsilon.is_finite() { NoiseSchedule::Target(cfg.privacy) } else { NoiseSchedule::Fixed };
    train_vaegm(&private.features, &private.labels, n_classes, &spec, &cfg.dp_sgd, cfg.privacy.delta, schedule)
}

/// Raw rows tagged as such: non-private when they are private records, zero
/// cost when they are public.
pub fn raw_dataset(rows: &Labeled, source: RawSource, delta: f64) -> Result<GeneratedDataset> {
    let epsilon = match source {
        RawSource::Private => f64::INFINITY,
        RawSource::Public => 0.0,
    };
    GeneratedDataset::new(rows.features.clone(), rows.labels.clone(), Provenance::None, PrivacySpec { epsilon, delta })
}

/// Trains the configured generator on `private` and a classifier on what it emits.
pub fn fit(cfg: &ExperimentConfig, bundle: &DatasetBundle, private: &Labeled) -> Result<Fitted> {
    let n_classes = bundle.n_classes();
    let layers = cfg.classifier_layers(bundle.feature_dim(), n_classes);
    let standardize = cfg.standardize();
    let sgd = &cfg.classifier.sgd;
    match &cfg.generator {
        GeneratorConfig::Augm { .. } => {
            let encoder = train_encoder(cfg, private)?;
            let generated = generate_augm(&encoder, &bundle.public.features, &bundle.public.labels)?;
            let classifier = train_downstream(&generated, &layers, sgd, Some(&encoder.encoder), standardize)?;
            let sigma = encoder.accountant.sigma;
            Ok(Fitted { classifier, generated, encoder: Some(encoder), ensemble: None, noise_multipliers: vec![sigma] })
        }
        GeneratorConfig::Vaegm { samples_per_class, .. } => {
            let ensemble = train_ensemble(cfg, private, n_classes)?;
            let generated = sample_vaegm(&ensemble, *samples_per_class, cfg.dp_sgd.seed)?;
            let classifier = train_downstream(&generated, &layers, sgd, None, standardize)?;
            let sigmas = ensemble.components.iter().map(|c| c.noise_multiplier).collect();
            Ok(Fitted { classifier, generated, encoder: None, ensemble: Some(ensemble), noise_multipliers: sigmas })
        }
        GeneratorConfig::None { source } => {
            let rows = match source {
                RawSource::Private => private,
                RawSource::Public => &bundle.public,
            };
            let generated = raw_dataset(rows, *source, cfg.privacy.delta)?;
            let classifier = train_downstream(&generated, &layers, sgd, None, standardize)?;
            Ok(Fitted { classifier, generated, encoder: None, ensemble: None, noise_multipliers: Vec::new() })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub split: u64,
    pub dp_sgd: u64,
    pub classifier: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowCounts {
    pub private: usize,
    pub public: usize,
    pub test: usize,
    pub generated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub provenance: Provenance,
    pub spent: PrivacySpec,
    pub noise_multipliers: Vec<f64>,
    pub test_accuracy: f64,
    pub rows: RowCounts,
    /// Informational only.
    pub wall_time_secs: f64,
    pub seeds: Seeds,
    pub versions: BTreeMap<String, String>,
    /// Files under the run directory, relative to it.
    pub artifacts: Vec<String>,
    pub membership: Option<AttackReport>,
    pub inversion: Option<Vec<InversionResult>>,
}

impl RunReport {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("dpgen-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("dpgen-core".to_string(), dpgen::VERSION.to_string()),
    ])
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T, artifacts: &mut Vec<String>) -> Result<()> {
    std::fs::write(dir.join(name), serde_json::to_string_pretty(value)?)?;
    artifacts.push(name.to_string());
    Ok(())
}

/// Shadow models: a plain classifier on raw rows.
fn shadow_layers(cfg: &ExperimentConfig, features: usize, classes: usize) -> Vec<LayerSpec> {
    if let Some(l) = cfg.attacks.membership.as_ref().and_then(|m| m.shadow_layers.clone()) {
        return l;
    }
    let raw = ExperimentConfig { generator: GeneratorConfig::None { source: RawSource::Private }, classifier: crate::config::ClassifierConfig { layers: None, ..cfg.classifier.clone() }, ..cfg.clone() };
    raw.classifier_layers(features, classes)
}

/// Shadow models and per-class attack models for `cfg`'s membership settings.
/// Shadows never see the defense, so one set serves every generator.
pub fn train_shadow_attack(cfg: &ExperimentConfig, bundle: &DatasetBundle) -> Result<Option<ShadowAttack>> {
    let Some(m) = &cfg.attacks.membership else { return Ok(None) };
    let layers = shadow_layers(cfg, bundle.feature_dim(), bundle.n_classes());
    let shadow_sgd = m.shadow_sgd.clone().unwrap_or_else(|| cfg.classifier.sgd.clone());
    let shadow = |rows: &Labeled, seed: u64| -> Result<Box<dyn ConfidenceModel>> {
        let data = raw_dataset(rows, RawSource::Private, cfg.privacy.delta)?;
        let sgd = dpgen::dp::SgdConfig { seed, ..shadow_sgd.clone() };
        Ok(Box::new(train_downstream(&data, &layers, &sgd, None, false)?))
    };
    ShadowAttack::train(&shadow, bundle, &m.attack).map(Some)
}

/// Fits `cfg`'s pipeline on the attack's members and scores the attack on it.
pub fn evaluate_membership(cfg: &ExperimentConfig, bundle: &DatasetBundle, attack: &ShadowAttack) -> Result<AttackReport> {
    let defense = match cfg.generator {
        GeneratorConfig::Augm { .. } => Defense::Augm,
        GeneratorConfig::Vaegm { .. } => Defense::Vaegm,
        GeneratorConfig::None { .. } => Defense::None,
    };
    let target = |members: &Labeled, seed: u64| -> Result<Box<dyn ConfidenceModel>> {
        let mut c = cfg.clone();
        c.dp_sgd.seed = seed;
        c.classifier.sgd.seed = seed;
        Ok(Box::new(fit(&c, bundle, members)?.classifier))
    };
    attack.evaluate(&target, bundle, defense)
}

pub fn run_membership(cfg: &ExperimentConfig, bundle: &DatasetBundle) -> Result<Option<AttackReport>> {
    match train_shadow_attack(cfg, bundle)? {
        Some(attack) => evaluate_membership(cfg, bundle, &attack).map(Some),
        None => Ok(None),
    }
}

/// Inverts the classifier in its own input space: raw rows, or encoded rows
/// when a published encoder sits in front of it.
pub fn run_inversion(cfg: &ExperimentConfig, fitted: &Fitted, private: &Labeled, dir: Option<&Path>) -> Result<Option<Vec<InversionResult>>> {
    let Some(inv) = &cfg.attacks.inversion else { return Ok(None) };
    let net = fitted.classifier.classifier_on_features()?;
    let space: Matrix = match &fitted.encoder {
        Some(e) => e.encoder.predict(&private.features)?,
        None => private.features.clone(),
    };
    let classes: Vec<usize> = inv.classes.clone().unwrap_or_else(|| (0..net.output_dim()).collect());
    let mut out = Vec::with_capacity(classes.len());
    for c in classes {
        let reference = class_mean(&space, &private.labels, c)?;
        let r = model_inversion(&net, c, inv.steps, inv.step_size, &reference)?;
        if let Some(d) = dir {
            write_pgm(d.join(format!("inversion_{c}.pgm")), &r.reconstruction)?;
        }
        out.push(r);
    }
    Ok(Some(out))
}

/// Runs the whole experiment and writes every artifact plus `report.json` and
/// `manifest.json` under `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    let start = Instant::now();
    let bundle = cfg.dataset.load()?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir)?;
    let mut artifacts = Vec::new();
    write_json(&dir, "config.json", cfg, &mut artifacts)?;

    let fitted = fit(cfg, &bundle, &bundle.private)?;
    if let Some(e) = &fitted.encoder {
        e.save(dir.join("augm.json"))?;
        artifacts.push("augm.json".into());
    }
    if let Some(e) = &fitted.ensemble {
        e.save(dir.join("vaegm.json"))?;
        artifacts.push("vaegm.json".into());
    }
    if fitted.generated.provenance != Provenance::None {
        fitted.generated.save(dir.join("generated.csv"))?;
        artifacts.push("generated.csv".into());
        artifacts.push("generated.json".into());
    }
    fitted.classifier.save(dir.join("classifier.json"))?;
    artifacts.push("classifier.json".into());
    let test_accuracy = fitted.classifier.accuracy(&bundle.test.features, &bundle.test.labels)?;

    let membership = run_membership(cfg, &bundle)?;
    if let Some(m) = &membership {
        m.save(dir.join("membership.json"))?;
        artifacts.push("membership.json".into());
    }
    let inversion = run_inversion(cfg, &fitted, &bundle.private, Some(&dir))?;
    if let Some(inv) = &inversion {
        artifacts.extend(inv.iter().map(|r| format!("inversion_{}.pgm", r.target_class)));
    }

    artifacts.push("report.json".into());
    artifacts.push("manifest.json".into());
    let report = RunReport {
        config: cfg.clone(),
        provenance: fitted.generated.provenance,
        spent: fitted.spent(),
        noise_multipliers: fitted.noise_multipliers.clone(),
        test_accuracy,
        rows: RowCounts { private: bundle.private.len(), public: bundle.public.len(), test: bundle.test.len(), generated: fitted.generated.len() },
        wall_time_secs: start.elapsed().as_secs_f64(),
        seeds: Seeds { split: cfg.split_seed(), dp_sgd: cfg.dp_sgd.seed, classifier: cfg.classifier.sgd.seed },
        versions: versions(),
        artifacts: artifacts.clone(),
        membership,
        inversion,
    };
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    let manifest = Manifest { run_dir: dir.clone(), files: artifacts };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_dir: PathBuf,
    pub files: Vec<String>,
}

/// Recomputes the test accuracy of a finished run from its saved classifier.
pub fn recompute_accuracy(run_dir: &Path) -> Result<f64> {
    let report = RunReport::load(run_dir.join("report.json"))?;
    let bundle = report.config.dataset.load()?;
    DownstreamModel::load(run_dir.join("classifier.json"))?.accuracy(&bundle.test.features, &bundle.test.labels)
}
