//! One function per subcommand. Each writes its artifacts and returns the JSON
//! summary printed on stdout.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dpgen::attacks::MembershipConfig;
use dpgen::dp::{AccountantState, Optimizer, PrivacySpec, SgdConfig};
use dpgen::fedsim::run_federated;
use dpgen::genmodels::{generate_augm, presets, sample_vaegm, train_downstream, AugmModel, GeneratedDataset, VaegmEnsemble};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, FedRunConfig, InversionConfig, MembershipSettings};
use crate::pipeline::{fit, run_experiment, run_inversion, run_membership, train_encoder, train_ensemble, versions};

/// Accountant summary for `steps` steps of the `(q, σ)` mechanism.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccountantReport {
    pub epsilon: f64,
    pub delta: f64,
    /// Moment order attaining the bound; `null` without any private step.
    pub lambda_star: Option<usize>,
    #[serde(rename = "T")]
    pub steps: u64,
}

/// Either `ε` for a given `δ`, or the smallest `δ = min_λ exp(T·α(λ) − λε)` for a given `ε`.
pub fn accountant(q: f64, sigma: f64, steps: u64, delta: Option<f64>, epsilon: Option<f64>) -> anyhow::Result<AccountantReport> {
    let mut st = AccountantState::new(q, sigma)?;
    st.advance(steps);
    match (delta, epsilon) {
        (Some(delta), None) => {
            if !(delta > 0.0 && delta < 1.0) {
                bail!("delta {delta} must lie in (0, 1)");
            }
            let (epsilon, lambda_star) = st.epsilon_with_order(delta);
            Ok(AccountantReport { epsilon, delta, lambda_star, steps })
        }
        (None, Some(epsilon)) => {
            if !(epsilon > 0.0) {
                bail!("epsilon {epsilon} must be positive");
            }
            if steps == 0 {
                return Ok(AccountantReport { epsilon, delta: 0.0, lambda_star: None, steps });
            }
            let (log_delta, lambda) = st
                .log_moments
                .iter()
                .enumerate()
                .map(|(i, m)| (m - (i + 1) as f64 * epsilon, i + 1))
                .fold((f64::INFINITY, 0), |best, c| if c.0 < best.0 { c } else { best });
            let private = log_delta.is_finite();
            Ok(AccountantReport { epsilon, delta: log_delta.exp().min(1.0), lambda_star: private.then_some(lambda), steps })
        }
        _ => bail!("give exactly one of --delta and --epsilon"),
    }
}

/// Base configuration: a file, or the MNIST preset for `generator`.
pub fn base_config(config: Option<&Path>, data_dir: &Path, generator: &str, epsilon: Option<f64>, delta: Option<f64>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::mnist_preset(data_dir, generator, PrivacySpec { epsilon: 1.0, delta: 1e-5 }).map_err(anyhow::Error::msg)?,
    };
    if let Some(e) = epsilon {
        cfg.privacy.epsilon = e;
    }
    if let Some(d) = delta {
        cfg.privacy.delta = d;
    }
    Ok(cfg)
}

fn write_summary(dir: &Path, name: &str, value: &Value) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn checked(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    cfg.validate()?;
    Ok(())
}

pub fn run(cfg: &ExperimentConfig) -> anyhow::Result<Value> {
    let report = run_experiment(cfg)?;
    Ok(json!({
        "output_dir": cfg.output_dir,
        "test_accuracy": report.test_accuracy,
        "spent": report.spent,
        "provenance": report.provenance,
    }))
}

pub fn train_augm_cmd(cfg: &ExperimentConfig) -> anyhow::Result<Value> {
    checked(cfg)?;
    let bundle = cfg.dataset.load()?;
    let model = train_encoder(cfg, &bundle.private)?;
    let path = cfg.output_dir.join("augm.json");
    std::fs::create_dir_all(&cfg.output_dir)?;
    model.save(&path)?;
    let summary = json!({
        "model": path,
        "spent": model.spent,
        "noise_multiplier": model.accountant.sigma,
        "steps": model.accountant.steps,
        "epoch_losses": model.epoch_losses,
        "private_rows": bundle.private.len(),
        "versions": versions(),
    });
    write_summary(&cfg.output_dir, "train_augm.json", &summary)?;
    Ok(summary)
}

pub fn train_vaegm_cmd(cfg: &ExperimentConfig) -> anyhow::Result<Value> {
    checked(cfg)?;
    let bundle = cfg.dataset.load()?;
    let ensemble = train_ensemble(cfg, &bundle.private, bundle.n_classes())?;
    let path = cfg.output_dir.join("vaegm.json");
    std::fs::create_dir_all(&cfg.output_dir)?;
    ensemble.save(&path)?;
    let summary = json!({
        "model": path,
        "spent": ensemble.spent,
        "noise_multipliers": ensemble.components.iter().map(|c| c.noise_multiplier).collect::<Vec<_>>(),
        "private_rows": bundle.private.len(),
        "versions": versions(),
    });
    write_summary(&cfg.output_dir, "train_vaegm.json", &summary)?;
    Ok(summary)
}

/// Encodes the public split with a saved encoder, or samples a saved VAE ensemble.
pub fn generate_cmd(cfg: &ExperimentConfig, model: &Path, kind: &str, samples_per_class: usize, seed: u64) -> anyhow::Result<Value> {
    let data = match kind {
        "augm" => {
            let m = AugmModel::load(model).with_context(|| format!("loading {}", model.display()))?;
            let bundle = cfg.dataset.load()?;
            generate_augm(&m, &bundle.public.features, &bundle.public.labels)?
        }
        "vaegm" => {
            let e = VaegmEnsemble::load(model).with_context(|| format!("loading {}", model.display()))?;
            sample_vaegm(&e, samples_per_class, seed)?
        }
        other => bail!("unknown generator kind {other:?} (augm or vaegm)"),
    };
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("generated.csv");
    data.save(&path)?;
    Ok(json!({ "data": path, "rows": data.len(), "features": data.features.cols(), "meta": data.meta() }))
}

/// Trains a classifier on a saved dataset and scores it on the held-out split.
pub fn train_classifier_cmd(cfg: &ExperimentConfig, data: &Path, transform: Option<&Path>) -> anyhow::Result<Value> {
    let generated = GeneratedDataset::load(data).with_context(|| format!("loading {}", data.display()))?;
    let encoder = transform.map(AugmModel::load).transpose()?;
    let bundle = cfg.dataset.load()?;
    let cols = generated.features.cols();
    let layers = match (&cfg.classifier.layers, cols) {
        (Some(l), _) => l.clone(),
        (None, 256) => presets::classifier_mnist_augm(),
        (None, 784) => presets::classifier_mnist_vaegm(),
        (None, _) => presets::dense_classifier(cols, 64, bundle.n_classes()),
    };
    let standardize = cfg.classifier.standardize.unwrap_or(encoder.is_some());
    let model = train_downstream(&generated, &layers, &cfg.classifier.sgd, encoder.as_ref().map(|e| &e.encoder), standardize)?;
    let accuracy = model.accuracy(&bundle.test.features, &bundle.test.labels)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("classifier.json");
    model.save(&path)?;
    let summary = json!({ "model": path, "test_accuracy": accuracy, "spent": model.spent, "provenance": model.provenance, "versions": versions() });
    write_summary(&cfg.output_dir, "train_classifier.json", &summary)?;
    Ok(summary)
}

pub fn default_membership() -> MembershipSettings {
    MembershipSettings {
        attack: MembershipConfig {
            shadow_count: 50,
            target_train_size: 1000,
            attack_model_specs: Vec::new(),
            attack_sgd: SgdConfig { learning_rate: 0.1, batch_size: 32, epochs: 30, seed: 0, momentum: 0.0, optimizer: Optimizer::Sgd },
            eval_members: 1000,
            eval_non_members: 1000,
            seed: 0,
        },
        shadow_layers: None,
        shadow_sgd: None,
    }
}

pub fn attack_membership_cmd(cfg: &ExperimentConfig) -> anyhow::Result<Value> {
    let mut cfg = cfg.clone();
    cfg.attacks.membership.get_or_insert_with(default_membership);
    checked(&cfg)?;
    let bundle = cfg.dataset.load()?;
    let report = run_membership(&cfg, &bundle)?.expect("configured");
    std::fs::create_dir_all(&cfg.output_dir)?;
    report.save(cfg.output_dir.join("membership.json"))?;
    Ok(serde_json::to_value(&report)?)
}

pub fn attack_inversion_cmd(cfg: &ExperimentConfig, steps: usize, step_size: f64) -> anyhow::Result<Value> {
    let mut cfg = cfg.clone();
    cfg.attacks.inversion.get_or_insert(InversionConfig { steps, step_size, classes: None });
    checked(&cfg)?;
    let bundle = cfg.dataset.load()?;
    let fitted = fit(&cfg, &bundle, &bundle.private)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let results = run_inversion(&cfg, &fitted, &bundle.private, Some(&cfg.output_dir))?.expect("configured");
    let value = json!({
        "space": if fitted.encoder.is_some() { "encoded" } else { "raw" },
        "similarities": results.iter().map(|r| r.similarity).collect::<Vec<_>>(),
        "results": results,
    });
    write_summary(&cfg.output_dir, "inversion.json", &value)?;
    Ok(value)
}

pub fn fedsim_cmd(cfg: &FedRunConfig) -> anyhow::Result<Value> {
    let bundle = cfg.dataset.load()?;
    let layers = cfg.layers(bundle.feature_dim(), bundle.n_classes());
    let report = run_federated(&bundle, &layers, &cfg.fed)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    report.save_json(cfg.output_dir.join("fedsim.json"))?;
    report.save_csv(cfg.output_dir.join("fedsim.csv"))?;
    Ok(json!({
        "output_dir": cfg.output_dir,
        "final_accuracy": report.final_accuracy,
        "rounds": report.rounds,
        "attack_trace_last": report.attack_trace.as_ref().and_then(|t| t.last()),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub spent: PrivacySpec,
    pub test_accuracy: f64,
    pub output_dir: PathBuf,
}

/// One full run per budget, each in its own subdirectory of `cfg.output_dir`.
pub fn sweep_cmd(cfg: &ExperimentConfig, epsilons: &[f64]) -> anyhow::Result<Value> {
    if epsilons.is_empty() {
        bail!("no budgets to sweep");
    }
    let mut points = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut c = cfg.clone();
        c.privacy.epsilon = eps;
        c.output_dir = cfg.output_dir.join(format!("eps_{eps}"));
        let r = run_experiment(&c)?;
        points.push(SweepPoint { epsilon: eps, spent: r.spent, test_accuracy: r.test_accuracy, output_dir: c.output_dir });
    }
    let acc: Vec<f64> = points.iter().map(|p| p.test_accuracy).collect();
    let trend_ok = acc.windows(2).all(|w| w[1] >= w[0] - 0.02);
    let summary = json!({ "points": points, "nondecreasing_within_0_02": trend_ok });
    write_summary(&cfg.output_dir, "sweep.json", &summary)?;
    Ok(summary)
}
