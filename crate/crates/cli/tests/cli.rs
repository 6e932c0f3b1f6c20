//! The `dpgen` binary on small synthetic data.

use std::path::Path;
use std::process::Command;

use dpgen::dp::{DpSgdConfig, Optimizer, PrivacySpec, SgdConfig};
use dpgen_cli::config::{AttacksConfig, ClassifierConfig, DatasetConfig, ExperimentConfig, GeneratorConfig, InversionConfig};
use dpgen_cli::pipeline::{recompute_accuracy, RunReport};
use serde_json::Value;

fn config(generator: GeneratorConfig, out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetConfig::Synthetic { features: 12, classes: 3, rows: 400, test_rows: 200, seed: 4 },
        generator,
        privacy: PrivacySpec { epsilon: 4.0, delta: 1e-5 },
        dp_sgd: DpSgdConfig { clip_norm: 1.0, noise_multiplier: 1.0, batch_size: 20, learning_rate: 0.5, epochs: 2, seed: 1, optimizer: Optimizer::Sgd },
        classifier: ClassifierConfig {
            layers: None,
            sgd: SgdConfig { learning_rate: 0.05, batch_size: 16, epochs: 10, seed: 2, momentum: 0.9, optimizer: Optimizer::Sgd },
            standardize: None,
        },
        attacks: AttacksConfig::default(),
        output_dir: out.to_path_buf(),
    }
}

fn write(cfg: &ExperimentConfig, path: &Path) {
    std::fs::write(path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
}

fn dpgen(args: &[&str]) -> (bool, Value, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_dpgen")).args(args).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    let value = serde_json::from_str(&stdout).unwrap_or(Value::Null);
    (out.status.success(), value, String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn accountant_prints_budget() {
    let (ok, v, _) = dpgen(&["accountant", "--q", "0.01", "--sigma", "4", "--steps", "10000", "--delta", "1e-5"]);
    assert!(ok);
    let eps = v["epsilon"].as_f64().unwrap();
    assert_eq!(eps, dpgen::dp::compute_epsilon(0.01, 4.0, 10000, 1e-5).unwrap());
    assert_eq!(v["T"], 10000);
    assert!(v["lambda_star"].as_u64().is_some());
    let (ok, _, err) = dpgen(&["accountant", "--q", "2", "--sigma", "4", "--steps", "1", "--delta", "1e-5"]);
    assert!(!ok && err.contains("q=2"), "{err}");
}

#[test]
fn run_is_reproducible_and_recomputable() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(GeneratorConfig::Augm { autoencoder: None }, &dir.path().join("a"));
    cfg.attacks.inversion = Some(InversionConfig { steps: 20, step_size: 0.1, classes: Some(vec![0, 1]) });
    let path = dir.path().join("cfg.json");
    write(&cfg, &path);
    let (ok, v, err) = dpgen(&["run", "--config", path.to_str().unwrap()]);
    assert!(ok, "{err}");
    let first = RunReport::load(dir.path().join("a/report.json")).unwrap();
    assert_eq!(v["test_accuracy"].as_f64().unwrap(), first.test_accuracy);
    assert!(first.spent.epsilon <= 4.0);
    assert_eq!(first.inversion.as_ref().unwrap().len(), 2);
    for f in &first.artifacts {
        assert!(dir.path().join("a").join(f).exists(), "{f}");
    }
    assert_eq!(recompute_accuracy(&dir.path().join("a")).unwrap(), first.test_accuracy);

    let (ok, _, _) = dpgen(&["run", "--config", path.to_str().unwrap(), "--out", dir.path().join("b").to_str().unwrap()]);
    assert!(ok);
    let second = RunReport::load(dir.path().join("b/report.json")).unwrap();
    assert_eq!(first.test_accuracy, second.test_accuracy);
    assert_eq!(first.spent, second.spent);
    assert_eq!(first.noise_multipliers, second.noise_multipliers);
}

#[test]
fn stages_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = config(GeneratorConfig::Augm { autoencoder: None }, dir.path());
    let path = dir.path().join("cfg.json");
    write(&cfg, &path);
    let c = path.to_str().unwrap();

    let (ok, v, err) = dpgen(&["train-augm", "--config", c, "--epochs", "0"]);
    assert!(ok, "{err}");
    assert_eq!(v["spent"]["epsilon"], 0.0);
    let (ok, v, err) = dpgen(&["train-augm", "--config", c]);
    assert!(ok, "{err}");
    assert!(v["spent"]["epsilon"].as_f64().unwrap() <= 4.0);

    let model = format!("{out}/augm.json");
    let (ok, v, err) = dpgen(&["generate", "--config", c, "--model", &model, "--kind", "augm"]);
    assert!(ok, "{err}");
    assert_eq!(v["meta"]["provenance"], "augm");
    let data = format!("{out}/generated.csv");
    let (ok, v, err) = dpgen(&["train-classifier", "--config", c, "--data", &data, "--transform", &model]);
    assert!(ok, "{err}");
    assert!(v["test_accuracy"].as_f64().unwrap() > 0.5, "{v}");

    let vcfg = config(GeneratorConfig::Vaegm { vae: None, samples_per_class: 50 }, dir.path());
    let vae = dpgen_cli::config::ExperimentConfig {
        generator: GeneratorConfig::Vaegm {
            vae: Some(dpgen::genmodels::VaeSpec {
                trunk: vec![dpgen::nn::LayerSpec::sigmoid(12, 8)],
                mu_head: dpgen::nn::LayerSpec::identity(8, 2),
                logvar_head: dpgen::nn::LayerSpec::identity(8, 2),
                decoder: vec![dpgen::nn::LayerSpec::sigmoid(2, 12)],
            }),
            samples_per_class: 50,
        },
        ..vcfg
    };
    write(&vae, &path);
    let (ok, v, err) = dpgen(&["train-vaegm", "--config", c]);
    assert!(ok, "{err}");
    assert!(v["spent"]["epsilon"].as_f64().unwrap() <= 4.0);
    let (ok, v, err) = dpgen(&["generate", "--config", c, "--model", &format!("{out}/vaegm.json"), "--kind", "vaegm", "--samples-per-class", "50"]);
    assert!(ok, "{err}");
    assert_eq!(v["rows"], 150);
}

#[test]
fn invalid_config_lists_all_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(GeneratorConfig::None { source: Default::default() }, dir.path());
    cfg.privacy.delta = 5.0;
    cfg.classifier.sgd.learning_rate = -1.0;
    cfg.dp_sgd.batch_size = 0;
    let path = dir.path().join("cfg.json");
    write(&cfg, &path);
    let (ok, _, err) = dpgen(&["run", "--config", path.to_str().unwrap()]);
    assert!(!ok);
    for needle in ["privacy", "classifier.sgd", "dp_sgd", "3 configuration error"] {
        assert!(err.contains(needle), "{needle} missing from {err}");
    }
    std::fs::write(&path, r#"{"dataset": {"kind": "synthetic", "features": 3, "classes": 2, "rows": 10, "test_rows": 4, "bogus": 1}}"#).unwrap();
    let (ok, _, err) = dpgen(&["run", "--config", path.to_str().unwrap()]);
    assert!(!ok && err.contains("bogus"), "{err}");
}

#[test]
fn sweep_and_fedsim_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(GeneratorConfig::Augm { autoencoder: None }, &dir.path().join("sweep"));
    let path = dir.path().join("cfg.json");
    write(&cfg, &path);
    let (ok, v, err) = dpgen(&["sweep", "--config", path.to_str().unwrap(), "--epsilons", "1,8"]);
    assert!(ok, "{err}");
    assert_eq!(v["points"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("sweep/eps_8/report.json").exists());
    assert!(dir.path().join("sweep/sweep.json").exists());

    let fed = serde_json::json!({
        "dataset": {"kind": "synthetic", "features": 12, "classes": 3, "rows": 400, "test_rows": 200, "seed": 4},
        "fed": {"n_users": 3, "rounds": 4, "upload_fraction": 0.2, "local_learning_rate": 0.05, "local_batch": 16, "seed": 1},
        "output_dir": dir.path().join("fed"),
    });
    let fpath = dir.path().join("fed.json");
    std::fs::write(&fpath, fed.to_string()).unwrap();
    let (ok, v, err) = dpgen(&["fedsim", "--config", fpath.to_str().unwrap()]);
    assert!(ok, "{err}");
    assert_eq!(v["rounds"], 4);
    let csv = std::fs::read_to_string(dir.path().join("fed/fedsim.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}
