//! Post-processing never touches the privacy ledger of a trained generator.

use dpgen::data::synthetic::synthetic_binary;
use dpgen::dp::{get_epsilon, DpSgdConfig, Optimizer, PrivacySpec, SgdConfig};
use dpgen::genmodels::{
    ensemble_budget, generate_augm, presets, sample_vaegm, train_augm, train_downstream, train_vaegm, AugmModel, AutoencoderSpec, NoiseSchedule,
    Provenance, VaeSpec,
};
use dpgen::nn::{Differentiable, LayerSpec};

fn dp_cfg() -> DpSgdConfig {
    DpSgdConfig { clip_norm: 1.0, noise_multiplier: 1.1, batch_size: 10, learning_rate: 0.1, epochs: 2, seed: 5, optimizer: Optimizer::Sgd }
}

fn sgd() -> SgdConfig {
    SgdConfig { learning_rate: 0.05, batch_size: 8, epochs: 2, seed: 1, momentum: 0.0, optimizer: Optimizer::Sgd }
}

fn small_vae() -> VaeSpec {
    VaeSpec {
        trunk: vec![LayerSpec::sigmoid(12, 8)],
        mu_head: LayerSpec::sigmoid(8, 3),
        logvar_head: LayerSpec::sigmoid(8, 3),
        decoder: vec![LayerSpec::sigmoid(3, 8), LayerSpec::sigmoid(8, 12)],
    }
}

#[test]
fn augm_budget_survives_generation_and_downstream_training() {
    let d = synthetic_binary(12, 2, 80, 1);
    let spec = AutoencoderSpec { layers: vec![LayerSpec::sigmoid(12, 4), LayerSpec::sigmoid(4, 12)], encoder_depth: 1 };
    let model = train_augm(&d.features, &spec, &dp_cfg(), 1e-5).unwrap();
    let before = model.clone();
    let generated = generate_augm(&model, &d.features, &d.labels).unwrap();
    let again = generate_augm(&model, &d.features, &d.labels).unwrap();
    assert_eq!(generated.features, again.features);
    assert_eq!(generated.features.cols(), 4);
    assert_eq!(generated.provenance, Provenance::Augm);
    assert_eq!(generated.source_budget, model.spent);
    let classifier = train_downstream(&generated, &presets::dense_classifier(4, 6, 2), &sgd(), Some(&model.encoder), true).unwrap();
    assert_eq!(model, before);
    assert_eq!(classifier.spent, model.spent);
    assert_eq!(model.spent.epsilon, get_epsilon(&model.accountant, 1e-5));
}

#[test]
fn published_encoder_carries_no_decoder_weights() {
    let d = synthetic_binary(12, 2, 40, 2);
    let spec = AutoencoderSpec { layers: vec![LayerSpec::sigmoid(12, 7), LayerSpec::sigmoid(7, 5), LayerSpec::sigmoid(5, 12)], encoder_depth: 2 };
    let model = train_augm(&d.features, &spec, &dp_cfg(), 1e-5).unwrap();
    let json = model.to_json().unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let obj = v.as_object().unwrap();
    assert!(!obj.contains_key("decoder"));
    let enc = &obj["encoder"];
    assert_eq!(enc["specs"].as_array().unwrap().len(), 2);
    assert_eq!(enc["weights"].as_array().unwrap().len(), 2);
    assert_eq!(enc["role"], "encoder");
    let total: usize = model.encoder.param_count();
    assert_eq!(total, 12 * 7 + 7 + 7 * 5 + 5);
    assert_eq!(AugmModel::from_json(&json).unwrap(), model);
}

#[test]
fn vaegm_bookkeeping_and_sampling() {
    let d = synthetic_binary(12, 3, 120, 3);
    let ens = train_vaegm(&d.features, &d.labels, 3, &small_vae(), &dp_cfg(), 1e-5, NoiseSchedule::Fixed).unwrap();
    assert_eq!(ens.components.len(), 3);
    assert_eq!(ens.spent, ensemble_budget(&ens.components).unwrap());
    let max = ens.components.iter().map(|c| c.spent.epsilon).fold(0.0, f64::max);
    assert_eq!(ens.spent.epsilon, max);

    let before = ens.clone();
    let g = sample_vaegm(&ens, 7, 11).unwrap();
    assert_eq!(ens, before);
    assert_eq!(g.len(), 21);
    for c in 0..3 {
        assert_eq!(g.labels.iter().filter(|&&l| l == c).count(), 7);
    }
    assert!(g.features.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
    assert_eq!(g.source_budget, ens.spent);
    assert_eq!(sample_vaegm(&ens, 7, 11).unwrap(), g);
    assert_ne!(sample_vaegm(&ens, 7, 12).unwrap().features, g.features);

    let clf = train_downstream(&g, &presets::dense_classifier(12, 6, 3), &sgd(), None, false).unwrap();
    assert_eq!(clf.spent, ens.spent);
    assert_eq!(ens, before);
}

#[test]
fn calibrated_components_share_the_target_budget() {
    let d = synthetic_binary(12, 2, 100, 4);
    let target = PrivacySpec::new(2.0, 1e-5).unwrap();
    let ens = train_vaegm(&d.features, &d.labels, 2, &small_vae(), &dp_cfg(), 1e-5, NoiseSchedule::Target(target)).unwrap();
    for c in &ens.components {
        assert!(c.spent.epsilon <= 2.0 + 1e-3, "{}", c.spent.epsilon);
        assert!(c.spent.epsilon > 1.5);
    }
}

#[test]
fn empty_class_is_rejected() {
    let d = synthetic_binary(12, 2, 40, 5);
    assert!(train_vaegm(&d.features, &d.labels, 3, &small_vae(), &dp_cfg(), 1e-5, NoiseSchedule::Fixed).is_err());
}

#[test]
fn mnist_preset_has_twenty_latents() {
    let spec = presets::vaegm_mnist();
    assert_eq!(spec.latent_dim(), 20);
    assert_eq!(presets::augm_mnist().bottleneck_dim(), 256);
}
