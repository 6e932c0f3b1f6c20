//! Federated simulator on small synthetic data.

use dpgen::attacks::GanConfig;
use dpgen::data::synthetic::synthetic_binary;
use dpgen::data::{make_splits, DatasetBundle, Normalization, SplitPolicy};
use dpgen::dp::{train_sgd, DpSgdConfig, Optimizer, PrivacySpec, SgdConfig};
use dpgen::genmodels::AutoencoderSpec;
use dpgen::fedsim::{aggregate, local_seed, partition_users, run_federated, run_federated_with_attacker, AttackerConfig, FedConfig, FedDefense, UploadRule};
use dpgen::nn::{one_hot, Differentiable, LayerSpec, LossKind, Network, Role};
use proptest::prelude::*;

fn bundle(classes: usize) -> DatasetBundle {
    let all = synthetic_binary(16, classes, 800, 11);
    let train = all.select(&(0..600).collect::<Vec<_>>());
    let test = all.select(&(600..800).collect::<Vec<_>>());
    make_splits("toy", train, test, Normalization::identity(16), SplitPolicy { public_fraction_of_test: 0.5, seed: 3 }).unwrap()
}

fn specs(outputs: usize) -> Vec<LayerSpec> {
    vec![LayerSpec::relu(16, 32), LayerSpec::softmax(32, outputs)]
}

fn cfg(n_users: usize, rounds: usize, fraction: f64) -> FedConfig {
    FedConfig {
        n_users,
        rounds,
        upload_fraction: fraction,
        local_learning_rate: 0.05,
        local_batch: 16,
        local_momentum: 0.0,
        local_optimizer: Optimizer::Sgd,
        upload_rule: UploadRule::TopAbsDelta,
        defense: FedDefense::None,
        attacker: None,
        seed: 5,
    }
}

#[test]
fn partition_is_balanced_and_complete() {
    let b = bundle(3);
    let shards = partition_users(&b, 7, 1).unwrap();
    let sizes: Vec<usize> = shards.iter().map(|s| s.private.len()).collect();
    assert_eq!(sizes.iter().sum::<usize>(), b.private.len());
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    assert_eq!(shards.iter().map(|s| s.public.len()).sum::<usize>(), b.public.len());
    assert!(partition_users(&b, 0, 1).is_err());
}

#[test]
fn single_user_full_upload_is_centralized_sgd() {
    let b = bundle(3);
    let c = cfg(1, 4, 1.0);
    let report = run_federated(&b, &specs(3), &c).unwrap();

    let data = &partition_users(&b, 1, c.seed).unwrap()[0].private;
    let mut net = Network::new(Role::Classifier, &specs(3), c.seed).unwrap();
    let targets = one_hot(&data.labels, 3);
    for round in 0..c.rounds {
        let sgd = SgdConfig { learning_rate: 0.05, batch_size: 16, epochs: 1, seed: local_seed(c.seed, round, 0), momentum: 0.0, optimizer: Optimizer::Sgd };
        train_sgd(&mut net, &data.features, &targets, LossKind::CrossEntropy, &sgd).unwrap();
        let pred = net.predict(&b.test.features).unwrap();
        let hits = pred
            .iter_rows()
            .zip(&b.test.labels)
            .filter(|(r, &l)| r.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 == l)
            .count();
        assert_eq!(report.per_round_test_accuracy[round], hits as f64 / b.test.len() as f64);
    }
}

#[test]
fn runs_are_deterministic_and_learn() {
    let b = bundle(3);
    let mut c = cfg(4, 5, 0.1);
    let a = run_federated(&b, &specs(3), &c).unwrap();
    assert_eq!(a, run_federated(&b, &specs(3), &c).unwrap());
    assert!(a.final_accuracy > 0.6, "{:?}", a.per_round_test_accuracy);
    c.upload_rule = UploadRule::Random;
    let r = run_federated(&b, &specs(3), &c).unwrap();
    assert_eq!(r, run_federated(&b, &specs(3), &c).unwrap());
}

#[test]
fn idle_attacker_changes_nothing() {
    let b = bundle(2);
    let honest = cfg(3, 3, 0.5);
    let mut idle = honest.clone();
    idle.attacker = Some(AttackerConfig {
        attacker_user: 0,
        victim_user: 1,
        victim_class: 0,
        gan: GanConfig { generator_steps: 0, discriminator_steps: 0, ..GanConfig::default() },
    });
    let h = run_federated(&b, &specs(3), &honest).unwrap();
    let i = run_federated_with_attacker(&b, &specs(3), &idle).unwrap();
    assert_eq!(h.per_round_test_accuracy, i.per_round_test_accuracy);
    assert_eq!(i.attack_trace.unwrap().len(), 3);
    assert!(run_federated_with_attacker(&b, &specs(3), &honest).is_err());
}

#[test]
fn gan_attacker_recovers_victim_class() {
    let b = bundle(2);
    let mut c = cfg(2, 20, 1.0);
    c.local_learning_rate = 0.1;
    c.attacker = Some(AttackerConfig {
        attacker_user: 0,
        victim_user: 1,
        victim_class: 0,
        gan: GanConfig { noise_dim: 10, batch: 32, generator_steps: 5, generator_lr: 0.05, discriminator_steps: 1, discriminator_lr: 0.05 },
    });
    let report = run_federated(&b, &specs(3), &c).unwrap();
    let trace = report.attack_trace.unwrap();
    let last = *trace.last().unwrap();
    let maxima: Vec<f64> = trace.chunks(4).map(|w| w.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    assert!(maxima.windows(2).all(|w| w[1] >= w[0]), "{trace:?}");
    // recorded toy run
    assert!((last - 0.9730787330921087).abs() < 1e-9, "{last}");
}

#[test]
fn attacker_needs_fake_class_and_distinct_users() {
    let b = bundle(2);
    let mut c = cfg(2, 1, 1.0);
    c.attacker = Some(AttackerConfig { attacker_user: 0, victim_user: 1, victim_class: 0, gan: GanConfig::default() });
    assert!(run_federated(&b, &specs(2), &c).is_err());
    c.attacker.as_mut().unwrap().victim_user = 0;
    assert!(run_federated(&b, &specs(3), &c).is_err());
}

proptest! {
    #[test]
    fn aggregate_conserves_parameters(
        global in prop::collection::vec(-5.0f64..5.0, 1..30),
        seeds in prop::collection::vec(any::<u64>(), 1..6),
        full in any::<bool>(),
    ) {
        let p = global.len();
        let uploads: Vec<(Vec<usize>, Vec<f64>)> = seeds
            .iter()
            .map(|&s| {
                let vals: Vec<f64> = (0..p).map(|i| ((s.wrapping_add(i as u64 * 7919) % 1000) as f64 / 100.0) - 5.0).collect();
                let idx: Vec<usize> = if full { (0..p).collect() } else { (0..p).filter(|i| (s >> (i % 60)) & 1 == 1).collect() };
                (idx, vals)
            })
            .collect();
        let out = aggregate(&global, &uploads);
        for i in 0..p {
            let vals: Vec<f64> = uploads.iter().filter(|(idx, _)| idx.contains(&i)).map(|(_, v)| v[i]).collect();
            if vals.is_empty() {
                prop_assert_eq!(out[i], global[i]);
            } else {
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                prop_assert!((out[i] - mean).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn config_rejects_unknown_fields() {
    let mut v = serde_json::to_value(cfg(2, 1, 0.5)).unwrap();
    v["bogus"] = serde_json::json!(1);
    assert!(serde_json::from_value::<FedConfig>(v).is_err());
    let bad = FedConfig { upload_fraction: 0.0, ..cfg(2, 1, 0.5) };
    assert!(bad.validate().is_err());
    let _ = Differentiable::param_count(&Network::new(Role::Classifier, &specs(2), 0).unwrap());
}

#[test]
fn defended_users_train_on_encoded_public_rows() {
    let b = bundle(2);
    let mut c = cfg(2, 3, 0.5);
    let budget = PrivacySpec::new(2.0, 1e-5).unwrap();
    c.defense = FedDefense::Augm {
        budget,
        autoencoder: AutoencoderSpec { layers: vec![LayerSpec::sigmoid(16, 6), LayerSpec::sigmoid(6, 16)], encoder_depth: 1 },
        dp_sgd: DpSgdConfig { clip_norm: 1.0, noise_multiplier: 1.0, batch_size: 20, learning_rate: 0.5, epochs: 2, seed: 9, optimizer: Optimizer::Sgd },
    };
    c.attacker = Some(AttackerConfig { attacker_user: 0, victim_user: 1, victim_class: 0, gan: GanConfig { noise_dim: 4, batch: 8, ..GanConfig::default() } });
    let enc_specs = vec![LayerSpec::relu(6, 8), LayerSpec::softmax(8, 3)];
    let report = run_federated(&b, &enc_specs, &c).unwrap();
    let budgets = report.user_budgets.unwrap();
    assert_eq!(budgets.len(), 2);
    assert!(budgets.iter().all(|s| s.epsilon <= budget.epsilon && s.delta == budget.delta));
    assert_eq!(report.attack_trace.unwrap().len(), 3);
    assert!(report.similarity_space.unwrap().contains("encoded"));
    // raw-width model cannot consume encoded rows
    assert!(run_federated(&b, &specs(3), &c).is_err());
}
