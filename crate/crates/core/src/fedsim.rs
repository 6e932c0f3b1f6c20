//! In-process federated averaging with selective parameter upload, optional
//! per-user DP-AuGM preprocessing, and an optional GAN attacker.

use std::io::Write;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{gan_attack_round, gan_generator, pearson, GanConfig};
use crate::data::{DatasetBundle, Labeled};
use crate::dp::{train_sgd, DpSgdConfig, Optimizer, PrivacySpec, SgdConfig};
use crate::error::{Error, Result};
use crate::genmodels::{argmax_rows, generate_augm, train_augm_with_init, AugmModel, AutoencoderSpec, Standardizer};
use crate::nn::{one_hot, Differentiable, LayerSpec, LossKind, Matrix, Network, Role};

/// One participant's private rows and public rows.
#[derive(Debug, Clone, PartialEq)]
pub struct UserShard {
    pub private: Labeled,
    pub public: Labeled,
}

fn split_even(n: usize, parts: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let (base, extra) = (n / parts, n % parts);
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Seeded split of the private and public sets into `n_users` shards whose
/// sizes differ by at most one.
pub fn partition_users(bundle: &DatasetBundle, n_users: usize, seed: u64) -> Result<Vec<UserShard>> {
    if n_users == 0 {
        return Err(Error::Config("need at least one user".into()));
    }
    if bundle.private.len() < n_users || bundle.public.len() < n_users {
        return Err(Error::InsufficientData(format!(
            "{} private and {} public rows cannot be shared by {n_users} users",
            bundle.private.len(),
            bundle.public.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let private = split_even(bundle.private.len(), n_users, &mut rng);
    let public = split_even(bundle.public.len(), n_users, &mut rng);
    Ok(private
        .iter()
        .zip(&public)
        .map(|(a, b)| UserShard { private: bundle.private.select(a), public: bundle.public.select(b) })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UploadRule {
    /// The coordinates with the largest absolute local change.
    #[default]
    TopAbsDelta,
    /// A uniformly random subset of coordinates.
    Random,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FedDefense {
    #[default]
    None,
    /// Every user trains an encoder on their private shard under `budget` and
    /// then only trains on their encoded public shard.
    Augm { budget: PrivacySpec, autoencoder: AutoencoderSpec, dp_sgd: DpSgdConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerConfig {
    pub attacker_user: usize,
    pub victim_user: usize,
    pub victim_class: usize,
    #[serde(default)]
    pub gan: GanConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedConfig {
    pub n_users: usize,
    pub rounds: usize,
    pub upload_fraction: f64,
    pub local_learning_rate: f64,
    pub local_batch: usize,
    #[serde(default)]
    pub local_momentum: f64,
    #[serde(default)]
    pub local_optimizer: Optimizer,
    #[serde(default)]
    pub upload_rule: UploadRule,
    #[serde(default)]
    pub defense: FedDefense,
    #[serde(default)]
    pub attacker: Option<AttackerConfig>,
    pub seed: u64,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(Error::Config("need at least one user".into()));
        }
        if !(self.upload_fraction > 0.0 && self.upload_fraction <= 1.0) {
            return Err(Error::Config(format!("upload fraction {} must lie in (0, 1]", self.upload_fraction)));
        }
        if let Some(a) = &self.attacker {
            if self.n_users < 2 {
                return Err(Error::Config("an attacker needs at least one other user".into()));
            }
            if a.attacker_user >= self.n_users || a.victim_user >= self.n_users || a.attacker_user == a.victim_user {
                return Err(Error::Config("attacker and victim must be distinct users".into()));
            }
        }
        if let FedDefense::Augm { budget, autoencoder, .. } = &self.defense {
            budget.validate()?;
            autoencoder.validate()?;
        }
        self.local_sgd(0, 0).validate()
    }

    fn local_sgd(&self, round: usize, user: usize) -> SgdConfig {
        SgdConfig {
            learning_rate: self.local_learning_rate,
            batch_size: self.local_batch,
            epochs: 1,
            seed: local_seed(self.seed, round, user),
            momentum: self.local_momentum,
            optimizer: self.local_optimizer,
        }
    }
}

/// Seed of `user`'s local training in `round`.
pub fn local_seed(seed: u64, round: usize, user: usize) -> u64 {
    seed ^ (((round as u64) << 32) | user as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedRunReport {
    pub per_round_test_accuracy: Vec<f64>,
    pub final_accuracy: f64,
    /// Correlation between the mean generated sample and the victim's class
    /// mean, one entry per round.
    pub attack_trace: Option<Vec<f64>>,
    /// Spent budget of each user's encoder under the AuGM defense.
    pub user_budgets: Option<Vec<PrivacySpec>>,
    pub n_users: usize,
    pub rounds: usize,
    pub upload_fraction: f64,
    pub upload_rule: UploadRule,
    pub round_unit: String,
    /// Space in which the attack trace is measured.
    pub similarity_space: Option<String>,
    pub seed: u64,
}

impl FedRunReport {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// `round,accuracy[,similarity]` per line.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        match &self.attack_trace {
            Some(_) => writeln!(f, "round,accuracy,similarity")?,
            None => writeln!(f, "round,accuracy")?,
        }
        for (r, a) in self.per_round_test_accuracy.iter().enumerate() {
            match &self.attack_trace {
                Some(t) => writeln!(f, "{},{a},{}", r + 1, t[r])?,
                None => writeln!(f, "{},{a}", r + 1)?,
            }
        }
        f.flush()?;
        Ok(())
    }
}

/// A user's map from raw rows to the shared model's input space.
struct Transform {
    encoder: AugmModel,
    scaler: Standardizer,
}

impl Transform {
    fn apply(&self, raw: &Matrix) -> Result<Matrix> {
        self.scaler.apply(&self.encoder.encoder.predict(raw)?)
    }
}

struct User {
    x: Matrix,
    y: Vec<usize>,
    transform: Option<Transform>,
}

/// Coordinates a user uploads this round.
fn select_uploads(global: &[f64], local: &[f64], k: usize, rule: UploadRule, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let p = global.len();
    if k >= p {
        return (0..p).collect();
    }
    match rule {
        UploadRule::TopAbsDelta => {
            let mut idx: Vec<usize> = (0..p).collect();
            let delta = |i: usize| (local[i] - global[i]).abs();
            idx.select_nth_unstable_by(k - 1, |&a, &b| delta(b).total_cmp(&delta(a)).then(a.cmp(&b)));
            idx.truncate(k);
            idx
        }
        UploadRule::Random => index::sample(rng, p, k).into_vec(),
    }
}

/// Mean of the uploaded values per coordinate; coordinates nobody uploaded keep `global`.
pub fn aggregate(global: &[f64], uploads: &[(Vec<usize>, Vec<f64>)]) -> Vec<f64> {
    let mut sums = vec![0.0; global.len()];
    let mut counts = vec![0u32; global.len()];
    for (idx, values) in uploads {
        for &i in idx {
            sums[i] += values[i];
            counts[i] += 1;
        }
    }
    global.iter().zip(sums.iter().zip(&counts)).map(|(&g, (&s, &c))| if c > 0 { s / c as f64 } else { g }).collect()
}

fn accuracy_on(model: &Network, x: &Matrix, labels: &[usize], n_classes: usize) -> Result<f64> {
    let p = model.predict(x)?;
    let hits = p
        .iter_rows()
        .map(|r| argmax_rows(&Matrix::from_vec(1, n_classes, r[..n_classes].to_vec()).expect("sized"))[0])
        .zip(labels)
        .filter(|(a, b)| a == *b)
        .count();
    Ok(hits as f64 / labels.len().max(1) as f64)
}

/// Runs `cfg.rounds` rounds of federated training of a classifier built from
/// `model_specs`. Its output layer has either one unit per class or one extra
/// unit that an attacker uses as the "fake" class; an attacker requires the extra unit.
/// One round is one local epoch per user.
pub fn run_federated(bundle: &DatasetBundle, model_specs: &[LayerSpec], cfg: &FedConfig) -> Result<FedRunReport> {
    cfg.validate()?;
    let n_classes = bundle.n_classes();
    let shards = partition_users(bundle, cfg.n_users, cfg.seed)?;

    let mut users = Vec::with_capacity(cfg.n_users);
    let mut budgets = Vec::new();
    for (u, shard) in shards.iter().enumerate() {
        match &cfg.defense {
            FedDefense::None => users.push(User { x: shard.private.features.clone(), y: shard.private.labels.clone(), transform: None }),
            FedDefense::Augm { budget, autoencoder, dp_sgd } => {
                let dp = DpSgdConfig { seed: dp_sgd.seed.wrapping_add(u as u64), ..dp_sgd.clone() }.calibrated(shard.private.len(), *budget)?;
                // shared architecture and initialization, private sampling and noise
                let encoder = train_augm_with_init(&shard.private.features, autoencoder, dp_sgd.seed, &dp, budget.delta)?;
                budgets.push(encoder.spent);
                let generated = generate_augm(&encoder, &shard.public.features, &shard.public.labels)?;
                let scaler = Standardizer::fit(&generated.features);
                users.push(User { x: scaler.apply(&generated.features)?, y: generated.labels, transform: Some(Transform { encoder, scaler }) });
            }
        }
    }

    let mut global = Network::new(Role::Classifier, model_specs, cfg.seed)?;
    let in_dim = users[0].x.cols();
    if global.input_dim() != in_dim {
        return Err(Error::Dimension(format!("model takes {} features, users hold {in_dim}", global.input_dim())));
    }
    let out_dim = global.output_dim();
    if out_dim != n_classes && out_dim != n_classes + 1 {
        return Err(Error::Dimension(format!("model has {out_dim} outputs for {n_classes} classes")));
    }
    if cfg.attacker.is_some() && out_dim != n_classes + 1 {
        return Err(Error::Config("an attacker needs one extra output unit for the fake class".into()));
    }

    let test_inputs: Vec<Matrix> = match &cfg.defense {
        FedDefense::None => vec![bundle.test.features.clone()],
        FedDefense::Augm { .. } => users.iter().map(|u| u.transform.as_ref().expect("defended").apply(&bundle.test.features)).collect::<Result<_>>()?,
    };

    let mut attack = match &cfg.attacker {
        Some(a) => {
            let victim = &shards[a.victim_user].private;
            let idx: Vec<usize> = victim.labels.iter().enumerate().filter(|(_, &l)| l == a.victim_class).map(|(i, _)| i).collect();
            if idx.is_empty() {
                return Err(Error::InsufficientData(format!("victim holds no rows of class {}", a.victim_class)));
            }
            let rows = victim.features.select_rows(&idx);
            let reference = match &users[a.victim_user].transform {
                Some(t) => t.apply(&rows)?,
                None => rows,
            }
            .column_means();
            let generator = gan_generator(a.gan.noise_dim, in_dim, cfg.seed.wrapping_add(77))?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(3);
            Some((a.clone(), generator, rng, reference, Vec::with_capacity(cfg.rounds)))
        }
        None => None,
    };

    let mut upload_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    upload_rng.set_stream(2);
    let p = global.param_count();
    let k = ((cfg.upload_fraction * p as f64).ceil() as usize).clamp(1, p);
    let mut accuracy = Vec::with_capacity(cfg.rounds);

    for round in 0..cfg.rounds {
        let g = global.flat_params();
        let mut uploads = Vec::with_capacity(cfg.n_users);
        for (u, user) in users.iter().enumerate() {
            let mut local = global.clone();
            let mut x = user.x.clone();
            let mut y = user.y.clone();
            if let Some((a, generator, rng, reference, trace)) = attack.as_mut().filter(|t| t.0.attacker_user == u) {
                let fake = gan_attack_round(generator, &mut local, a.victim_class, out_dim - 1, &a.gan, rng)?;
                trace.push(pearson(&fake.column_means(), reference));
                if a.gan.generator_steps + a.gan.discriminator_steps > 0 {
                    x = x.vstack(&fake)?;
                    y.extend(std::iter::repeat_n(out_dim - 1, fake.rows()));
                }
            }
            train_sgd(&mut local, &x, &one_hot(&y, out_dim), LossKind::CrossEntropy, &cfg.local_sgd(round, u))?;
            let l = local.flat_params();
            let sel = select_uploads(&g, &l, k, cfg.upload_rule, &mut upload_rng);
            uploads.push((sel, l));
        }
        global.set_flat_params(&aggregate(&g, &uploads))?;
        let acc: f64 = test_inputs.iter().map(|x| accuracy_on(&global, x, &bundle.test.labels, n_classes)).sum::<Result<f64>>()? / test_inputs.len() as f64;
        accuracy.push(acc);
    }

    Ok(FedRunReport {
        final_accuracy: accuracy.last().copied().unwrap_or(f64::NAN),
        per_round_test_accuracy: accuracy,
        attack_trace: attack.map(|t| t.4),
        user_budgets: (!budgets.is_empty()).then_some(budgets),
        n_users: cfg.n_users,
        rounds: cfg.rounds,
        upload_fraction: cfg.upload_fraction,
        upload_rule: cfg.upload_rule,
        round_unit: "one local epoch per user".into(),
        similarity_space: cfg.attacker.as_ref().map(|_| match cfg.defense {
            FedDefense::None => "raw features".into(),
            FedDefense::Augm { .. } => "victim's encoded, standardized features (no decoder is published)".into(),
        }),
        seed: cfg.seed,
    })
}

/// [`run_federated`] with the attacker required.
pub fn run_federated_with_attacker(bundle: &DatasetBundle, model_specs: &[LayerSpec], cfg: &FedConfig) -> Result<FedRunReport> {
    if cfg.attacker.is_none() {
        return Err(Error::Config("no attacker configured".into()));
    }
    run_federated(bundle, model_specs, cfg)
}
