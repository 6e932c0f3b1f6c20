use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, Labeled};
use crate::dp::{train_sgd, PrivacySpec, SgdConfig};
use crate::error::{Error, Result};
use crate::genmodels::{argmax_rows, DownstreamModel, Standardizer};
use crate::nn::{one_hot, LayerSpec, LossKind, Matrix, Network, Role};

/// Inference precision gain over random guessing: `(P − 0.5)/0.5` above one half, else 0.
pub fn privacy_loss(precision: f64) -> f64 {
    if precision > 0.5 {
        (precision - 0.5) / 0.5
    } else {
        0.0
    }
}

/// Anything that maps raw rows to class probabilities.
pub trait ConfidenceModel {
    fn confidences(&self, rows: &Matrix) -> Result<Matrix>;

    /// Budget the model was trained under, when it was trained privately.
    fn budget(&self) -> Option<PrivacySpec> {
        None
    }
}

impl ConfidenceModel for Network {
    fn confidences(&self, rows: &Matrix) -> Result<Matrix> {
        self.predict(rows)
    }
}

impl ConfidenceModel for DownstreamModel {
    fn confidences(&self, rows: &Matrix) -> Result<Matrix> {
        self.predict_proba(rows)
    }

    fn budget(&self) -> Option<PrivacySpec> {
        self.spent.epsilon.is_finite().then_some(self.spent)
    }
}

/// Trains a model on the given members with the given seed.
pub type TrainFn<'a> = dyn Fn(&Labeled, u64) -> Result<Box<dyn ConfidenceModel>> + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Defense {
    None,
    Augm,
    Vaegm,
}

fn default_eval() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembershipConfig {
    pub shadow_count: usize,
    pub target_train_size: usize,
    /// Per-class attack classifier over log-confidence features. Empty means a
    /// single softmax layer (logistic regression).
    #[serde(default)]
    pub attack_model_specs: Vec<LayerSpec>,
    pub attack_sgd: SgdConfig,
    #[serde(default = "default_eval")]
    pub eval_members: usize,
    #[serde(default = "default_eval")]
    pub eval_non_members: usize,
    pub seed: u64,
}

impl MembershipConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shadow_count == 0 {
            return Err(Error::Config("need at least one shadow model".into()));
        }
        if self.target_train_size == 0 {
            return Err(Error::Config("target training set is empty".into()));
        }
        if self.eval_members == 0 || self.eval_non_members == 0 {
            return Err(Error::Config("evaluation sets must be nonempty".into()));
        }
        self.attack_sgd.validate()
    }

    fn attack_specs(&self, n_classes: usize) -> Vec<LayerSpec> {
        if self.attack_model_specs.is_empty() {
            vec![LayerSpec::softmax(n_classes, 2)]
        } else {
            self.attack_model_specs.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackMetadata {
    pub shadow_count: usize,
    pub target_train_size: usize,
    pub eval_members: usize,
    pub eval_non_members: usize,
    pub attack_model: Vec<LayerSpec>,
    pub attack_features: String,
    pub shadow_data: String,
    pub seed: u64,
    pub target_budget: Option<PrivacySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub defense: Defense,
    pub per_class_precision: Vec<f64>,
    pub per_class_pl: Vec<f64>,
    /// Evaluation records the attack flagged as members, per class.
    pub per_class_flagged: Vec<usize>,
    /// Members (and, equally many, non-members) scored per class.
    pub per_class_evaluated: Vec<usize>,
    pub target_test_accuracy: Option<f64>,
    pub metadata: AttackMetadata,
}

impl AttackReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

const LOG_FLOOR: f64 = 1e-6;

fn log_features(conf: &Matrix) -> Matrix {
    conf.map(|p| p.max(LOG_FLOOR).ln())
}

/// Shadow-model membership inference against the model produced by `target`.
///
/// The private split is shuffled once and carved into the target's members, a
/// reserved set of non-members, and a pool from which every shadow draws its
/// own disjoint in/out halves. Shadows are trained by `shadow` on real rows.
/// One attack classifier per class learns in/out from shadow confidences and
/// is scored on up to `eval_members` members and `eval_non_members`
/// non-members of the target, trimmed to equal counts within each class.
pub fn membership_attack(target: &TrainFn, shadow: &TrainFn, bundle: &DatasetBundle, cfg: &MembershipConfig, defense: Defense) -> Result<AttackReport> {
    ShadowAttack::train(shadow, bundle, cfg)?.evaluate(target, bundle, defense)
}

/// Trained per-class attack models plus the member/non-member carving they
/// will be evaluated on. Reusable across targets trained on the same members.
pub struct ShadowAttack {
    cfg: MembershipConfig,
    members: Labeled,
    non_members: Labeled,
    specs: Vec<LayerSpec>,
    /// `None` for a class no shadow record fell into.
    per_class: Vec<Option<(Standardizer, Network)>>,
}

impl ShadowAttack {
    pub fn train(shadow: &TrainFn, bundle: &DatasetBundle, cfg: &MembershipConfig) -> Result<Self> {
        cfg.validate()?;
        let pool = &bundle.private;
        let n_classes = bundle.n_classes();
        let size = cfg.target_train_size;
        let need = size + cfg.eval_non_members + 2 * size;
        if pool.len() < need {
            return Err(Error::InsufficientData(format!("membership attack needs {need} private rows, have {}", pool.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng);
        let members = pool.select(&order[..size]);
        let non_members = pool.select(&order[size..size + cfg.eval_non_members]);
        let mut shadow_pool: Vec<usize> = order[size + cfg.eval_non_members..].to_vec();

        // shadow confidences grouped by true class: (features, in/out)
        let mut grouped: Vec<(Vec<Vec<f64>>, Vec<usize>)> = vec![(Vec::new(), Vec::new()); n_classes];
        for s in 0..cfg.shadow_count {
            shadow_pool.partial_shuffle(&mut rng, 2 * size);
            let (inside, outside) = shadow_pool[..2 * size].split_at(size);
            let (inside, outside) = (pool.select(inside), pool.select(outside));
            let model = shadow(&inside, cfg.seed.wrapping_add(1 + s as u64))?;
            for (set, flag) in [(&inside, 1usize), (&outside, 0usize)] {
                let feats = log_features(&model.confidences(&set.features)?);
                for (row, &label) in feats.iter_rows().zip(&set.labels) {
                    grouped[label].0.push(row.to_vec());
                    grouped[label].1.push(flag);
                }
            }
        }

        let specs = cfg.attack_specs(n_classes);
        let mut per_class = Vec::with_capacity(n_classes);
        for (c, (rows, flags)) in grouped.iter().enumerate() {
            if rows.is_empty() {
                per_class.push(None);
                continue;
            }
            let x = Matrix::from_rows(rows)?;
            let scaler = Standardizer::fit(&x);
            let mut attack = Network::new(Role::Classifier, &specs, cfg.seed.wrapping_add(10_000 + c as u64))?;
            train_sgd(&mut attack, &scaler.apply(&x)?, &one_hot(flags, 2), LossKind::CrossEntropy, &cfg.attack_sgd)?;
            per_class.push(Some((scaler, attack)));
        }
        Ok(Self { cfg: cfg.clone(), members, non_members, specs, per_class })
    }

    /// The rows `target` must be trained on for [`Self::evaluate`].
    pub fn members(&self) -> &Labeled {
        &self.members
    }

    /// Trains the target on the carved members and scores the attack against it.
    pub fn evaluate(&self, target: &TrainFn, bundle: &DatasetBundle, defense: Defense) -> Result<AttackReport> {
        let cfg = &self.cfg;
        let target_model = target(&self.members, cfg.seed)?;
        let target_test_accuracy = target_model.confidences(&bundle.test.features).ok().map(|c| {
            let hits = argmax_rows(&c).iter().zip(&bundle.test.labels).filter(|(p, l)| p == l).count();
            hits as f64 / bundle.test.len() as f64
        });

        let eval_members = self.members.select(&(0..cfg.eval_members.min(self.members.len())).collect::<Vec<_>>());
        let n_classes = self.per_class.len();
        let mut precision = Vec::with_capacity(n_classes);
        let mut flagged = Vec::with_capacity(n_classes);
        let mut evaluated = vec![0; n_classes];
        let mut eval_feats = Vec::new();
        for (set, flag) in [(&eval_members, 1usize), (&self.non_members, 0usize)] {
            let f = log_features(&target_model.confidences(&set.features)?);
            for (row, &label) in f.iter_rows().zip(&set.labels) {
                eval_feats.push((row.to_vec(), label, flag));
            }
        }
        for (c, model) in self.per_class.iter().enumerate() {
            // equal members and non-members per class, so guessing scores 0.5
            let ins: Vec<&(Vec<f64>, usize, usize)> = eval_feats.iter().filter(|e| e.1 == c && e.2 == 1).collect();
            let outs: Vec<&(Vec<f64>, usize, usize)> = eval_feats.iter().filter(|e| e.1 == c && e.2 == 0).collect();
            let k = ins.len().min(outs.len());
            evaluated[c] = k;
            let probe: Vec<&(Vec<f64>, usize, usize)> = ins[..k].iter().chain(&outs[..k]).copied().collect();
            let Some((scaler, attack)) = model.as_ref().filter(|_| k > 0) else {
                precision.push(0.0);
                flagged.push(0);
                continue;
            };
            let px = Matrix::from_rows(&probe.iter().map(|e| e.0.as_slice()).collect::<Vec<_>>())?;
            let guess = argmax_rows(&attack.predict(&scaler.apply(&px)?)?);
            let (mut tp, mut fp) = (0usize, 0usize);
            for (g, e) in guess.iter().zip(&probe) {
                if *g == 1 {
                    if e.2 == 1 {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            // no flagged records: nothing is inferred, precision counts as 0
            precision.push(if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 });
            flagged.push(tp + fp);
        }

        Ok(AttackReport {
            defense,
            per_class_pl: precision.iter().map(|&p| privacy_loss(p)).collect(),
            per_class_precision: precision,
            per_class_flagged: flagged,
            per_class_evaluated: evaluated,
            target_test_accuracy,
            metadata: AttackMetadata {
                shadow_count: cfg.shadow_count,
                target_train_size: cfg.target_train_size,
                eval_members: eval_members.len(),
                eval_non_members: cfg.eval_non_members,
                attack_model: self.specs.clone(),
                attack_features: "log confidence vector, standardized per class".into(),
                shadow_data: "disjoint in/out halves drawn from held-out private rows".into(),
                seed: cfg.seed,
                target_budget: target_model.budget(),
            },
        })
    }
}
