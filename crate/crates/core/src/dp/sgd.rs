use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::accountant::{get_epsilon, sigma_for_budget, AccountantState};
use super::clip::{add_noise_and_average, clip_factor};
use crate::error::{Error, Result};
use crate::nn::{Differentiable, LossKind, Matrix};

/// An `(ε, δ)` pair. `ε = +∞` marks a non-private result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    #[serde(with = "crate::serde_util::f64_nonfinite")]
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacySpec {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let p = Self { epsilon, delta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta {} must lie in (0, 1)", self.delta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSgdConfig {
    /// L2 bound `C` on each per-example gradient; `null`/`+∞` disables clipping
    /// and is only accepted together with `noise_multiplier = 0`.
    #[serde(with = "crate::serde_util::f64_nonfinite")]
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    /// Expected batch size `B`; each example joins a step with probability `B/N`.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Rule that turns the privatized gradient into a parameter step.
    #[serde(default)]
    pub optimizer: Optimizer,
}

/// Update rule applied to the noisy averaged gradient. Anything computed from
/// that gradient alone is post-processing and leaves the privacy cost unchanged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Sgd,
    /// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    Adam,
}

struct Stepper {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Stepper {
    fn new(kind: Optimizer, dim: usize) -> Self {
        let n = if kind == Optimizer::Adam { dim } else { 0 };
        Self { kind, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step<M: Differentiable + ?Sized>(&mut self, model: &mut M, grad: &[f64], lr: f64) {
        match self.kind {
            Optimizer::Sgd => model.apply_update(grad, lr),
            Optimizer::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                self.t += 1;
                let c1 = 1.0 - B1.powi(self.t);
                let c2 = 1.0 - B2.powi(self.t);
                let dir: Vec<f64> = grad
                    .iter()
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                    .map(|(&g, (m, v))| {
                        *m = B1 * *m + (1.0 - B1) * g;
                        *v = B2 * *v + (1.0 - B2) * g * g;
                        (*m / c1) / ((*v / c2).sqrt() + 1e-8)
                    })
                    .collect();
                model.apply_update(&dir, lr);
            }
        }
    }
}

impl DpSgdConfig {
    pub fn validate(&self, n_examples: usize) -> Result<()> {
        if n_examples == 0 {
            return Err(Error::InsufficientData("training set is empty".into()));
        }
        if self.batch_size == 0 || self.batch_size > n_examples {
            return Err(Error::Config(format!(
                "batch size {} must lie in [1, {n_examples}]",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::Config(format!("noise multiplier {} must be >= 0", self.noise_multiplier)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip norm {} must be positive", self.clip_norm)));
        }
        if self.clip_norm.is_infinite() && self.noise_multiplier > 0.0 {
            return Err(Error::Config("unbounded clip norm is only allowed in non-private mode (noise_multiplier = 0)".into()));
        }
        Ok(())
    }

    pub fn sampling_rate(&self, n_examples: usize) -> f64 {
        self.batch_size as f64 / n_examples as f64
    }

    pub fn steps_per_epoch(&self, n_examples: usize) -> u64 {
        n_examples.div_ceil(self.batch_size) as u64
    }

    pub fn total_steps(&self, n_examples: usize) -> u64 {
        self.epochs as u64 * self.steps_per_epoch(n_examples)
    }

    /// Copy of this config whose noise multiplier is the smallest (to within the
    /// bisection tolerance) that keeps training on `n_examples` within `target`.
    pub fn calibrated(&self, n_examples: usize, target: PrivacySpec) -> Result<Self> {
        target.validate()?;
        if self.batch_size == 0 || self.batch_size > n_examples {
            return Err(Error::Config(format!("batch size {} must lie in [1, {n_examples}]", self.batch_size)));
        }
        let sigma = sigma_for_budget(self.sampling_rate(n_examples), self.total_steps(n_examples), target.epsilon, target.delta)?;
        let clip_norm = if self.clip_norm.is_finite() { self.clip_norm } else { 1.0 };
        Ok(Self { noise_multiplier: sigma, clip_norm, ..self.clone() })
    }
}

/// A model together with the privacy it spent.
#[derive(Debug, Clone)]
pub struct TrainedModel<M> {
    pub model: M,
    pub accountant: AccountantState,
    pub spent: PrivacySpec,
    /// Mean training loss over the examples sampled in each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Draws a Poisson-subsampled batch: each index independently with probability `q`.
pub fn poisson_batch(n: usize, q: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).filter(|_| rng.random::<f64>() < q).collect()
}

/// Independent generator for stochastic model internals (e.g. VAE sampling noise).
pub(crate) fn model_stream(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(1);
    r
}

/// DP-SGD: per step, Poisson-sample a batch, clip every per-example gradient to
/// `C`, add `N(0, σ²C²)` to the sum, divide by the expected batch size and take
/// a gradient step. The accountant advances once per step.
pub fn train_dp<M: Differentiable>(
    mut model: M,
    data: &Matrix,
    targets: &Matrix,
    loss: LossKind,
    cfg: &DpSgdConfig,
    delta: f64,
) -> Result<TrainedModel<M>> {
    let n = data.rows();
    cfg.validate(n)?;
    if targets.rows() != n {
        return Err(Error::Dimension(format!("{n} examples but {} targets", targets.rows())));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta {delta} must lie in (0, 1)")));
    }
    let q = cfg.sampling_rate(n);
    let mut accountant = AccountantState::new(q, cfg.noise_multiplier)?;
    let mut sampler = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model_rng = model_stream(cfg.seed);
    let steps_per_epoch = cfg.steps_per_epoch(n);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut stepper = Stepper::new(cfg.optimizer, model.param_count());

    for epoch in 0..cfg.epochs {
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for _ in 0..steps_per_epoch {
            let idx = poisson_batch(n, q, &mut sampler);
            let grad = private_gradient(&model, data, targets, &idx, loss, cfg, &mut sampler, &mut model_rng, &mut loss_sum)?;
            seen += idx.len();
            stepper.step(&mut model, &grad, cfg.learning_rate);
            accountant.advance(1);
        }
        let mean = if seen > 0 { loss_sum / seen as f64 } else { f64::NAN };
        if seen > 0 && !mean.is_finite() {
            return Err(Error::NonFinite(format!("training loss diverged in epoch {epoch}")));
        }
        epoch_losses.push(mean);
    }

    let spent = PrivacySpec { epsilon: get_epsilon(&accountant, delta), delta };
    Ok(TrainedModel { model, accountant, spent, epoch_losses })
}

/// Clipped, noised and averaged gradient of one sampled batch.
#[allow(clippy::too_many_arguments)]
fn private_gradient<M: Differentiable>(
    model: &M,
    data: &Matrix,
    targets: &Matrix,
    idx: &[usize],
    loss: LossKind,
    cfg: &DpSgdConfig,
    noise_rng: &mut ChaCha8Rng,
    model_rng: &mut ChaCha8Rng,
    loss_sum: &mut f64,
) -> Result<Vec<f64>> {
    let mut sum = if idx.is_empty() {
        vec![0.0; model.param_count()]
    } else {
        let bp = model.backprop(&data.select_rows(idx), &targets.select_rows(idx), loss, model_rng)?;
        if let Some(bad) = bp.losses.iter().position(|l| !l.is_finite()) {
            return Err(Error::NonFinite(format!("loss of example {} is not finite", idx[bad])));
        }
        *loss_sum += bp.losses.iter().sum::<f64>();
        let factors: Vec<f64> = if cfg.clip_norm.is_finite() {
            bp.per_example_sq_norms().into_iter().map(|s| clip_factor(s.sqrt(), cfg.clip_norm)).collect()
        } else {
            vec![1.0; idx.len()]
        };
        bp.weighted_gradient_sum(&factors)?
    };
    add_noise_and_average(&mut sum, cfg.clip_norm, cfg.noise_multiplier, cfg.batch_size, noise_rng);
    Ok(sum)
}

/// Hyper-parameters of ordinary (non-private) minibatch SGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Heavy-ball momentum; `0` is plain SGD. Ignored by `adam`.
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

/// Non-private SGD over shuffled minibatches. Returns the mean loss of each epoch.
pub fn train_sgd<M: Differentiable + ?Sized>(model: &mut M, data: &Matrix, targets: &Matrix, loss: LossKind, cfg: &SgdConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = data.rows();
    if n == 0 {
        return Err(Error::InsufficientData("training set is empty".into()));
    }
    if targets.rows() != n {
        return Err(Error::Dimension(format!("{n} examples but {} targets", targets.rows())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model_rng = model_stream(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let heavy_ball = cfg.momentum > 0.0 && cfg.optimizer == Optimizer::Sgd;
    let mut velocity = vec![0.0; if heavy_ball { model.param_count() } else { 0 }];
    let mut stepper = Stepper::new(cfg.optimizer, model.param_count());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let bp = model.backprop(&data.select_rows(chunk), &targets.select_rows(chunk), loss, &mut model_rng)?;
            total += bp.losses.iter().sum::<f64>();
            let grad = bp.mean_gradient()?;
            if heavy_ball {
                for (v, g) in velocity.iter_mut().zip(&grad) {
                    *v = cfg.momentum * *v + g;
                }
                model.apply_update(&velocity, cfg.learning_rate);
            } else {
                stepper.step(model, &grad, cfg.learning_rate);
            }
        }
        let mean = total / n as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("training loss diverged in epoch {epoch}")));
        }
        history.push(mean);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_network, LayerSpec};

    fn toy() -> (Matrix, Matrix) {
        let x = Matrix::from_vec(4, 2, vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        let t = Matrix::from_vec(4, 1, vec![0.0, 1.0, 1.0, 0.5]).unwrap();
        (x, t)
    }

    fn cfg() -> DpSgdConfig {
        DpSgdConfig { clip_norm: 1.0, noise_multiplier: 1.0, batch_size: 2, learning_rate: 0.1, epochs: 0, seed: 3, optimizer: Optimizer::Sgd }
    }

    #[test]
    fn zero_epochs_leave_model_and_budget_untouched() {
        let (x, t) = toy();
        let net = init_network(&[LayerSpec::identity(2, 1)], 1).unwrap();
        let out = train_dp(net.clone(), &x, &t, LossKind::Mse, &cfg(), 1e-5).unwrap();
        assert_eq!(out.model, net);
        assert_eq!(out.spent.epsilon, 0.0);
        assert_eq!(out.accountant.steps, 0);
    }

    #[test]
    fn spent_budget_matches_accountant() {
        let (x, t) = toy();
        let net = init_network(&[LayerSpec::identity(2, 1)], 1).unwrap();
        let out = train_dp(net, &x, &t, LossKind::Mse, &DpSgdConfig { epochs: 3, ..cfg() }, 1e-5).unwrap();
        assert_eq!(out.accountant.steps, 6);
        assert_eq!(out.spent.epsilon, get_epsilon(&out.accountant, 1e-5));
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate(1).is_err());
        assert!(DpSgdConfig { clip_norm: f64::INFINITY, ..cfg() }.validate(10).is_err());
        assert!(DpSgdConfig { clip_norm: f64::INFINITY, noise_multiplier: 0.0, ..cfg() }.validate(10).is_ok());
        assert!(DpSgdConfig { learning_rate: 0.0, ..cfg() }.validate(10).is_err());
    }

    #[test]
    fn infinite_clip_norm_survives_json() {
        let c = DpSgdConfig { clip_norm: f64::INFINITY, noise_multiplier: 0.0, ..cfg() };
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"clip_norm\":null"));
        assert_eq!(serde_json::from_str::<DpSgdConfig>(&s).unwrap(), c);
    }
}
