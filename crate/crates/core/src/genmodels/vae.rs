use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    softplus, Activation, Backprop, Differentiable, LayerSpec, LossKind, Matrix, Network, NetworkFile,
    Role,
};

/// Variational autoencoder: a shared encoder trunk, two heads producing the
/// latent mean and log-variance, and a decoder with a sigmoid output read as
/// Bernoulli means.
#[derive(Debug, Clone, PartialEq)]
pub struct Vae {
    trunk: Network,
    mu_head: Network,
    logvar_head: Network,
    decoder: Network,
}

/// `z = mu + exp(logvar / 2) ⊙ eta`.
pub fn reparameterize(mu: &Matrix, logvar: &Matrix, eta: &Matrix) -> Result<Matrix> {
    if mu.shape() != logvar.shape() || mu.shape() != eta.shape() {
        return Err(Error::Dimension(format!(
            "mu {:?}, logvar {:?} and eta {:?} differ in shape",
            mu.shape(),
            logvar.shape(),
            eta.shape()
        )));
    }
    let data = mu
        .as_slice()
        .iter()
        .zip(logvar.as_slice())
        .zip(eta.as_slice())
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect();
    Matrix::from_vec(mu.rows(), mu.cols(), data)
}

/// Draws an `rows x cols` matrix of independent standard normals.
pub fn standard_normal(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("length matches")
}

impl Vae {
    pub fn from_parts(trunk: Network, mu_head: Network, logvar_head: Network, decoder: Network) -> Result<Self> {
        let h = trunk.output_dim();
        if mu_head.input_dim() != h || logvar_head.input_dim() != h {
            return Err(Error::Dimension(format!(
                "heads take {} and {} inputs, trunk emits {h}",
                mu_head.input_dim(),
                logvar_head.input_dim()
            )));
        }
        if mu_head.output_dim() != logvar_head.output_dim() {
            return Err(Error::Dimension("mu and logvar heads disagree on the latent size".into()));
        }
        if decoder.input_dim() != mu_head.output_dim() {
            return Err(Error::Dimension(format!(
                "decoder takes {} inputs, latent size is {}",
                decoder.input_dim(),
                mu_head.output_dim()
            )));
        }
        if decoder.output_dim() != trunk.input_dim() {
            return Err(Error::Dimension("decoder output must match the encoder input".into()));
        }
        if decoder.output_activation() != Activation::Sigmoid {
            return Err(Error::Config("VAE decoder must end in a sigmoid".into()));
        }
        for head in [&mu_head, &logvar_head] {
            if head.output_activation() == Activation::Softmax {
                return Err(Error::Config("latent heads cannot use softmax".into()));
            }
        }
        Ok(Self {
            trunk: trunk.with_role(Role::Encoder),
            mu_head: mu_head.with_role(Role::Encoder),
            logvar_head: logvar_head.with_role(Role::Encoder),
            decoder: decoder.with_role(Role::Decoder),
        })
    }

    /// Builds and initializes a VAE from layer lists; each head is a single layer.
    pub fn new(trunk: &[LayerSpec], mu_head: LayerSpec, logvar_head: LayerSpec, decoder: &[LayerSpec], seed: u64) -> Result<Self> {
        Self::from_parts(
            Network::new(Role::Encoder, trunk, seed)?,
            Network::new(Role::Encoder, &[mu_head], seed.wrapping_add(1))?,
            Network::new(Role::Encoder, &[logvar_head], seed.wrapping_add(2))?,
            Network::new(Role::Decoder, decoder, seed.wrapping_add(3))?,
        )
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_head.output_dim()
    }

    pub fn trunk(&self) -> &Network {
        &self.trunk
    }

    pub fn mu_head(&self) -> &Network {
        &self.mu_head
    }

    pub fn logvar_head(&self) -> &Network {
        &self.logvar_head
    }

    pub fn decoder(&self) -> &Network {
        &self.decoder
    }

    /// Latent mean and log-variance for each input row.
    pub fn encode(&self, batch: &Matrix) -> Result<(Matrix, Matrix)> {
        let h = self.trunk.predict(batch)?;
        Ok((self.mu_head.predict(&h)?, self.logvar_head.predict(&h)?))
    }

    /// Decoder output (Bernoulli means) for latent rows.
    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        self.decoder.predict(z)
    }

    fn check_targets(&self, batch: &Matrix, targets: &Matrix, loss: LossKind) -> Result<()> {
        if loss != LossKind::VaeElbo {
            return Err(Error::LossRoleMismatch { loss: loss.to_string(), role: Role::Vae.to_string() });
        }
        if targets.shape() != batch.shape() {
            return Err(Error::Dimension("VAE targets must have the shape of the inputs".into()));
        }
        Ok(())
    }

    /// Negative ELBO per example for a fixed noise draw `eta` (`n x latent_dim`).
    pub fn losses_with_noise(&self, batch: &Matrix, targets: &Matrix, eta: &Matrix) -> Result<Vec<f64>> {
        let (mu, logvar) = self.encode(batch)?;
        let z = reparameterize(&mu, &logvar, eta)?;
        let cache = self.decoder.forward_cached(&z)?;
        Ok(elbo_terms(&cache.last_pre, targets, &mu, &logvar).0)
    }

    /// Forward and backward pass of the negative ELBO for a fixed noise draw.
    /// Traces are ordered trunk, mu head, logvar head, decoder.
    pub fn backprop_with_noise(&self, batch: &Matrix, targets: &Matrix, eta: &Matrix) -> Result<Backprop> {
        let trunk_cache = self.trunk.forward_cached(batch)?;
        let h = trunk_cache.output().clone();
        let mu_cache = self.mu_head.forward_cached(&h)?;
        let lv_cache = self.logvar_head.forward_cached(&h)?;
        let (mu, logvar) = (mu_cache.output().clone(), lv_cache.output().clone());
        let z = reparameterize(&mu, &logvar, eta)?;
        let dec_cache = self.decoder.forward_cached(&z)?;
        let (losses, dlogits) = elbo_terms(&dec_cache.last_pre, targets, &mu, &logvar);

        let dec_traces = self.decoder.backward(dec_cache, dlogits)?;
        let dz = self.decoder.input_gradient(&dec_traces[0])?;

        let mut dmu = dz.clone();
        let mut dlv = dz;
        for i in 0..mu.rows() {
            let (m, lv, e) = (mu.row(i), logvar.row(i), eta.row(i));
            for (k, g) in dmu.row_mut(i).iter_mut().enumerate() {
                *g += m[k];
            }
            for (k, g) in dlv.row_mut(i).iter_mut().enumerate() {
                let s = (0.5 * lv[k]).exp();
                *g = *g * 0.5 * s * e[k] + 0.5 * (s * s - 1.0);
            }
        }
        let mu_traces = self.mu_head.backward_from_output_grad(mu_cache, &dmu)?;
        let lv_traces = self.logvar_head.backward_from_output_grad(lv_cache, &dlv)?;
        let mut dh = self.mu_head.input_gradient(&mu_traces[0])?;
        let dh_lv = self.logvar_head.input_gradient(&lv_traces[0])?;
        dh.as_mut_slice().iter_mut().zip(dh_lv.as_slice()).for_each(|(a, b)| *a += b);
        let trunk_traces = self.trunk.backward_from_output_grad(trunk_cache, &dh)?;

        let mut layers = trunk_traces;
        layers.extend(mu_traces);
        layers.extend(lv_traces);
        layers.extend(dec_traces);
        Ok(Backprop { losses, layers })
    }

    fn parts(&self) -> [&Network; 4] {
        [&self.trunk, &self.mu_head, &self.logvar_head, &self.decoder]
    }

    fn parts_mut(&mut self) -> [&mut Network; 4] {
        [&mut self.trunk, &mut self.mu_head, &mut self.logvar_head, &mut self.decoder]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&VaeFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<VaeFile>(s)?.try_into()
    }
}

/// Bernoulli reconstruction loss on logits plus the KL term, and `dL/dlogits`.
fn elbo_terms(logits: &Matrix, targets: &Matrix, mu: &Matrix, logvar: &Matrix) -> (Vec<f64>, Matrix) {
    let n = logits.rows();
    let mut losses = Vec::with_capacity(n);
    let mut grad = Matrix::zeros(n, logits.cols());
    for i in 0..n {
        let (z, x) = (logits.row(i), targets.row(i));
        let mut l = crate::nn::gaussian_kl(mu.row(i), logvar.row(i));
        for (g, (&zk, &xk)) in grad.row_mut(i).iter_mut().zip(z.iter().zip(x)) {
            l += softplus(zk) - xk * zk;
            *g = crate::nn::sigmoid(zk) - xk;
        }
        losses.push(l);
    }
    (losses, grad)
}

impl Differentiable for Vae {
    fn param_count(&self) -> usize {
        self.parts().iter().map(|n| n.param_count()).sum()
    }

    fn backprop(&self, batch: &Matrix, targets: &Matrix, loss: LossKind, rng: &mut ChaCha8Rng) -> Result<Backprop> {
        self.check_targets(batch, targets, loss)?;
        let eta = standard_normal(batch.rows(), self.latent_dim(), rng);
        self.backprop_with_noise(batch, targets, &eta)
    }

    fn losses(&self, batch: &Matrix, targets: &Matrix, loss: LossKind, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.check_targets(batch, targets, loss)?;
        let eta = standard_normal(batch.rows(), self.latent_dim(), rng);
        self.losses_with_noise(batch, targets, &eta)
    }

    fn flat_params(&self) -> Vec<f64> {
        self.parts().iter().flat_map(|n| n.flat_params()).collect()
    }

    fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Dimension(format!("{} parameters supplied, {} expected", params.len(), self.param_count())));
        }
        let mut off = 0;
        for net in self.parts_mut() {
            let k = net.param_count();
            net.set_flat_params(&params[off..off + k])?;
            off += k;
        }
        Ok(())
    }

    fn apply_update(&mut self, grad: &[f64], learning_rate: f64) {
        let mut off = 0;
        for net in self.parts_mut() {
            let k = net.param_count();
            net.apply_update(&grad[off..off + k], learning_rate);
            off += k;
        }
    }
}

/// On-disk JSON form of a [`Vae`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeFile {
    pub trunk: NetworkFile,
    pub mu_head: NetworkFile,
    pub logvar_head: NetworkFile,
    pub decoder: NetworkFile,
}

impl From<&Vae> for VaeFile {
    fn from(v: &Vae) -> Self {
        Self {
            trunk: (&v.trunk).into(),
            mu_head: (&v.mu_head).into(),
            logvar_head: (&v.logvar_head).into(),
            decoder: (&v.decoder).into(),
        }
    }
}

impl TryFrom<VaeFile> for Vae {
    type Error = Error;

    fn try_from(f: VaeFile) -> Result<Self> {
        Vae::from_parts(f.trunk.try_into()?, f.mu_head.try_into()?, f.logvar_head.try_into()?, f.decoder.try_into()?)
    }
}

impl Serialize for Vae {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        VaeFile::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vae {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        VaeFile::deserialize(d)?.try_into().map_err(serde::de::Error::custom)
    }
}
