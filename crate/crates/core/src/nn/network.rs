use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{activate, activation_backward, Activation, LayerSpec};
use super::loss::{output_loss_and_delta, LossKind};
use super::{Backprop, Differentiable, LayerTrace, Matrix};
use crate::error::{Error, Result};

/// Format version written into serialized networks.
pub const NETWORK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Encoder,
    Decoder,
    Autoencoder,
    Vae,
    Classifier,
    Generator,
    Discriminator,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Encoder => "encoder",
            Role::Decoder => "decoder",
            Role::Autoencoder => "autoencoder",
            Role::Vae => "vae",
            Role::Classifier => "classifier",
            Role::Generator => "generator",
            Role::Discriminator => "discriminator",
        };
        f.write_str(s)
    }
}

/// A stack of fully connected layers.
///
/// Weights of layer `l` are stored as an `in_dim x out_dim` matrix so a batch
/// is propagated as `X · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    role: Role,
    specs: Vec<LayerSpec>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

/// Activations retained by a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input batch, `activations[l + 1]` the output of layer `l`.
    pub activations: Vec<Matrix>,
    /// Pre-activation of the final layer.
    pub last_pre: Matrix,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("cache always holds the input")
    }
}

/// Checks that `specs` is nonempty, has positive dims, chains, and only uses
/// softmax on the final layer.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Config("a network needs at least one layer".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::Config(format!("layer {i} has a zero dimension")));
        }
        if s.activation == Activation::Softmax && i + 1 != specs.len() {
            return Err(Error::Config(format!("softmax is only allowed on the final layer (found on layer {i})")));
        }
    }
    for (i, pair) in specs.windows(2).enumerate() {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(Error::Dimension(format!(
                "layer {i} outputs {} but layer {} expects {}",
                pair[0].out_dim,
                i + 1,
                pair[1].in_dim
            )));
        }
    }
    Ok(())
}

/// Seeded initialization: weights uniform in `±sqrt(6 / (in + out))`, zero biases.
pub fn init_network(specs: &[LayerSpec], seed: u64) -> Result<Network> {
    Network::new(Role::Classifier, specs, seed)
}

impl Network {
    pub fn new(role: Role, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_specs(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(specs.len());
        let mut biases = Vec::with_capacity(specs.len());
        for s in specs {
            let a = (6.0 / (s.in_dim + s.out_dim) as f64).sqrt();
            let data = (0..s.in_dim * s.out_dim).map(|_| rng.random_range(-a..a)).collect();
            weights.push(Matrix::from_vec(s.in_dim, s.out_dim, data)?);
            biases.push(vec![0.0; s.out_dim]);
        }
        Ok(Self { role, specs: specs.to_vec(), weights, biases })
    }

    /// Builds a network from explicit parameters.
    pub fn from_parts(role: Role, specs: Vec<LayerSpec>, weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        validate_specs(&specs)?;
        if weights.len() != specs.len() || biases.len() != specs.len() {
            return Err(Error::Dimension("one weight matrix and bias vector per layer required".into()));
        }
        for (i, s) in specs.iter().enumerate() {
            if weights[i].shape() != (s.in_dim, s.out_dim) || biases[i].len() != s.out_dim {
                return Err(Error::Dimension(format!("parameters of layer {i} do not match its spec")));
            }
            if !weights[i].is_finite() || biases[i].iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFinite(format!("parameters of layer {i}")));
            }
        }
        Ok(Self { role, specs, weights, biases })
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn input_dim(&self) -> usize {
        self.specs[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.specs[self.specs.len() - 1].out_dim
    }

    pub fn output_activation(&self) -> Activation {
        self.specs[self.specs.len() - 1].activation
    }

    /// Splits off the first `n` layers (e.g. the encoder half of an autoencoder).
    pub fn truncate(&self, n: usize, role: Role) -> Result<Self> {
        if n == 0 || n > self.specs.len() {
            return Err(Error::Config(format!("cannot keep {n} of {} layers", self.specs.len())));
        }
        Self::from_parts(role, self.specs[..n].to_vec(), self.weights[..n].to_vec(), self.biases[..n].to_vec())
    }

    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        let cache = self.forward_cached(batch)?;
        Ok((cache.output().clone(), cache))
    }

    /// Forward pass without keeping intermediate activations.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut a = batch.clone();
        for l in 0..self.specs.len() {
            let mut z = self.affine(l, &a)?;
            activate(self.specs[l].activation, &mut z);
            a = z;
        }
        Ok(a)
    }

    pub fn forward_cached(&self, batch: &Matrix) -> Result<ForwardCache> {
        self.check_input(batch)?;
        let mut activations = Vec::with_capacity(self.specs.len() + 1);
        activations.push(batch.clone());
        let mut last_pre = Matrix::zeros(0, 0);
        for l in 0..self.specs.len() {
            let mut z = self.affine(l, &activations[l])?;
            if l + 1 == self.specs.len() {
                last_pre = z.clone();
            }
            activate(self.specs[l].activation, &mut z);
            activations.push(z);
        }
        Ok(ForwardCache { activations, last_pre })
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        if !batch.is_finite() {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    fn affine(&self, l: usize, a: &Matrix) -> Result<Matrix> {
        let mut z = a.matmul(&self.weights[l])?;
        let b = &self.biases[l];
        for r in 0..z.rows() {
            for (v, bb) in z.row_mut(r).iter_mut().zip(b) {
                *v += bb;
            }
        }
        Ok(z)
    }

    /// Backpropagates `dz_last = dL/d(pre-activation of the final layer)`.
    /// Returns one trace per layer in forward order.
    pub fn backward(&self, cache: ForwardCache, dz_last: Matrix) -> Result<Vec<LayerTrace>> {
        let n_layers = self.specs.len();
        let mut activations = cache.activations;
        let mut traces: Vec<Option<LayerTrace>> = (0..n_layers).map(|_| None).collect();
        let mut dz = dz_last;
        for l in (0..n_layers).rev() {
            let input = std::mem::replace(&mut activations[l], Matrix::zeros(0, 0));
            let next_dz = if l > 0 {
                let grad_a = dz.matmul_nt(&self.weights[l])?;
                Some(activation_backward(self.specs[l - 1].activation, &input, &grad_a))
            } else {
                None
            };
            traces[l] = Some(LayerTrace { inputs: input, deltas: dz });
            match next_dz {
                Some(d) => dz = d,
                None => break,
            }
        }
        Ok(traces.into_iter().map(|t| t.expect("every layer traced")).collect())
    }

    /// Backpropagates a gradient with respect to the network output
    /// (post-activation), e.g. one arriving from a downstream network.
    pub fn backward_from_output_grad(&self, cache: ForwardCache, grad_out: &Matrix) -> Result<Vec<LayerTrace>> {
        let dz = activation_backward(self.output_activation(), cache.output(), grad_out);
        self.backward(cache, dz)
    }

    /// `dL/d(input)` from the first-layer trace of a backward pass.
    pub fn input_gradient(&self, first: &LayerTrace) -> Result<Matrix> {
        first.deltas.matmul_nt(&self.weights[0])
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &NetworkFile::from(self))?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let nf: NetworkFile = serde_json::from_reader(std::io::BufReader::new(file))?;
        nf.try_into()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&NetworkFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<NetworkFile>(s)?.try_into()
    }
}

impl Differentiable for Network {
    fn param_count(&self) -> usize {
        self.specs.iter().map(LayerSpec::param_count).sum()
    }

    fn backprop(&self, batch: &Matrix, targets: &Matrix, loss: LossKind, _rng: &mut ChaCha8Rng) -> Result<Backprop> {
        if loss == LossKind::VaeElbo {
            return Err(Error::LossRoleMismatch { loss: loss.to_string(), role: self.role.to_string() });
        }
        let cache = self.forward_cached(batch)?;
        let (losses, dz) = output_loss_and_delta(loss, self.output_activation(), cache.output(), targets)?;
        let layers = self.backward(cache, dz)?;
        Ok(Backprop { losses, layers })
    }

    fn losses(&self, batch: &Matrix, targets: &Matrix, loss: LossKind, _rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        if loss == LossKind::VaeElbo {
            return Err(Error::LossRoleMismatch { loss: loss.to_string(), role: self.role.to_string() });
        }
        let cache = self.forward_cached(batch)?;
        Ok(output_loss_and_delta(loss, self.output_activation(), cache.output(), targets)?.0)
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Dimension(format!("{} parameters supplied, {} expected", params.len(), self.param_count())));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let nw = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = b.len();
            b.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    fn apply_update(&mut self, grad: &[f64], learning_rate: f64) {
        debug_assert_eq!(grad.len(), self.param_count());
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for p in w.as_mut_slice().iter_mut().chain(b.iter_mut()) {
                *p -= learning_rate * grad[off];
                off += 1;
            }
        }
    }
}

/// On-disk JSON form of a [`Network`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub version: u32,
    pub role: Role,
    pub specs: Vec<LayerSpec>,
    /// Row-major `in_dim x out_dim` weights per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl From<&Network> for NetworkFile {
    fn from(net: &Network) -> Self {
        Self {
            version: NETWORK_FORMAT_VERSION,
            role: net.role,
            specs: net.specs.clone(),
            weights: net.weights.iter().map(|w| w.as_slice().to_vec()).collect(),
            biases: net.biases.clone(),
        }
    }
}

impl TryFrom<NetworkFile> for Network {
    type Error = Error;

    fn try_from(nf: NetworkFile) -> Result<Self> {
        if nf.version != NETWORK_FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported network format version {}", nf.version)));
        }
        validate_specs(&nf.specs)?;
        if nf.weights.len() != nf.specs.len() {
            return Err(Error::Dimension("weights do not match layer count".into()));
        }
        let weights = nf
            .specs
            .iter()
            .zip(nf.weights)
            .map(|(s, w)| Matrix::from_vec(s.in_dim, s.out_dim, w))
            .collect::<Result<Vec<_>>>()?;
        Network::from_parts(nf.role, nf.specs, weights, nf.biases)
    }
}

impl Serialize for Network {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        NetworkFile::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Network {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        NetworkFile::deserialize(d)?.try_into().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{loss_eval, per_example_gradients};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let specs = [LayerSpec::identity(2, 1)];
        let a = init_network(&specs, 7).unwrap();
        let b = init_network(&specs, 7).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_ne!(a.flat_params(), init_network(&specs, 8).unwrap().flat_params());
    }

    #[test]
    fn table_six_mnist_encoder_shapes() {
        let net = init_network(&[LayerSpec::sigmoid(784, 400), LayerSpec::sigmoid(400, 256)], 1).unwrap();
        assert_eq!(net.weights()[0].shape(), (784, 400));
        assert_eq!(net.weights()[1].shape(), (400, 256));
        let bound = (6.0f64 / 1184.0).sqrt();
        assert!(net.weights()[0].as_slice().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn chain_violation_rejected() {
        let err = init_network(&[LayerSpec::sigmoid(3, 4), LayerSpec::sigmoid(5, 2)], 0).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
        assert!(init_network(&[LayerSpec::softmax(3, 4), LayerSpec::sigmoid(4, 2)], 0).is_err());
        assert!(init_network(&[], 0).is_err());
    }

    #[test]
    fn zero_sigmoid_network_outputs_half() {
        let mut net = init_network(&[LayerSpec::sigmoid(3, 2)], 0).unwrap();
        net.set_flat_params(&vec![0.0; net.param_count()]).unwrap();
        let (out, _) = net.forward(&random_batch(4, 3, 1)).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn identity_network_is_identity() {
        let net = Network::from_parts(Role::Classifier, vec![LayerSpec::identity(3, 3)], vec![Matrix::identity(3)], vec![vec![0.0; 3]])
            .unwrap();
        let x = random_batch(5, 3, 2);
        assert_eq!(net.predict(&x).unwrap(), x);
    }

    #[test]
    fn forward_matches_hand_rolled_loops() {
        let net = init_network(&[LayerSpec::sigmoid(4, 6), LayerSpec::softmax(6, 3)], 3).unwrap();
        let mut p = net.flat_params();
        // nonzero biases so they are exercised too
        let mut r = ChaCha8Rng::seed_from_u64(9);
        p.iter_mut().for_each(|v| *v += r.random_range(-0.1..0.1));
        let mut net = net;
        net.set_flat_params(&p).unwrap();
        let x = random_batch(5, 4, 4);
        let (out, _) = net.forward(&x).unwrap();

        for i in 0..5 {
            let mut h = [0.0; 6];
            for (j, hj) in h.iter_mut().enumerate() {
                let mut s = net.biases()[0][j];
                for k in 0..4 {
                    s += x.get(i, k) * net.weights()[0].get(k, j);
                }
                *hj = 1.0 / (1.0 + (-s).exp());
            }
            let mut z = [0.0; 3];
            for (j, zj) in z.iter_mut().enumerate() {
                let mut s = net.biases()[1][j];
                for (k, hk) in h.iter().enumerate() {
                    s += hk * net.weights()[1].get(k, j);
                }
                *zj = s;
            }
            let m = z.iter().copied().fold(f64::MIN, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let tot: f64 = e.iter().sum();
            for j in 0..3 {
                assert!((out.get(i, j) - e[j] / tot).abs() < 1e-12);
            }
            let row_sum: f64 = out.row(i).iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let net = init_network(&[LayerSpec::sigmoid(2, 2)], 0).unwrap();
        let x = Matrix::from_vec(1, 2, vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(net.forward(&x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let net = init_network(&[LayerSpec::relu(5, 4), LayerSpec::softmax(4, 3)], 11).unwrap().with_role(Role::Classifier);
        let back = Network::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn vae_loss_rejected_for_plain_network() {
        let net = init_network(&[LayerSpec::sigmoid(2, 2)], 0).unwrap();
        let x = random_batch(2, 2, 0);
        assert!(matches!(
            per_example_gradients(&net, &x, &x, LossKind::VaeElbo, &mut rng()),
            Err(Error::LossRoleMismatch { .. })
        ));
        assert!(loss_eval(&net, &x, &x, LossKind::VaeElbo, &mut rng()).is_err());
    }
}
