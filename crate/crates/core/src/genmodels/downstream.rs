use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{GeneratedDataset, Provenance};
use crate::dp::{train_sgd, PrivacySpec, SgdConfig};
use crate::error::{Error, Result};
use crate::nn::{one_hot, LayerSpec, LossKind, Matrix, Network, Role};

/// Per-feature z-scoring fitted on the training rows; zero-variance features map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let mean = x.column_means();
        let n = x.rows().max(1) as f64;
        let mut var = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            for (j, v) in row.iter().enumerate() {
                var[j] += (v - mean[j]).powi(2);
            }
        }
        let scale = var.into_iter().map(|v| if v > 0.0 { (n / v).sqrt() } else { 0.0 }).collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::Dimension(format!("{} features, standardizer fitted on {}", x.cols(), self.mean.len())));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) * self.scale[j];
            }
        }
        Ok(out)
    }
}

/// A classifier trained on generated data. When the data came from DP-AuGM the
/// published encoder is kept as `transform` and applied to raw inputs first.
/// Features may then be standardized with statistics of the generated rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamModel {
    pub classifier: Network,
    pub transform: Option<Network>,
    pub standardizer: Option<Standardizer>,
    pub provenance: Provenance,
    /// Copied unchanged from the training data.
    pub spent: PrivacySpec,
    #[serde(with = "crate::serde_util::vec_f64_nonfinite")]
    pub epoch_losses: Vec<f64>,
}

/// Trains a softmax classifier on generated rows with ordinary SGD.
pub fn train_downstream(
    generated: &GeneratedDataset,
    classifier_specs: &[LayerSpec],
    sgd: &SgdConfig,
    transform: Option<&Network>,
    standardize: bool,
) -> Result<DownstreamModel> {
    if generated.is_empty() {
        return Err(Error::InsufficientData("generated dataset is empty".into()));
    }
    let mut classifier = Network::new(Role::Classifier, classifier_specs, sgd.seed)?;
    if classifier.input_dim() != generated.features.cols() {
        return Err(Error::Dimension(format!(
            "classifier takes {} features, data has {}",
            classifier.input_dim(),
            generated.features.cols()
        )));
    }
    if let Some(t) = transform {
        if t.output_dim() != classifier.input_dim() {
            return Err(Error::Dimension("transform output does not feed the classifier".into()));
        }
    }
    let classes = classifier.output_dim();
    if let Some(&bad) = generated.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Config(format!("label {bad} but the classifier has {classes} outputs")));
    }
    let targets = one_hot(&generated.labels, classes);
    let standardizer = standardize.then(|| Standardizer::fit(&generated.features));
    let epoch_losses = match &standardizer {
        Some(s) => train_sgd(&mut classifier, &s.apply(&generated.features)?, &targets, LossKind::CrossEntropy, sgd)?,
        None => train_sgd(&mut classifier, &generated.features, &targets, LossKind::CrossEntropy, sgd)?,
    };
    Ok(DownstreamModel {
        classifier,
        transform: transform.cloned(),
        standardizer,
        provenance: generated.provenance,
        spent: generated.source_budget,
        epoch_losses,
    })
}

impl DownstreamModel {
    /// Dimension of the raw rows accepted by [`Self::predict_proba`].
    pub fn input_dim(&self) -> usize {
        self.transform.as_ref().map_or(self.classifier.input_dim(), Network::input_dim)
    }

    pub fn n_classes(&self) -> usize {
        self.classifier.output_dim()
    }

    /// Class probabilities for raw input rows.
    pub fn predict_proba(&self, raw: &Matrix) -> Result<Matrix> {
        let x = match &self.transform {
            Some(t) => t.predict(raw)?,
            None => raw.clone(),
        };
        match &self.standardizer {
            Some(s) => self.classifier.predict(&s.apply(&x)?),
            None => self.classifier.predict(&x),
        }
    }

    /// The classifier as one network over transformed (e.g. encoded) rows, with
    /// the standardizer folded into the first layer: `W' = diag(s)·W`,
    /// `b' = b − (m ⊙ s)·W`.
    pub fn classifier_on_features(&self) -> Result<Network> {
        let Some(s) = &self.standardizer else { return Ok(self.classifier.clone()) };
        let mut weights = self.classifier.weights().to_vec();
        let mut biases = self.classifier.biases().to_vec();
        let w0 = &mut weights[0];
        for (j, b) in biases[0].iter_mut().enumerate() {
            *b -= (0..w0.rows()).map(|i| s.mean[i] * s.scale[i] * w0.get(i, j)).sum::<f64>();
        }
        for i in 0..w0.rows() {
            w0.row_mut(i).iter_mut().for_each(|v| *v *= s.scale[i]);
        }
        Network::from_parts(self.classifier.role(), self.classifier.specs().to_vec(), weights, biases)
    }

    pub fn predict(&self, raw: &Matrix) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.predict_proba(raw)?))
    }

    pub fn accuracy(&self, raw: &Matrix, labels: &[usize]) -> Result<f64> {
        accuracy(&self.predict(raw)?, labels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Index of the largest entry of each row (first on ties).
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.iter_rows()
        .map(|r| r.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best }).0)
        .collect()
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::Dimension(format!("{} predictions for {} labels", predicted.len(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::InsufficientData("no labels to score".into()));
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}
