use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dp::PrivacySpec;
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Where a training set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Augm,
    Vaegm,
    /// Raw records with no generative model in between.
    None,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Augm => "augm",
            Provenance::Vaegm => "vaegm",
            Provenance::None => "none",
        })
    }
}

/// Labeled rows emitted by a generative model, tagged with the budget of that model.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub provenance: Provenance,
    pub source_budget: PrivacySpec,
}

/// Sidecar metadata written next to a dataset CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub provenance: Provenance,
    #[serde(with = "crate::serde_util::f64_nonfinite")]
    pub epsilon: f64,
    pub delta: f64,
}

impl GeneratedDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, provenance: Provenance, source_budget: PrivacySpec) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Dimension(format!("{} rows but {} labels", features.rows(), labels.len())));
        }
        Ok(Self { features, labels, provenance, source_budget })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta { provenance: self.provenance, epsilon: self.source_budget.epsilon, delta: self.source_budget.delta }
    }

    /// Path of the sidecar JSON belonging to a dataset CSV.
    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("json")
    }

    /// Writes `csv_path` (header `f0,…,f{d-1},label`) and its sidecar JSON.
    pub fn save(&self, csv_path: impl AsRef<Path>) -> Result<()> {
        let csv_path = csv_path.as_ref();
        let mut w = csv::Writer::from_path(csv_path).map_err(csv_err)?;
        let mut header: Vec<String> = (0..self.features.cols()).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(csv_err)?;
        let mut record = Vec::with_capacity(header.len());
        for (row, label) in self.features.iter_rows().zip(&self.labels) {
            record.clear();
            record.extend(row.iter().map(|v| v.to_string()));
            record.push(label.to_string());
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush()?;
        let meta = serde_json::to_string_pretty(&self.meta())?;
        std::fs::write(Self::sidecar_path(csv_path), meta)?;
        Ok(())
    }

    pub fn load(csv_path: impl AsRef<Path>) -> Result<Self> {
        let csv_path = csv_path.as_ref();
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(Self::sidecar_path(csv_path))?)?;
        let mut r = csv::Reader::from_path(csv_path).map_err(csv_err)?;
        let cols = r.headers().map_err(csv_err)?.len();
        if cols < 2 {
            return Err(Error::Csv { row: 0, reason: "expected at least one feature and a label column".into() });
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| Error::Csv { row, reason: e.to_string() })?;
            for field in rec.iter().take(cols - 1) {
                let v: f64 = field.parse().map_err(|_| Error::Csv { row, reason: format!("bad number {field:?}") })?;
                data.push(v);
            }
            let l = &rec[cols - 1];
            labels.push(l.parse().map_err(|_| Error::Csv { row, reason: format!("bad label {l:?}") })?);
        }
        let features = Matrix::from_vec(labels.len(), cols - 1, data)?;
        Self::new(features, labels, meta.provenance, PrivacySpec { epsilon: meta.epsilon, delta: meta.delta })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv { row: e.position().map_or(0, |p| p.record() as usize), reason: e.to_string() }
}
