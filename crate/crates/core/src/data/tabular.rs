use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    /// `0`/`1` valued.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Required for categorical columns; defines the one-hot order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

/// What to do with a categorical value missing from the schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownCategory {
    #[default]
    Reject,
    /// Encode as an all-zero one-hot block.
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub columns: Vec<ColumnSpec>,
    pub label_column: String,
    /// Label strings in class order; when absent labels must be non-negative integers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_categories: Option<Vec<String>>,
    #[serde(default)]
    pub unknown_category: UnknownCategory,
}

impl CsvSchema {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let s: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::Config("schema has no feature columns".into()));
        }
        for c in &self.columns {
            if c.name == self.label_column {
                return Err(Error::Config(format!("label column {:?} is also listed as a feature", c.name)));
            }
            match (c.kind, &c.categories) {
                (ColumnKind::Categorical, None) => {
                    return Err(Error::Config(format!("categorical column {:?} lists no categories", c.name)))
                }
                (ColumnKind::Categorical, Some(v)) if v.is_empty() => {
                    return Err(Error::Config(format!("categorical column {:?} lists no categories", c.name)))
                }
                (ColumnKind::Numeric | ColumnKind::Binary, Some(_)) => {
                    return Err(Error::Config(format!("column {:?} is not categorical but lists categories", c.name)))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Width of the encoded feature vector.
    pub fn encoded_dim(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Categorical => c.categories.as_ref().map_or(0, Vec::len),
                _ => 1,
            })
            .sum()
    }

    /// Indices of encoded columns that hold raw numeric values.
    pub fn numeric_columns(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut off = 0;
        for c in &self.columns {
            match c.kind {
                ColumnKind::Numeric => {
                    out.push(off);
                    off += 1;
                }
                ColumnKind::Binary => off += 1,
                ColumnKind::Categorical => off += c.categories.as_ref().map_or(0, Vec::len),
            }
        }
        out
    }
}

/// Per-column affine map onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalization {
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::InsufficientData("cannot fit normalization on zero rows".into()));
        }
        let mut min = vec![f64::INFINITY; x.cols()];
        let mut max = vec![f64::NEG_INFINITY; x.cols()];
        for row in x.iter_rows() {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    /// Leaves every column as is.
    pub fn identity(cols: usize) -> Self {
        Self { min: vec![0.0; cols], max: vec![1.0; cols] }
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.min.len() {
            return Err(Error::Dimension(format!("{} columns, normalization fitted on {}", x.cols(), self.min.len())));
        }
        Ok(())
    }

    /// `(x − min)/(max − min)` clamped to `[0, 1]`; constant columns map to 0.
    pub fn normalize(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                let range = self.max[j] - self.min[j];
                *v = if range > 0.0 { ((*v - self.min[j]) / range).clamp(0.0, 1.0) } else { 0.0 };
            }
        }
        Ok(out)
    }

    /// Inverse of [`Self::normalize`] on non-constant columns; constant columns return their value.
    pub fn denormalize(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                let range = self.max[j] - self.min[j];
                *v = if range > 0.0 { self.min[j] + *v * range } else { self.min[j] };
            }
        }
        Ok(out)
    }
}

/// Encoded but unscaled CSV contents.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

fn is_missing(v: &str) -> bool {
    v.is_empty() || v == "?" || v.eq_ignore_ascii_case("na") || v.eq_ignore_ascii_case("nan")
}

/// Reads a CSV according to `schema`, one-hot encoding categorical columns.
/// Rows are numbered from 1 (the header is row 0) in errors.
pub fn read_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<CsvTable> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv { row: 0, reason: e.to_string() })?;
    let header = rdr.headers().map_err(|e| Error::Csv { row: 0, reason: e.to_string() })?.clone();
    let find = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Csv { row: 0, reason: format!("header lacks column {name:?}") })
    };
    let positions = schema.columns.iter().map(|c| find(&c.name)).collect::<Result<Vec<_>>>()?;
    let label_pos = find(&schema.label_column)?;
    let cat_index: Vec<Option<HashMap<&str, usize>>> = schema
        .columns
        .iter()
        .map(|c| c.categories.as_ref().map(|v| v.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()))
        .collect();
    let label_index: Option<HashMap<&str, usize>> =
        schema.label_categories.as_ref().map(|v| v.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect());

    let dim = schema.encoded_dim();
    let mut data: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut rec = csv::StringRecord::new();
    let mut row = 0;
    loop {
        row += 1;
        let more = rdr.read_record(&mut rec).map_err(|e| Error::Csv { row, reason: e.to_string() })?;
        if !more {
            break;
        }
        let start = data.len();
        data.resize(start + dim, 0.0);
        let mut off = start;
        for ((col, &pos), cats) in schema.columns.iter().zip(&positions).zip(&cat_index) {
            let v = rec.get(pos).unwrap_or("");
            if is_missing(v) {
                return Err(Error::Csv { row, reason: format!("missing value in column {:?}", col.name) });
            }
            match col.kind {
                ColumnKind::Numeric => {
                    data[off] = v.parse().map_err(|_| Error::Csv { row, reason: format!("{:?} is not numeric in {:?}", v, col.name) })?;
                    if !data[off].is_finite() {
                        return Err(Error::Csv { row, reason: format!("non-finite value in {:?}", col.name) });
                    }
                    off += 1;
                }
                ColumnKind::Binary => {
                    data[off] = match v {
                        "0" => 0.0,
                        "1" => 1.0,
                        _ => return Err(Error::Csv { row, reason: format!("{:?} is not 0/1 in {:?}", v, col.name) }),
                    };
                    off += 1;
                }
                ColumnKind::Categorical => {
                    let map = cats.as_ref().expect("validated");
                    match map.get(v) {
                        Some(&k) => data[off + k] = 1.0,
                        None if schema.unknown_category == UnknownCategory::Zeros => {}
                        None => return Err(Error::Csv { row, reason: format!("unknown category {:?} in {:?}", v, col.name) }),
                    }
                    off += map.len();
                }
            }
        }
        let lv = rec.get(label_pos).unwrap_or("");
        if is_missing(lv) {
            return Err(Error::Csv { row, reason: "missing label".into() });
        }
        let label = match &label_index {
            Some(m) => *m.get(lv).ok_or_else(|| Error::Csv { row, reason: format!("unknown label {lv:?}") })?,
            None => lv.parse().map_err(|_| Error::Csv { row, reason: format!("label {lv:?} is not a class index") })?,
        };
        labels.push(label);
    }
    let features = Matrix::from_vec(labels.len(), dim, data)?;
    Ok(CsvTable { features, labels })
}

/// Reads and scales a CSV with its own statistics. Use [`read_csv`] plus a
/// [`Normalization`] fitted on the training file to scale a test file.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<(Matrix, Vec<usize>)> {
    let t = read_csv(path, schema)?;
    let norm = Normalization::fit(&t.features)?;
    Ok((norm.normalize(&t.features)?, t.labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn schema() -> CsvSchema {
        serde_json::from_str(
            r#"{"columns":[{"name":"age","kind":"numeric"},{"name":"job","kind":"categorical","categories":["a","b","c"]},
                {"name":"flag","kind":"binary"},{"name":"k","kind":"numeric"}],"label_column":"y","label_categories":["no","yes"]}"#,
        )
        .unwrap()
    }

    fn write(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn encodes_and_scales() {
        let f = write("age,job,flag,k,y\n20, b,1,5,yes\n40,c,0,5,no\n30,a,1,5,no\n");
        let (x, y) = load_csv(f.path(), &schema()).unwrap();
        assert_eq!(y, vec![1, 0, 0]);
        assert_eq!(x.row(0), &[0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(x.row(1), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(x.row(2), &[0.5, 1.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn missing_value_names_row() {
        let f = write("age,job,flag,k,y\n20,b,1,5,yes\n40,?,0,5,no\n");
        match read_csv(f.path(), &schema()) {
            Err(Error::Csv { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_category_policy() {
        let f = write("age,job,flag,k,y\n20,z,1,5,yes\n");
        assert!(read_csv(f.path(), &schema()).is_err());
        let s = CsvSchema { unknown_category: UnknownCategory::Zeros, ..schema() };
        let t = read_csv(f.path(), &s).unwrap();
        assert_eq!(&t.features.row(0)[1..4], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_header_column() {
        let f = write("age,job,k,y\n20,a,5,yes\n");
        assert!(matches!(read_csv(f.path(), &schema()), Err(Error::Csv { row: 0, .. })));
    }

    #[test]
    fn schema_rules() {
        let mut s = schema();
        s.columns[1].categories = None;
        assert!(s.validate().is_err());
        assert_eq!(schema().encoded_dim(), 6);
        assert_eq!(schema().numeric_columns(), vec![0, 5]);
    }
}
