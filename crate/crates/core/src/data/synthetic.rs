//! Schemas for the tabular datasets and a synthetic stand-in generator for the
//! ones whose raw records cannot be redistributed.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::splits::Labeled;
use super::tabular::{ColumnKind, ColumnSpec, CsvSchema, UnknownCategory};
use crate::error::Result;
use crate::nn::Matrix;

fn binary_schema(n_features: usize) -> CsvSchema {
    CsvSchema {
        columns: (0..n_features).map(|j| ColumnSpec { name: format!("f{j}"), kind: ColumnKind::Binary, categories: None }).collect(),
        label_column: "label".into(),
        label_categories: None,
        unknown_category: UnknownCategory::Reject,
    }
}

/// 776 binary attributes, 10 procedure classes.
pub fn hospital_schema() -> CsvSchema {
    binary_schema(776)
}

/// 142 binary permission/behaviour attributes, benign vs. malicious.
pub fn malware_schema() -> CsvSchema {
    binary_schema(142)
}

fn cat(name: &str, values: &[&str]) -> ColumnSpec {
    ColumnSpec { name: name.into(), kind: ColumnKind::Categorical, categories: Some(values.iter().map(|s| s.to_string()).collect()) }
}

fn num(name: &str) -> ColumnSpec {
    ColumnSpec { name: name.into(), kind: ColumnKind::Numeric, categories: None }
}

/// The 14 census attributes (6 numeric, 8 categorical; 105 columns once
/// one-hot encoded) with the income bracket as label.
pub fn adult_schema() -> CsvSchema {
    CsvSchema {
        columns: vec![
            num("age"),
            cat("workclass", &["Private", "Self-emp-not-inc", "Self-emp-inc", "Federal-gov", "Local-gov", "State-gov", "Without-pay", "Never-worked"]),
            num("fnlwgt"),
            cat(
                "education",
                &[
                    "Bachelors", "Some-college", "11th", "HS-grad", "Prof-school", "Assoc-acdm", "Assoc-voc", "9th", "7th-8th", "12th",
                    "Masters", "1st-4th", "10th", "Doctorate", "5th-6th", "Preschool",
                ],
            ),
            num("education-num"),
            cat(
                "marital-status",
                &["Married-civ-spouse", "Divorced", "Never-married", "Separated", "Widowed", "Married-spouse-absent", "Married-AF-spouse"],
            ),
            cat(
                "occupation",
                &[
                    "Tech-support", "Craft-repair", "Other-service", "Sales", "Exec-managerial", "Prof-specialty", "Handlers-cleaners",
                    "Machine-op-inspct", "Adm-clerical", "Farming-fishing", "Transport-moving", "Priv-house-serv", "Protective-serv",
                    "Armed-Forces",
                ],
            ),
            cat("relationship", &["Wife", "Own-child", "Husband", "Not-in-family", "Other-relative", "Unmarried"]),
            cat("race", &["White", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other", "Black"]),
            cat("sex", &["Female", "Male"]),
            num("capital-gain"),
            num("capital-loss"),
            num("hours-per-week"),
            cat(
                "native-country",
                &[
                    "United-States", "Cambodia", "England", "Puerto-Rico", "Canada", "Germany", "Outlying-US(Guam-USVI-etc)", "India",
                    "Japan", "Greece", "South", "China", "Cuba", "Iran", "Honduras", "Philippines", "Italy", "Poland", "Jamaica",
                    "Vietnam", "Mexico", "Portugal", "Ireland", "France", "Dominican-Republic", "Laos", "Ecuador", "Taiwan", "Haiti",
                    "Columbia", "Hungary", "Guatemala", "Nicaragua", "Scotland", "Thailand", "Yugoslavia", "El-Salvador",
                    "Trinadad&Tobago", "Peru", "Hong", "Holand-Netherlands",
                ],
            ),
        ],
        label_column: "income".into(),
        label_categories: Some(vec!["<=50K".into(), ">50K".into()]),
        unknown_category: UnknownCategory::Reject,
    }
}

/// Binary records drawn from per-class Bernoulli prototypes. Each class flips
/// a random subset of a shared background profile, so classes are separable
/// but overlap.
pub fn synthetic_binary(n_features: usize, n_classes: usize, rows: usize, seed: u64) -> Labeled {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background: Vec<f64> = (0..n_features).map(|_| rng.random_range(0.05..0.4)).collect();
    let prototypes: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| background.iter().map(|&p| if rng.random::<f64>() < 0.15 { 1.0 - p } else { p }).collect())
        .collect();
    let mut data = Vec::with_capacity(rows * n_features);
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        let c = rng.random_range(0..n_classes);
        data.extend(prototypes[c].iter().map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 }));
        labels.push(c);
    }
    Labeled::new(Matrix::from_vec(rows, n_features, data).expect("sized"), labels).expect("sized")
}

/// Writes a binary-feature dataset as CSV under `schema`'s column names.
pub fn write_binary_csv(path: impl AsRef<Path>, schema: &CsvSchema, data: &Labeled) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::Error::Csv { row: 0, reason: e.to_string() })?;
    let mut header: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    header.push(&schema.label_column);
    w.write_record(&header).map_err(|e| crate::Error::Csv { row: 0, reason: e.to_string() })?;
    for (i, row) in data.features.iter_rows().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|&v| if v > 0.5 { "1" } else { "0" }.to_string()).collect();
        rec.push(data.labels[i].to_string());
        w.write_record(&rec).map_err(|e| crate::Error::Csv { row: i + 1, reason: e.to_string() })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::read_csv;

    #[test]
    fn schema_widths() {
        assert_eq!(hospital_schema().encoded_dim(), 776);
        assert_eq!(malware_schema().encoded_dim(), 142);
        assert_eq!(adult_schema().columns.len(), 14);
        assert_eq!(adult_schema().encoded_dim(), 105);
        adult_schema().validate().unwrap();
    }

    #[test]
    fn fixture_round_trips_through_csv() {
        let d = synthetic_binary(142, 2, 50, 3);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_binary_csv(f.path(), &malware_schema(), &d).unwrap();
        let t = read_csv(f.path(), &malware_schema()).unwrap();
        assert_eq!(t.features, d.features);
        assert_eq!(t.labels, d.labels);
    }
}
