use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Matrix, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionResult {
    pub reconstruction: Vec<f64>,
    pub target_class: usize,
    /// Pearson correlation with the reference class mean.
    pub similarity: f64,
    /// Model confidence in `target_class` at the reconstruction.
    pub confidence: f64,
    pub steps: usize,
    pub step_size: f64,
}

/// Gradient ascent on `p(target_class | x)` from the all-0.5 input, clamping
/// to `[0, 1]` after every step. `reference` is the class mean the result is
/// compared against.
pub fn model_inversion(model: &Network, target_class: usize, steps: usize, step_size: f64, reference: &[f64]) -> Result<InversionResult> {
    if model.output_activation() != Activation::Softmax {
        return Err(Error::Config("inversion needs a softmax classifier".into()));
    }
    if target_class >= model.output_dim() {
        return Err(Error::Config(format!("class {target_class} outside 0..{}", model.output_dim())));
    }
    if reference.len() != model.input_dim() {
        return Err(Error::Dimension(format!("reference has {} values, model input {}", reference.len(), model.input_dim())));
    }
    let mut x = Matrix::filled(1, model.input_dim(), 0.5);
    let mut seed = Matrix::zeros(1, model.output_dim());
    seed.set(0, target_class, 1.0);
    for _ in 0..steps {
        let cache = model.forward_cached(&x)?;
        let traces = model.backward_from_output_grad(cache, &seed)?;
        let g = model.input_gradient(&traces[0])?;
        for (v, d) in x.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *v = (*v + step_size * d).clamp(0.0, 1.0);
        }
    }
    let confidence = model.predict(&x)?.get(0, target_class);
    let reconstruction = x.into_vec();
    Ok(InversionResult { similarity: pearson(&reconstruction, reference), reconstruction, target_class, confidence, steps, step_size })
}

/// Pearson correlation; 0 when either side has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "pearson needs equal lengths");
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Mean row of the records labeled `class`.
pub fn class_mean(features: &Matrix, labels: &[usize], class: usize) -> Result<Vec<f64>> {
    let idx: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l == class).map(|(i, _)| i).collect();
    if idx.is_empty() {
        return Err(Error::InsufficientData(format!("no records of class {class}")));
    }
    Ok(features.select_rows(&idx).column_means())
}

/// Binary greyscale PGM of values in `[0, 1]`. Square inputs are written as
/// square images, anything else as a single row.
pub fn write_pgm(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    let side = (values.len() as f64).sqrt().round() as usize;
    let (w, h) = if side * side == values.len() { (side, side) } else { (values.len(), 1) };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_network, LayerSpec};

    #[test]
    fn zero_steps_return_the_start() {
        let net = init_network(&[LayerSpec::softmax(4, 3)], 1).unwrap();
        let r = model_inversion(&net, 2, 0, 1.0, &[0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(r.reconstruction, vec![0.5; 4]);
        assert_eq!(r.similarity, 0.0);
    }

    #[test]
    fn ascent_raises_confidence_and_stays_in_range() {
        let net = init_network(&[LayerSpec::sigmoid(6, 5), LayerSpec::softmax(5, 3)], 2).unwrap();
        let start = model_inversion(&net, 1, 0, 0.5, &[0.0; 6]).unwrap().confidence;
        let r = model_inversion(&net, 1, 200, 5.0, &[0.0; 6]).unwrap();
        assert!(r.confidence > start);
        assert!(r.reconstruction.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn pearson_bounds() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 2.0]), 0.0);
    }

    #[test]
    fn pgm_layout() {
        let f = tempfile::NamedTempFile::new().unwrap();
        write_pgm(f.path(), &[0.0, 1.0, 0.5, 0.25]).unwrap();
        let b = std::fs::read(f.path()).unwrap();
        assert!(b.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&b[b.len() - 4..], &[0, 255, 128, 64]);
    }
}
