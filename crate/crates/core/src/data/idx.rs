use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let b = self.bytes.get(self.pos..end).ok_or_else(|| Error::Parse {
            offset: self.pos as u64,
            reason: format!("file ends while reading {what}"),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let m = self.u32("magic number")?;
        if m != expected {
            return Err(Error::Parse { offset: 0, reason: format!("bad magic 0x{m:08x}, expected 0x{expected:08x}") });
        }
        Ok(())
    }

    fn payload(&self, len: usize) -> Result<&[u8]> {
        let have = self.bytes.len() - self.pos;
        if have < len {
            return Err(Error::Parse {
                offset: self.bytes.len() as u64,
                reason: format!("truncated payload: header promises {len} bytes after offset {}, found {have}", self.pos),
            });
        }
        Ok(&self.bytes[self.pos..self.pos + len])
    }
}

/// Parses an IDX3 image file into an `n x (rows·cols)` matrix scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Matrix> {
    let mut c = Cursor { bytes, pos: 0 };
    c.magic(IMAGES_MAGIC)?;
    let n = c.u32("image count")? as usize;
    let rows = c.u32("row count")? as usize;
    let cols = c.u32("column count")? as usize;
    let dim = rows * cols;
    let data = c.payload(n * dim)?.iter().map(|&p| p as f64 / 255.0).collect();
    Matrix::from_vec(n, dim, data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut c = Cursor { bytes, pos: 0 };
    c.magic(LABELS_MAGIC)?;
    let n = c.u32("label count")? as usize;
    Ok(c.payload(n)?.iter().map(|&l| l as usize).collect())
}

/// Reads an image/label file pair.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<(Matrix, Vec<usize>)> {
    let images = parse_idx_images(&std::fs::read(images_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
    if images.rows() != labels.len() {
        return Err(Error::Dimension(format!("{} images but {} labels", images.rows(), labels.len())));
    }
    Ok((images, labels))
}

/// Loads the four standard MNIST files from `dir`: `(train, test)`.
#[allow(clippy::type_complexity)]
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<((Matrix, Vec<usize>), (Matrix, Vec<usize>))> {
    let d = dir.as_ref();
    let train = load_idx(d.join("train-images-idx3-ubyte"), d.join("train-labels-idx1-ubyte"))?;
    let test = load_idx(d.join("t10k-images-idx3-ubyte"), d.join("t10k-labels-idx1-ubyte"))?;
    Ok((train, test))
}

/// Encodes an image matrix (values in `[0, 1]`) as IDX3 with the given side lengths.
pub fn encode_idx_images(images: &Matrix, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if rows * cols != images.cols() {
        return Err(Error::Dimension(format!("{rows}x{cols} images but {} columns", images.cols())));
    }
    let mut out = Vec::with_capacity(16 + images.as_slice().len());
    for v in [IMAGES_MAGIC, images.rows() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(images.as_slice().iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}
