//! MNIST IDX parsing, 4x4 average pooling and the two-gate logic task.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{array, Array1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

pub const MNIST_SIDE: usize = 28;
pub const POOL: usize = 4;
pub const POOLED_SIDE: usize = MNIST_SIDE / POOL;
pub const CLASSES: usize = 10;

/// One training or test example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Array1<f64>,
    /// Desired output of every output unit.
    pub target: Array1<f64>,
    /// Class index for classification tasks. When absent, a sample counts as
    /// correct when every output lands on the same side of 0.5 as its target.
    pub label: Option<usize>,
}

/// A grayscale image with pixels scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
    pub label: u8,
}

fn idx_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Idx {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| idx_error(path, format!("truncated header: {} bytes", bytes.len())))
}

/// Parse an IDX3 image file: magic, count, rows, cols, then raw bytes.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(idx_error(path, format!("bad image magic {magic:#010x}")));
    }
    let count = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let expected = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < expected {
        return Err(idx_error(
            path,
            format!(
                "truncated: header promises {expected} pixel bytes, found {}",
                body.len()
            ),
        ));
    }
    Ok((rows, cols, body[..expected].to_vec()))
}

/// Parse an IDX1 label file: magic, count, then one byte per label.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(idx_error(path, format!("bad label magic {magic:#010x}")));
    }
    let count = read_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(idx_error(
            path,
            format!("truncated: header promises {count} labels, found {}", body.len()),
        ));
    }
    Ok(body[..count].to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load an image/label file pair.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<Image>> {
    let (rows, cols, pixels) = parse_idx_images(&read(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read(labels_path)?, labels_path)?;
    let size = rows * cols;
    let count = pixels.len().checked_div(size).unwrap_or(0);
    if count != labels.len() {
        return Err(idx_error(
            labels_path,
            format!(
                "{} labels for {count} images in {}",
                labels.len(),
                images_path.display()
            ),
        ));
    }
    Ok(pixels
        .chunks_exact(size.max(1))
        .zip(labels)
        .map(|(px, label)| Image {
            rows,
            cols,
            pixels: px.iter().map(|&p| f64::from(p) / 255.0).collect(),
            label,
        })
        .collect())
}

/// Standard MNIST file names inside `dir`.
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
        }
    }

    pub fn exist(&self) -> bool {
        [
            &self.train_images,
            &self.train_labels,
            &self.test_images,
            &self.test_labels,
        ]
        .iter()
        .all(|p| p.is_file())
    }
}

/// Average each 4x4 block of a 28x28 image, giving 49 values in row-major
/// order.
pub fn downsample(pixels: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
    if rows != MNIST_SIDE || cols != MNIST_SIDE || pixels.len() != rows * cols {
        return Err(Error::Domain(format!(
            "downsample expects a {MNIST_SIDE}x{MNIST_SIDE} image, got {rows}x{cols} with {} pixels",
            pixels.len()
        )));
    }
    let mut out = vec![0.0; POOLED_SIDE * POOLED_SIDE];
    for (r, row) in pixels.chunks_exact(cols).enumerate() {
        for (c, &p) in row.iter().enumerate() {
            out[(r / POOL) * POOLED_SIDE + c / POOL] += p;
        }
    }
    let area = (POOL * POOL) as f64;
    out.iter_mut().for_each(|v| *v /= area);
    Ok(out)
}

pub fn one_hot(label: usize, classes: usize) -> Array1<f64> {
    let mut t = Array1::zeros(classes);
    t[label] = 1.0;
    t
}

/// Pooled 7x7 samples with one-hot targets, keeping at most `limit` images.
pub fn mnist_samples(images: &[Image], limit: Option<usize>) -> Result<Vec<Sample>> {
    images
        .iter()
        .take(limit.unwrap_or(usize::MAX))
        .map(|img| {
            let label = usize::from(img.label);
            if label >= CLASSES {
                return Err(Error::Domain(format!("label {label} outside 0..{CLASSES}")));
            }
            Ok(Sample {
                input: Array1::from(downsample(&img.pixels, img.rows, img.cols)?),
                target: one_hot(label, CLASSES),
                label: Some(label),
            })
        })
        .collect()
}

/// Load pooled MNIST train and test sets from the standard files in `dir`.
pub fn load_mnist(
    dir: &Path,
    train_limit: Option<usize>,
    test_limit: Option<usize>,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let files = MnistFiles::in_dir(dir);
    let train = load_idx(&files.train_images, &files.train_labels)?;
    let test = load_idx(&files.test_images, &files.test_labels)?;
    Ok((mnist_samples(&train, train_limit)?, mnist_samples(&test, test_limit)?))
}

/// The four input patterns over `{-1, 1}^2` with AND and OR targets.
pub fn logic_dataset() -> Vec<Sample> {
    [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)]
        .into_iter()
        .map(|(a, b): (f64, f64)| {
            let and = f64::from(u8::from(a > 0.0 && b > 0.0));
            let or = f64::from(u8::from(a > 0.0 || b > 0.0));
            Sample {
                input: array![a, b],
                target: array![and, or],
                label: None,
            }
        })
        .collect()
}
