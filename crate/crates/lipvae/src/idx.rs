//! Reader for the big-endian IDX files MNIST ships in.

use std::path::Path;

use lipvae_core::train::{Dataset, Provenance};
use thiserror::Error;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("wrong IDX magic: expected {expected}, found {found}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX file: header promises {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("IDX dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Data(#[from] lipvae_core::Error),
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated {
            expected: at + 4,
            actual: bytes.len(),
        })
}

/// Parses an image file: returns `(n, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8]), IdxError> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(IdxError::BadMagic {
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(IdxError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    Ok((n, rows, cols, &bytes[16..]))
}

pub fn parse_labels(bytes: &[u8]) -> Result<&[u8], IdxError> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(IdxError::BadMagic {
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let n = read_u32(bytes, 4)? as usize;
    if bytes.len() != 8 + n {
        return Err(IdxError::Truncated {
            expected: 8 + n,
            actual: bytes.len(),
        });
    }
    Ok(&bytes[8..])
}

/// Builds a dataset from raw IDX bytes, scaling pixels to `[0, 1]`.
pub fn dataset_from_idx(images: &[u8], labels: Option<&[u8]>, provenance: Provenance) -> Result<Dataset, IdxError> {
    let (n, rows, cols, pixels) = parse_images(images)?;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(IdxError::DimensionMismatch(format!(
            "empty image file ({n}×{rows}×{cols})"
        )));
    }
    let labels = match labels {
        Some(l) => {
            let l = parse_labels(l)?;
            if l.len() != n {
                return Err(IdxError::DimensionMismatch(format!(
                    "{n} images but {} labels",
                    l.len()
                )));
            }
            Some(l.to_vec())
        }
        None => None,
    };
    let values = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Ok(Dataset::new(values, rows * cols, labels, provenance)?)
}

fn read(path: &Path) -> Result<Vec<u8>, IdxError> {
    std::fs::read(path).map_err(|source| IdxError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads an MNIST-style image file and, optionally, its labels.
pub fn load_mnist_idx(images: &Path, labels: Option<&Path>, provenance: Provenance) -> Result<Dataset, IdxError> {
    let img = read(images)?;
    let lab = labels.map(read).transpose()?;
    dataset_from_idx(&img, lab.as_deref(), provenance)
}
