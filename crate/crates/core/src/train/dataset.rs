use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numerics::SeededRng;
use crate::{Error, Result};

/// Where a dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Mnist,
    FashionMnist,
    Synthetic,
    Downsampled,
}

/// `n` images of `dim` pixels each, stored row-major, all in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<f64>,
    dim: usize,
    labels: Option<Vec<u8>>,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(images: Vec<f64>, dim: usize, labels: Option<Vec<u8>>, provenance: Provenance) -> Result<Self> {
        if dim == 0 || images.is_empty() || !images.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "{} values cannot be split into images of {dim} pixels",
                images.len()
            )));
        }
        if let Some(index) = images.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::OutOfRange {
                index,
                value: images[index],
            });
        }
        let n = images.len() / dim;
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::ShapeMismatch {
                    context: "dataset labels",
                    expected: n,
                    actual: l.len(),
                });
            }
        }
        Ok(Self {
            images,
            dim,
            labels,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.images[i * self.dim..(i + 1) * self.dim]
    }

    pub fn images(&self) -> &[f64] {
        &self.images
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Side length if the images are square.
    pub fn side(&self) -> Option<usize> {
        let s = libm::sqrt(self.dim as f64) as usize;
        (0..=1).map(|k| s + k).find(|&c| c * c == self.dim)
    }

    fn square_side(&self) -> Result<usize> {
        self.side()
            .ok_or_else(|| Error::invalid(format!("images of {} pixels are not square", self.dim)))
    }

    /// Images `range` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Result<Dataset> {
        if start >= end || end > self.len() {
            return Err(Error::invalid(format!(
                "bad slice {start}..{end} of {} images",
                self.len()
            )));
        }
        Dataset::new(
            self.images[start * self.dim..end * self.dim].to_vec(),
            self.dim,
            self.labels.as_ref().map(|l| l[start..end].to_vec()),
            self.provenance,
        )
    }

    /// Block-mean pooling by `factor` along both axes.
    pub fn downsample(&self, factor: usize) -> Result<Dataset> {
        let side = self.square_side()?;
        if factor == 0 || side % factor != 0 {
            return Err(Error::invalid(format!("side {side} is not divisible by {factor}")));
        }
        let out_side = side / factor;
        let norm = 1.0 / (factor * factor) as f64;
        let mut out = Vec::with_capacity(self.len() * out_side * out_side);
        for i in 0..self.len() {
            let img = self.image(i);
            for by in 0..out_side {
                for bx in 0..out_side {
                    let mut s = 0.0;
                    for y in by * factor..(by + 1) * factor {
                        for x in bx * factor..(bx + 1) * factor {
                            s += img[y * side + x];
                        }
                    }
                    out.push((s * norm).clamp(0.0, 1.0));
                }
            }
        }
        Dataset::new(out, out_side * out_side, self.labels.clone(), Provenance::Downsampled)
    }

    /// Central `new_side × new_side` window of square images.
    pub fn center_crop(&self, new_side: usize) -> Result<Dataset> {
        let side = self.square_side()?;
        if new_side == 0 || new_side > side || !(side - new_side).is_multiple_of(2) {
            return Err(Error::invalid(format!("cannot center-crop side {side} to {new_side}")));
        }
        let off = (side - new_side) / 2;
        let mut out = Vec::with_capacity(self.len() * new_side * new_side);
        for i in 0..self.len() {
            let img = self.image(i);
            for y in off..off + new_side {
                out.extend_from_slice(&img[y * side + off..y * side + off + new_side]);
            }
        }
        Dataset::new(out, new_side * new_side, self.labels.clone(), self.provenance)
    }
}

/// Generator settings for [`synthetic_blobs_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobConfig {
    /// Number of mixture components.
    pub components: usize,
    /// Range of the per-axis bump widths, in pixels.
    pub min_width: f64,
    pub max_width: f64,
    /// Standard deviation of the per-image center jitter, in pixels.
    pub jitter: f64,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        Self {
            components: 4,
            min_width: 0.6,
            max_width: 1.6,
            jitter: 0.5,
            noise: 0.02,
        }
    }
}

/// One mixture component: an axis-aligned Gaussian bump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center_y: f64,
    pub center_x: f64,
    pub width_y: f64,
    pub width_x: f64,
}

impl Blob {
    /// Bump height (before amplitude) at pixel `(y, x)`.
    pub fn profile(&self, y: f64, x: f64, cy: f64, cx: f64) -> f64 {
        let dy = (y - cy) / self.width_y;
        let dx = (x - cx) / self.width_x;
        libm::exp(-0.5 * (dy * dy + dx * dx))
    }
}

fn grid(d_x: usize) -> (usize, usize) {
    let s = libm::sqrt(d_x as f64) as usize;
    match (0..=1).map(|k| s + k).find(|&c| c * c == d_x) {
        Some(side) => (side, side),
        None => (1, d_x),
    }
}

/// Mixture components drawn for `seed`. Images that are not square are laid
/// out as a single row.
pub fn blob_prototypes(d_x: usize, cfg: &BlobConfig, seed: u64) -> Vec<Blob> {
    let (h, w) = grid(d_x);
    let mut rng = SeededRng::new(seed).substream(0);
    (0..cfg.components)
        .map(|_| Blob {
            center_y: rng.uniform_range(0.2, 0.8) * (h - 1) as f64,
            center_x: rng.uniform_range(0.2, 0.8) * (w - 1) as f64,
            width_y: rng.uniform_range(cfg.min_width, cfg.max_width),
            width_x: rng.uniform_range(cfg.min_width, cfg.max_width),
        })
        .collect()
}

/// Mean bump amplitude of [`synthetic_blobs_with`].
pub const BLOB_MEAN_AMPLITUDE: f64 = 0.8;

/// `n` images, each one jittered bump from a `k`-component mixture with
/// amplitude `U[0.6, 1]`, plus noise, clipped to `[0, 1]`. Labels hold the
/// component index.
pub fn synthetic_blobs_with(n: usize, d_x: usize, seed: u64, cfg: &BlobConfig) -> Result<Dataset> {
    if n == 0 || d_x == 0 || cfg.components == 0 || cfg.components > 256 {
        return Err(Error::invalid(
            "synthetic_blobs needs n, d_x >= 1 and 1..=256 components",
        ));
    }
    let (h, w) = grid(d_x);
    let protos = blob_prototypes(d_x, cfg, seed);
    let base = SeededRng::new(seed).substream(1);
    let mut images = Vec::with_capacity(n * d_x);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = base.substream(i as u64);
        let k = rng.below(cfg.components);
        let b = &protos[k];
        let cy = b.center_y + cfg.jitter * rng.normal();
        let cx = b.center_x + cfg.jitter * rng.normal();
        let amp = rng.uniform_range(0.6, 1.0);
        for y in 0..h {
            for x in 0..w {
                let v = amp * b.profile(y as f64, x as f64, cy, cx) + cfg.noise * rng.normal();
                images.push(v.clamp(0.0, 1.0));
            }
        }
        labels.push(k as u8);
    }
    Dataset::new(images, d_x, Some(labels), Provenance::Synthetic)
}

/// [`synthetic_blobs_with`] at the default settings.
pub fn synthetic_blobs(n: usize, d_x: usize, seed: u64) -> Result<Dataset> {
    synthetic_blobs_with(n, d_x, seed, &BlobConfig::default())
}
