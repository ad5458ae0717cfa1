//! Dataset selection shared by all commands.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use lipvae_core::train::{synthetic_blobs, Dataset, Provenance};
use serde::Serialize;

use crate::idx::load_mnist_idx;

/// Side of desk-scale images.
pub const DESK_SIDE: usize = 8;

#[derive(Args, Debug, Clone, Serialize)]
pub struct DataArgs {
    /// Use generated Gaussian-blob images instead of IDX files.
    #[arg(long)]
    pub synthetic: bool,
    /// Number of synthetic images.
    #[arg(long, default_value_t = 2000)]
    pub n_synthetic: usize,
    /// Seed of the synthetic generator.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// IDX image file (e.g. train-images-idx3-ubyte).
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// IDX label file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Tag IDX data as Fashion-MNIST.
    #[arg(long)]
    pub fashion: bool,
    /// 8×8 images: synthetic data is generated at 8×8, 28×28 IDX data is
    /// center-cropped to 24×24 and block-averaged by 3.
    #[arg(long)]
    pub desk_scale: bool,
    /// Index of the first image used.
    #[arg(long, default_value_t = 0)]
    pub offset: usize,
    /// Number of images used (default: all after `offset`).
    #[arg(long)]
    pub limit: Option<usize>,
}

impl Default for DataArgs {
    fn default() -> Self {
        Self {
            synthetic: true,
            n_synthetic: 2000,
            data_seed: 0,
            images: None,
            labels: None,
            fashion: false,
            desk_scale: true,
            offset: 0,
            limit: None,
        }
    }
}

impl DataArgs {
    pub fn describe(&self) -> String {
        match &self.images {
            Some(p) if !self.synthetic => p.display().to_string(),
            _ => format!("synthetic(n={}, seed={})", self.n_synthetic, self.data_seed),
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        let full = if self.synthetic {
            let d = if self.desk_scale {
                DESK_SIDE * DESK_SIDE
            } else {
                28 * 28
            };
            synthetic_blobs(self.n_synthetic, d, self.data_seed)?
        } else {
            let Some(images) = &self.images else {
                bail!("either --synthetic or --images is required");
            };
            let provenance = if self.fashion {
                Provenance::FashionMnist
            } else {
                Provenance::Mnist
            };
            let ds = load_mnist_idx(images, self.labels.as_deref(), provenance)
                .with_context(|| format!("loading {}", images.display()))?;
            if self.desk_scale {
                to_desk_scale(&ds)?
            } else {
                ds
            }
        };
        let end = match self.limit {
            Some(l) => self.offset + l,
            None => full.len(),
        };
        if self.offset == 0 && end == full.len() {
            return Ok(full);
        }
        if end > full.len() {
            bail!(
                "requested images {}..{end} but the dataset has {}",
                self.offset,
                full.len()
            );
        }
        Ok(full.slice(self.offset, end)?)
    }
}

/// Crops and pools square images to 8×8.
pub fn to_desk_scale(ds: &Dataset) -> Result<Dataset> {
    let side = ds.side().context("desk scale needs square images")?;
    if side == DESK_SIDE {
        return Ok(ds.clone());
    }
    let factor = side / DESK_SIDE;
    let cropped = ds.center_crop(factor * DESK_SIDE)?;
    Ok(cropped.downsample(factor)?)
}
