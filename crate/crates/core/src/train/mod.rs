//! Datasets, the Adam optimizer and the training loop.

mod adam;
mod dataset;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use dataset::{
    blob_prototypes, synthetic_blobs, synthetic_blobs_with, Blob, BlobConfig, Dataset, Provenance, BLOB_MEAN_AMPLITUDE,
};
pub use trainer::{train, EpochAccumulator, EpochStats, TrainConfig, TrainState, Trainer};
