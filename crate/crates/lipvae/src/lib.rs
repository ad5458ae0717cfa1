//! IO, file formats and the `lipvae` command line around `lipvae-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod data;
pub mod idx;
pub mod output;

pub use lipvae_core as core;
