//! Lipschitz-constrained variational autoencoders with certified
//! r-robustness guarantees.
//!
//! The crate is `no_std` (it needs `alloc`) and contains the whole
//! numerical pipeline:
//!
//! - [`numerics`]: row-major matrices, seeded counter-based randomness,
//!   norms and a central finite-difference oracle.
//! - [`lipnet`]: fully-connected networks whose layers are Björck
//!   orthonormalized and rescaled so that the network carries a known
//!   Lipschitz constant, with exact reverse-mode gradients through the
//!   unrolled orthonormalization.
//! - [`vae`]: diagonal-Gaussian encoder, Continuous Bernoulli decoder and the
//!   (β-)ELBO with its gradient.
//! - [`train`]: datasets, Adam and a deterministic, resumable training loop.
//! - [`certify`]: probability and margin lower bounds computed from the
//!   Lipschitz constants.
//! - [`attack`]: maximum-damage and latent-space attacks, and the empirical
//!   margin estimator.
//!
//! File formats, the command line and everything touching the OS live in the
//! companion `lipvae` crate.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attack;
pub mod certify;
mod error;
pub mod lipnet;
pub mod numerics;
pub mod train;
pub mod vae;

pub use error::{Error, Result};
