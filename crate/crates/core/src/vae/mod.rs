//! Variational autoencoder: Gaussian encoder, Continuous Bernoulli decoder
//! and the single-sample ELBO with exact gradients.

mod likelihood;
mod model;

pub use likelihood::{cb_log_likelihood, cb_log_normalizer, kl_to_std_normal, LAMBDA_MIN, SIGMA_MIN};
pub use model::{
    check_unit_interval, reparameterize, CertConstants, DecoderTape, ElboTerms, EncoderOutput, EncoderTape, ModelKind,
    PreparedVae, StdEncoder, VaeConfig, VaeGrads, VaeModel,
};
