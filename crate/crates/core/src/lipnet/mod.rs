//! Lipschitz-constrained fully-connected networks.

mod activation;
mod network;
mod ortho;

pub use activation::{group_sort, sigmoid, Activation};
pub use network::{
    empirical_lipschitz, empirical_lipschitz_prepared, Constraint, DenseLayer, EffectiveGrads, ForwardTape,
    GradientTape, LipschitzMlp, MlpSpec, NetGradients, PreparedNet,
};
pub use ortho::{bjorck_orthonormalize, OrthoConfig, Orthonormalized};
