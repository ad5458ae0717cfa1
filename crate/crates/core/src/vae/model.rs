use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::likelihood::{cb_log_likelihood, cb_log_likelihood_grad, kl_to_std_normal, LAMBDA_MIN, SIGMA_MIN};
use crate::lipnet::{
    Activation, Constraint, EffectiveGrads, ForwardTape, LipschitzMlp, MlpSpec, OrthoConfig, PreparedNet,
};
use crate::numerics::{all_finite, SeededRng};
use crate::{Error, Result};

/// Whether the three networks are Lipschitz-constrained, and with which
/// constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelKind {
    Lipschitz {
        /// `a`: decoder.
        decoder: f64,
        /// `b`: encoder mean.
        encoder_mean: f64,
        /// `c`: encoder standard deviation (unused in fixed-σ mode).
        encoder_std: f64,
        ortho: OrthoConfig,
    },
    Standard,
}

impl ModelKind {
    /// The same constant `m` for all three networks.
    pub fn lipschitz(m: f64) -> Self {
        ModelKind::Lipschitz {
            decoder: m,
            encoder_mean: m,
            encoder_std: m,
            ortho: OrthoConfig::default(),
        }
    }

    pub fn is_lipschitz(&self) -> bool {
        matches!(self, ModelKind::Lipschitz { .. })
    }
}

/// Architecture and objective hyperparameters of a [`VaeModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub input_dim: usize,
    /// Hidden widths, shared by all three networks.
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub kind: ModelKind,
    /// Input-independent encoder standard deviation; `None` learns it.
    pub fixed_sigma: Option<Vec<f64>>,
    /// Weight on the KL term.
    pub beta: f64,
}

impl VaeConfig {
    /// Full-size MNIST architecture: three hidden layers of width 512,
    /// ten latent dimensions.
    pub fn mnist(kind: ModelKind) -> Self {
        Self {
            input_dim: 784,
            hidden: vec![512; 3],
            latent_dim: 10,
            kind,
            fixed_sigma: None,
            beta: 1.0,
        }
    }

    /// Desk-scale profile: 8×8 inputs, width 64.
    pub fn desk(kind: ModelKind) -> Self {
        Self {
            input_dim: 64,
            hidden: vec![64; 3],
            ..Self::mnist(kind)
        }
    }

    /// Sets a fixed σ with equal entries and Euclidean norm `norm`.
    pub fn with_fixed_sigma_norm(mut self, norm: f64) -> Self {
        let each = norm / libm::sqrt(self.latent_dim as f64);
        self.fixed_sigma = Some(vec![each; self.latent_dim]);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 {
            return Err(Error::invalid("input and latent dimensions must be >= 1"));
        }
        if let Some(s) = &self.fixed_sigma {
            if s.len() != self.latent_dim {
                return Err(Error::ShapeMismatch {
                    context: "fixed sigma",
                    expected: self.latent_dim,
                    actual: s.len(),
                });
            }
            if s.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::invalid("fixed sigma entries must be finite and >= 0"));
            }
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        Ok(())
    }

    fn net_spec(&self, input_dim: usize, output_dim: usize, output_activation: Activation) -> MlpSpec {
        MlpSpec {
            input_dim,
            hidden: self.hidden.clone(),
            output_dim,
            hidden_activation: if self.kind.is_lipschitz() {
                Activation::GroupSort
            } else {
                Activation::Relu
            },
            output_activation,
        }
    }
}

/// Encoder standard deviation: a network with final Sigmoid, or a fixed
/// vector.
#[derive(Debug, Clone)]
pub enum StdEncoder {
    Learned(LipschitzMlp),
    Fixed(Vec<f64>),
}

/// Mean and standard deviation of `q(z|x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// `z = μ + σ ⊙ ε`.
pub fn reparameterize(enc: &EncoderOutput, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != enc.mean.len() {
        return Err(Error::ShapeMismatch {
            context: "reparameterize",
            expected: enc.mean.len(),
            actual: eps.len(),
        });
    }
    Ok(enc
        .mean
        .iter()
        .zip(&enc.std)
        .zip(eps)
        .map(|((m, s), e)| m + s * e)
        .collect())
}

/// Certified Lipschitz constants `(a, b, c)` of decoder, encoder mean and
/// encoder standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertConstants {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Reconstruction and KL terms of one single-sample ELBO estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Variational autoencoder with diagonal-Gaussian encoder and Continuous
/// Bernoulli decoder.
#[derive(Debug, Clone)]
pub struct VaeModel {
    config: VaeConfig,
    encoder_mean: LipschitzMlp,
    encoder_std: StdEncoder,
    decoder: LipschitzMlp,
}

impl VaeModel {
    /// Randomly initialized model.
    pub fn new(config: VaeConfig, rng: &SeededRng) -> Result<Self> {
        config.validate()?;
        let (ca, cb, cc) = match config.kind {
            ModelKind::Lipschitz {
                decoder,
                encoder_mean,
                encoder_std,
                ortho,
            } => (
                Constraint::Lipschitz {
                    constant: decoder,
                    ortho,
                },
                Constraint::Lipschitz {
                    constant: encoder_mean,
                    ortho,
                },
                Constraint::Lipschitz {
                    constant: encoder_std,
                    ortho,
                },
            ),
            ModelKind::Standard => (
                Constraint::Unconstrained,
                Constraint::Unconstrained,
                Constraint::Unconstrained,
            ),
        };
        let (dx, dz) = (config.input_dim, config.latent_dim);
        let encoder_mean = LipschitzMlp::random(
            &config.net_spec(dx, dz, Activation::Identity),
            cb,
            &mut rng.substream(0),
        )?;
        let encoder_std = match &config.fixed_sigma {
            Some(s) => StdEncoder::Fixed(s.clone()),
            None => StdEncoder::Learned(LipschitzMlp::random(
                &config.net_spec(dx, dz, Activation::Sigmoid),
                cc,
                &mut rng.substream(1),
            )?),
        };
        let decoder = LipschitzMlp::random(&config.net_spec(dz, dx, Activation::Sigmoid), ca, &mut rng.substream(2))?;
        Ok(Self {
            config,
            encoder_mean,
            encoder_std,
            decoder,
        })
    }

    /// Assembles a model from existing networks. All networks must share one
    /// constraint kind.
    pub fn from_parts(
        encoder_mean: LipschitzMlp,
        encoder_std: StdEncoder,
        decoder: LipschitzMlp,
        beta: f64,
    ) -> Result<Self> {
        let dx = encoder_mean.input_dim();
        let dz = encoder_mean.output_dim();
        if decoder.input_dim() != dz || decoder.output_dim() != dx {
            return Err(Error::invalid("decoder shape does not mirror the encoder"));
        }
        let lip = encoder_mean.lipschitz_constant().is_some();
        let mut all = vec![&encoder_mean, &decoder];
        let fixed_sigma = match &encoder_std {
            StdEncoder::Learned(net) => {
                if net.input_dim() != dx || net.output_dim() != dz {
                    return Err(Error::invalid("std encoder shape does not match the mean encoder"));
                }
                all.push(net);
                None
            }
            StdEncoder::Fixed(s) => Some(s.clone()),
        };
        if all.iter().any(|n| n.lipschitz_constant().is_some() != lip) {
            return Err(Error::invalid("networks mix constrained and unconstrained layers"));
        }
        let ortho = match encoder_mean.constraint() {
            Constraint::Lipschitz { ortho, .. } => ortho,
            Constraint::Unconstrained => OrthoConfig::default(),
        };
        let kind = if lip {
            ModelKind::Lipschitz {
                decoder: decoder.lipschitz_constant().unwrap_or(0.0),
                encoder_mean: encoder_mean.lipschitz_constant().unwrap_or(0.0),
                encoder_std: match &encoder_std {
                    StdEncoder::Learned(n) => n.lipschitz_constant().unwrap_or(0.0),
                    StdEncoder::Fixed(_) => 0.0,
                },
                ortho,
            }
        } else {
            ModelKind::Standard
        };
        let hidden = encoder_mean.layers()[..encoder_mean.layers().len() - 1]
            .iter()
            .map(|l| l.out_dim())
            .collect();
        let config = VaeConfig {
            input_dim: dx,
            hidden,
            latent_dim: dz,
            kind,
            fixed_sigma,
            beta,
        };
        config.validate()?;
        Ok(Self {
            config,
            encoder_mean,
            encoder_std,
            decoder,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn beta(&self) -> f64 {
        self.config.beta
    }

    pub fn is_lipschitz(&self) -> bool {
        self.config.kind.is_lipschitz()
    }

    pub fn encoder_mean(&self) -> &LipschitzMlp {
        &self.encoder_mean
    }

    pub fn encoder_std(&self) -> &StdEncoder {
        &self.encoder_std
    }

    pub fn decoder(&self) -> &LipschitzMlp {
        &self.decoder
    }

    fn nets(&self) -> impl Iterator<Item = &LipschitzMlp> {
        let std = match &self.encoder_std {
            StdEncoder::Learned(n) => Some(n),
            StdEncoder::Fixed(_) => None,
        };
        core::iter::once(&self.encoder_mean)
            .chain(std)
            .chain(core::iter::once(&self.decoder))
    }

    pub fn num_params(&self) -> usize {
        self.nets().map(|n| n.num_params()).sum()
    }

    /// All trainable parameters: encoder mean, encoder std (if learned),
    /// decoder.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for n in self.nets() {
            n.params_flat(&mut out);
        }
        out
    }

    pub fn set_params_flat(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                context: "VaeModel::set_params_flat",
                expected: self.num_params(),
                actual: src.len(),
            });
        }
        let mut at = self.encoder_mean.set_params_flat(src)?;
        if let StdEncoder::Learned(n) = &mut self.encoder_std {
            at += n.set_params_flat(&src[at..])?;
        }
        self.decoder.set_params_flat(&src[at..])?;
        Ok(())
    }

    /// Orthonormalizes every constrained network once; the result evaluates
    /// and differentiates the model for the current parameters.
    pub fn prepare(&self) -> Result<PreparedVae> {
        Ok(PreparedVae {
            mean: self.encoder_mean.prepare()?,
            std: match &self.encoder_std {
                StdEncoder::Learned(n) => PreparedStd::Learned(n.prepare()?),
                StdEncoder::Fixed(s) => PreparedStd::Fixed(s.iter().map(|&v| v.clamp(SIGMA_MIN, 1.0)).collect()),
            },
            decoder: self.decoder.prepare()?,
            latent_dim: self.config.latent_dim,
            beta: self.config.beta,
        })
    }

    pub fn encode(&self, x: &[f64]) -> Result<EncoderOutput> {
        self.prepare()?.encode(x)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.prepare()?.decode(z)
    }

    pub fn elbo(&self, x: &[f64], eps: &[f64], beta: f64) -> Result<ElboTerms> {
        self.prepare()?.elbo(x, eps, beta, None)
    }

    /// ELBO and its gradient with respect to [`VaeModel::params_flat`].
    pub fn elbo_gradient(&self, x: &[f64], eps: &[f64], beta: f64) -> Result<(ElboTerms, Vec<f64>)> {
        let p = self.prepare()?;
        let mut g = p.zero_grads();
        let terms = p.elbo(x, eps, beta, Some(&mut g))?;
        Ok((terms, p.raw_gradients(&g)))
    }

    pub fn certified_constants(&self) -> Result<CertConstants> {
        self.prepare()?.certified_constants()
    }
}

#[derive(Debug, Clone)]
enum PreparedStd {
    Learned(PreparedNet),
    Fixed(Vec<f64>),
}

/// A [`VaeModel`] with all effective weights computed.
#[derive(Debug, Clone)]
pub struct PreparedVae {
    mean: PreparedNet,
    std: PreparedStd,
    decoder: PreparedNet,
    latent_dim: usize,
    beta: f64,
}

/// Effective-weight gradients of all networks of a [`PreparedVae`].
#[derive(Debug, Clone)]
pub struct VaeGrads {
    mean: EffectiveGrads,
    std: Option<EffectiveGrads>,
    decoder: EffectiveGrads,
}

impl VaeGrads {
    pub fn scale(&mut self, alpha: f64) {
        self.mean.scale(alpha);
        if let Some(s) = &mut self.std {
            s.scale(alpha);
        }
        self.decoder.scale(alpha);
    }
}

/// Forward record of [`PreparedVae::encode_tape`].
#[derive(Debug, Clone)]
pub struct EncoderTape {
    mean: ForwardTape,
    std: Option<(ForwardTape, Vec<f64>)>,
}

/// Forward record of [`PreparedVae::decode_tape`].
#[derive(Debug, Clone)]
pub struct DecoderTape {
    tape: ForwardTape,
    raw: Vec<f64>,
}

impl PreparedVae {
    pub fn input_dim(&self) -> usize {
        self.mean.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn decoder(&self) -> &PreparedNet {
        &self.decoder
    }

    pub fn is_fixed_sigma(&self) -> bool {
        matches!(self.std, PreparedStd::Fixed(_))
    }

    pub fn encode(&self, x: &[f64]) -> Result<EncoderOutput> {
        let mean = self.mean.eval(x)?;
        let std = match &self.std {
            PreparedStd::Learned(net) => net.eval(x)?.into_iter().map(|s| s.clamp(SIGMA_MIN, 1.0)).collect(),
            PreparedStd::Fixed(s) => s.clone(),
        };
        Ok(EncoderOutput { mean, std })
    }

    pub fn encode_tape(&self, x: &[f64]) -> Result<(EncoderOutput, EncoderTape)> {
        let (mean, mean_tape) = self.mean.forward(x)?;
        let (std, std_tape) = match &self.std {
            PreparedStd::Learned(net) => {
                let (raw, tape) = net.forward(x)?;
                (raw.iter().map(|s| s.clamp(SIGMA_MIN, 1.0)).collect(), Some((tape, raw)))
            }
            PreparedStd::Fixed(s) => (s.clone(), None),
        };
        Ok((
            EncoderOutput { mean, std },
            EncoderTape {
                mean: mean_tape,
                std: std_tape,
            },
        ))
    }

    /// Pulls `(∂/∂μ, ∂/∂σ)` back to the input, accumulating encoder
    /// gradients when `grads` is given.
    pub fn encode_backward(
        &self,
        tape: &EncoderTape,
        d_mean: &[f64],
        d_std: &[f64],
        mut grads: Option<&mut VaeGrads>,
    ) -> Result<Vec<f64>> {
        let mut dx = self
            .mean
            .backward(&tape.mean, d_mean, grads.as_deref_mut().map(|g| &mut g.mean))?;
        if let (PreparedStd::Learned(net), Some((std_tape, raw))) = (&self.std, &tape.std) {
            let masked: Vec<f64> = d_std
                .iter()
                .zip(raw)
                .map(|(&g, &r)| if (SIGMA_MIN..=1.0).contains(&r) { g } else { 0.0 })
                .collect();
            let acc = grads.and_then(|g| g.std.as_mut());
            let dxs = net.backward(std_tape, &masked, acc)?;
            crate::numerics::axpy(1.0, &dxs, &mut dx);
        }
        Ok(dx)
    }

    /// Decoder mean `λ = g(z)`, clamped to `[1e-6, 1 − 1e-6]`.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.decoder.eval(z)?.into_iter().map(clamp_lambda).collect())
    }

    pub fn decode_tape(&self, z: &[f64]) -> Result<(Vec<f64>, DecoderTape)> {
        let (raw, tape) = self.decoder.forward(z)?;
        let lambda = raw.iter().copied().map(clamp_lambda).collect();
        Ok((lambda, DecoderTape { tape, raw }))
    }

    pub fn decode_backward(
        &self,
        tape: &DecoderTape,
        d_lambda: &[f64],
        grads: Option<&mut VaeGrads>,
    ) -> Result<Vec<f64>> {
        let masked: Vec<f64> = d_lambda
            .iter()
            .zip(&tape.raw)
            .map(|(&g, &r)| {
                if (LAMBDA_MIN..=1.0 - LAMBDA_MIN).contains(&r) {
                    g
                } else {
                    0.0
                }
            })
            .collect();
        self.decoder
            .backward(&tape.tape, &masked, grads.map(|g| &mut g.decoder))
    }

    pub fn zero_grads(&self) -> VaeGrads {
        VaeGrads {
            mean: self.mean.zero_grads(),
            std: match &self.std {
                PreparedStd::Learned(n) => Some(n.zero_grads()),
                PreparedStd::Fixed(_) => None,
            },
            decoder: self.decoder.zero_grads(),
        }
    }

    /// Raw-parameter gradient, in [`VaeModel::params_flat`] order.
    pub fn raw_gradients(&self, grads: &VaeGrads) -> Vec<f64> {
        let mut out = Vec::new();
        self.mean.raw_gradients(&grads.mean).flatten_into(&mut out);
        if let (PreparedStd::Learned(n), Some(g)) = (&self.std, &grads.std) {
            n.raw_gradients(g).flatten_into(&mut out);
        }
        self.decoder.raw_gradients(&grads.decoder).flatten_into(&mut out);
        out
    }

    /// Single-sample `β`-ELBO at `x` with noise `eps`; accumulates its
    /// gradient into `grads` when given.
    pub fn elbo(&self, x: &[f64], eps: &[f64], beta: f64, mut grads: Option<&mut VaeGrads>) -> Result<ElboTerms> {
        let (enc, enc_tape) = self.encode_tape(x)?;
        let z = reparameterize(&enc, eps)?;
        let (lambda, dec_tape) = self.decode_tape(&z)?;
        let recon = cb_log_likelihood(x, &lambda)?;
        let kl = kl_to_std_normal(&enc.mean, &enc.std);
        let terms = ElboTerms {
            elbo: recon - beta * kl,
            recon,
            kl,
        };
        if !terms.elbo.is_finite() {
            return Err(Error::NonFinite("ELBO".into()));
        }
        if grads.is_some() {
            let d_lambda = cb_log_likelihood_grad(x, &lambda);
            let dz = self.decode_backward(&dec_tape, &d_lambda, grads.as_deref_mut())?;
            let d_mean: Vec<f64> = dz.iter().zip(&enc.mean).map(|(g, m)| g - beta * m).collect();
            let d_std: Vec<f64> = dz
                .iter()
                .zip(eps)
                .zip(&enc.std)
                .map(|((g, e), s)| g * e - beta * (s - 1.0 / s))
                .collect();
            self.encode_backward(&enc_tape, &d_mean, &d_std, grads)?;
        }
        Ok(terms)
    }

    /// Certified `(a, b, c)`; `c = 0` in fixed-σ mode. Refuses standard
    /// models and layers that failed to orthonormalize.
    pub fn certified_constants(&self) -> Result<CertConstants> {
        let a = self.decoder.certified_constant(false)?;
        let b = self.mean.certified_constant(false)?;
        let c = match &self.std {
            PreparedStd::Learned(n) => n.certified_constant(false)?,
            PreparedStd::Fixed(_) => 0.0,
        };
        Ok(CertConstants { a, b, c })
    }
}

fn clamp_lambda(l: f64) -> f64 {
    l.clamp(LAMBDA_MIN, 1.0 - LAMBDA_MIN)
}

/// Checks that every entry is a valid pixel intensity.
pub fn check_unit_interval(x: &[f64]) -> Result<()> {
    if !all_finite(x) {
        return Err(Error::NonFinite("input".into()));
    }
    match x.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(index) => Err(Error::OutOfRange { index, value: x[index] }),
        None => Ok(()),
    }
}
