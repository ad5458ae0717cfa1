use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::dataset::Dataset;
use crate::lipnet::empirical_lipschitz_prepared;
use crate::numerics::SeededRng;
use crate::vae::VaeModel;
use crate::{Error, Result};

const PERM_STREAM: u64 = 1;
const EPS_STREAM: u64 = 2;
const LIP_STREAM: u64 = 3;

/// Optimization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Random pairs for the per-epoch empirical decoder Lipschitz check;
    /// 0 disables it. Only used for Lipschitz models.
    pub lipschitz_check_pairs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            adam: AdamConfig::default(),
            seed: 0,
            lipschitz_check_pairs: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.adam.learning_rate > 0.0) {
            return Err(Error::invalid("batch size and learning rate must be positive"));
        }
        Ok(())
    }
}

/// Per-epoch means over all training examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
    /// Empirical decoder Lipschitz constant after the epoch.
    pub decoder_lipschitz: Option<f64>,
}

/// Running sums of the epoch in progress.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochAccumulator {
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
    pub count: usize,
}

/// Everything besides the model needed to resume training exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub adam: Adam,
    /// Next batch to run: `(epoch, step)`.
    pub epoch: usize,
    pub step: usize,
    pub partial: EpochAccumulator,
    pub history: Vec<EpochStats>,
}

/// Deterministic minibatch ascent on the β-ELBO.
///
/// Epoch `e` visits the data in a permutation drawn from its own substream;
/// the noise of step `s` in epoch `e` comes from another. A trainer resumed
/// from [`Trainer::state`] therefore continues bit-for-bit like an
/// uninterrupted run.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: VaeModel,
    config: TrainConfig,
    state: TrainState,
}

impl Trainer {
    pub fn new(model: VaeModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(config.adam, model.num_params());
        Ok(Self {
            model,
            config,
            state: TrainState {
                adam,
                epoch: 0,
                step: 0,
                partial: EpochAccumulator::default(),
                history: Vec::new(),
            },
        })
    }

    pub fn resume(model: VaeModel, config: TrainConfig, state: TrainState) -> Result<Self> {
        config.validate()?;
        if state.adam.m.len() != model.num_params() {
            return Err(Error::ShapeMismatch {
                context: "optimizer state",
                expected: model.num_params(),
                actual: state.adam.m.len(),
            });
        }
        Ok(Self { model, config, state })
    }

    pub fn model(&self) -> &VaeModel {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn history(&self) -> &[EpochStats] {
        &self.state.history
    }

    pub fn into_parts(self) -> (VaeModel, TrainState) {
        (self.model, self.state)
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.config.epochs
    }

    fn permutation(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        SeededRng::new(self.config.seed)
            .substream(PERM_STREAM)
            .substream(epoch as u64)
            .shuffle(&mut idx);
        idx
    }

    /// Runs one minibatch; closes the epoch after its last batch. Returns
    /// `false` once all epochs are done.
    pub fn step(&mut self, ds: &Dataset) -> Result<bool> {
        if self.is_finished() {
            return Ok(false);
        }
        if ds.dim() != self.model.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "training data",
                expected: self.model.input_dim(),
                actual: ds.dim(),
            });
        }
        let (epoch, step) = (self.state.epoch, self.state.step);
        let n = ds.len();
        let b = self.config.batch_size;
        let perm = self.permutation(n, epoch);
        let batch = &perm[step * b..((step + 1) * b).min(n)];

        let prepared = self.model.prepare()?;
        let mut grads = prepared.zero_grads();
        let mut eps_rng = SeededRng::new(self.config.seed)
            .substream(EPS_STREAM)
            .substream(epoch as u64)
            .substream(step as u64);
        let beta = self.model.beta();
        let mut eps = alloc::vec![0.0; self.model.latent_dim()];
        let mut acc = EpochAccumulator::default();
        for &i in batch {
            eps_rng.fill_normal(&mut eps);
            let terms = prepared
                .elbo(ds.image(i), &eps, beta, Some(&mut grads))
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Divergence { epoch, batch: step },
                    other => other,
                })?;
            acc.elbo += terms.elbo;
            acc.recon += terms.recon;
            acc.kl += terms.kl;
            acc.count += 1;
        }
        grads.scale(-1.0 / batch.len() as f64);
        let loss_grad = prepared.raw_gradients(&grads);
        if !crate::numerics::all_finite(&loss_grad) {
            return Err(Error::Divergence { epoch, batch: step });
        }
        let mut params = self.model.params_flat();
        self.state.adam.step(&mut params, &loss_grad)?;
        if !crate::numerics::all_finite(&params) {
            return Err(Error::Divergence { epoch, batch: step });
        }
        self.model.set_params_flat(&params)?;

        let p = &mut self.state.partial;
        p.elbo += acc.elbo;
        p.recon += acc.recon;
        p.kl += acc.kl;
        p.count += acc.count;
        self.state.step += 1;
        if self.state.step * b >= n {
            self.close_epoch()?;
        }
        Ok(true)
    }

    fn close_epoch(&mut self) -> Result<()> {
        let p = self.state.partial;
        let count = p.count.max(1) as f64;
        let decoder_lipschitz = if self.model.is_lipschitz() && self.config.lipschitz_check_pairs > 0 {
            let mut rng = SeededRng::new(self.config.seed)
                .substream(LIP_STREAM)
                .substream(self.state.epoch as u64);
            let prepared = self.model.decoder().prepare()?;
            Some(empirical_lipschitz_prepared(
                &prepared,
                self.config.lipschitz_check_pairs,
                &mut rng,
            )?)
        } else {
            None
        };
        self.state.history.push(EpochStats {
            epoch: self.state.epoch,
            elbo: p.elbo / count,
            recon: p.recon / count,
            kl: p.kl / count,
            decoder_lipschitz,
        });
        self.state.epoch += 1;
        self.state.step = 0;
        self.state.partial = EpochAccumulator::default();
        Ok(())
    }

    /// Runs at most `n` minibatches; returns how many ran.
    pub fn run_steps(&mut self, ds: &Dataset, n: usize) -> Result<usize> {
        let mut done = 0;
        while done < n && self.step(ds)? {
            done += 1;
        }
        Ok(done)
    }

    /// Trains until all configured epochs are done.
    pub fn run(&mut self, ds: &Dataset) -> Result<()> {
        while self.step(ds)? {}
        Ok(())
    }
}

/// Trains `model` on `ds` and returns it with the per-epoch history.
pub fn train(model: VaeModel, ds: &Dataset, config: &TrainConfig) -> Result<(VaeModel, Vec<EpochStats>)> {
    let mut t = Trainer::new(model, *config)?;
    t.run(ds)?;
    let (model, state) = t.into_parts();
    Ok((model, state.history))
}
