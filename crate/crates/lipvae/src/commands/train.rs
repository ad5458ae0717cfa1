use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use lipvae_core::lipnet::OrthoConfig;
use lipvae_core::numerics::SeededRng;
use lipvae_core::train::{AdamConfig, EpochStats, TrainConfig, Trainer};
use lipvae_core::vae::{ModelKind, VaeConfig, VaeModel};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, to_bytes, Checkpoint, TrainingRecord};
use crate::data::DataArgs;
use crate::output::OutputDir;

pub const CHECKPOINT_FILE: &str = "checkpoint.lvc";
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Args, Debug, Clone, Serialize)]
#[command(group = clap::ArgGroup::new("kind").required(true).args(["lip_const", "standard", "resume"]))]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Lipschitz constant of all three networks.
    #[arg(long)]
    pub lip_const: Option<f64>,
    /// Train an unconstrained VAE.
    #[arg(long)]
    pub standard: bool,
    /// Fix the encoder std to equal entries with this Euclidean norm.
    #[arg(long)]
    pub fixed_sigma_norm: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 10)]
    pub latent_dim: usize,
    /// Hidden width (default 512, or 64 with --desk-scale).
    #[arg(long)]
    pub hidden_width: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub hidden_layers: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub bjorck_iters: usize,
    #[arg(long, default_value_t = 1)]
    pub bjorck_order: usize,
    /// Random pairs for the per-epoch decoder Lipschitz check (0: off).
    #[arg(long, default_value_t = 1000)]
    pub lipschitz_check_pairs: usize,
    /// Continue from a training checkpoint up to --epochs.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn new(data: DataArgs, out: PathBuf) -> Self {
        Self {
            data,
            lip_const: None,
            standard: false,
            fixed_sigma_norm: None,
            beta: 1.0,
            latent_dim: 10,
            hidden_width: None,
            hidden_layers: 3,
            epochs: 20,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
            bjorck_iters: 20,
            bjorck_order: 1,
            lipschitz_check_pairs: 1000,
            resume: None,
            out,
        }
    }

    fn model_config(&self, input_dim: usize) -> Result<VaeConfig> {
        let kind = match (self.lip_const, self.standard) {
            (Some(m), false) => ModelKind::Lipschitz {
                decoder: m,
                encoder_mean: m,
                encoder_std: m,
                ortho: OrthoConfig {
                    iterations: self.bjorck_iters,
                    order: self.bjorck_order,
                    ..OrthoConfig::default()
                },
            },
            (None, true) => ModelKind::Standard,
            _ => bail!("give exactly one of --lip-const and --standard"),
        };
        let width = self.hidden_width.unwrap_or(if self.data.desk_scale { 64 } else { 512 });
        let mut cfg = VaeConfig {
            input_dim,
            hidden: vec![width; self.hidden_layers],
            latent_dim: self.latent_dim,
            kind,
            fixed_sigma: None,
            beta: self.beta,
        };
        if let Some(s) = self.fixed_sigma_norm {
            cfg = cfg.with_fixed_sigma_norm(s);
        }
        Ok(cfg)
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                learning_rate: self.lr,
                ..AdamConfig::default()
            },
            seed: self.seed,
            lipschitz_check_pairs: self.lipschitz_check_pairs,
        }
    }
}

#[derive(Debug, Serialize)]
struct HistoryRow {
    epoch: usize,
    elbo: f64,
    recon_ll: f64,
    kl: f64,
    decoder_lipschitz: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub model: VaeModel,
    pub history: Vec<EpochStats>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    let ds = args.data.load()?;
    let mut out = OutputDir::create(&args.out, "train", args, args.seed)?;
    out.add_input(args.data.describe());
    let trainer = match &args.resume {
        Some(path) => {
            out.add_input(path.display().to_string());
            let ckpt = load_checkpoint(path)?;
            let Some(TrainingRecord { mut config, state }) = ckpt.training else {
                bail!("{} holds no optimizer state to resume from", path.display());
            };
            config.epochs = args.epochs;
            Trainer::resume(ckpt.model, config, state)?
        }
        None => {
            let cfg = args.model_config(ds.dim())?;
            let model = VaeModel::new(cfg, &SeededRng::new(args.seed).substream(0))?;
            Trainer::new(model, args.train_config())?
        }
    };
    let mut trainer = trainer;
    trainer.run(&ds).context("training failed")?;
    let config = *trainer.config();
    let (model, state) = trainer.into_parts();
    let history = state.history.clone();
    let ckpt = Checkpoint {
        model: model.clone(),
        training: Some(TrainingRecord { config, state }),
    };
    let path = out.write_bytes(CHECKPOINT_FILE, &to_bytes(&ckpt))?;
    let rows: Vec<HistoryRow> = history
        .iter()
        .map(|h| HistoryRow {
            epoch: h.epoch,
            elbo: h.elbo,
            recon_ll: h.recon,
            kl: h.kl,
            decoder_lipschitz: h.decoder_lipschitz,
        })
        .collect();
    out.write_csv(HISTORY_FILE, "lipvae-history/1", &rows)?;
    out.finish()?;
    Ok(TrainOutcome {
        checkpoint: path,
        model,
        history,
    })
}
