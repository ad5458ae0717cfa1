use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::commands::{
    cmd_attack, cmd_certify, cmd_curves, cmd_margin, cmd_train, AttackArgs, CertifyArgs, CurvesArgs, MarginArgs,
    TrainArgs,
};

/// Lipschitz-constrained VAEs with certified robustness margins.
#[derive(Debug, Parser)]
#[command(name = "lipvae", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a VAE; writes a checkpoint and the per-epoch history.
    Train(Box<TrainArgs>),
    /// Certified margins from a checkpoint or from raw constants.
    Certify(Box<CertifyArgs>),
    /// p1, p2 and the probability bound over a grid of perturbation norms.
    Curves(CurvesArgs),
    /// Maximum-damage or latent-space attacks.
    Attack(Box<AttackArgs>),
    /// Empirical r-robustness margins by the attack ladder.
    Margin(Box<MarginArgs>),
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => {
            let o = cmd_train(a)?;
            if let Some(last) = o.history.last() {
                eprintln!("epoch {}: elbo {:.4}", last.epoch, last.elbo);
            }
            eprintln!("wrote {}", o.checkpoint.display());
        }
        Command::Certify(a) => {
            let rows = cmd_certify(a)?;
            eprintln!("certified {} row(s)", rows.len());
        }
        Command::Curves(a) => {
            let (rows, s) = cmd_curves(a)?;
            eprintln!("{} rows, tighter bound switches at {:?}", rows.len(), s.switches);
        }
        Command::Attack(a) => {
            let r = cmd_attack(a)?;
            let mean = r.iter().map(|x| x.objective).sum::<f64>() / r.len().max(1) as f64;
            eprintln!("{} attack(s), mean objective {mean:.6}", r.len());
        }
        Command::Margin(a) => {
            let (_, s) = cmd_margin(a)?;
            eprintln!("mean margin {:.4} ± {:.4} over {} inputs", s.mean, s.std, s.n);
        }
    }
    Ok(())
}
