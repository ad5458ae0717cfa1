use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use lipvae_core::attack::{
    estimate_margin, latent_space_attack, max_damage_attack, AttackConfig, MarginConfig, Probe, Termination,
};
use lipvae_core::numerics::{l2_distance, l2_norm};
use lipvae_core::train::Dataset;
use lipvae_core::vae::PreparedVae;
use serde::Serialize;

use crate::checkpoint::load_checkpoint;
use crate::data::DataArgs;
use crate::output::OutputDir;

pub const ATTACK_FILE: &str = "attack.json";
pub const ATTACK_SUMMARY_FILE: &str = "attack.csv";
pub const MARGIN_FILE: &str = "margin.csv";
pub const MARGIN_SUMMARY_FILE: &str = "margin_summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum AttackMode {
    MaxDamage,
    Latent,
}

/// Attack optimizer flags shared by `attack` and `margin`.
#[derive(Args, Debug, Clone, Serialize)]
pub struct OptimizerArgs {
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    /// Step length (default: budget / 10).
    #[arg(long)]
    pub step_size: Option<f64>,
    /// Reparameterization draws per gradient step.
    #[arg(long, default_value_t = 64)]
    pub step_samples: usize,
    /// Draws for the final probability/objective estimate (S).
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Random restarts (T).
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    /// Clip x + δ to [0, 1].
    #[arg(long)]
    pub clip: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl Default for OptimizerArgs {
    fn default() -> Self {
        Self {
            steps: 200,
            step_size: None,
            step_samples: 64,
            samples: 1000,
            restarts: 5,
            clip: false,
            seed: 0,
        }
    }
}

impl OptimizerArgs {
    fn config(&self, budget: f64, seed: u64) -> AttackConfig {
        AttackConfig {
            budget,
            steps: self.steps,
            step_size: self.step_size,
            restarts: self.restarts,
            samples: self.step_samples,
            final_samples: self.samples,
            clip: self.clip,
            seed,
        }
    }
}

/// Seed for input `index`, so inputs draw independent noise.
fn input_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct AttackArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = AttackMode::MaxDamage)]
    pub mode: AttackMode,
    /// First attacked input, relative to the selected data.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Number of consecutive inputs to attack.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Target input of the latent attack.
    #[arg(long)]
    pub target_index: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub budget: f64,
    /// Radius for the reported r-robustness probability.
    #[arg(long, default_value_t = 8.0)]
    pub r: f64,
    #[command(flatten)]
    pub opt: OptimizerArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackRecord {
    pub index: usize,
    pub target_index: Option<usize>,
    pub delta_norm: f64,
    /// Attack objective at δ*: mean output distance or latent KL.
    pub objective: f64,
    pub r_prob: Option<f64>,
    /// ‖g(μ(x + δ*)) − g(μ(x))‖₂.
    pub mean_distortion: f64,
    pub delta: Vec<f64>,
    pub trace: Vec<f64>,
    pub restart_objectives: Vec<f64>,
    pub recon_clean: Vec<f64>,
    pub recon_adv: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct AttackSummaryRow {
    index: usize,
    target_index: Option<usize>,
    delta_norm: f64,
    objective: f64,
    r_prob: Option<f64>,
    mean_distortion: f64,
}

fn select(ds: &Dataset, i: usize) -> Result<&[f64]> {
    if i >= ds.len() {
        bail!("input index {i} out of range ({} images)", ds.len());
    }
    Ok(ds.image(i))
}

fn mean_reconstruction(model: &PreparedVae, x: &[f64]) -> Result<Vec<f64>> {
    Ok(model.decode(&model.encode(x)?.mean)?)
}

pub fn cmd_attack(args: &AttackArgs) -> Result<Vec<AttackRecord>> {
    let model = load_checkpoint(&args.checkpoint)?.model.prepare()?;
    let ds = args.data.load()?;
    let mut out = OutputDir::create(&args.out, "attack", args, args.opt.seed)?;
    out.add_input(args.checkpoint.display().to_string());
    out.add_input(args.data.describe());
    let mut records = Vec::with_capacity(args.count);
    for i in args.index..args.index + args.count {
        let x = select(&ds, i)?;
        let cfg = args.opt.config(args.budget, input_seed(args.opt.seed, i));
        let (res, target) = match args.mode {
            AttackMode::MaxDamage => (max_damage_attack(&model, x, &cfg, args.r)?, None),
            AttackMode::Latent => {
                let Some(t) = args.target_index else {
                    bail!("--mode latent needs --target-index");
                };
                (latent_space_attack(&model, x, select(&ds, t)?, &cfg)?, Some(t))
            }
        };
        let x_adv: Vec<f64> = x.iter().zip(&res.delta).map(|(a, d)| a + d).collect();
        let recon_clean = mean_reconstruction(&model, x)?;
        let recon_adv = mean_reconstruction(&model, &x_adv)?;
        if let Some(side) = ds.side() {
            out.write_pgm(&format!("input_{i}.pgm"), x, side, side)?;
            out.write_pgm(&format!("input_adv_{i}.pgm"), &x_adv, side, side)?;
            out.write_pgm(&format!("recon_{i}.pgm"), &recon_clean, side, side)?;
            out.write_pgm(&format!("recon_adv_{i}.pgm"), &recon_adv, side, side)?;
        }
        records.push(AttackRecord {
            index: args.data.offset + i,
            target_index: target.map(|t| args.data.offset + t),
            delta_norm: l2_norm(&res.delta),
            objective: res.objective,
            r_prob: res.r_prob,
            mean_distortion: l2_distance(&recon_clean, &recon_adv),
            delta: res.delta,
            trace: res.trace,
            restart_objectives: res.restart_objectives,
            recon_clean,
            recon_adv,
        });
    }
    let summary: Vec<AttackSummaryRow> = records
        .iter()
        .map(|r| AttackSummaryRow {
            index: r.index,
            target_index: r.target_index,
            delta_norm: r.delta_norm,
            objective: r.objective,
            r_prob: r.r_prob,
            mean_distortion: r.mean_distortion,
        })
        .collect();
    out.write_json(ATTACK_FILE, "lipvae-attack/1", &records)?;
    out.write_csv(ATTACK_SUMMARY_FILE, "lipvae-attack-summary/1", &summary)?;
    out.finish()?;
    Ok(records)
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct MarginArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 8.0)]
    pub r: f64,
    #[arg(long, default_value_t = 5.0)]
    pub max_r: f64,
    #[arg(long, default_value_t = 0.25)]
    pub alpha: f64,
    /// Run all T attacks on every rung instead of moving on after the first
    /// success.
    #[arg(long)]
    pub no_early_exit: bool,
    #[command(flatten)]
    pub opt: OptimizerArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginRow {
    pub index: usize,
    pub estimate: f64,
    pub termination: Termination,
    pub n_probes: usize,
    /// `radius:p;p;…` per rung, rungs separated by `|`.
    pub probes: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginSummary {
    pub n: usize,
    pub found: usize,
    pub mean: f64,
    pub std: f64,
}

fn format_probes(probes: &[Probe]) -> String {
    probes
        .iter()
        .map(|p| {
            let ps: Vec<String> = p.probabilities.iter().map(|v| v.to_string()).collect();
            format!("{}:{}", p.radius, ps.join(";"))
        })
        .collect::<Vec<_>>()
        .join("|")
}

pub fn cmd_margin(args: &MarginArgs) -> Result<(Vec<MarginRow>, MarginSummary)> {
    let model = load_checkpoint(&args.checkpoint)?.model.prepare()?;
    let ds = args.data.load()?;
    let mut out = OutputDir::create(&args.out, "margin", args, args.opt.seed)?;
    out.add_input(args.checkpoint.display().to_string());
    out.add_input(args.data.describe());
    let mut rows = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let cfg = MarginConfig {
            max_r: args.max_r,
            alpha: args.alpha,
            restarts: args.opt.restarts,
            attack: args.opt.config(args.max_r, 0),
            early_exit: !args.no_early_exit,
            seed: input_seed(args.opt.seed, i),
        };
        let est = estimate_margin(&model, ds.image(i), args.r, &cfg)?;
        rows.push(MarginRow {
            index: args.data.offset + i,
            estimate: est.estimate,
            termination: est.termination,
            n_probes: est.probes.len(),
            probes: format_probes(&est.probes),
        });
    }
    let n = rows.len();
    let mean = rows.iter().map(|r| r.estimate).sum::<f64>() / n.max(1) as f64;
    let var = rows.iter().map(|r| (r.estimate - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
    let summary = MarginSummary {
        n,
        found: rows.iter().filter(|r| r.termination == Termination::Found).count(),
        mean,
        std: var.sqrt(),
    };
    out.write_csv(MARGIN_FILE, "lipvae-margin/1", &rows)?;
    out.write_json(MARGIN_SUMMARY_FILE, "lipvae-margin-summary/1", &summary)?;
    out.finish()?;
    Ok((rows, summary))
}
