use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use lipvae_core::certify::{bound_curve, certify, global_m1, global_margin, margin_m1, margin_m2, CertInput, P2Branch};
use lipvae_core::numerics::l2_norm;
use serde::Serialize;

use crate::checkpoint::load_checkpoint;
use crate::data::DataArgs;
use crate::output::OutputDir;

pub const CERTIFY_FILE: &str = "certify.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const CURVES_SUMMARY_FILE: &str = "curves_summary.json";

#[derive(Args, Debug, Clone, Serialize)]
pub struct CertifyArgs {
    /// Trained checkpoint; omit to use the constants below.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// One input-independent row for a fixed-σ model.
    #[arg(long)]
    pub global: bool,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub c: f64,
    #[arg(long)]
    pub sigma_norm: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub latent_dim: usize,
    #[arg(long)]
    pub r: f64,
    /// Also evaluate p1, p2 and the probability bound at this ‖δ‖₂.
    #[arg(long)]
    pub delta_norm: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertRow {
    pub index: Option<usize>,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub sigma_norm: f64,
    pub latent_dim: usize,
    pub r: f64,
    pub delta_norm: Option<f64>,
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    pub p2_branch: Option<P2Branch>,
    pub prob_lower_bound: Option<f64>,
    pub m1: Option<f64>,
    pub m2: f64,
    pub margin: f64,
}

fn row(index: Option<usize>, inp: &CertInput, global: bool) -> Result<CertRow> {
    let rep = certify(inp)?;
    let (m1, m2, margin) = if global {
        let g0 = CertInput { c: 0.0, ..*inp };
        (global_m1(inp)?, margin_m2(&g0)?, global_margin(inp)?)
    } else {
        (margin_m1(inp)?, rep.m2, rep.margin)
    };
    Ok(CertRow {
        index,
        a: inp.a,
        b: inp.b,
        c: inp.c,
        sigma_norm: inp.sigma_norm,
        latent_dim: inp.latent_dim,
        r: inp.r,
        delta_norm: inp.delta_norm,
        p1: rep.p1,
        p2: rep.p2,
        p2_branch: rep.p2_branch,
        prob_lower_bound: rep.prob_lower_bound,
        m1,
        m2,
        margin,
    })
}

pub fn cmd_certify(args: &CertifyArgs) -> Result<Vec<CertRow>> {
    let mut out = OutputDir::create(&args.out, "certify", args, 0)?;
    let rows = match &args.checkpoint {
        Some(path) => {
            out.add_input(path.display().to_string());
            let ckpt = load_checkpoint(path)?;
            let model = ckpt.model;
            if !model.is_lipschitz() {
                bail!(
                    "{} holds a standard (unconstrained) VAE: its networks have no certified \
                     Lipschitz constants, so no robustness certificate exists",
                    path.display()
                );
            }
            let prepared = model.prepare()?;
            let k = prepared
                .certified_constants()
                .context("a network failed to orthonormalize; refusing to certify")?;
            let base = CertInput {
                a: k.a,
                b: k.b,
                c: k.c,
                sigma_norm: 0.0,
                latent_dim: model.latent_dim(),
                r: args.r,
                delta_norm: args.delta_norm,
            };
            if args.global {
                let Some(sigma) = &model.config().fixed_sigma else {
                    bail!("--global needs a fixed-σ checkpoint");
                };
                vec![row(
                    None,
                    &CertInput {
                        sigma_norm: l2_norm(sigma),
                        ..base
                    },
                    true,
                )?]
            } else {
                out.add_input(args.data.describe());
                let ds = args.data.load()?;
                let mut rows = Vec::with_capacity(ds.len());
                for i in 0..ds.len() {
                    let s = l2_norm(&prepared.encode(ds.image(i))?.std);
                    rows.push(row(
                        Some(args.data.offset + i),
                        &CertInput { sigma_norm: s, ..base },
                        false,
                    )?);
                }
                rows
            }
        }
        None => {
            let (Some(a), Some(b), Some(s)) = (args.a, args.b, args.sigma_norm) else {
                bail!("without --checkpoint, --a, --b and --sigma-norm are required");
            };
            let inp = CertInput {
                a,
                b,
                c: args.c,
                sigma_norm: s,
                latent_dim: args.latent_dim,
                r: args.r,
                delta_norm: args.delta_norm,
            };
            vec![row(None, &inp, args.global)?]
        }
    };
    out.write_csv(CERTIFY_FILE, "lipvae-certify/1", &rows)?;
    out.finish()?;
    Ok(rows)
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CurvesArgs {
    #[arg(long, default_value_t = 5.0)]
    pub a: f64,
    #[arg(long, default_value_t = 5.0)]
    pub b: f64,
    #[arg(long, default_value_t = 5.0)]
    pub c: f64,
    #[arg(long, default_value_t = 0.1)]
    pub sigma_norm: f64,
    #[arg(long, default_value_t = 5)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 8.0)]
    pub r: f64,
    #[arg(long, default_value_t = 0.4)]
    pub delta_max: f64,
    #[arg(long, default_value_t = 401)]
    pub points: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveRow {
    pub delta_norm: f64,
    pub p1: f64,
    pub p2: f64,
    pub bound: f64,
    pub p2_branch: P2Branch,
    /// Which bound attains the minimum.
    pub tighter: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvesSummary {
    /// Norms where the tighter bound changes (first row after the switch).
    pub switches: Vec<f64>,
}

pub fn cmd_curves(args: &CurvesArgs) -> Result<(Vec<CurveRow>, CurvesSummary)> {
    let inp = CertInput {
        a: args.a,
        b: args.b,
        c: args.c,
        sigma_norm: args.sigma_norm,
        latent_dim: args.latent_dim,
        r: args.r,
        delta_norm: None,
    };
    let rows: Vec<CurveRow> = bound_curve(&inp, args.delta_max, args.points)?
        .into_iter()
        .map(|p| CurveRow {
            delta_norm: p.delta_norm,
            p1: p.p1,
            p2: p.p2,
            bound: p.bound,
            p2_branch: p.p2_branch,
            tighter: if p.p1 <= p.p2 { "p1" } else { "p2" },
        })
        .collect();
    let switches = rows
        .windows(2)
        .filter(|w| w[0].tighter != w[1].tighter)
        .map(|w| w[1].delta_norm)
        .collect();
    let summary = CurvesSummary { switches };
    let mut out = OutputDir::create(&args.out, "curves", args, 0)?;
    out.write_csv(CURVES_FILE, "lipvae-curves/1", &rows)?;
    out.write_json(CURVES_SUMMARY_FILE, "lipvae-curves-summary/1", &summary)?;
    out.finish()?;
    Ok((rows, summary))
}
