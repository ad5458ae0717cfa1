//! Norm-bounded attacks on a VAE and the empirical robustness margin.
//!
//! Both attacks run projected gradient steps of fixed length in the
//! normalized gradient direction, starting from a random point on the sphere
//! of half the budget. Restarts, steps and ladder rungs each draw from their
//! own RNG substream, so results do not depend on evaluation order.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numerics::{l2_distance, l2_norm, SeededRng};
use crate::vae::{reparameterize, EncoderOutput, PreparedVae};
use crate::{Error, Result};

/// Rescales `v` onto the ball of radius `budget` if it lies outside.
pub fn project_l2_ball(v: &[f64], budget: f64) -> Vec<f64> {
    let n = l2_norm(v);
    if n <= budget {
        return v.to_vec();
    }
    if budget <= 0.0 {
        return vec![0.0; v.len()];
    }
    let k = budget / n;
    v.iter().map(|x| x * k).collect()
}

/// `KL(N(μ₁, diag s₁²) ‖ N(μ₂, diag s₂²))`.
pub fn kl_diag_gaussians(mu1: &[f64], s1: &[f64], mu2: &[f64], s2: &[f64]) -> f64 {
    let mut kl = 0.0;
    for j in 0..mu1.len() {
        let d = mu1[j] - mu2[j];
        kl += libm::log(s2[j] / s1[j]) + (s1[j] * s1[j] + d * d) / (2.0 * s2[j] * s2[j]) - 0.5;
    }
    kl
}

/// Optimizer settings shared by both attacks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// ℓ₂ radius of the perturbation.
    pub budget: f64,
    pub steps: usize,
    /// Step length; `None` uses `budget / 10`.
    pub step_size: Option<f64>,
    pub restarts: usize,
    /// Reparameterization draws per objective evaluation during the ascent.
    pub samples: usize,
    /// Draws for the final evaluation of each restart's best perturbation.
    pub final_samples: usize,
    /// Keep `x + δ` inside `[0, 1]`.
    pub clip: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            budget: 1.0,
            steps: 200,
            step_size: None,
            restarts: 5,
            samples: 64,
            final_samples: 1000,
            clip: false,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget >= 0.0) || !self.budget.is_finite() {
            return Err(Error::invalid("attack budget must be finite and >= 0"));
        }
        if self.steps == 0 || self.restarts == 0 || self.samples == 0 || self.final_samples == 0 {
            return Err(Error::invalid("attack steps, restarts and sample counts must be >= 1"));
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0) {
                return Err(Error::invalid("attack step size must be positive"));
            }
        }
        Ok(())
    }

    fn step(&self) -> f64 {
        self.step_size.unwrap_or(self.budget / 10.0)
    }
}

/// Outcome of an attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub delta: Vec<f64>,
    /// Final objective at `delta`: mean output distance over
    /// `final_samples` draws (max damage), or the KL (latent).
    pub objective: f64,
    /// Best-so-far objective per step of the winning restart.
    pub trace: Vec<f64>,
    /// Final objective of each restart; `NaN` for restarts aborted on a
    /// non-finite objective.
    pub restart_objectives: Vec<f64>,
    /// Estimated probability that the output moves by at most `r`
    /// (max-damage only).
    pub r_prob: Option<f64>,
}

fn perturbed(x: &[f64], delta: &[f64], clip: bool) -> Vec<f64> {
    x.iter()
        .zip(delta)
        .map(|(a, d)| if clip { (a + d).clamp(0.0, 1.0) } else { a + d })
        .collect()
}

fn constrain(x: &[f64], delta: Vec<f64>, budget: f64, clip: bool) -> Vec<f64> {
    let d = project_l2_ball(&delta, budget);
    if clip {
        x.iter().zip(&d).map(|(a, v)| (a + v).clamp(0.0, 1.0) - a).collect()
    } else {
        d
    }
}

fn initial_delta(x: &[f64], cfg: &AttackConfig, rng: &mut SeededRng) -> Vec<f64> {
    if cfg.budget == 0.0 {
        return vec![0.0; x.len()];
    }
    let d = rng.on_sphere(x.len(), cfg.budget / 2.0);
    constrain(x, d, cfg.budget, cfg.clip)
}

fn check_input(model: &PreparedVae, x: &[f64]) -> Result<()> {
    if x.len() != model.input_dim() {
        return Err(Error::ShapeMismatch {
            context: "attack input",
            expected: model.input_dim(),
            actual: x.len(),
        });
    }
    Ok(())
}

/// Mean output distance and fraction within `r` over `n` fresh pairs.
fn distance_stats(
    model: &PreparedVae,
    clean: &EncoderOutput,
    x_adv: &[f64],
    n: usize,
    r: f64,
    rng: &mut SeededRng,
) -> Result<(f64, f64)> {
    let adv = model.encode(x_adv)?;
    let dz = model.latent_dim();
    let mut e1 = vec![0.0; dz];
    let mut e2 = vec![0.0; dz];
    let (mut sum, mut hits) = (0.0, 0usize);
    for _ in 0..n {
        rng.fill_normal(&mut e1);
        rng.fill_normal(&mut e2);
        let g_adv = model.decode(&reparameterize(&adv, &e1)?)?;
        let g_clean = model.decode(&reparameterize(clean, &e2)?)?;
        let d = l2_distance(&g_adv, &g_clean);
        sum += d;
        if d <= r {
            hits += 1;
        }
    }
    Ok((sum / n as f64, hits as f64 / n as f64))
}

/// S-sample mean output distance at `x + δ` and its gradient in `δ`.
fn damage_and_gradient(
    model: &PreparedVae,
    clean: &EncoderOutput,
    x_adv: &[f64],
    samples: usize,
    rng: &mut SeededRng,
) -> Result<(f64, Vec<f64>)> {
    let (adv, tape) = model.encode_tape(x_adv)?;
    let dz = model.latent_dim();
    let mut d_mean = vec![0.0; dz];
    let mut d_std = vec![0.0; dz];
    let mut e1 = vec![0.0; dz];
    let mut e2 = vec![0.0; dz];
    let mut total = 0.0;
    for _ in 0..samples {
        rng.fill_normal(&mut e1);
        rng.fill_normal(&mut e2);
        let (g_adv, dec_tape) = model.decode_tape(&reparameterize(&adv, &e1)?)?;
        let g_clean = model.decode(&reparameterize(clean, &e2)?)?;
        let diff: Vec<f64> = g_adv.iter().zip(&g_clean).map(|(a, b)| a - b).collect();
        let dist = l2_norm(&diff);
        total += dist;
        if dist == 0.0 {
            continue;
        }
        let unit: Vec<f64> = diff.iter().map(|v| v / dist).collect();
        let g_z = model.decode_backward(&dec_tape, &unit, None)?;
        for j in 0..dz {
            d_mean[j] += g_z[j];
            d_std[j] += g_z[j] * e1[j];
        }
    }
    let inv = 1.0 / samples as f64;
    d_mean.iter_mut().for_each(|v| *v *= inv);
    d_std.iter_mut().for_each(|v| *v *= inv);
    let grad = model.encode_backward(&tape, &d_mean, &d_std, None)?;
    Ok((total * inv, grad))
}

struct RestartOutcome {
    delta: Vec<f64>,
    trace: Vec<f64>,
}

fn max_damage_restart(
    model: &PreparedVae,
    x: &[f64],
    clean: &EncoderOutput,
    cfg: &AttackConfig,
    rng: &SeededRng,
) -> Result<RestartOutcome> {
    let mut delta = initial_delta(x, cfg, &mut rng.substream(u64::MAX));
    let mut best = (f64::NEG_INFINITY, delta.clone());
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let step = cfg.step();
    for k in 0..=cfg.steps {
        let x_adv = perturbed(x, &delta, cfg.clip);
        let (obj, grad) = damage_and_gradient(model, clean, &x_adv, cfg.samples, &mut rng.substream(k as u64))?;
        if !obj.is_finite() {
            return Err(Error::NonFinite("max-damage objective".into()));
        }
        if obj > best.0 {
            best = (obj, delta.clone());
        }
        trace.push(best.0);
        if k == cfg.steps || cfg.budget == 0.0 {
            break;
        }
        let gn = l2_norm(&grad);
        if gn == 0.0 || !gn.is_finite() {
            break;
        }
        let moved: Vec<f64> = delta.iter().zip(&grad).map(|(d, g)| d + step * g / gn).collect();
        delta = constrain(x, moved, cfg.budget, cfg.clip);
    }
    Ok(RestartOutcome { delta: best.1, trace })
}

fn max_damage_with(
    model: &PreparedVae,
    x: &[f64],
    cfg: &AttackConfig,
    r: f64,
    rng: &SeededRng,
) -> Result<AttackResult> {
    cfg.validate()?;
    check_input(model, x)?;
    let clean = model.encode(x)?;
    let mut winner: Option<(f64, f64, RestartOutcome)> = None;
    let mut restart_objectives = Vec::with_capacity(cfg.restarts);
    for t in 0..cfg.restarts {
        let rr = rng.substream(t as u64);
        let outcome = match max_damage_restart(model, x, &clean, cfg, &rr) {
            Ok(o) => o,
            Err(Error::NonFinite(_)) => {
                restart_objectives.push(f64::NAN);
                continue;
            }
            Err(e) => return Err(e),
        };
        let x_adv = perturbed(x, &outcome.delta, cfg.clip);
        let (obj, prob) = distance_stats(
            model,
            &clean,
            &x_adv,
            cfg.final_samples,
            r,
            &mut rr.substream(u64::MAX - 1),
        )?;
        restart_objectives.push(obj);
        if winner.as_ref().is_none_or(|w| obj > w.0) {
            winner = Some((obj, prob, outcome));
        }
    }
    let (objective, prob, best) = winner.ok_or_else(|| Error::NonFinite("every attack restart diverged".into()))?;
    Ok(AttackResult {
        delta: best.delta,
        objective,
        trace: best.trace,
        restart_objectives,
        r_prob: Some(prob),
    })
}

/// Maximum-damage attack: finds `‖δ‖ ≤ budget` maximizing the expected
/// distance between reconstructions of `x + δ` and `x`.
///
/// `r` only enters the reported [`AttackResult::r_prob`].
pub fn max_damage_attack(model: &PreparedVae, x: &[f64], cfg: &AttackConfig, r: f64) -> Result<AttackResult> {
    max_damage_with(model, x, cfg, r, &SeededRng::new(cfg.seed))
}

fn latent_kl_and_gradient(model: &PreparedVae, x_adv: &[f64], target: &EncoderOutput) -> Result<(f64, Vec<f64>)> {
    let (enc, tape) = model.encode_tape(x_adv)?;
    let kl = kl_diag_gaussians(&enc.mean, &enc.std, &target.mean, &target.std);
    let dz = model.latent_dim();
    let mut d_mean = vec![0.0; dz];
    let mut d_std = vec![0.0; dz];
    for j in 0..dz {
        let v2 = target.std[j] * target.std[j];
        d_mean[j] = (enc.mean[j] - target.mean[j]) / v2;
        d_std[j] = enc.std[j] / v2 - 1.0 / enc.std[j];
    }
    let grad = model.encode_backward(&tape, &d_mean, &d_std, None)?;
    Ok((kl, grad))
}

fn latent_restart(
    model: &PreparedVae,
    x_o: &[f64],
    target: &EncoderOutput,
    cfg: &AttackConfig,
    rng: &SeededRng,
) -> Result<(f64, RestartOutcome)> {
    let mut delta = initial_delta(x_o, cfg, &mut rng.substream(u64::MAX));
    let (mut obj, mut grad) = latent_kl_and_gradient(model, &perturbed(x_o, &delta, cfg.clip), target)?;
    if !obj.is_finite() {
        return Err(Error::NonFinite("latent attack objective".into()));
    }
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    trace.push(obj);
    let mut step = cfg.step();
    for _ in 0..cfg.steps {
        let gn = l2_norm(&grad);
        if cfg.budget == 0.0 || gn == 0.0 || !gn.is_finite() {
            break;
        }
        let moved: Vec<f64> = delta.iter().zip(&grad).map(|(d, g)| d - step * g / gn).collect();
        let candidate = constrain(x_o, moved, cfg.budget, cfg.clip);
        let (c_obj, c_grad) = latent_kl_and_gradient(model, &perturbed(x_o, &candidate, cfg.clip), target)?;
        if c_obj.is_finite() && c_obj < obj {
            delta = candidate;
            obj = c_obj;
            grad = c_grad;
        } else {
            step *= 0.5;
        }
        trace.push(obj);
    }
    Ok((obj, RestartOutcome { delta, trace }))
}

/// Latent-space attack: finds `‖δ‖ ≤ budget` minimizing
/// `KL(q(z|x_o + δ) ‖ q(z|x_t))`.
///
/// Deterministic given the initial points; a step that fails to lower the
/// KL is rejected and the step length halved.
pub fn latent_space_attack(model: &PreparedVae, x_o: &[f64], x_t: &[f64], cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    check_input(model, x_o)?;
    check_input(model, x_t)?;
    let target = model.encode(x_t)?;
    let rng = SeededRng::new(cfg.seed);
    let mut winner: Option<(f64, RestartOutcome)> = None;
    let mut restart_objectives = Vec::with_capacity(cfg.restarts);
    for t in 0..cfg.restarts {
        match latent_restart(model, x_o, &target, cfg, &rng.substream(t as u64)) {
            Ok((obj, outcome)) => {
                restart_objectives.push(obj);
                if winner.as_ref().is_none_or(|w| obj < w.0) {
                    winner = Some((obj, outcome));
                }
            }
            Err(Error::NonFinite(_)) => restart_objectives.push(f64::NAN),
            Err(e) => return Err(e),
        }
    }
    let (objective, best) = winner.ok_or_else(|| Error::NonFinite("every attack restart diverged".into()))?;
    Ok(AttackResult {
        delta: best.delta,
        objective,
        trace: best.trace,
        restart_objectives,
        r_prob: None,
    })
}

/// Fraction of `samples` independent pairs `(z_δ, z)` whose
/// reconstructions lie within `r` of each other.
pub fn estimate_r_prob(
    model: &PreparedVae,
    x: &[f64],
    delta: &[f64],
    r: f64,
    samples: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::invalid("estimate_r_prob needs at least one sample"));
    }
    check_input(model, x)?;
    check_input(model, delta)?;
    let clean = model.encode(x)?;
    let x_adv = perturbed(x, delta, false);
    Ok(distance_stats(model, &clean, &x_adv, samples, r, rng)?.1)
}

/// Ladder settings of [`estimate_margin`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginConfig {
    pub max_r: f64,
    pub alpha: f64,
    /// Attacks per rung (`T`).
    pub restarts: usize,
    /// Steps and per-step samples of each attack; `final_samples` is the
    /// `S` of the probability estimate. `budget`, `restarts` and `seed` are
    /// set by the ladder.
    pub attack: AttackConfig,
    /// Move to the next rung as soon as one attack succeeds.
    pub early_exit: bool,
    pub seed: u64,
}

impl Default for MarginConfig {
    fn default() -> Self {
        Self {
            max_r: 5.0,
            alpha: 0.25,
            restarts: 5,
            attack: AttackConfig::default(),
            early_exit: true,
            seed: 0,
        }
    }
}

/// Why the ladder stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Found,
    Exhausted,
}

/// One rung of the ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub radius: f64,
    /// Estimated r-robustness probability after each attack.
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginEstimate {
    /// Largest tried radius at which every attack left the probability
    /// above ½; 0 if the ladder ran out.
    pub estimate: f64,
    pub probes: Vec<Probe>,
    pub termination: Termination,
}

/// Empirical r-robustness margin: walks `max_R, max_R − α, …` down until
/// `T` maximum-damage attacks all fail to push the probability to ½.
pub fn estimate_margin(model: &PreparedVae, x: &[f64], r: f64, cfg: &MarginConfig) -> Result<MarginEstimate> {
    if !(cfg.max_r > 0.0) || !(cfg.alpha > 0.0) || cfg.restarts == 0 {
        return Err(Error::invalid("margin ladder needs max_R > 0, alpha > 0 and T >= 1"));
    }
    let base = SeededRng::new(cfg.seed);
    let mut probes = Vec::new();
    for k in 0usize.. {
        let radius = cfg.max_r - k as f64 * cfg.alpha;
        if !(radius > 0.0) {
            break;
        }
        let rung = base.substream(k as u64);
        let attack = AttackConfig {
            budget: radius,
            restarts: 1,
            ..cfg.attack
        };
        let mut probabilities = Vec::with_capacity(cfg.restarts);
        for t in 0..cfg.restarts {
            let res = max_damage_with(model, x, &attack, r, &rung.substream(t as u64))?;
            let p = res.r_prob.unwrap_or(0.0);
            probabilities.push(p);
            if p <= 0.5 && cfg.early_exit {
                break;
            }
        }
        let passed = probabilities.len() == cfg.restarts && probabilities.iter().all(|&p| p > 0.5);
        probes.push(Probe { radius, probabilities });
        if passed {
            return Ok(MarginEstimate {
                estimate: radius,
                probes,
                termination: Termination::Found,
            });
        }
    }
    Ok(MarginEstimate {
        estimate: 0.0,
        probes,
        termination: Termination::Exhausted,
    })
}
