//! Probability and margin lower bounds for r-robustness.
//!
//! With `t = ‖δ‖₂` and `s = ‖σ(x)‖₂`, the probability that the reconstruction
//! of `x + δ` stays within `r` of that of `x` is at least `1 − min(p1, p2)`:
//!
//! - `p1 = min(1, a²(b²t² + (ct + 2s)²)/r²)` (Markov),
//! - `p2 = C(d_z) u^{d_z/2} e^{−u/2}/(u − d_z + 2)` with
//!   `u = (r/a − bt)²/(ct + 2s)²`, valid when `r/a ≥ bt`, `d_z ≥ 2` and
//!   `u > d_z − 2`, and 1 otherwise (χ² tail).
//!
//! The margin is the largest `t` keeping that probability above ½.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Grid resolution of the coarse scan in [`margin_m2`].
pub const M2_GRID: usize = 10_000;
/// Absolute bracket width at which the bisection in [`margin_m2`] stops.
pub const M2_TOL: f64 = 1e-9;

/// Constants and norms the bounds are evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertInput {
    /// Decoder Lipschitz constant.
    pub a: f64,
    /// Encoder-mean Lipschitz constant.
    pub b: f64,
    /// Encoder-std Lipschitz constant; 0 for a fixed σ.
    pub c: f64,
    pub sigma_norm: f64,
    pub latent_dim: usize,
    pub r: f64,
    pub delta_norm: Option<f64>,
}

impl CertInput {
    pub fn validate(&self) -> Result<()> {
        let ok = self.a > 0.0
            && self.b > 0.0
            && self.c >= 0.0
            && self.sigma_norm >= 0.0
            && self.r > 0.0
            && self.latent_dim >= 1
            && [self.a, self.b, self.c, self.sigma_norm, self.r]
                .iter()
                .all(|v| v.is_finite())
            && self.delta_norm.is_none_or(|d| d >= 0.0 && d.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid certification input {self:?}")))
        }
    }

    pub fn with_delta(self, delta_norm: f64) -> Self {
        Self {
            delta_norm: Some(delta_norm),
            ..self
        }
    }

    fn delta(&self) -> Result<f64> {
        self.validate()?;
        self.delta_norm
            .ok_or_else(|| Error::invalid("this bound needs delta_norm"))
    }
}

/// Which case of the `p2` bound applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum P2Branch {
    /// The χ² tail expression.
    Tail,
    /// Conditions not met; `p2 = 1`.
    Otherwise,
    /// Zero encoder spread: `u = ∞` and `p2 = 0`.
    Deterministic,
}

/// Everything the bounds say about one input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub input: CertInput,
    /// `p1`, `p2`, its branch and `1 − min(p1, p2)` at `delta_norm`.
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    pub p2_branch: Option<P2Branch>,
    pub prob_lower_bound: Option<f64>,
    pub m1: Option<f64>,
    pub m2: f64,
    pub margin: f64,
}

/// `C(d_z) = exp(½(d_z − (d_z − 1) log d_z))/√π`.
///
/// Underflows to 0 beyond `d_z ≈ 310`; use [`log_c_of_dz`] there.
pub fn c_of_dz(latent_dim: usize) -> f64 {
    libm::exp(log_c_of_dz(latent_dim))
}

pub fn log_c_of_dz(latent_dim: usize) -> f64 {
    let d = latent_dim as f64;
    0.5 * (d - (d - 1.0) * libm::log(d)) - 0.5 * libm::log(core::f64::consts::PI)
}

fn p1_at(inp: &CertInput, t: f64) -> f64 {
    let spread = inp.c * t + 2.0 * inp.sigma_norm;
    let raw = inp.a * inp.a * (inp.b * inp.b * t * t + spread * spread) / (inp.r * inp.r);
    raw.min(1.0)
}

fn p2_at(inp: &CertInput, c: f64, t: f64) -> (f64, P2Branch) {
    let num = inp.r / inp.a - inp.b * t;
    if num < 0.0 || inp.latent_dim < 2 {
        return (1.0, P2Branch::Otherwise);
    }
    let den = c * t + 2.0 * inp.sigma_norm;
    if num == 0.0 {
        return (1.0, P2Branch::Otherwise);
    }
    if den == 0.0 {
        return (0.0, P2Branch::Deterministic);
    }
    let u = (num * num) / (den * den);
    let d = inp.latent_dim as f64;
    if !(u > d - 2.0) {
        return (1.0, P2Branch::Otherwise);
    }
    let log_p = log_c_of_dz(inp.latent_dim) + 0.5 * d * libm::log(u) - 0.5 * u - libm::log(u - d + 2.0);
    (libm::exp(log_p.min(0.0)), P2Branch::Tail)
}

/// Markov bound `p1` at `inp.delta_norm`.
pub fn p1(inp: &CertInput) -> Result<f64> {
    let t = inp.delta()?;
    Ok(p1_at(inp, t))
}

/// χ²-tail bound `p2` at `inp.delta_norm`, with the branch that applied.
pub fn p2(inp: &CertInput) -> Result<(f64, P2Branch)> {
    let t = inp.delta()?;
    Ok(p2_at(inp, inp.c, t))
}

/// `1 − min(p1, p2)`.
pub fn robustness_prob_lower_bound(inp: &CertInput) -> Result<f64> {
    let t = inp.delta()?;
    Ok(1.0 - p1_at(inp, t).min(p2_at(inp, inp.c, t).0))
}

/// Largest nonnegative root of
/// `(c² + b²)t² + 4cs·t + 4s² − ½(r/a)² = 0`, i.e. the perturbation norm at
/// which `p1` reaches ½. `None` when no such root exists.
pub fn margin_m1(inp: &CertInput) -> Result<Option<f64>> {
    inp.validate()?;
    let s = inp.sigma_norm;
    let ra = inp.r / inp.a;
    if inp.c == 0.0 {
        return Ok(theorem3_m1(inp.b, s, ra));
    }
    let qa = inp.c * inp.c + inp.b * inp.b;
    let qb = 4.0 * inp.c * s;
    let qc = 4.0 * s * s - 0.5 * ra * ra;
    if qc > 0.0 {
        return Ok(None);
    }
    if qc == 0.0 {
        return Ok(Some(0.0));
    }
    let disc = qb * qb - 4.0 * qa * qc;
    Ok(Some(-2.0 * qc / (qb + libm::sqrt(disc))))
}

fn theorem3_m1(b: f64, s: f64, ra: f64) -> Option<f64> {
    let inner = -(4.0 * s * s - 0.5 * ra * ra);
    (inner >= 0.0).then(|| libm::sqrt(inner) / b)
}

fn m2_with(inp: &CertInput, c: f64) -> f64 {
    let p2 = |t: f64| p2_at(inp, c, t).0;
    if p2(0.0) > 0.5 {
        return 0.0;
    }
    let t_max = inp.r / (inp.a * inp.b);
    let step = t_max / M2_GRID as f64;
    let mut lo = 0.0;
    let mut hi = None;
    for i in 1..=M2_GRID {
        let t = if i == M2_GRID { t_max } else { i as f64 * step };
        if p2(t) > 0.5 {
            hi = Some(t);
            break;
        }
        lo = t;
    }
    let Some(mut hi) = hi else {
        return t_max;
    };
    while hi - lo > M2_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if p2(mid) > 0.5 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// `sup{t : p2(t) ≤ ½}` by a coarse scan over `[0, r/(ab)]` and bisection.
/// Returns 0 when `p2(0) > ½`.
pub fn margin_m2(inp: &CertInput) -> Result<f64> {
    inp.validate()?;
    Ok(m2_with(inp, inp.c))
}

/// Per-input certified margin `max(m1, m2)`.
pub fn margin_bound(inp: &CertInput) -> Result<f64> {
    Ok(margin_m1(inp)?.unwrap_or(0.0).max(margin_m2(inp)?))
}

/// Margin valid for every input of a fixed-σ model (`c` is ignored).
pub fn global_margin(inp: &CertInput) -> Result<f64> {
    inp.validate()?;
    let m1 = theorem3_m1(inp.b, inp.sigma_norm, inp.r / inp.a).unwrap_or(0.0);
    Ok(m1.max(m2_with(inp, 0.0)))
}

/// The input-independent `m1` of a fixed-σ model.
pub fn global_m1(inp: &CertInput) -> Result<Option<f64>> {
    inp.validate()?;
    Ok(theorem3_m1(inp.b, inp.sigma_norm, inp.r / inp.a))
}

/// All bounds for one input.
pub fn certify(inp: &CertInput) -> Result<CertReport> {
    inp.validate()?;
    let (p1v, p2v, branch, lb) = match inp.delta_norm {
        Some(t) => {
            let a = p1_at(inp, t);
            let (b, br) = p2_at(inp, inp.c, t);
            (Some(a), Some(b), Some(br), Some(1.0 - a.min(b)))
        }
        None => (None, None, None, None),
    };
    let m1 = margin_m1(inp)?;
    let m2 = margin_m2(inp)?;
    Ok(CertReport {
        input: *inp,
        p1: p1v,
        p2: p2v,
        p2_branch: branch,
        prob_lower_bound: lb,
        m1,
        m2,
        margin: m1.unwrap_or(0.0).max(m2),
    })
}

/// One row of [`bound_curve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub delta_norm: f64,
    pub p1: f64,
    pub p2: f64,
    pub bound: f64,
    pub p2_branch: P2Branch,
}

/// `p1`, `p2` and `1 − min(p1, p2)` on `n` evenly spaced norms in
/// `[0, delta_max]`.
pub fn bound_curve(inp: &CertInput, delta_max: f64, n: usize) -> Result<Vec<CurvePoint>> {
    inp.validate()?;
    if n < 2 || !(delta_max > 0.0) {
        return Err(Error::invalid("bound_curve needs n >= 2 and delta_max > 0"));
    }
    Ok((0..n)
        .map(|i| {
            let t = delta_max * i as f64 / (n - 1) as f64;
            let p1 = p1_at(inp, t);
            let (p2, p2_branch) = p2_at(inp, inp.c, t);
            CurvePoint {
                delta_norm: t,
                p1,
                p2,
                bound: 1.0 - p1.min(p2),
                p2_branch,
            }
        })
        .collect())
}
