//! Björck orthonormalization and its reverse-mode derivative.
//!
//! One iteration maps `W ← W (c₀I + c₁Q + … + c_pQ^p)` with
//! `Q = I − WᵀW` and `c_i` the Taylor coefficients of `(1 − q)^{-1/2}`, so
//! `p = 1` is the classic `W(I + ½Q)` step. Matrices are processed in "tall"
//! orientation (rows ≥ cols); wide inputs are transposed in and out, which
//! makes the rows of a wide result orthonormal.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numerics::Matrix;
use crate::{Error, Result};

/// Hyperparameters of the orthonormalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthoConfig {
    /// Number of iterations `K`.
    pub iterations: usize,
    /// Truncation order `p` of the series.
    pub order: usize,
    /// Largest accepted `‖W̃ᵀW̃ − I‖_max` before a layer counts as not
    /// orthonormal.
    pub tolerance: f64,
    /// Divide by `√(‖W‖₁‖W‖_∞)` first, which bounds the spectral norm by one
    /// and puts every input inside the convergence region.
    pub safe_scaling: bool,
}

impl Default for OrthoConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            order: 1,
            tolerance: 1e-6,
            safe_scaling: true,
        }
    }
}

impl OrthoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.order == 0 {
            return Err(Error::invalid("Björck iterations and order must be >= 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid(format!(
                "orthonormality tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Result of [`bjorck_orthonormalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Orthonormalized {
    pub matrix: Matrix,
    /// `‖W̃ᵀW̃ − I‖_max` on the smaller dimension.
    pub residual: f64,
    /// Whether `residual <= tolerance`. A `false` here is a soft warning:
    /// `matrix` is still the last iterate.
    pub converged: bool,
}

/// Series coefficients `c_i = Π_{j=1..i} (2j − 1)/(2j)`.
fn series_coefficients(order: usize) -> Vec<f64> {
    let mut c = Vec::with_capacity(order + 1);
    c.push(1.0);
    for i in 1..=order {
        let prev = c[i - 1];
        c.push(prev * (2 * i - 1) as f64 / (2 * i) as f64);
    }
    c
}

#[derive(Debug, Clone)]
struct ScaleRecord {
    scale: f64,
    norm_1: f64,
    norm_inf: f64,
    max_col: usize,
    max_row: usize,
}

/// Everything the backward pass needs from a forward orthonormalization.
#[derive(Debug, Clone)]
pub(crate) struct BjorckTrace {
    transposed: bool,
    /// Raw input in tall orientation.
    input: Matrix,
    scale: Option<ScaleRecord>,
    coeffs: Vec<f64>,
    iterates: Vec<Matrix>,
    qs: Vec<Matrix>,
    polys: Vec<Matrix>,
}

/// Returns the Björck orthonormalization of `w`.
///
/// Errors only on non-finite intermediates; failing to reach
/// `cfg.tolerance` is reported through [`Orthonormalized::converged`].
pub fn bjorck_orthonormalize(w: &Matrix, cfg: &OrthoConfig) -> Result<Orthonormalized> {
    run(w, cfg, false).map(|(o, _)| o)
}

pub(crate) fn bjorck_traced(w: &Matrix, cfg: &OrthoConfig) -> Result<(Orthonormalized, BjorckTrace)> {
    let (o, t) = run(w, cfg, true)?;
    Ok((o, t.expect("trace requested")))
}

fn column_sums(a: &Matrix) -> (f64, usize) {
    let mut best = (0.0, 0);
    for j in 0..a.cols() {
        let s: f64 = (0..a.rows()).map(|i| a.get(i, j).abs()).sum();
        if s > best.0 {
            best = (s, j);
        }
    }
    best
}

fn row_sums(a: &Matrix) -> (f64, usize) {
    let mut best = (0.0, 0);
    for i in 0..a.rows() {
        let s: f64 = a.row(i).iter().map(|x| x.abs()).sum();
        if s > best.0 {
            best = (s, i);
        }
    }
    best
}

fn polynomial(q: &Matrix, coeffs: &[f64]) -> Matrix {
    let n = q.rows();
    let mut p = Matrix::identity(n);
    p.scale(coeffs[0]);
    let mut power = q.clone();
    for (i, &c) in coeffs.iter().enumerate().skip(1) {
        p.add_scaled(c, &power).expect("square shapes");
        if i + 1 < coeffs.len() {
            power = power.mul_unchecked(q);
        }
    }
    p
}

fn run(w: &Matrix, cfg: &OrthoConfig, keep_trace: bool) -> Result<(Orthonormalized, Option<BjorckTrace>)> {
    cfg.validate()?;
    if !w.is_finite() {
        return Err(Error::OrthoNonFinite { iteration: 0 });
    }
    let transposed = w.rows() < w.cols();
    let input = if transposed { w.transpose() } else { w.clone() };
    let n = input.cols();

    let mut scale = None;
    let mut x = input.clone();
    if cfg.safe_scaling {
        let (norm_1, max_col) = column_sums(&input);
        let (norm_inf, max_row) = row_sums(&input);
        let s = libm::sqrt(norm_1 * norm_inf);
        if s > 0.0 && s.is_finite() {
            x.scale(1.0 / s);
            scale = Some(ScaleRecord {
                scale: s,
                norm_1,
                norm_inf,
                max_col,
                max_row,
            });
        }
    }

    let coeffs = series_coefficients(cfg.order);
    let mut iterates = Vec::new();
    let mut qs = Vec::new();
    let mut polys = Vec::new();
    let identity = Matrix::identity(n);
    for k in 0..cfg.iterations {
        let mut q = identity.clone();
        q.add_scaled(-1.0, &x.tmul_unchecked(&x))?;
        let p = polynomial(&q, &coeffs);
        let next = x.mul_unchecked(&p);
        if !next.is_finite() {
            return Err(Error::OrthoNonFinite { iteration: k + 1 });
        }
        if keep_trace {
            iterates.push(core::mem::replace(&mut x, next));
            qs.push(q);
            polys.push(p);
        } else {
            x = next;
        }
    }

    let residual = x.orthonormality_residual();
    let matrix = if transposed { x.transpose() } else { x };
    let out = Orthonormalized {
        matrix,
        residual,
        converged: residual <= cfg.tolerance,
    };
    let trace = keep_trace.then_some(BjorckTrace {
        transposed,
        input,
        scale,
        coeffs,
        iterates,
        qs,
        polys,
    });
    Ok((out, trace))
}

impl BjorckTrace {
    /// Pulls `∂L/∂W̃` back to `∂L/∂W` for the raw input `W`.
    pub(crate) fn backward(&self, grad_out: &Matrix) -> Matrix {
        let mut g = if self.transposed {
            grad_out.transpose()
        } else {
            grad_out.clone()
        };
        let order = self.coeffs.len() - 1;
        for k in (0..self.iterates.len()).rev() {
            let w = &self.iterates[k];
            let q = &self.qs[k];
            let dp = w.tmul_unchecked(&g);
            let mut next = g.mul_unchecked(&self.polys[k]);

            let dq = if order == 1 {
                let mut d = dp;
                d.scale(self.coeffs[1]);
                d
            } else {
                let mut powers = vec![Matrix::identity(q.rows())];
                for j in 1..order {
                    let p = powers[j - 1].mul_unchecked(q);
                    powers.push(p);
                }
                let mut d = Matrix::zeros(q.rows(), q.cols());
                for (i, &c) in self.coeffs.iter().enumerate().skip(1) {
                    for j in 0..i {
                        let term = powers[j].mul_unchecked(&dp).mul_unchecked(&powers[i - 1 - j]);
                        d.add_scaled(c, &term).expect("square shapes");
                    }
                }
                d
            };
            let mut sym = dq.transpose();
            sym.add_scaled(1.0, &dq).expect("square shapes");
            next.add_scaled(-1.0, &w.mul_unchecked(&sym)).expect("shapes");
            g = next;
        }

        if let Some(rec) = &self.scale {
            // x₀ = A / s(A) with s = √(‖A‖₁‖A‖_∞)
            let s = rec.scale;
            let inner: f64 = g.as_slice().iter().zip(self.input.as_slice()).map(|(a, b)| a * b).sum();
            let coef = inner / (s * s);
            let mut da = g;
            da.scale(1.0 / s);
            let a = &self.input;
            for i in 0..a.rows() {
                let sign = a.get(i, rec.max_col).signum();
                let v = da.get(i, rec.max_col) - coef * rec.norm_inf * sign / (2.0 * s);
                da.set(i, rec.max_col, v);
            }
            for j in 0..a.cols() {
                let sign = a.get(rec.max_row, j).signum();
                let v = da.get(rec.max_row, j) - coef * rec.norm_1 * sign / (2.0 * s);
                da.set(rec.max_row, j, v);
            }
            g = da;
        }

        if self.transposed {
            g.transpose()
        } else {
            g
        }
    }
}
