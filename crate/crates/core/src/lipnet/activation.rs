use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Element-wise (or group-wise) nonlinearity applied after a layer's affine
/// map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    /// GroupSort with groups of two: each consecutive pair is sorted
    /// ascending. 1-Lipschitz and gradient-norm preserving.
    GroupSort,
    Relu,
    Sigmoid,
}

impl Activation {
    /// Upper bound on the activation's Lipschitz constant.
    pub fn lipschitz_bound(self) -> f64 {
        match self {
            Activation::Sigmoid => 0.25,
            _ => 1.0,
        }
    }

    pub(crate) fn apply(self, pre: &[f64]) -> Vec<f64> {
        match self {
            Activation::Identity => pre.to_vec(),
            Activation::GroupSort => {
                let mut out = pre.to_vec();
                for pair in out.chunks_exact_mut(2) {
                    if pair[0] > pair[1] {
                        pair.swap(0, 1);
                    }
                }
                out
            }
            Activation::Relu => pre.iter().map(|&x| x.max(0.0)).collect(),
            Activation::Sigmoid => pre.iter().map(|&x| sigmoid(x)).collect(),
        }
    }

    /// Given the pre-activation, the activation output and `∂L/∂out`, returns
    /// `∂L/∂pre`.
    pub(crate) fn backward(self, pre: &[f64], out: &[f64], grad_out: &[f64]) -> Vec<f64> {
        match self {
            Activation::Identity => grad_out.to_vec(),
            Activation::GroupSort => {
                let mut g = grad_out.to_vec();
                for (pair, p) in g.chunks_exact_mut(2).zip(pre.chunks_exact(2)) {
                    if p[0] > p[1] {
                        pair.swap(0, 1);
                    }
                }
                g
            }
            Activation::Relu => pre
                .iter()
                .zip(grad_out)
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect(),
            Activation::Sigmoid => out.iter().zip(grad_out).map(|(&s, &g)| g * s * (1.0 - s)).collect(),
        }
    }
}

/// Logistic sigmoid, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Sorts each consecutive group of `group_size` entries ascending.
pub fn group_sort(v: &[f64], group_size: usize) -> Result<Vec<f64>> {
    if group_size == 0 || !v.len().is_multiple_of(group_size) {
        return Err(Error::invalid(format!(
            "length {} is not divisible by group size {group_size}",
            v.len()
        )));
    }
    let mut out = v.to_vec();
    for group in out.chunks_exact_mut(group_size) {
        group.sort_by(f64::total_cmp);
    }
    Ok(out)
}
