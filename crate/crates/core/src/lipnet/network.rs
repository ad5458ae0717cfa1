use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::ortho::{bjorck_traced, BjorckTrace, OrthoConfig};
use crate::numerics::{all_finite, Matrix, SeededRng};
use crate::{Error, Result};

static NEXT_VERSION: AtomicUsize = AtomicUsize::new(1);

fn fresh_version() -> usize {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// One affine map plus activation. The stored weight is the *raw*
/// parameter; constrained networks orthonormalize it on every forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    weight: Matrix,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::ShapeMismatch {
                context: "DenseLayer bias",
                expected: weight.rows(),
                actual: bias.len(),
            });
        }
        if !weight.is_finite() || !all_finite(&bias) {
            return Err(Error::NonFinite("DenseLayer parameters".into()));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// How a network's linear maps are constrained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Constraint {
    /// Every weight is orthonormalized and the layer output scaled by
    /// `constant^(1/L)`, making the whole network `constant`-Lipschitz.
    Lipschitz {
        constant: f64,
        ortho: OrthoConfig,
    },
    Unconstrained,
}

/// Layer widths and activations of a fully-connected network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

/// Fully-connected network, Lipschitz-constrained or not.
#[derive(Debug, Clone)]
pub struct LipschitzMlp {
    layers: Vec<DenseLayer>,
    constraint: Constraint,
    version: usize,
}

/// Gradients with respect to the raw parameters of a [`LipschitzMlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl NetGradients {
    /// Same ordering as [`LipschitzMlp::params_flat`].
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.flatten_into(&mut out);
        out
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| w.as_slice().iter().all(|&x| x == 0.0))
            && self.biases.iter().all(|b| b.iter().all(|&x| x == 0.0))
    }
}

/// Gradients with respect to the *effective* (orthonormalized and scaled)
/// weights. Accumulated over a batch, then pulled back once through the
/// orthonormalization with [`PreparedNet::raw_gradients`].
#[derive(Debug, Clone)]
pub struct EffectiveGrads {
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

impl EffectiveGrads {
    pub fn scale(&mut self, alpha: f64) {
        for w in &mut self.weights {
            w.scale(alpha);
        }
        for b in &mut self.biases {
            for x in b.iter_mut() {
                *x *= alpha;
            }
        }
    }
}

impl LipschitzMlp {
    pub fn new(layers: Vec<DenseLayer>, constraint: Constraint) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::ShapeMismatch {
                    context: "LipschitzMlp layer chain",
                    expected: pair[0].out_dim(),
                    actual: pair[1].in_dim(),
                });
            }
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.activation == Activation::GroupSort && layer.out_dim() % 2 != 0 {
                return Err(Error::invalid(format!(
                    "GroupSort layer {i} has odd width {}",
                    layer.out_dim()
                )));
            }
        }
        if let Constraint::Lipschitz { constant, ortho } = constraint {
            if !(constant > 0.0) || !constant.is_finite() {
                return Err(Error::invalid(format!(
                    "Lipschitz constant must be positive and finite, got {constant}"
                )));
            }
            ortho.validate()?;
        }
        Ok(Self {
            layers,
            constraint,
            version: fresh_version(),
        })
    }

    /// Random initialization: orthogonal weights and zero biases for
    /// constrained networks, `U(±1/√fan_in)` weights and biases otherwise.
    pub fn random(spec: &MlpSpec, constraint: Constraint, rng: &mut SeededRng) -> Result<Self> {
        let mut dims = Vec::with_capacity(spec.hidden.len() + 2);
        dims.push(spec.input_dim);
        dims.extend_from_slice(&spec.hidden);
        dims.push(spec.output_dim);
        if dims.contains(&0) {
            return Err(Error::invalid("layer widths must be >= 1"));
        }
        let n_layers = dims.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let activation = if l + 1 == n_layers {
                spec.output_activation
            } else {
                spec.hidden_activation
            };
            let (weight, bias) = match constraint {
                Constraint::Lipschitz { .. } => (orthogonal_init(fan_out, fan_in, rng), vec![0.0; fan_out]),
                Constraint::Unconstrained => {
                    let bound = 1.0 / libm::sqrt(fan_in as f64);
                    let w = Matrix::from_fn(fan_out, fan_in, |_, _| rng.uniform_range(-bound, bound));
                    let b = (0..fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
                    (w, b)
                }
            };
            layers.push(DenseLayer::new(weight, bias, activation)?);
        }
        Self::new(layers, constraint)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn constraint(&self) -> Constraint {
        self.constraint
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Configured Lipschitz constant `M`, if the network is constrained.
    pub fn lipschitz_constant(&self) -> Option<f64> {
        match self.constraint {
            Constraint::Lipschitz { constant, .. } => Some(constant),
            Constraint::Unconstrained => None,
        }
    }

    /// Per-layer output scale `M^(1/L)` (1 for unconstrained networks).
    pub fn layer_scale(&self) -> f64 {
        match self.constraint {
            Constraint::Lipschitz { constant, .. } => libm::pow(constant, 1.0 / self.layers.len() as f64),
            Constraint::Unconstrained => 1.0,
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }

    /// Appends all raw parameters, layer by layer, weight (row-major) then
    /// bias.
    pub fn params_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
    }

    /// Overwrites parameters from the front of `src`; returns how many values
    /// were consumed.
    pub fn set_params_flat(&mut self, src: &[f64]) -> Result<usize> {
        let n = self.num_params();
        if src.len() < n {
            return Err(Error::ShapeMismatch {
                context: "LipschitzMlp::set_params_flat",
                expected: n,
                actual: src.len(),
            });
        }
        if !all_finite(&src[..n]) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let wl = l.weight.as_slice().len();
            l.weight.as_mut_slice().copy_from_slice(&src[at..at + wl]);
            at += wl;
            let bl = l.bias.len();
            l.bias.copy_from_slice(&src[at..at + bl]);
            at += bl;
        }
        self.version = fresh_version();
        Ok(n)
    }

    pub fn set_layer_weight(&mut self, layer: usize, weight: Matrix) -> Result<()> {
        let l = &mut self.layers[layer];
        if weight.rows() != l.weight.rows() || weight.cols() != l.weight.cols() {
            return Err(Error::ShapeMismatch {
                context: "set_layer_weight",
                expected: l.weight.rows() * l.weight.cols(),
                actual: weight.rows() * weight.cols(),
            });
        }
        l.weight = weight;
        self.version = fresh_version();
        Ok(())
    }

    pub fn set_layer_bias(&mut self, layer: usize, bias: Vec<f64>) -> Result<()> {
        let l = &mut self.layers[layer];
        if bias.len() != l.bias.len() {
            return Err(Error::ShapeMismatch {
                context: "set_layer_bias",
                expected: l.bias.len(),
                actual: bias.len(),
            });
        }
        l.bias = bias;
        self.version = fresh_version();
        Ok(())
    }

    /// Computes the effective weights (orthonormalizing constrained layers)
    /// and keeps what the backward pass needs.
    pub fn prepare(&self) -> Result<PreparedNet> {
        let scale = self.layer_scale();
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let prepared = match self.constraint {
                Constraint::Lipschitz { ortho, .. } => {
                    let (o, trace) = bjorck_traced(&layer.weight, &ortho)?;
                    let mut effective = o.matrix;
                    effective.scale(scale);
                    PreparedLayer {
                        effective,
                        bias: layer.bias.clone(),
                        activation: layer.activation,
                        residual: Some(o.residual),
                        trace: Some(trace),
                    }
                }
                Constraint::Unconstrained => PreparedLayer {
                    effective: layer.weight.clone(),
                    bias: layer.bias.clone(),
                    activation: layer.activation,
                    residual: None,
                    trace: None,
                },
            };
            layers.push(prepared);
        }
        Ok(PreparedNet {
            layers,
            scale,
            constraint: self.constraint,
            version: self.version,
        })
    }

    /// Forward pass from raw parameters, recording a tape for
    /// [`GradientTape::backward`].
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, GradientTape)> {
        let prepared = self.prepare()?;
        let (out, tape) = prepared.forward(x)?;
        Ok((out, GradientTape { prepared, tape }))
    }

    /// The configured constant `M`, provided every layer is orthonormal
    /// within tolerance.
    pub fn certified_constant(&self) -> Result<f64> {
        self.prepare()?.certified_constant(false)
    }
}

/// Orthogonal matrix (orthonormal columns if tall, rows if wide) from
/// Gram–Schmidt on Gaussian draws.
fn orthogonal_init(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
    let (k, len) = if rows >= cols { (cols, rows) } else { (rows, cols) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v = rng.normal_vec(len);
        for _ in 0..2 {
            for b in &basis {
                let proj = crate::numerics::dot(&v, b);
                crate::numerics::axpy(-proj, b, &mut v);
            }
        }
        let n = crate::numerics::l2_norm(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    if rows >= cols {
        Matrix::from_fn(rows, cols, |i, j| basis[j][i])
    } else {
        Matrix::from_fn(rows, cols, |i, j| basis[i][j])
    }
}

#[derive(Debug, Clone)]
struct PreparedLayer {
    effective: Matrix,
    bias: Vec<f64>,
    activation: Activation,
    residual: Option<f64>,
    trace: Option<BjorckTrace>,
}

/// A network with effective weights computed for its current parameters.
///
/// Read-only and shareable; used for frozen inference and to batch many
/// forward/backward passes over one orthonormalization.
#[derive(Debug, Clone)]
pub struct PreparedNet {
    layers: Vec<PreparedLayer>,
    scale: f64,
    constraint: Constraint,
    version: usize,
}

/// Intermediate values of one forward pass through a [`PreparedNet`].
#[derive(Debug, Clone)]
pub struct ForwardTape {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl PreparedNet {
    pub fn input_dim(&self) -> usize {
        self.layers[0].effective.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].effective.rows()
    }

    pub fn effective_weight(&self, layer: usize) -> &Matrix {
        &self.layers[layer].effective
    }

    /// Orthonormality residual of each constrained layer.
    pub fn residuals(&self) -> Vec<f64> {
        self.layers.iter().filter_map(|l| l.residual).collect()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals().into_iter().fold(0.0, f64::max)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "network input",
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for layer in &self.layers {
            let mut pre = layer.effective.matvec(&h)?;
            crate::numerics::axpy(1.0, &layer.bias, &mut pre);
            h = layer.activation.apply(&pre);
        }
        Ok(h)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardTape)> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut tape = ForwardTape {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
        };
        let mut h = x.to_vec();
        for layer in &self.layers {
            let mut pre = layer.effective.matvec(&h)?;
            crate::numerics::axpy(1.0, &layer.bias, &mut pre);
            let out = layer.activation.apply(&pre);
            tape.inputs.push(core::mem::replace(&mut h, out.clone()));
            tape.pre.push(pre);
            tape.outputs.push(out);
        }
        Ok((h, tape))
    }

    pub fn zero_grads(&self) -> EffectiveGrads {
        EffectiveGrads {
            weights: self
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.effective.rows(), l.effective.cols()))
                .collect(),
            biases: self.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    /// Reverse pass for one example: returns `∂L/∂x` and, when `grads` is
    /// given, accumulates `∂L/∂(effective weights, biases)` into it.
    pub fn backward(
        &self,
        tape: &ForwardTape,
        grad_out: &[f64],
        mut grads: Option<&mut EffectiveGrads>,
    ) -> Result<Vec<f64>> {
        if grad_out.len() != self.output_dim() {
            return Err(Error::ShapeMismatch {
                context: "network output gradient",
                expected: self.output_dim(),
                actual: grad_out.len(),
            });
        }
        let mut g = grad_out.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let dpre = layer.activation.backward(&tape.pre[l], &tape.outputs[l], &g);
            if let Some(acc) = grads.as_deref_mut() {
                acc.weights[l].add_outer(1.0, &dpre, &tape.inputs[l]);
                crate::numerics::axpy(1.0, &dpre, &mut acc.biases[l]);
            }
            g = layer.effective.matvec_t(&dpre)?;
        }
        Ok(g)
    }

    /// Pulls effective-weight gradients back to the raw parameters, through
    /// the scale `M^(1/L)` and the unrolled orthonormalization.
    pub fn raw_gradients(&self, grads: &EffectiveGrads) -> NetGradients {
        let weights = self
            .layers
            .iter()
            .zip(&grads.weights)
            .map(|(layer, gw)| match &layer.trace {
                Some(trace) => {
                    let mut g = gw.clone();
                    g.scale(self.scale);
                    trace.backward(&g)
                }
                None => gw.clone(),
            })
            .collect();
        NetGradients {
            weights,
            biases: grads.biases.clone(),
        }
    }

    /// Certified Lipschitz constant: `M` (times ¼ per Sigmoid layer when
    /// `tight_sigmoid`), refused when any layer is not orthonormal.
    pub fn certified_constant(&self, tight_sigmoid: bool) -> Result<f64> {
        let (constant, tolerance) = match self.constraint {
            Constraint::Lipschitz { constant, ortho } => (constant, ortho.tolerance),
            Constraint::Unconstrained => return Err(Error::NotLipschitz),
        };
        for (i, layer) in self.layers.iter().enumerate() {
            let residual = layer.residual.unwrap_or(f64::INFINITY);
            if !(residual <= tolerance) {
                return Err(Error::OrthoResidual {
                    layer: i,
                    residual,
                    tolerance,
                });
            }
        }
        let mut c = constant;
        if tight_sigmoid {
            for layer in &self.layers {
                c *= layer.activation.lipschitz_bound();
            }
        }
        Ok(c)
    }

    pub(crate) fn version(&self) -> usize {
        self.version
    }
}

/// Recording of a forward pass from raw parameters.
#[derive(Debug, Clone)]
pub struct GradientTape {
    prepared: PreparedNet,
    tape: ForwardTape,
}

impl GradientTape {
    /// Exact gradients of `⟨grad_out, f(x)⟩` with respect to the raw
    /// parameters of `net` and to the input `x`.
    ///
    /// Fails with [`Error::StaleTape`] if `net` was modified after the
    /// forward pass.
    pub fn backward(&self, net: &LipschitzMlp, grad_out: &[f64]) -> Result<(NetGradients, Vec<f64>)> {
        if net.version != self.prepared.version() {
            return Err(Error::StaleTape);
        }
        let mut acc = self.prepared.zero_grads();
        let dx = self.prepared.backward(&self.tape, grad_out, Some(&mut acc))?;
        Ok((self.prepared.raw_gradients(&acc), dx))
    }
}

/// Largest observed `‖f(x₁) − f(x₂)‖ / ‖x₁ − x₂‖` over random pairs in
/// `[0, 1]^d`: a lower bound on the true Lipschitz constant.
pub fn empirical_lipschitz(net: &LipschitzMlp, n_pairs: usize, rng: &mut SeededRng) -> Result<f64> {
    empirical_lipschitz_prepared(&net.prepare()?, n_pairs, rng)
}

pub fn empirical_lipschitz_prepared(net: &PreparedNet, n_pairs: usize, rng: &mut SeededRng) -> Result<f64> {
    if n_pairs == 0 {
        return Err(Error::invalid("empirical_lipschitz needs at least one pair"));
    }
    let d = net.input_dim();
    let mut best = 0.0f64;
    for _ in 0..n_pairs {
        let x1: Vec<f64> = (0..d).map(|_| rng.uniform()).collect();
        let x2: Vec<f64> = (0..d).map(|_| rng.uniform()).collect();
        let dx = crate::numerics::l2_distance(&x1, &x2);
        if dx == 0.0 {
            continue;
        }
        let dy = crate::numerics::l2_distance(&net.eval(&x1)?, &net.eval(&x2)?);
        best = best.max(dy / dx);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;

    fn lip(m: f64) -> Constraint {
        Constraint::Lipschitz {
            constant: m,
            ortho: OrthoConfig::default(),
        }
    }

    fn spec(input: usize, hidden: Vec<usize>, output: usize, out_act: Activation) -> MlpSpec {
        MlpSpec {
            input_dim: input,
            hidden,
            output_dim: output,
            hidden_activation: Activation::GroupSort,
            output_activation: out_act,
        }
    }

    #[test]
    fn identity_layer_scales_by_m() {
        let layer = DenseLayer::new(Matrix::identity(3), vec![0.5, 0.0, -0.5], Activation::Identity).unwrap();
        let net = LipschitzMlp::new(vec![layer], lip(2.0)).unwrap();
        let (y, _) = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        let want = [2.5, 4.0, 5.5];
        for (a, b) in y.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_layer_matches_hand_computation() {
        let w1 = Matrix::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let l1 = DenseLayer::new(w1, vec![0.0, -1.0], Activation::GroupSort).unwrap();
        let l2 = DenseLayer::new(Matrix::identity(2), vec![0.0; 2], Activation::Identity).unwrap();
        let net = LipschitzMlp::new(vec![l1, l2], lip(4.0)).unwrap();
        // per-layer scale 2: h = sort(2·(x1, x0) + (0, -1)), y = 2h
        let y = net.prepare().unwrap().eval(&[3.0, 1.0]).unwrap();
        let pre: [f64; 2] = [2.0 * 1.0, 2.0 * 3.0 - 1.0];
        let h = [pre[0].min(pre[1]), pre[0].max(pre[1])];
        assert!((y[0] - 2.0 * h[0]).abs() < 1e-12);
        assert!((y[1] - 2.0 * h[1]).abs() < 1e-12);
    }

    #[test]
    fn unconstrained_least_squares_gradient() {
        let w = Matrix::new(2, 3, vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.0]).unwrap();
        let b = vec![0.1, -0.2];
        let layer = DenseLayer::new(w.clone(), b.clone(), Activation::Identity).unwrap();
        let net = LipschitzMlp::new(vec![layer], Constraint::Unconstrained).unwrap();
        let x = [1.0, 2.0, -1.0];
        let target = [0.0, 1.0];
        let (y, tape) = net.forward(&x).unwrap();
        let resid: Vec<f64> = y.iter().zip(target).map(|(a, t)| a - t).collect();
        let (g, dx) = tape.backward(&net, &resid).unwrap();
        // d/dW ½‖Wx+b−t‖² = r xᵀ, d/db = r, d/dx = Wᵀr
        for i in 0..2 {
            for j in 0..3 {
                assert!((g.weights[0].get(i, j) - resid[i] * x[j]).abs() < 1e-12);
            }
            assert!((g.biases[0][i] - resid[i]).abs() < 1e-12);
        }
        let wt = w.matvec_t(&resid).unwrap();
        for (a, b) in dx.iter().zip(wt) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        crate::numerics::l2_norm(&diff) / crate::numerics::l2_norm(b).max(1e-12)
    }

    #[test]
    fn three_layer_gradients_match_finite_differences() {
        let cfg = Constraint::Lipschitz {
            constant: 3.0,
            ortho: OrthoConfig {
                iterations: 8,
                ..OrthoConfig::default()
            },
        };
        let mut rng = SeededRng::new(31);
        let mut net = LipschitzMlp::random(&spec(5, vec![6, 4], 3, Activation::Sigmoid), cfg, &mut rng).unwrap();
        let mut p = Vec::new();
        net.params_flat(&mut p);
        for v in p.iter_mut() {
            *v += 0.3 * rng.normal();
        }
        net.set_params_flat(&p).unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.uniform()).collect();
        let probe: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let (_, tape) = net.forward(&x).unwrap();
        let (g, dx) = tape.backward(&net, &probe).unwrap();
        let analytic = g.flatten();

        let mut scratch = net.clone();
        let numeric = finite_diff_grad(
            |q| {
                scratch.set_params_flat(q).unwrap();
                let y = scratch.prepare().unwrap().eval(&x).unwrap();
                crate::numerics::dot(&y, &probe)
            },
            &p,
            1e-6,
        )
        .unwrap();
        // per layer: weight then bias
        let mut at = 0;
        for l in net.layers() {
            for len in [l.weight().as_slice().len(), l.bias().len()] {
                let e = rel_err(&analytic[at..at + len], &numeric[at..at + len]);
                assert!(e < 1e-4, "tensor at {at}: rel err {e}");
                at += len;
            }
        }
        let prepared = net.prepare().unwrap();
        let num_dx = finite_diff_grad(|z| crate::numerics::dot(&prepared.eval(z).unwrap(), &probe), &x, 1e-6).unwrap();
        assert!(rel_err(&dx, &num_dx) < 1e-4);
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut rng = SeededRng::new(2);
        let mut net = LipschitzMlp::random(&spec(2, vec![2], 2, Activation::Identity), lip(1.0), &mut rng).unwrap();
        let (_, tape) = net.forward(&[0.1, 0.2]).unwrap();
        net.set_layer_bias(0, vec![1.0, 1.0]).unwrap();
        assert!(matches!(tape.backward(&net, &[1.0, 0.0]), Err(Error::StaleTape)));
    }

    #[test]
    fn certified_constant_errors() {
        let mut rng = SeededRng::new(3);
        let std_net = LipschitzMlp::random(
            &spec(4, vec![4], 2, Activation::Identity),
            Constraint::Unconstrained,
            &mut rng,
        )
        .unwrap();
        assert!(matches!(std_net.certified_constant(), Err(Error::NotLipschitz)));

        let starved = Constraint::Lipschitz {
            constant: 1.0,
            ortho: OrthoConfig {
                iterations: 1,
                ..OrthoConfig::default()
            },
        };
        let mut net = LipschitzMlp::random(&spec(4, vec![4], 2, Activation::Identity), starved, &mut rng).unwrap();
        net.set_layer_weight(0, Matrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64 + 1.0))
            .unwrap();
        assert!(matches!(
            net.certified_constant(),
            Err(Error::OrthoResidual { layer: 0, .. })
        ));
    }

    #[test]
    fn certified_constant_tight_sigmoid() {
        let mut rng = SeededRng::new(4);
        let net = LipschitzMlp::random(&spec(4, vec![4], 2, Activation::Sigmoid), lip(5.0), &mut rng).unwrap();
        let p = net.prepare().unwrap();
        assert_eq!(p.certified_constant(false).unwrap(), 5.0);
        assert_eq!(p.certified_constant(true).unwrap(), 1.25);
    }

    #[test]
    fn odd_groupsort_width_rejected() {
        let mut rng = SeededRng::new(5);
        let r = LipschitzMlp::random(&spec(4, vec![3], 2, Activation::Identity), lip(1.0), &mut rng);
        assert!(r.is_err());
    }

    #[test]
    fn empirical_constant_respects_bound() {
        let mut rng = SeededRng::new(6);
        for m in [1.0, 5.0, 10.0] {
            let net = LipschitzMlp::random(&spec(8, vec![16, 16], 4, Activation::Identity), lip(m), &mut rng).unwrap();
            let emp = empirical_lipschitz(&net, 200, &mut rng).unwrap();
            assert!(emp > 0.0 && emp <= m * (1.0 + 1e-6), "M={m}: {emp}");
        }
    }

    #[test]
    fn params_roundtrip() {
        let mut rng = SeededRng::new(7);
        let mut net = LipschitzMlp::random(
            &spec(3, vec![4], 2, Activation::Identity),
            Constraint::Unconstrained,
            &mut rng,
        )
        .unwrap();
        let mut p = Vec::new();
        net.params_flat(&mut p);
        assert_eq!(p.len(), net.num_params());
        let doubled: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
        assert_eq!(net.set_params_flat(&doubled).unwrap(), p.len());
        let mut q = Vec::new();
        net.params_flat(&mut q);
        assert_eq!(q, doubled);
        assert!(net.set_params_flat(&p[1..]).is_err());
    }
}
