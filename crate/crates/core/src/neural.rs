//! Minimal dense-network engine: forward pass, reverse-mode gradients,
//! Adam, and a finite-difference gradient for verification.
//!
//! Networks here are small (a few thousand parameters), so everything is
//! plain column-major `nalgebra` math. Batches are matrices whose columns
//! are samples.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, pre: &mut DMatrix<f64>) {
        if self == Activation::Tanh {
            pre.apply(|v| *v = v.tanh());
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    /// `out × in` weight matrix.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

/// Fully connected network with per-layer activations.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Activation cache produced by a forward pass; consumed by [`Mlp::backward`].
///
/// Stores the input to every layer plus each layer's post-activation output,
/// which is all the tanh/linear backward rules need.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<DMatrix<f64>>,
    outputs: Vec<DMatrix<f64>>,
}

impl Tape {
    /// Network output this tape was recorded for.
    pub fn output(&self) -> &DMatrix<f64> {
        self.outputs.last().expect("tape from a forward pass")
    }
}

/// Per-parameter gradients mirroring an [`Mlp`]'s layers.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            weights: net
                .layers
                .iter()
                .map(|l| DMatrix::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| DVector::zeros(l.bias.len()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }
}

impl Mlp {
    /// Build a network from layer widths, e.g. `[10, 40, 40, 7]`.
    ///
    /// `activations` has one entry per weight layer. Weights start
    /// uniform in ±√(6 / (fan_in + fan_out)), biases at zero.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::config("an MLP needs at least two layer sizes"));
        }
        if activations.len() != sizes.len() - 1 {
            return Err(Error::config(format!(
                "expected {} activation tags, got {}",
                sizes.len() - 1,
                activations.len()
            )));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::config("layer widths must be nonzero"));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(pair, &activation)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight = DMatrix::from_fn(fan_out, fan_in, |_, _| {
                    rng.random_range(-limit..limit)
                });
                Layer {
                    weight,
                    bias: DVector::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("an MLP needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[1].weight.ncols() != pair[0].weight.nrows() {
                return Err(Error::config("consecutive layer dimensions disagree"));
            }
        }
        for l in &layers {
            if l.bias.len() != l.weight.nrows() {
                return Err(Error::config("bias length must match weight rows"));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    /// Forward pass over a batch (columns are samples), recording a tape.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Tape)> {
        if x.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "Mlp::forward input",
                expected: self.input_dim(),
                actual: x.nrows(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            inputs.push(cur.clone());
            let mut pre = &layer.weight * &cur;
            for mut col in pre.column_iter_mut() {
                col += &layer.bias;
            }
            layer.activation.apply(&mut pre);
            outputs.push(pre.clone());
            cur = pre;
        }
        Ok((cur, Tape { inputs, outputs }))
    }

    /// Forward pass for a single vector without keeping a tape.
    pub fn output(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "Mlp::output input",
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let mut cur = x.clone();
        for layer in &self.layers {
            let mut pre = &layer.weight * &cur + &layer.bias;
            if layer.activation == Activation::Tanh {
                pre.apply(|v| *v = v.tanh());
            }
            cur = pre;
        }
        Ok(cur)
    }

    /// Reverse-mode gradients of `⟨upstream, y⟩` summed over the batch.
    ///
    /// `upstream` must have the shape of the forward output the tape was
    /// recorded for; a tape from a different call site (stale shapes) is
    /// rejected.
    pub fn backward(
        &self,
        tape: &Tape,
        upstream: &DMatrix<f64>,
    ) -> Result<(MlpGrads, DMatrix<f64>)> {
        if tape.inputs.len() != self.layers.len() {
            return Err(Error::config("tape does not match network depth"));
        }
        let out = tape.output();
        if upstream.shape() != out.shape() {
            return Err(Error::DimensionMismatch {
                context: "Mlp::backward upstream",
                expected: out.nrows(),
                actual: upstream.nrows(),
            });
        }
        if tape.inputs[0].nrows() != self.input_dim() {
            return Err(Error::config("stale tape: recorded shapes disagree"));
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = upstream.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Tanh {
                // d tanh = 1 - y², with y the cached post-activation.
                delta.zip_apply(&tape.outputs[idx], |d, y| *d *= 1.0 - y * y);
            }
            grads.weights[idx] = &delta * tape.inputs[idx].transpose();
            let mut bias_grad = DVector::zeros(delta.nrows());
            for col in delta.column_iter() {
                bias_grad += col;
            }
            grads.biases[idx] = bias_grad;
            delta = layer.weight.transpose() * delta;
        }
        Ok((grads, delta))
    }

    /// Flat view of all parameters, layer by layer (weights column-major,
    /// then bias).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "Mlp::set_flat_params",
                expected: self.param_count(),
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let wn = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&flat[offset..offset + wn]);
            offset += wn;
            let bn = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&flat[offset..offset + bn]);
            offset += bn;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Mutable parameter tensors in `flat_params` order, for the optimizer.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    /// Gradient tensors in the same order as [`Mlp::param_slices_mut`].
    pub fn grad_slices(grads: &MlpGrads) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * grads.weights.len());
        for (w, b) in grads.weights.iter().zip(&grads.biases) {
            out.push(w.as_slice());
            out.push(b.as_slice());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(lr: f64) -> Self {
        AdamConfig {
            learning_rate: lr,
            ..AdamConfig::default()
        }
    }
}

/// Adam optimizer state over an ordered list of parameter tensors.
///
/// The moment buffers mirror the tensor layout handed to [`AdamState::step`];
/// passing tensors of different shapes later is an error.
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(tensor_lens: &[usize], config: AdamConfig) -> Self {
        AdamState {
            first_moment: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            step_count: 0,
            config,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn reset(&mut self) {
        for m in &mut self.first_moment {
            m.fill(0.0);
        }
        for v in &mut self.second_moment {
            v.fill(0.0);
        }
        self.step_count = 0;
    }

    /// One Adam update over all tensors in place.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::config("Adam tensor count mismatch"));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(&mut self.second_moment))
        {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::config("Adam tensor shape mismatch"));
            }
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}

/// Central finite differences of `loss` with respect to a flat parameter
/// vector. Verification-path counterpart to [`Mlp::backward`]; O(h²)
/// accurate for smooth losses.
pub fn finite_diff_grad<F: FnMut(&[f64]) -> f64>(
    mut loss: F,
    params: &[f64],
    h: f64,
) -> Vec<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut work = params.to_vec();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + h;
        let plus = loss(&work);
        work[i] = orig - h;
        let minus = loss(&work);
        work[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let net = Mlp::from_layers(vec![Layer {
            weight: DMatrix::identity(3, 3),
            bias: DVector::zeros(3),
            activation: Activation::Linear,
        }])
        .unwrap();
        let x = DVector::from_vec(vec![0.5, -1.25, 2.0]);
        let y = net.output(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weight_tanh_layer_returns_tanh_of_bias() {
        let bias = DVector::from_vec(vec![0.3, -0.7]);
        let net = Mlp::from_layers(vec![Layer {
            weight: DMatrix::zeros(2, 4),
            bias: bias.clone(),
            activation: Activation::Tanh,
        }])
        .unwrap();
        let y = net.output(&DVector::from_vec(vec![9.0, -3.0, 1.0, 2.0])).unwrap();
        for i in 0..2 {
            assert_relative_eq!(y[i], bias[i].tanh(), epsilon = 1e-15);
        }
    }

    #[test]
    fn two_layer_forward_matches_hand_composition() {
        let mut r = rng(7);
        let net = Mlp::new(&[3, 4, 2], &[Activation::Tanh, Activation::Linear], &mut r).unwrap();
        let x = DVector::from_vec(vec![0.1, -0.2, 0.4]);
        let y = net.output(&x).unwrap();

        let l0 = &net.layers()[0];
        let l1 = &net.layers()[1];
        let mut hidden = &l0.weight * &x + &l0.bias;
        hidden.apply(|v| *v = v.tanh());
        let expected = &l1.weight * hidden + &l1.bias;
        for i in 0..2 {
            assert_relative_eq!(y[i], expected[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let mut r = rng(1);
        let net = Mlp::new(&[3, 2], &[Activation::Linear], &mut r).unwrap();
        assert!(net.output(&DVector::zeros(4)).is_err());
    }

    #[test]
    fn linear_layer_weight_gradient_is_outer_product() {
        let net = Mlp::from_layers(vec![Layer {
            weight: DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            bias: DVector::zeros(2),
            activation: Activation::Linear,
        }])
        .unwrap();
        let x = DMatrix::from_column_slice(3, 1, &[0.5, -1.0, 2.0]);
        let (_, tape) = net.forward(&x).unwrap();
        let upstream = DMatrix::from_column_slice(2, 1, &[1.5, -0.5]);
        let (grads, d_input) = net.backward(&tape, &upstream).unwrap();

        let expected = &upstream * x.transpose();
        assert_relative_eq!(grads.weights[0], expected, epsilon = 1e-15);
        let expected_input = net.layers()[0].weight.transpose() * &upstream;
        assert_relative_eq!(d_input, expected_input, epsilon = 1e-15);
        assert_relative_eq!(grads.biases[0], upstream.column(0).into_owned(), epsilon = 1e-15);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut r = rng(3);
        let net = Mlp::new(&[4, 8, 3], &[Activation::Tanh, Activation::Linear], &mut r).unwrap();
        let x = DMatrix::from_fn(4, 5, |i, j| 0.1 * (i as f64) - 0.2 * (j as f64));
        let (_, tape) = net.forward(&x).unwrap();
        let (grads, d_input) = net.backward(&tape, &DMatrix::zeros(3, 5)).unwrap();
        assert!(grads.weights.iter().all(|w| w.iter().all(|&v| v == 0.0)));
        assert!(grads.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
        assert!(d_input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_mismatched_upstream() {
        let mut r = rng(4);
        let net = Mlp::new(&[2, 3], &[Activation::Tanh], &mut r).unwrap();
        let (_, tape) = net.forward(&DMatrix::zeros(2, 1)).unwrap();
        assert!(net.backward(&tape, &DMatrix::zeros(4, 1)).is_err());
    }

    /// Scalar loss used by the gradient checks: ½‖y − target‖² summed over
    /// a fixed batch.
    fn batch_loss(net: &Mlp, x: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
        let (y, _) = net.forward(x).unwrap();
        0.5 * (y - target).norm_squared()
    }

    #[test]
    fn backward_matches_finite_differences_on_random_net() {
        let mut r = rng(11);
        let net = Mlp::new(
            &[5, 12, 12, 4],
            &[Activation::Tanh, Activation::Tanh, Activation::Linear],
            &mut r,
        )
        .unwrap();
        let x = DMatrix::from_fn(5, 7, |_, _| r.random_range(-1.0..1.0));
        let target = DMatrix::from_fn(4, 7, |_, _| r.random_range(-1.0..1.0));

        let (y, tape) = net.forward(&x).unwrap();
        let upstream = &y - &target;
        let (grads, _) = net.backward(&tape, &upstream).unwrap();
        let analytic: Vec<f64> = {
            let mut flat = Vec::new();
            for (w, b) in grads.weights.iter().zip(&grads.biases) {
                flat.extend_from_slice(w.as_slice());
                flat.extend_from_slice(b.as_slice());
            }
            flat
        };

        let template = net.clone();
        let numeric = finite_diff_grad(
            |flat| {
                let mut probe = template.clone();
                probe.set_flat_params(flat).unwrap();
                batch_loss(&probe, &x, &target)
            },
            &net.flat_params(),
            1e-5,
        );

        let scale = numeric.iter().fold(1e-12_f64, |a, &v| a.max(v.abs()));
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(
                (a - n).abs() / scale < 1e-7,
                "gradient mismatch: analytic {a}, numeric {n}"
            );
        }
    }

    #[test]
    fn finite_diff_on_quadratic_recovers_parameters() {
        let params = vec![0.3, -1.2, 2.5];
        let grad = finite_diff_grad(
            |p| 0.5 * p.iter().map(|v| v * v).sum::<f64>(),
            &params,
            1e-5,
        );
        for (g, p) in grad.iter().zip(&params) {
            assert_relative_eq!(g, p, epsilon = 1e-9);
        }
    }

    #[test]
    fn finite_diff_halving_h_shrinks_error_quartically() {
        // Smooth non-quadratic scalar loss: error should drop ~4x per h/2.
        let params = vec![0.7];
        let exact = 0.7_f64.cos();
        let err = |h: f64| {
            let g = finite_diff_grad(|p| p[0].sin(), &params, h);
            (g[0] - exact).abs()
        };
        let e1 = err(1e-2);
        let e2 = err(5e-3);
        let ratio = e1 / e2;
        assert!(
            (3.0..5.0).contains(&ratio),
            "expected ~4x error reduction, got {ratio}"
        );
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters_and_advances_step() {
        let mut p = vec![1.0, -2.0, 3.0];
        let g = vec![0.0; 3];
        let mut s = AdamState::new(&[3], AdamConfig::default());
        s.step(&mut [&mut p], &[&g]).unwrap();
        s.step(&mut [&mut p], &[&g]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.step_count(), 2);
    }

    #[test]
    fn adam_constant_gradient_moves_monotonically_against_its_sign() {
        // Mirror of the scalar Adam recurrence: with g constant, every
        // update has the same sign as -g.
        let mut p = vec![0.5];
        let g = vec![2.7];
        let mut s = AdamState::new(&[1], AdamConfig::default());
        let mut prev = p[0];
        for _ in 0..200 {
            s.step(&mut [&mut p], &[&g[..]]).unwrap();
            assert!(p[0] < prev, "parameter must strictly decrease");
            prev = p[0];
        }
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        // Bias correction makes m̂/√v̂ = sign(g) on step one, for any |g|.
        for &g0 in &[1e-6, 1.0, 1e6] {
            let mut p = vec![0.0];
            let g = vec![g0];
            let cfg = AdamConfig::with_learning_rate(0.05);
            let mut s = AdamState::new(&[1], cfg);
            s.step(&mut [&mut p], &[&g[..]]).unwrap();
            assert_relative_eq!(p[0].abs(), 0.05, max_relative = 1e-2);
            assert!(p[0] < 0.0);
        }
    }

    #[test]
    fn tanh_outputs_stay_in_open_unit_interval() {
        let mut r = rng(21);
        let net = Mlp::new(&[3, 16, 16], &[Activation::Tanh, Activation::Tanh], &mut r).unwrap();
        for _ in 0..100 {
            let x = DVector::from_fn(3, |_, _| r.random_range(-50.0..50.0));
            let y = net.output(&x).unwrap();
            assert!(y.iter().all(|&v| v > -1.0 && v < 1.0));
        }
    }
}
