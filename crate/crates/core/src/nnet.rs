//! Dense residual ReLU networks with hand-written backpropagation and Adam.
//!
//! The network is
//!
//! ```text
//! h   = ReLU(A_0 x + b_0)
//! h   = h + A_{2k+2} drop(ReLU(A_{2k+1} h + b_{2k+1})) + b_{2k+2}   (k = 0..blocks)
//! out = A_L h + b_L
//! ```
//!
//! Activations are stored row-wise: a batch is a `(batch, width)` matrix and
//! every weight matrix has shape `(out_width, in_width)`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GsiError, Result};
use crate::seeding;

/// Shape of a residual network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_dim: usize,
    pub num_res_blocks: usize,
    /// Inverted-dropout rate applied inside residual blocks while training.
    pub dropout_p: f64,
}

impl NetworkArch {
    pub fn new(input_dim: usize, output_dim: usize, hidden_dim: usize, num_res_blocks: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            hidden_dim,
            num_res_blocks,
            dropout_p: 0.0,
        }
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout_p = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dim == 0 {
            return Err(GsiError::Config(format!(
                "network dimensions must be positive (input {}, output {}, hidden {})",
                self.input_dim, self.output_dim, self.hidden_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(GsiError::Config(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }

    /// `(out, in)` shape of every weight matrix, in layer order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let h = self.hidden_dim;
        let mut shapes = Vec::with_capacity(2 + 2 * self.num_res_blocks);
        shapes.push((h, self.input_dim));
        for _ in 0..self.num_res_blocks {
            shapes.push((h, h));
            shapes.push((h, h));
        }
        shapes.push((self.output_dim, h));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

/// Weights `A_i` and biases `b_i` of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub arch: NetworkArch,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Gradients with the same layout as [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    arch: NetworkArch,
    input: Array2<f64>,
    /// Pre-activation of the input layer.
    z0: Array2<f64>,
    blocks: Vec<BlockCache>,
    last_hidden: Array2<f64>,
}

#[derive(Debug, Clone)]
struct BlockCache {
    h_in: Array2<f64>,
    z: Array2<f64>,
    /// Block activation after ReLU and dropout.
    u: Array2<f64>,
    /// Inverted-dropout multipliers (0 or 1/keep), when dropout was active.
    mask: Option<Array2<f64>>,
}

fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

fn affine(x: &ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut z = x.dot(&w.t());
    z += b;
    z
}

/// Scaled-uniform init: weights in `±1/sqrt(fan_in)`, biases zero.
pub fn init_network(arch: NetworkArch, seed: u64) -> Result<NetworkParams> {
    arch.validate()?;
    let mut rng = seeding::rng(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (out, inp) in arch.layer_shapes() {
        let bound = 1.0 / (inp as f64).sqrt();
        let w = Array2::from_shape_fn((out, inp), |_| rng.random_range(-bound..bound));
        weights.push(w);
        // Random biases spread the ReLU kinks instead of stacking them at the origin.
        biases.push(Array1::from_shape_fn(out, |_| rng.random_range(-bound..bound)));
    }
    Ok(NetworkParams {
        arch,
        weights,
        biases,
    })
}

impl NetworkParams {
    /// All-zero parameters; handy as a degenerate network in tests.
    pub fn zeros(arch: NetworkArch) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        Ok(Self {
            arch,
            weights: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            biases: shapes.iter().map(|&(o, _)| Array1::zeros(o)).collect(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Checks that the stored arrays agree with `arch` and are finite.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let shapes = self.arch.layer_shapes();
        if shapes.len() != self.weights.len() || shapes.len() != self.biases.len() {
            return Err(GsiError::Shape(format!(
                "expected {} layers, found {} weights and {} biases",
                shapes.len(),
                self.weights.len(),
                self.biases.len()
            )));
        }
        for (i, ((w, b), &(o, inp))) in self.weights.iter().zip(&self.biases).zip(&shapes).enumerate() {
            if w.dim() != (o, inp) || b.len() != o {
                return Err(GsiError::Shape(format!(
                    "layer {i}: weight {:?} / bias {} does not match ({o}, {inp})",
                    w.dim(),
                    b.len()
                )));
            }
        }
        if !self.tensors().all(|t| t.iter().all(|v| v.is_finite())) {
            return Err(GsiError::Numeric("non-finite network parameter".into()));
        }
        Ok(())
    }

    /// Flat views over every tensor (weights then bias, layer by layer).
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice().expect("standard layout"), b.as_slice().expect("standard layout")])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| {
            [
                w.as_slice_mut().expect("standard layout"),
                b.as_slice_mut().expect("standard layout"),
            ]
        })
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.arch.input_dim {
            return Err(GsiError::Shape(format!(
                "network expects input width {}, got {}",
                self.arch.input_dim,
                input.ncols()
            )));
        }
        if !input.iter().all(|v| v.is_finite()) {
            return Err(GsiError::Numeric("non-finite network input".into()));
        }
        Ok(())
    }

    /// Batched forward pass keeping the activations needed by [`backward`].
    ///
    /// Passing an RNG turns dropout on.
    ///
    /// [`backward`]: NetworkParams::backward
    pub fn forward_batch(
        &self,
        input: ArrayView2<f64>,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&input)?;
        let n_blocks = self.arch.num_res_blocks;
        let p = self.arch.dropout_p;
        let mut rng = dropout_rng.filter(|_| p > 0.0);

        let z0 = affine(&input, &self.weights[0], &self.biases[0]);
        let mut h = relu(&z0);
        let mut blocks = Vec::with_capacity(n_blocks);
        for k in 0..n_blocks {
            let (w1, b1) = (&self.weights[1 + 2 * k], &self.biases[1 + 2 * k]);
            let (w2, b2) = (&self.weights[2 + 2 * k], &self.biases[2 + 2 * k]);
            let z = affine(&h.view(), w1, b1);
            let mut u = relu(&z);
            let mask = rng.as_mut().map(|r| {
                let keep = 1.0 - p;
                let m = Array2::from_shape_fn(u.raw_dim(), |_| {
                    if r.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                u *= &m;
                m
            });
            let v = affine(&u.view(), w2, b2);
            let h_next = &h + &v;
            blocks.push(BlockCache { h_in: h, z, u, mask });
            h = h_next;
        }
        let last = self.weights.len() - 1;
        let out = affine(&h.view(), &self.weights[last], &self.biases[last]);
        Ok((
            out,
            ForwardCache {
                arch: self.arch,
                input: input.to_owned(),
                z0,
                blocks,
                last_hidden: h,
            },
        ))
    }

    /// Inference-only batched forward pass (dropout off, no cache).
    pub fn predict_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        let mut h = relu(&affine(&input, &self.weights[0], &self.biases[0]));
        for k in 0..self.arch.num_res_blocks {
            let u = relu(&affine(&h.view(), &self.weights[1 + 2 * k], &self.biases[1 + 2 * k]));
            h += &affine(&u.view(), &self.weights[2 + 2 * k], &self.biases[2 + 2 * k]);
        }
        let last = self.weights.len() - 1;
        Ok(affine(&h.view(), &self.weights[last], &self.biases[last]))
    }

    /// Single-example forward pass. `dropout_seed = Some(_)` enables dropout.
    pub fn forward(&self, input: &[f64], dropout_seed: Option<u64>) -> Result<(Vec<f64>, ForwardCache)> {
        let x = ArrayView2::from_shape((1, input.len()), input).map_err(|e| GsiError::Shape(e.to_string()))?;
        let mut rng = dropout_seed.map(seeding::rng);
        let (out, cache) = self.forward_batch(x, rng.as_mut())?;
        Ok((out.into_raw_vec_and_offset().0, cache))
    }

    /// Gradients of a scalar loss whose gradient w.r.t. the network output is
    /// `output_grad`, plus the gradient w.r.t. the network input.
    pub fn backward(&self, cache: &ForwardCache, output_grad: ArrayView2<f64>) -> Result<(ParamGrads, Array2<f64>)> {
        if cache.arch != self.arch || cache.blocks.len() != self.arch.num_res_blocks {
            return Err(GsiError::Contract("forward cache was produced by a different network".into()));
        }
        let batch = cache.input.nrows();
        if output_grad.dim() != (batch, self.arch.output_dim) {
            return Err(GsiError::Contract(format!(
                "output gradient has shape {:?}, forward pass produced ({batch}, {})",
                output_grad.dim(),
                self.arch.output_dim
            )));
        }
        let n_layers = self.weights.len();
        let mut gw: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
        let mut gb: Vec<Array1<f64>> = Vec::with_capacity(n_layers);

        // Output layer.
        let last = n_layers - 1;
        let g_out = output_grad;
        let mut tail_w = vec![g_out.t().dot(&cache.last_hidden)];
        let mut tail_b = vec![g_out.sum_axis(Axis(0))];
        let mut dh = g_out.dot(&self.weights[last]);

        for k in (0..cache.blocks.len()).rev() {
            let bc = &cache.blocks[k];
            let (w1, w2) = (&self.weights[1 + 2 * k], &self.weights[2 + 2 * k]);
            // h_out = h_in + W2 u + b2
            tail_w.push(dh.t().dot(&bc.u));
            tail_b.push(dh.sum_axis(Axis(0)));
            let mut du = dh.dot(w2);
            if let Some(mask) = &bc.mask {
                du *= mask;
            }
            Zip::from(&mut du).and(&bc.z).for_each(|d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            tail_w.push(du.t().dot(&bc.h_in));
            tail_b.push(du.sum_axis(Axis(0)));
            dh += &du.dot(w1);
        }

        let mut dz0 = dh;
        Zip::from(&mut dz0).and(&cache.z0).for_each(|d, &z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
        gw.push(dz0.t().dot(&cache.input));
        gb.push(dz0.sum_axis(Axis(0)));
        let d_input = dz0.dot(&self.weights[0]);

        gw.extend(tail_w.into_iter().rev());
        let gw = gw.into_iter().map(standard_layout).collect();
        gb.extend(tail_b.into_iter().rev());
        Ok((ParamGrads { weights: gw, biases: gb }, d_input))
    }
}

impl ParamGrads {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            weights: params.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: params.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice().expect("standard layout"), b.as_slice().expect("standard layout")])
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors().flat_map(|t| t.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Central-difference gradient of `loss(forward(params, input))`.
pub fn numerical_gradient<F>(params: &NetworkParams, input: ArrayView2<f64>, loss_probe: F, step: f64) -> Result<ParamGrads>
where
    F: Fn(&Array2<f64>) -> f64,
{
    if !(step > 0.0) {
        return Err(GsiError::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let mut probe = params.clone();
    let mut grads = ParamGrads::zeros_like(params);
    let eval = |p: &NetworkParams| -> Result<f64> { Ok(loss_probe(&p.predict_batch(input)?)) };

    let n_layers = params.weights.len();
    for l in 0..n_layers {
        for idx in 0..params.weights[l].len() {
            let orig = params.weights[l].as_slice().unwrap()[idx];
            probe.weights[l].as_slice_mut().unwrap()[idx] = orig + step;
            let up = eval(&probe)?;
            probe.weights[l].as_slice_mut().unwrap()[idx] = orig - step;
            let down = eval(&probe)?;
            probe.weights[l].as_slice_mut().unwrap()[idx] = orig;
            grads.weights[l].as_slice_mut().unwrap()[idx] = (up - down) / (2.0 * step);
        }
        for idx in 0..params.biases[l].len() {
            let orig = params.biases[l][idx];
            probe.biases[l][idx] = orig + step;
            let up = eval(&probe)?;
            probe.biases[l][idx] = orig - step;
            let down = eval(&probe)?;
            probe.biases[l][idx] = orig;
            grads.biases[l][idx] = (up - down) / (2.0 * step);
        }
    }
    Ok(grads)
}

/// Adam optimizer state for one [`NetworkParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m1: Vec<Vec<f64>>,
    pub m2: Vec<Vec<f64>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
}

impl AdamState {
    pub fn new(params: &NetworkParams, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m1: zeros.clone(),
            m2: zeros,
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
        }
    }

    /// One bias-corrected Adam update. Non-finite gradients abort the step
    /// and leave both the parameters and the state untouched.
    pub fn adam_step(&mut self, params: &mut NetworkParams, grads: &ParamGrads) -> Result<()> {
        if !grads.is_finite() {
            return Err(GsiError::Numeric(format!("non-finite gradient at Adam step {}", self.step + 1)));
        }
        let shapes_ok = params.tensors().zip(grads.tensors()).all(|(p, g)| p.len() == g.len())
            && self.m1.len() == params.weights.len() * 2
            && grads.weights.len() == params.weights.len();
        if !shapes_ok {
            return Err(GsiError::Shape("Adam state, parameters and gradients disagree".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps_adam);
        for (((p, g), m1), m2) in params
            .tensors_mut()
            .zip(grads.tensors())
            .zip(self.m1.iter_mut())
            .zip(self.m2.iter_mut())
        {
            for i in 0..p.len() {
                m1[i] = b1 * m1[i] + (1.0 - b1) * g[i];
                m2[i] = b2 * m2[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m1[i] / bc1;
                let v_hat = m2[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

fn standard_layout(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Copies columns `[start, start + width)` of `m` into a new matrix.
pub(crate) fn take_cols(m: &Array2<f64>, start: usize, width: usize) -> Array2<f64> {
    m.slice(s![.., start..start + width]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn init_is_deterministic_and_fan_in_bounded() {
        let arch = NetworkArch::new(2, 1, 4, 1);
        let a = init_network(arch, 7).unwrap();
        let b = init_network(arch, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_network(arch, 8).unwrap());
        for (w, bias) in a.weights.iter().zip(&a.biases) {
            let bound = 1.0 / (w.ncols() as f64).sqrt();
            assert!(w.iter().chain(bias.iter()).all(|v| v.abs() <= bound));
        }
        assert!(a.biases[0].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn param_count_matches_hand_enumeration() {
        // in=3, h=8, 2 blocks, out=1:
        // input layer 8*3+8 = 32; each block 2*(8*8+8) = 144; output 1*8+1 = 9.
        let arch = NetworkArch::new(3, 1, 8, 2);
        assert_eq!(arch.param_count(), 32 + 2 * 144 + 9);
        let p = init_network(arch, 1).unwrap();
        assert_eq!(p.param_count(), 329);
    }

    #[test]
    fn zero_dim_is_rejected() {
        let err = init_network(NetworkArch::new(0, 1, 4, 0), 1).unwrap_err();
        assert!(matches!(err, GsiError::Config(_)));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = NetworkParams::zeros(NetworkArch::new(3, 2, 5, 2)).unwrap();
        let (out, _) = p.forward(&[1.0, -2.0, 3.0], None).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn linear_readout_by_hand() {
        // Identity first layer so the ReLU sees positive inputs, then the
        // readout [[1, 2]] with bias 0.5 on input (1, 1) gives 3.5.
        let mut p = NetworkParams::zeros(NetworkArch::new(2, 1, 2, 0)).unwrap();
        p.weights[0] = array![[1.0, 0.0], [0.0, 1.0]];
        p.weights[1] = array![[1.0, 2.0]];
        p.biases[1] = array![0.5];
        let (out, _) = p.forward(&[1.0, 1.0], None).unwrap();
        assert_eq!(out, vec![3.5]);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let p = init_network(NetworkArch::new(2, 1, 3, 0), 0).unwrap();
        assert!(matches!(p.forward(&[1.0], None), Err(GsiError::Shape(_))));
        assert!(matches!(p.forward(&[1.0, f64::NAN], None), Err(GsiError::Numeric(_))));
    }

    #[test]
    fn dropout_off_is_pure_and_dropout_on_is_seeded() {
        let p = init_network(NetworkArch::new(3, 2, 16, 2).with_dropout(0.3), 3).unwrap();
        let x = [0.3, -0.7, 1.1];
        let (a, _) = p.forward(&x, None).unwrap();
        let (b, _) = p.forward(&x, None).unwrap();
        assert_eq!(a, b);
        let (c, _) = p.forward(&x, Some(9)).unwrap();
        let (d, _) = p.forward(&x, Some(9)).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let p = init_network(NetworkArch::new(3, 2, 6, 1), 5).unwrap();
        let (_, cache) = p.forward(&[0.1, 0.2, 0.3], None).unwrap();
        let (g, dx) = p.backward(&cache, Array2::zeros((1, 2)).view()).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn readout_gradient_is_hidden_activation() {
        // loss = y = A_L h + b_L, so dL/dA_L = h and dL/db_L = 1.
        let p = init_network(NetworkArch::new(2, 1, 4, 0), 11).unwrap();
        let (_, cache) = p.forward(&[0.5, -0.25], None).unwrap();
        let (g, _) = p.backward(&cache, Array2::ones((1, 1)).view()).unwrap();
        assert_eq!(g.weights[1].row(0), cache.last_hidden.row(0));
        assert_eq!(g.biases[1][0], 1.0);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let a = init_network(NetworkArch::new(2, 1, 4, 1), 1).unwrap();
        let b = init_network(NetworkArch::new(2, 1, 4, 2), 1).unwrap();
        let (_, cache) = a.forward(&[0.0, 1.0], None).unwrap();
        assert!(matches!(b.backward(&cache, Array2::ones((1, 1)).view()), Err(GsiError::Contract(_))));
        assert!(matches!(a.backward(&cache, Array2::ones((2, 1)).view()), Err(GsiError::Contract(_))));
    }

    #[test]
    fn numerical_gradient_of_square() {
        // Single weight w with identity-ish path: loss = out^2 where out = w * relu(x).
        let mut p = NetworkParams::zeros(NetworkArch::new(1, 1, 1, 0)).unwrap();
        p.weights[0] = array![[1.0]];
        p.weights[1] = array![[2.0]];
        let x = array![[1.0]];
        let g = numerical_gradient(&p, x.view(), |o| o[[0, 0]].powi(2), 1e-5).unwrap();
        assert!((g.weights[1][[0, 0]] - 4.0).abs() < 1e-8);
        assert!(numerical_gradient(&p, x.view(), |o| o[[0, 0]], 0.0).is_err());
    }

    #[test]
    fn adam_zero_grad_leaves_params() {
        let mut p = init_network(NetworkArch::new(2, 1, 3, 1), 2).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&p, 1e-3);
        st.adam_step(&mut p, &ParamGrads::zeros_like(&before)).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // At t = 1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps) ~ lr.
        let mut p = NetworkParams::zeros(NetworkArch::new(1, 1, 1, 0)).unwrap();
        let mut g = ParamGrads::zeros_like(&p);
        g.biases[1][0] = 1.0;
        let mut st = AdamState::new(&p, 0.01);
        st.adam_step(&mut p, &g).unwrap();
        assert!((p.biases[1][0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = init_network(NetworkArch::new(1, 1, 2, 0), 0).unwrap();
        let before = p.clone();
        let mut g = ParamGrads::zeros_like(&p);
        g.weights[0][[0, 0]] = f64::NAN;
        let mut st = AdamState::new(&p, 0.01);
        assert!(matches!(st.adam_step(&mut p, &g), Err(GsiError::Numeric(_))));
        assert_eq!(p, before);
        assert_eq!(st.step, 0);
    }
}
