//! Minimal feedforward networks with exact reverse-mode gradients, a
//! hand-rolled Adam, and tanh-squashed Gaussian policies. The fixed topology
//! (tanh hidden layers, linear output head) is all the trainers need, so there
//! is no general autodiff graph here.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rng::Rng;

/// Fully connected tanh network with a linear output head.
///
/// `weights[l]` is `sizes[l+1] x sizes[l]`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Gradient (or any co-shaped accumulator) for an [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrad {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Cached forward pass: the input and each layer's post-activation output.
pub struct Activations {
    pub input: Vec<f64>,
    /// Post-tanh outputs of the hidden layers, then the linear output.
    pub layers: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("network has at least one layer")
    }
}

impl Mlp {
    /// Uniform fan-in initialization, deterministic given the generator.
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            weights.push((0..fan_in * fan_out).map(|_| rng.uniform(-bound, bound)).collect());
            biases.push(vec![0.0; fan_out]);
        }
        Mlp { sizes: sizes.to_vec(), weights, biases }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, Error> {
        let mut acts = self.forward_cached(x)?;
        Ok(acts.layers.pop().expect("at least one layer"))
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<Activations, Error> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch { expected: self.input_dim(), got: x.len() });
        }
        let n_layers = self.layer_count();
        let mut layers = Vec::with_capacity(n_layers);
        let mut cur = x;
        for l in 0..n_layers {
            let n_in = self.sizes[l];
            let w = &self.weights[l];
            let mut out = self.biases[l].clone();
            for (j, out_j) in out.iter_mut().enumerate() {
                let row = &w[j * n_in..(j + 1) * n_in];
                let mut acc = 0.0;
                for (wi, xi) in row.iter().zip(cur) {
                    acc += wi * xi;
                }
                *out_j += acc;
            }
            if l + 1 < n_layers {
                for v in &mut out {
                    *v = libm::tanh(*v);
                }
            }
            layers.push(out);
            cur = layers.last().unwrap();
        }
        Ok(Activations { input: x.to_vec(), layers })
    }

    /// Reverse-mode gradients of `upstream . forward(x)` with respect to all
    /// parameters and to the input.
    pub fn grad(&self, x: &[f64], upstream: &[f64]) -> Result<(MlpGrad, Vec<f64>), Error> {
        let acts = self.forward_cached(x)?;
        self.backward(&acts, upstream)
    }

    /// Backward pass over a cached forward pass.
    pub fn backward(&self, acts: &Activations, upstream: &[f64]) -> Result<(MlpGrad, Vec<f64>), Error> {
        if upstream.len() != self.output_dim() {
            return Err(Error::ShapeMismatch { expected: self.output_dim(), got: upstream.len() });
        }
        let mut grad = MlpGrad::zeros_like(self);
        let mut delta = upstream.to_vec();
        for l in (0..self.layer_count()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            // Hidden layers stored post-tanh: d tanh = 1 - tanh^2.
            if l + 1 < self.layer_count() {
                for (dj, hj) in delta.iter_mut().zip(&acts.layers[l]) {
                    *dj *= 1.0 - hj * hj;
                }
            }
            let below: &[f64] = if l == 0 { &acts.input } else { &acts.layers[l - 1] };
            let gw = &mut grad.weights[l];
            for j in 0..n_out {
                let dj = delta[j];
                grad.biases[l][j] = dj;
                let row = &mut gw[j * n_in..(j + 1) * n_in];
                for (gi, xi) in row.iter_mut().zip(below) {
                    *gi = dj * xi;
                }
            }
            let mut next = vec![0.0; n_in];
            let w = &self.weights[l];
            for j in 0..n_out {
                let dj = delta[j];
                let row = &w[j * n_in..(j + 1) * n_in];
                for (ni, wi) in next.iter_mut().zip(row) {
                    *ni += dj * wi;
                }
            }
            delta = next;
        }
        Ok((grad, delta))
    }
}

impl MlpGrad {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrad {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &MlpGrad, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }
}

/// Adam accumulators, shaped like their network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m_w: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m_w: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v_w: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            m_b: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_b: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam step. Gradients must be finite; the error names the
/// offending tensor.
pub fn adam_step(net: &mut Mlp, grad: &MlpGrad, st: &mut AdamState) -> Result<(), Error> {
    for (l, g) in grad.weights.iter().enumerate() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteTensor { tensor: format!("layer {l} weight gradient") });
        }
    }
    for (l, g) in grad.biases.iter().enumerate() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteTensor { tensor: format!("layer {l} bias gradient") });
        }
    }
    st.step += 1;
    let t = st.step as f64;
    let bc1 = 1.0 - libm::pow(st.beta1, t);
    let bc2 = 1.0 - libm::pow(st.beta2, t);
    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..p.len() {
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= st.lr * m_hat / (libm::sqrt(v_hat) + st.eps);
        }
    };
    for l in 0..net.weights.len() {
        update(&mut net.weights[l], &grad.weights[l], &mut st.m_w[l], &mut st.v_w[l]);
        update(&mut net.biases[l], &grad.biases[l], &mut st.m_b[l], &mut st.v_b[l]);
    }
    Ok(())
}

/// Polyak mixing of `src` into `dst`: `dst = (1 - rate) * dst + rate * src`.
pub fn polyak_update(dst: &mut Mlp, src: &Mlp, rate: f64) {
    for (dw, sw) in dst.weights.iter_mut().zip(&src.weights) {
        for (d, s) in dw.iter_mut().zip(sw) {
            *d = (1.0 - rate) * *d + rate * s;
        }
    }
    for (db, sb) in dst.biases.iter_mut().zip(&src.biases) {
        for (d, s) in db.iter_mut().zip(sb) {
            *d = (1.0 - rate) * *d + rate * s;
        }
    }
}

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Tanh-squashed Gaussian policy. The trunk emits `(mean, log_std)` per action
/// dimension; samples are squashed and affinely rescaled into the action
/// bounds, so emitted actions always respect them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticPolicy {
    pub trunk: Mlp,
    pub act_lo: Vec<f64>,
    pub act_hi: Vec<f64>,
}

/// Everything an actor update needs from one reparameterized sample.
pub struct PolicySample {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub xi: Vec<f64>,
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    /// Per-dimension: the log-std head hit its clamp (gradient is zero there).
    pub std_clamped: Vec<bool>,
}

impl StochasticPolicy {
    pub fn new(state_dim: usize, act_lo: Vec<f64>, act_hi: Vec<f64>, hidden: &[usize], rng: &mut Rng) -> Self {
        let act_dim = act_lo.len();
        assert_eq!(act_dim, act_hi.len());
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * act_dim);
        StochasticPolicy { trunk: Mlp::new(&sizes, rng), act_lo, act_hi }
    }

    pub fn act_dim(&self) -> usize {
        self.act_lo.len()
    }

    pub fn state_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    fn half_width(&self, i: usize) -> f64 {
        0.5 * (self.act_hi[i] - self.act_lo[i])
    }

    fn squash(&self, i: usize, xi: f64) -> f64 {
        self.act_lo[i] + self.half_width(i) * (libm::tanh(xi) + 1.0)
    }

    /// Split and clamp the trunk output into `(mean, log_std, clamped)`.
    pub fn heads(&self, raw: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
        let n = self.act_dim();
        let mean = raw[..n].to_vec();
        let mut clamped = vec![false; n];
        let log_std = raw[n..]
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v < LOG_STD_MIN || v > LOG_STD_MAX {
                    clamped[i] = true;
                }
                v.max(LOG_STD_MIN).min(LOG_STD_MAX)
            })
            .collect();
        (mean, log_std, clamped)
    }

    /// Draw an action with its log-density (tanh-and-affine change of
    /// variables included).
    pub fn sample(&self, x: &[f64], rng: &mut Rng) -> Result<(Vec<f64>, f64), Error> {
        let mut z = vec![0.0; self.act_dim()];
        rng.fill_normal(&mut z);
        let s = self.sample_with_noise(x, &z)?;
        Ok((s.action, s.log_prob))
    }

    /// Reparameterized sample with fixed noise `z` (used by the actor updates
    /// and their finite-difference checks).
    pub fn sample_with_noise(&self, x: &[f64], z: &[f64]) -> Result<PolicySample, Error> {
        let raw = self.trunk.forward(x)?;
        let (mean, log_std, std_clamped) = self.heads(&raw);
        Ok(self.sample_from_heads(&mean, &log_std, &std_clamped, z))
    }

    /// Assemble a reparameterized sample from already-computed heads.
    pub fn sample_from_heads(
        &self,
        mean: &[f64],
        log_std: &[f64],
        std_clamped: &[bool],
        z: &[f64],
    ) -> PolicySample {
        let n = self.act_dim();
        let mut xi = vec![0.0; n];
        let mut action = vec![0.0; n];
        let mut log_prob = 0.0;
        for i in 0..n {
            let sigma = libm::exp(log_std[i]);
            xi[i] = mean[i] + sigma * z[i];
            action[i] = self.squash(i, xi[i]);
            log_prob += -0.5 * z[i] * z[i] - log_std[i] - LN_SQRT_2PI;
            log_prob -= libm::log(self.half_width(i)) + ln_one_minus_tanh_sq(xi[i]);
        }
        PolicySample {
            action,
            log_prob,
            xi,
            mean: mean.to_vec(),
            log_std: log_std.to_vec(),
            std_clamped: std_clamped.to_vec(),
        }
    }

    /// Deterministic mean action (squashed mean, no noise).
    pub fn mean_action(&self, x: &[f64]) -> Result<Vec<f64>, Error> {
        let raw = self.trunk.forward(x)?;
        let (mean, _, _) = self.heads(&raw);
        Ok(mean.iter().enumerate().map(|(i, &m)| self.squash(i, m)).collect())
    }

    /// Log-density of an arbitrary in-bounds action (inverse squash).
    pub fn log_prob_of(&self, x: &[f64], action: &[f64]) -> Result<f64, Error> {
        let raw = self.trunk.forward(x)?;
        let (mean, log_std, _) = self.heads(&raw);
        let mut log_prob = 0.0;
        for i in 0..self.act_dim() {
            let c = self.half_width(i);
            let t = ((action[i] - self.act_lo[i]) / c - 1.0).max(-1.0 + 1e-12).min(1.0 - 1e-12);
            let xi = libm::atanh(t);
            let sigma = libm::exp(log_std[i]);
            let z = (xi - mean[i]) / sigma;
            log_prob += -0.5 * z * z - log_std[i] - LN_SQRT_2PI;
            log_prob -= libm::log(c) + ln_one_minus_tanh_sq(xi);
        }
        Ok(log_prob)
    }
}

/// Adapts a [`StochasticPolicy`] to the [`Policy`](crate::policy::Policy)
/// trait, either sampling or playing the deterministic mean action.
#[derive(Clone, Debug)]
pub struct ActorPolicy {
    pub actor: StochasticPolicy,
    pub stochastic: bool,
}

impl ActorPolicy {
    pub fn deterministic(actor: StochasticPolicy) -> Self {
        ActorPolicy { actor, stochastic: false }
    }

    pub fn stochastic(actor: StochasticPolicy) -> Self {
        ActorPolicy { actor, stochastic: true }
    }
}

impl crate::policy::Policy for ActorPolicy {
    fn act(&mut self, x: &[f64], rng: &mut Rng) -> Vec<f64> {
        if self.stochastic {
            self.actor.sample(x, rng).expect("state dimension matches actor input").0
        } else {
            self.actor.mean_action(x).expect("state dimension matches actor input")
        }
    }
}

/// Numerically stable `ln(1 - tanh(x)^2) = 2 (ln 2 - x - softplus(-2x))`.
pub fn ln_one_minus_tanh_sq(x: f64) -> f64 {
    2.0 * (core::f64::consts::LN_2 - x - softplus(-2.0 * x))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn zero_net_zero_output() {
        let mut rng = Rng::seed_from_u64(0);
        let mut net = Mlp::new(&[3, 4, 2], &mut rng);
        for w in &mut net.weights {
            w.iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_linear_layer() {
        let mut rng = Rng::seed_from_u64(0);
        let mut net = Mlp::new(&[1, 1], &mut rng);
        net.weights[0][0] = 2.0;
        net.biases[0][0] = 1.0;
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
        let (grad, input_grad) = net.grad(&[3.0], &[1.0]).unwrap();
        assert_eq!(grad.weights[0][0], 3.0);
        assert_eq!(grad.biases[0][0], 1.0);
        assert_eq!(input_grad, vec![2.0]);
    }

    #[test]
    fn forward_deterministic() {
        let mut rng = Rng::seed_from_u64(5);
        let net = Mlp::new(&[4, 8, 8, 2], &mut rng);
        let x = [0.3, -0.7, 1.1, 0.0];
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut rng = Rng::seed_from_u64(5);
        let net = Mlp::new(&[4, 8, 2], &mut rng);
        assert!(net.forward(&[1.0, 2.0]).is_err());
        assert!(net.grad(&[0.0; 4], &[1.0]).is_err());
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = Rng::seed_from_u64(6);
        let net = Mlp::new(&[3, 5, 2], &mut rng);
        let (grad, input_grad) = net.grad(&[0.2, 0.4, -0.6], &[0.0, 0.0]).unwrap();
        assert!(grad.weights.iter().flatten().all(|&g| g == 0.0));
        assert!(grad.biases.iter().flatten().all(|&g| g == 0.0));
        assert!(input_grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn grad_matches_finite_difference() {
        let mut rng = Rng::seed_from_u64(17);
        for case in 0..20 {
            let net = Mlp::new(&[3, 6, 5, 2], &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let upstream: Vec<f64> = (0..2).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let (grad, input_grad) = net.grad(&x, &upstream).unwrap();
            let loss = |n: &Mlp, x: &[f64]| -> f64 {
                n.forward(x).unwrap().iter().zip(&upstream).map(|(o, u)| o * u).sum()
            };
            let h = 1e-5;
            // Spot-check a few weights per case plus all input coordinates.
            for l in 0..net.layer_count() {
                let k = (case * 7 + l * 13) % net.weights[l].len();
                let mut plus = net.clone();
                plus.weights[l][k] += h;
                let mut minus = net.clone();
                minus.weights[l][k] -= h;
                let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
                assert!(
                    rel_close(fd, grad.weights[l][k], 1e-4),
                    "case {case} layer {l} weight {k}: fd {fd} vs {g}",
                    g = grad.weights[l][k]
                );
            }
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
                assert!(rel_close(fd, input_grad[i], 1e-4));
            }
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut rng = Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[2, 3, 1], &mut rng);
        let before = net.clone();
        let grad = MlpGrad::zeros_like(&net);
        let mut st = AdamState::new(&net, 0.1);
        adam_step(&mut net, &grad, &mut st).unwrap();
        assert_eq!(net, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_magnitude() {
        let mut rng = Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[1, 1], &mut rng);
        let w0 = net.weights[0][0];
        let mut grad = MlpGrad::zeros_like(&net);
        grad.weights[0][0] = 1.0;
        let mut st = AdamState::new(&net, 0.1);
        adam_step(&mut net, &grad, &mut st).unwrap();
        // Bias-corrected first step moves by ~lr.
        assert!((w0 - net.weights[0][0] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // f(w) = (w - 3)^2, gradient 2 (w - 3).
        let mut rng = Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[1, 1], &mut rng);
        net.weights[0][0] = 0.0;
        net.biases[0][0] = 0.0;
        let mut st = AdamState::new(&net, 0.05);
        for _ in 0..500 {
            let w = net.weights[0][0];
            let mut grad = MlpGrad::zeros_like(&net);
            grad.weights[0][0] = 2.0 * (w - 3.0);
            adam_step(&mut net, &grad, &mut st).unwrap();
        }
        assert!((net.weights[0][0] - 3.0).abs() < 0.05);
    }

    #[test]
    fn adam_rejects_nonfinite() {
        let mut rng = Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[1, 1], &mut rng);
        let mut grad = MlpGrad::zeros_like(&net);
        grad.biases[0][0] = f64::NAN;
        let mut st = AdamState::new(&net, 0.1);
        match adam_step(&mut net, &grad, &mut st) {
            Err(Error::NonFiniteTensor { tensor }) => assert!(tensor.contains("bias")),
            other => panic!("expected NonFiniteTensor, got {other:?}"),
        }
    }

    #[test]
    fn polyak_mixes_elementwise() {
        let mut rng = Rng::seed_from_u64(3);
        let src = Mlp::new(&[2, 3, 1], &mut rng);
        let mut dst = Mlp::new(&[2, 3, 1], &mut rng);
        let old = dst.clone();
        polyak_update(&mut dst, &src, 0.25);
        for l in 0..src.weights.len() {
            for i in 0..src.weights[l].len() {
                let expect = 0.75 * old.weights[l][i] + 0.25 * src.weights[l][i];
                assert!((dst.weights[l][i] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn policy_actions_in_bounds() {
        let mut rng = Rng::seed_from_u64(9);
        let p = StochasticPolicy::new(2, vec![-1.0], vec![1.0], &[16], &mut rng);
        for _ in 0..100_000 {
            let x = [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
            let (a, _) = p.sample(&x, &mut rng).unwrap();
            assert!(a[0] >= -1.0 && a[0] <= 1.0);
        }
    }

    #[test]
    fn tiny_std_matches_mean_action() {
        let mut rng = Rng::seed_from_u64(9);
        let mut p = StochasticPolicy::new(1, vec![-2.0], vec![2.0], &[8], &mut rng);
        // Force the log-std head far below the clamp floor.
        let n_out = p.trunk.output_dim();
        let out_layer = p.trunk.layer_count() - 1;
        for j in n_out / 2..n_out {
            p.trunk.biases[out_layer][j] = -100.0;
            let n_in = p.trunk.sizes[out_layer];
            for w in &mut p.trunk.weights[out_layer][j * n_in..(j + 1) * n_in] {
                *w = 0.0;
            }
        }
        let x = [0.4];
        let mean = p.mean_action(&x).unwrap();
        let (a, _) = p.sample(&x, &mut rng).unwrap();
        assert!((a[0] - mean[0]).abs() < 1e-6);
    }

    #[test]
    fn log_std_clamped_range() {
        let mut rng = Rng::seed_from_u64(9);
        let p = StochasticPolicy::new(1, vec![-1.0], vec![1.0], &[8], &mut rng);
        let raw: Vec<f64> = vec![0.0, 55.0];
        let (_, log_std, clamped) = p.heads(&raw);
        assert_eq!(log_std[0], LOG_STD_MAX);
        assert!(clamped[0]);
        let raw: Vec<f64> = vec![0.0, -55.0];
        let (_, log_std, _) = p.heads(&raw);
        assert_eq!(log_std[0], LOG_STD_MIN);
    }

    #[test]
    fn log_prob_integrates_to_one() {
        // Quadrature over a fine action grid on a 1-D policy.
        let mut rng = Rng::seed_from_u64(21);
        let p = StochasticPolicy::new(2, vec![-1.5], vec![0.5], &[12], &mut rng);
        let x = [0.3, -0.8];
        let n = 20_000;
        let (lo, hi) = (-1.5 + 1e-9, 0.5 - 1e-9);
        let da = (hi - lo) / n as f64;
        let mut mass = 0.0;
        for i in 0..n {
            let a = lo + (i as f64 + 0.5) * da;
            mass += libm::exp(p.log_prob_of(&x, &[a]).unwrap()) * da;
        }
        assert!((mass - 1.0).abs() < 0.01, "mass {mass}");
    }

    #[test]
    fn sampled_log_prob_consistent_with_density() {
        let mut rng = Rng::seed_from_u64(33);
        let p = StochasticPolicy::new(1, vec![-1.0], vec![1.0], &[8], &mut rng);
        for _ in 0..50 {
            let x = [rng.uniform(-1.0, 1.0)];
            let (a, lp) = p.sample(&x, &mut rng).unwrap();
            let lp2 = p.log_prob_of(&x, &a).unwrap();
            assert!((lp - lp2).abs() < 1e-6, "{lp} vs {lp2}");
        }
    }

    #[test]
    fn serde_round_trip_bit_identical() {
        let mut rng = Rng::seed_from_u64(44);
        let net = Mlp::new(&[3, 16, 16, 2], &mut rng);
        let json = serde_json::to_string(&net).unwrap();
        let back: Mlp = serde_json::from_str(&json).unwrap();
        assert_eq!(net, back);
        let x = [0.123456789, -0.987654321, 0.5];
        assert_eq!(net.forward(&x).unwrap(), back.forward(&x).unwrap());
    }
}
