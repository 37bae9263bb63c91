//! Convolutional policy/value network written out by hand.
//!
//! ```text
//! 7 x n x n --conv3x3--> 10 x n x n --conv3x3--> 10 x n x n --maxpool2--> 10 x n/2 x n/2
//!   flatten --+--> 200 --> 100 --linear--> 4 logits
//!             +--> 200 --> 100 --linear--> 1 value
//! ```
//!
//! Hidden layers use leaky ReLU (slope 0.01). Parameters are stored as `T`
//! (`f32` for training and checkpoints, `f64` for gradient checks); all
//! arithmetic is done in `f64`.

use std::fmt::Debug;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{encode_features, FeaturePlanes, GameState, NUM_PLANES};
use crate::error::{Error, Result};
use crate::mcts::{Evaluation, Evaluator};

pub const CONV_CHANNELS: usize = 10;
pub const HIDDEN_1: usize = 200;
pub const HIDDEN_2: usize = 100;
pub const LEAKY_SLOPE: f64 = 0.01;
/// Floor applied to `p(a)` inside the cross-entropy log.
pub const LOG_FLOOR: f64 = 1e-12;

pub trait Scalar: num_traits::Float + Copy + Default + Debug + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    n: usize,
    tensors: Vec<TensorSpec>,
    total: usize,
}

// Indices into `Layout::tensors`.
const CONV1_W: usize = 0;
const CONV1_B: usize = 1;
const CONV2_W: usize = 2;
const CONV2_B: usize = 3;
const P1_W: usize = 4;
const P1_B: usize = 5;
const P2_W: usize = 6;
const P2_B: usize = 7;
const P3_W: usize = 8;
const P3_B: usize = 9;
const V1_W: usize = 10;
const V1_B: usize = 11;
const V2_W: usize = 12;
const V2_B: usize = 13;
const V3_W: usize = 14;
const V3_B: usize = 15;

impl Layout {
    pub fn new(n: usize) -> Result<Layout> {
        if n < 2 || !n.is_multiple_of(2) {
            return Err(Error::config(format!(
                "board side {n} must be even for 2x2 pooling"
            )));
        }
        let flat = CONV_CHANNELS * (n / 2) * (n / 2);
        let shapes: [(&'static str, Vec<usize>); 16] = [
            ("conv1.weight", vec![CONV_CHANNELS, NUM_PLANES, 3, 3]),
            ("conv1.bias", vec![CONV_CHANNELS]),
            ("conv2.weight", vec![CONV_CHANNELS, CONV_CHANNELS, 3, 3]),
            ("conv2.bias", vec![CONV_CHANNELS]),
            ("policy.fc1.weight", vec![HIDDEN_1, flat]),
            ("policy.fc1.bias", vec![HIDDEN_1]),
            ("policy.fc2.weight", vec![HIDDEN_2, HIDDEN_1]),
            ("policy.fc2.bias", vec![HIDDEN_2]),
            ("policy.out.weight", vec![4, HIDDEN_2]),
            ("policy.out.bias", vec![4]),
            ("value.fc1.weight", vec![HIDDEN_1, flat]),
            ("value.fc1.bias", vec![HIDDEN_1]),
            ("value.fc2.weight", vec![HIDDEN_2, HIDDEN_1]),
            ("value.fc2.bias", vec![HIDDEN_2]),
            ("value.out.weight", vec![1, HIDDEN_2]),
            ("value.out.bias", vec![1]),
        ];
        let mut offset = 0;
        let tensors = shapes
            .into_iter()
            .map(|(name, shape)| {
                let spec = TensorSpec {
                    name,
                    shape,
                    offset,
                };
                offset += spec.len();
                spec
            })
            .collect();
        Ok(Layout {
            n,
            tensors,
            total: offset,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.total
    }

    /// Width of the flattened pooled features.
    pub fn flat_width(&self) -> usize {
        CONV_CHANNELS * (self.n / 2) * (self.n / 2)
    }

    fn off(&self, t: usize) -> usize {
        self.tensors[t].offset
    }

    /// Activation shapes from input to the pooled, flattened features.
    pub fn shape_chain(&self) -> Vec<Vec<usize>> {
        let n = self.n;
        vec![
            vec![NUM_PLANES, n, n],
            vec![CONV_CHANNELS, n, n],
            vec![CONV_CHANNELS, n, n],
            vec![CONV_CHANNELS, n / 2, n / 2],
            vec![self.flat_width()],
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetOutput {
    pub logits: [f64; 4],
    pub policy: [f64; 4],
    pub value: f64,
}

/// Every intermediate activation of one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    pub input: Vec<f64>,
    pub conv1_pre: Vec<f64>,
    pub conv1: Vec<f64>,
    pub conv2_pre: Vec<f64>,
    pub conv2: Vec<f64>,
    pub pooled: Vec<f64>,
    pool_src: Vec<usize>,
    p1_pre: Vec<f64>,
    p1: Vec<f64>,
    p2_pre: Vec<f64>,
    p2: Vec<f64>,
    v1_pre: Vec<f64>,
    v1: Vec<f64>,
    v2_pre: Vec<f64>,
    v2: Vec<f64>,
    pub output: NetOutput,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub c_l2: f64,
    pub lr: f64,
    pub momentum: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            c_l2: 1e-4,
            lr: 0.001,
            momentum: 0.7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config("learning rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must be in [0, 1)"));
        }
        if !(self.c_l2 >= 0.0) {
            return Err(Error::config("L2 coefficient must be >= 0"));
        }
        Ok(())
    }
}

/// One training target.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<'a> {
    pub features: &'a FeaturePlanes,
    pub pi: [f64; 4],
    pub z: f64,
}

/// Gradient of the batch-mean loss, one entry per parameter.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub values: Vec<f64>,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    layout: Layout,
    params: Vec<T>,
    momentum: Vec<T>,
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

pub fn softmax(logits: &[f64; 4]) -> [f64; 4] {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; 4];
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    out
}

impl<T: Scalar> Network<T> {
    /// All parameters zero.
    pub fn zeros(n: usize) -> Result<Self> {
        let layout = Layout::new(n)?;
        let total = layout.param_count();
        Ok(Network {
            layout,
            params: vec![T::zero(); total],
            momentum: vec![T::zero(); total],
        })
    }

    /// Weights uniform in `+-sqrt(3 / fan_in)` (unit-variance-preserving for
    /// linear units); biases and momentum zero.
    pub fn init(n: usize, seed: u64) -> Result<Self> {
        let mut net = Network::zeros(n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = net.layout.tensors.clone();
        for spec in specs.iter().filter(|s| s.shape.len() > 1) {
            let fan_in: usize = spec.shape[1..].iter().product();
            let bound = (3.0 / fan_in as f64).sqrt();
            for p in &mut net.params[spec.offset..spec.offset + spec.len()] {
                *p = T::from_f64(rng.random_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn from_parts(n: usize, params: Vec<T>, momentum: Vec<T>) -> Result<Self> {
        let layout = Layout::new(n)?;
        if params.len() != layout.param_count() || momentum.len() != layout.param_count() {
            return Err(Error::config(format!(
                "expected {} parameters, got {} / {} momentum",
                layout.param_count(),
                params.len(),
                momentum.len()
            )));
        }
        Ok(Network {
            layout,
            params,
            momentum,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n(&self) -> usize {
        self.layout.n
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn momentum(&self) -> &[T] {
        &self.momentum
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            layout: self.layout.clone(),
            params: self
                .params
                .iter()
                .map(|p| U::from_f64(p.as_f64()))
                .collect(),
            momentum: self
                .momentum
                .iter()
                .map(|p| U::from_f64(p.as_f64()))
                .collect(),
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.params.iter().map(|p| p.as_f64() * p.as_f64()).sum()
    }

    pub fn forward(&self, features: &FeaturePlanes) -> Result<NetOutput> {
        Ok(self.trace(features)?.output)
    }

    pub fn trace(&self, features: &FeaturePlanes) -> Result<Trace> {
        if features.n() != self.layout.n {
            return Err(Error::config(format!(
                "feature planes are {0}x{0}, network expects {1}x{1}",
                features.n(),
                self.layout.n
            )));
        }
        self.trace_dense(features.to_dense())
    }

    /// Forward pass on a dense `7 x n x n` input.
    pub fn trace_dense(&self, input: Vec<f64>) -> Result<Trace> {
        let n = self.layout.n;
        let nn = n * n;
        if input.len() != NUM_PLANES * nn {
            return Err(Error::config(format!(
                "input has {} entries, expected {}",
                input.len(),
                NUM_PLANES * nn
            )));
        }
        let w = &self.params;
        let l = &self.layout;

        let conv1_pre = conv3x3(
            &input,
            NUM_PLANES,
            n,
            &w[l.off(CONV1_W)..],
            &w[l.off(CONV1_B)..],
        );
        let conv1: Vec<f64> = conv1_pre.iter().map(|&x| leaky(x)).collect();
        let conv2_pre = conv3x3(
            &conv1,
            CONV_CHANNELS,
            n,
            &w[l.off(CONV2_W)..],
            &w[l.off(CONV2_B)..],
        );
        let conv2: Vec<f64> = conv2_pre.iter().map(|&x| leaky(x)).collect();

        let h = n / 2;
        let mut pooled = vec![0.0; CONV_CHANNELS * h * h];
        let mut pool_src = vec![0usize; CONV_CHANNELS * h * h];
        for c in 0..CONV_CHANNELS {
            for i in 0..h {
                for j in 0..h {
                    let mut best = f64::NEG_INFINITY;
                    let mut src = 0;
                    for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let k = c * nn + (2 * i + di) * n + 2 * j + dj;
                        if conv2[k] > best {
                            best = conv2[k];
                            src = k;
                        }
                    }
                    let o = c * h * h + i * h + j;
                    pooled[o] = best;
                    pool_src[o] = src;
                }
            }
        }

        let flat = l.flat_width();
        let p1_pre = dense(
            &pooled,
            &w[l.off(P1_W)..],
            &w[l.off(P1_B)..],
            HIDDEN_1,
            flat,
        );
        let p1: Vec<f64> = p1_pre.iter().map(|&x| leaky(x)).collect();
        let p2_pre = dense(
            &p1,
            &w[l.off(P2_W)..],
            &w[l.off(P2_B)..],
            HIDDEN_2,
            HIDDEN_1,
        );
        let p2: Vec<f64> = p2_pre.iter().map(|&x| leaky(x)).collect();
        let logits_v = dense(&p2, &w[l.off(P3_W)..], &w[l.off(P3_B)..], 4, HIDDEN_2);

        let v1_pre = dense(
            &pooled,
            &w[l.off(V1_W)..],
            &w[l.off(V1_B)..],
            HIDDEN_1,
            flat,
        );
        let v1: Vec<f64> = v1_pre.iter().map(|&x| leaky(x)).collect();
        let v2_pre = dense(
            &v1,
            &w[l.off(V2_W)..],
            &w[l.off(V2_B)..],
            HIDDEN_2,
            HIDDEN_1,
        );
        let v2: Vec<f64> = v2_pre.iter().map(|&x| leaky(x)).collect();
        let value = dense(&v2, &w[l.off(V3_W)..], &w[l.off(V3_B)..], 1, HIDDEN_2)[0];

        let logits = [logits_v[0], logits_v[1], logits_v[2], logits_v[3]];
        let output = NetOutput {
            logits,
            policy: softmax(&logits),
            value,
        };
        Ok(Trace {
            input,
            conv1_pre,
            conv1,
            conv2_pre,
            conv2,
            pooled,
            pool_src,
            p1_pre,
            p1,
            p2_pre,
            p2,
            v1_pre,
            v1,
            v2_pre,
            v2,
            output,
        })
    }

    /// `(v - z)^2 - sum pi log p + c * ||theta||^2`
    pub fn loss(&self, output: &NetOutput, pi: &[f64; 4], z: f64, c_l2: f64) -> f64 {
        example_loss(output, pi, z) + c_l2 * self.squared_norm()
    }

    /// Mean loss over a batch.
    pub fn batch_loss(&self, batch: &[Sample<'_>], c_l2: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let mut total = 0.0;
        for s in batch {
            let out = self.forward(s.features)?;
            total += example_loss(&out, &s.pi, s.z);
        }
        Ok(total / batch.len() as f64 + c_l2 * self.squared_norm())
    }

    /// Exact gradient of the batch-mean loss.
    pub fn backward(&self, batch: &[Sample<'_>], c_l2: f64) -> Result<Gradients> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for s in batch {
            let tr = self.trace(s.features)?;
            loss += example_loss(&tr.output, &s.pi, s.z);
            self.accumulate(&tr, &s.pi, s.z, scale, &mut grad);
        }
        let norm = self.squared_norm();
        for (g, p) in grad.iter_mut().zip(&self.params) {
            *g += 2.0 * c_l2 * p.as_f64();
        }
        Ok(Gradients {
            values: grad,
            loss: loss * scale + c_l2 * norm,
        })
    }

    fn accumulate(&self, tr: &Trace, pi: &[f64; 4], z: f64, scale: f64, g: &mut [f64]) {
        let n = self.layout.n;
        let l = &self.layout;
        let w = &self.params;
        let flat = l.flat_width();
        let out = &tr.output;

        let pi_mass: f64 = pi.iter().sum();
        let d_logits: Vec<f64> = (0..4)
            .map(|k| (out.policy[k] * pi_mass - pi[k]) * scale)
            .collect();
        let d_value = [2.0 * (out.value - z) * scale];

        let mut d_pooled = vec![0.0; flat];
        // Policy head.
        let d_p2 = dense_back(
            &d_logits,
            &tr.p2,
            w,
            l.off(P3_W),
            l.off(P3_B),
            g,
            4,
            HIDDEN_2,
        );
        let d_p2_pre: Vec<f64> = d_p2
            .iter()
            .zip(&tr.p2_pre)
            .map(|(d, &x)| d * leaky_grad(x))
            .collect();
        let d_p1 = dense_back(
            &d_p2_pre,
            &tr.p1,
            w,
            l.off(P2_W),
            l.off(P2_B),
            g,
            HIDDEN_2,
            HIDDEN_1,
        );
        let d_p1_pre: Vec<f64> = d_p1
            .iter()
            .zip(&tr.p1_pre)
            .map(|(d, &x)| d * leaky_grad(x))
            .collect();
        let d_flat_p = dense_back(
            &d_p1_pre,
            &tr.pooled,
            w,
            l.off(P1_W),
            l.off(P1_B),
            g,
            HIDDEN_1,
            flat,
        );
        // Value head.
        let d_v2 = dense_back(
            &d_value,
            &tr.v2,
            w,
            l.off(V3_W),
            l.off(V3_B),
            g,
            1,
            HIDDEN_2,
        );
        let d_v2_pre: Vec<f64> = d_v2
            .iter()
            .zip(&tr.v2_pre)
            .map(|(d, &x)| d * leaky_grad(x))
            .collect();
        let d_v1 = dense_back(
            &d_v2_pre,
            &tr.v1,
            w,
            l.off(V2_W),
            l.off(V2_B),
            g,
            HIDDEN_2,
            HIDDEN_1,
        );
        let d_v1_pre: Vec<f64> = d_v1
            .iter()
            .zip(&tr.v1_pre)
            .map(|(d, &x)| d * leaky_grad(x))
            .collect();
        let d_flat_v = dense_back(
            &d_v1_pre,
            &tr.pooled,
            w,
            l.off(V1_W),
            l.off(V1_B),
            g,
            HIDDEN_1,
            flat,
        );
        for i in 0..flat {
            d_pooled[i] = d_flat_p[i] + d_flat_v[i];
        }

        let mut d_conv2 = vec![0.0; CONV_CHANNELS * n * n];
        for (o, &src) in tr.pool_src.iter().enumerate() {
            d_conv2[src] += d_pooled[o];
        }
        let d_conv2_pre: Vec<f64> = d_conv2
            .iter()
            .zip(&tr.conv2_pre)
            .map(|(d, &x)| d * leaky_grad(x))
            .collect();
        let d_conv1 = conv3x3_back(
            &d_conv2_pre,
            &tr.conv1,
            CONV_CHANNELS,
            n,
            w,
            l.off(CONV2_W),
            l.off(CONV2_B),
            g,
            true,
        );
        let d_conv1_pre: Vec<f64> = d_conv1
            .iter()
            .zip(&tr.conv1_pre)
            .map(|(d, &x)| d * leaky_grad(x))
            .collect();
        conv3x3_back(
            &d_conv1_pre,
            &tr.input,
            NUM_PLANES,
            n,
            w,
            l.off(CONV1_W),
            l.off(CONV1_B),
            g,
            false,
        );
    }

    /// Classical momentum: `buf <- momentum * buf + g; theta <- theta - lr * buf`.
    /// Nothing is modified when any gradient entry is non-finite.
    pub fn sgd_update(&mut self, grads: &[f64], lr: f64, momentum: f64) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::config(format!(
                "gradient has {} entries, network has {}",
                grads.len(),
                self.params.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient at parameter {i}"
            )));
        }
        for ((p, b), &g) in self
            .params
            .iter_mut()
            .zip(self.momentum.iter_mut())
            .zip(grads)
        {
            let buf = momentum * b.as_f64() + g;
            *b = T::from_f64(buf);
            *p = T::from_f64(p.as_f64() - lr * buf);
        }
        Ok(())
    }
}

/// Data terms of the loss for one example.
pub fn example_loss(out: &NetOutput, pi: &[f64; 4], z: f64) -> f64 {
    let m = out.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + out.logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    let mut ce = 0.0;
    for k in 0..4 {
        if pi[k] == 0.0 {
            continue;
        }
        let mut logp = out.logits[k] - lse;
        if logp < LOG_FLOOR.ln() {
            log::debug!("clamping log p({k}) = {logp}");
            logp = LOG_FLOOR.ln();
        }
        ce -= pi[k] * logp;
    }
    (out.value - z).powi(2) + ce
}

/// `out[o] = b[o] + sum_i w[o * inputs + i] * x[i]`
fn dense<T: Scalar>(x: &[f64], w: &[T], b: &[T], outputs: usize, inputs: usize) -> Vec<f64> {
    (0..outputs)
        .map(|o| {
            let row = &w[o * inputs..(o + 1) * inputs];
            let mut acc = b[o].as_f64();
            for (wi, xi) in row.iter().zip(x) {
                acc += wi.as_f64() * xi;
            }
            acc
        })
        .collect()
}

/// Accumulates weight/bias gradients of a dense layer and returns the
/// gradient with respect to its input.
#[allow(clippy::too_many_arguments)]
fn dense_back<T: Scalar>(
    d_out: &[f64],
    x: &[f64],
    w: &[T],
    w_off: usize,
    b_off: usize,
    g: &mut [f64],
    outputs: usize,
    inputs: usize,
) -> Vec<f64> {
    let mut d_x = vec![0.0; inputs];
    for o in 0..outputs {
        let d = d_out[o];
        if d == 0.0 {
            continue;
        }
        g[b_off + o] += d;
        let grow = &mut g[w_off + o * inputs..w_off + (o + 1) * inputs];
        for (gi, xi) in grow.iter_mut().zip(x) {
            *gi += d * xi;
        }
        let wrow = &w[w_off + o * inputs..w_off + (o + 1) * inputs];
        for (dxi, wi) in d_x.iter_mut().zip(wrow) {
            *dxi += d * wi.as_f64();
        }
    }
    d_x
}

/// 3x3 convolution, stride 1, zero padding 1, `CONV_CHANNELS` outputs.
/// Zero inputs are skipped, which makes the sparse binary first layer cheap.
fn conv3x3<T: Scalar>(x: &[f64], in_ch: usize, n: usize, w: &[T], b: &[T]) -> Vec<f64> {
    let nn = n * n;
    let mut out = vec![0.0; CONV_CHANNELS * nn];
    for co in 0..CONV_CHANNELS {
        let bias = b[co].as_f64();
        out[co * nn..(co + 1) * nn].fill(bias);
    }
    for ci in 0..in_ch {
        for r0 in 0..n {
            for c0 in 0..n {
                let xv = x[ci * nn + r0 * n + c0];
                if xv == 0.0 {
                    continue;
                }
                // Input (r0, c0) feeds output (r, c) through kernel tap
                // (r0 - r + 1, c0 - c + 1).
                for kr in 0..3 {
                    let r = r0 as isize - kr as isize + 1;
                    if r < 0 || r >= n as isize {
                        continue;
                    }
                    for kc in 0..3 {
                        let c = c0 as isize - kc as isize + 1;
                        if c < 0 || c >= n as isize {
                            continue;
                        }
                        let pos = r as usize * n + c as usize;
                        for co in 0..CONV_CHANNELS {
                            let wi = ((co * in_ch + ci) * 3 + kr) * 3 + kc;
                            out[co * nn + pos] += w[wi].as_f64() * xv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward of [`conv3x3`]. Returns the input gradient when `want_input`.
#[allow(clippy::too_many_arguments)]
fn conv3x3_back<T: Scalar>(
    d_out: &[f64],
    x: &[f64],
    in_ch: usize,
    n: usize,
    w: &[T],
    w_off: usize,
    b_off: usize,
    g: &mut [f64],
    want_input: bool,
) -> Vec<f64> {
    let nn = n * n;
    for co in 0..CONV_CHANNELS {
        g[b_off + co] += d_out[co * nn..(co + 1) * nn].iter().sum::<f64>();
    }
    let mut d_x = if want_input {
        vec![0.0; in_ch * nn]
    } else {
        Vec::new()
    };
    for ci in 0..in_ch {
        for r0 in 0..n {
            for c0 in 0..n {
                let xi = ci * nn + r0 * n + c0;
                let xv = x[xi];
                if xv == 0.0 && !want_input {
                    continue;
                }
                let mut dx = 0.0;
                for kr in 0..3 {
                    let r = r0 as isize - kr as isize + 1;
                    if r < 0 || r >= n as isize {
                        continue;
                    }
                    for kc in 0..3 {
                        let c = c0 as isize - kc as isize + 1;
                        if c < 0 || c >= n as isize {
                            continue;
                        }
                        let pos = r as usize * n + c as usize;
                        for co in 0..CONV_CHANNELS {
                            let d = d_out[co * nn + pos];
                            let wi = ((co * in_ch + ci) * 3 + kr) * 3 + kc;
                            g[w_off + wi] += d * xv;
                            dx += d * w[w_off + wi].as_f64();
                        }
                    }
                }
                if want_input {
                    d_x[xi] = dx;
                }
            }
        }
    }
    d_x
}

/// Result of comparing analytic gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    /// Perturbations that crossed a leaky-ReLU kink or changed a pooling
    /// argmax; the loss is not differentiable there, so they are skipped.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst_param: Option<usize>,
}

/// Denominator floor for the relative error, so parameters whose gradient
/// is pure rounding noise do not dominate.
pub const GRADCHECK_FLOOR: f64 = 1e-8;

fn activation_pattern(tr: &Trace) -> (Vec<bool>, Vec<usize>) {
    let signs = [
        &tr.conv1_pre,
        &tr.conv2_pre,
        &tr.p1_pre,
        &tr.p2_pre,
        &tr.v1_pre,
        &tr.v2_pre,
    ]
    .into_iter()
    .flat_map(|v| v.iter().map(|&x| x > 0.0))
    .collect();
    (signs, tr.pool_src.clone())
}

/// Fourth-order central-difference check of [`Network::backward`] at the
/// given parameter indices.
///
/// Loss differences are formed from per-example output differences rather
/// than by subtracting two full losses, which keeps the rounding error far
/// below the size of small gradients.
pub fn gradient_check(
    net: &Network<f64>,
    batch: &[Sample<'_>],
    c_l2: f64,
    indices: &[usize],
    eps: f64,
) -> Result<GradCheck> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let analytic = net.backward(batch, c_l2)?;
    let base: Vec<_> = batch
        .iter()
        .map(|s| net.trace(s.features).map(|t| activation_pattern(&t)))
        .collect::<Result<_>>()?;
    let mut probe = net.clone();
    let mut report = GradCheck {
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        worst_param: None,
    };
    for &i in indices {
        if i >= net.param_count() {
            return Err(Error::config(format!("parameter index {i} out of range")));
        }
        let theta = net.params[i];
        // Outputs at theta + k * eps for k = 1, -1, 2, -2.
        let mut outs: Vec<Vec<NetOutput>> = Vec::with_capacity(4);
        let mut smooth = true;
        for k in [1.0, -1.0, 2.0, -2.0] {
            probe.params[i] = theta + k * eps;
            let mut row = Vec::with_capacity(batch.len());
            for (s, pat) in batch.iter().zip(&base) {
                let tr = probe.trace(s.features)?;
                smooth &= activation_pattern(&tr) == *pat;
                row.push(tr.output);
            }
            outs.push(row);
        }
        probe.params[i] = theta;
        if !smooth {
            report.skipped += 1;
            continue;
        }
        let diff = |a: usize, b: usize, ka: f64, kb: f64| -> f64 {
            let mut d = 0.0;
            for (j, s) in batch.iter().enumerate() {
                d += data_loss_difference(&outs[a][j], &outs[b][j], &s.pi, s.z);
            }
            let (ta, tb) = (ka * eps, kb * eps);
            d / batch.len() as f64 + c_l2 * (ta - tb) * (2.0 * theta + ta + tb)
        };
        let d1 = diff(0, 1, 1.0, -1.0);
        let d2 = diff(2, 3, 2.0, -2.0);
        let numeric = (8.0 * d1 - d2) / (12.0 * eps);
        let a = analytic.values[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
        report.checked += 1;
        if report.worst_param.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_param = Some(i);
        }
    }
    Ok(report)
}

/// `example_loss(a) - example_loss(b)` without cancellation against the
/// loss magnitude (no log floor; callers use it away from saturation).
fn data_loss_difference(a: &NetOutput, b: &NetOutput, pi: &[f64; 4], z: f64) -> f64 {
    let value = (a.value - b.value) * (a.value + b.value - 2.0 * z);
    let ma = a.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mb = b.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sa: f64 = a.logits.iter().map(|l| (l - ma).exp()).sum();
    let sb: f64 = b.logits.iter().map(|l| (l - mb).exp()).sum();
    let lse_diff = (ma - mb) + (sa / sb).ln();
    let mut ce = 0.0;
    for k in 0..4 {
        ce -= pi[k] * ((a.logits[k] - b.logits[k]) - lse_diff);
    }
    value + ce
}

/// Search evaluator backed by a network.
pub struct NetworkEvaluator<'a, T> {
    net: &'a Network<T>,
    pub calls: u64,
}

impl<'a, T: Scalar> NetworkEvaluator<'a, T> {
    pub fn new(net: &'a Network<T>) -> Self {
        NetworkEvaluator { net, calls: 0 }
    }
}

impl<T: Scalar> Evaluator<GameState> for NetworkEvaluator<'_, T> {
    fn evaluate(&mut self, state: &GameState) -> Result<Evaluation> {
        self.calls += 1;
        let out = self.net.forward(&encode_features(state, self.net.n())?)?;
        Ok(Evaluation {
            policy: out.policy,
            value: out.value,
        })
    }
}
