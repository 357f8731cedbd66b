//! Batch normalization, a single-layer LSTM, and a fully connected head,
//! with exact gradients by backpropagation through time.
//!
//! Internally every batch is stored time-major: row `t * M + m` holds step
//! `t` of batch element `m`. LSTM gate blocks are ordered input, forget,
//! cell, output.

mod gradcheck;

pub use gradcheck::{grad_check, grad_check_with, GradCheckDims, GradCheckEntry, GradCheckReport, GRAD_CHECK_TOLERANCE};

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureLayout;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("cache does not match gradient: {0}")]
    StaleCache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl ModelDims {
    pub fn parameter_count(&self) -> usize {
        let (d, h, n) = (self.input, self.hidden, self.classes);
        2 * d + 4 * h * (d + h + 1) + n * (h + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(dim: usize) -> Self {
        BatchNormState {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `4H x D`
    pub w_ih: Array2<f64>,
    /// `4H x H`
    pub w_hh: Array2<f64>,
    /// `4H`
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcParams {
    /// `N x H`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub dims: ModelDims,
    pub layout: FeatureLayout,
    pub bn: BatchNormState,
    pub lstm: LstmParams,
    pub fc: FcParams,
}

/// Names of the trainable tensors, in [`ModelState::params`] order.
pub const PARAM_NAMES: [&str; 7] = ["bn.gamma", "bn.beta", "lstm.w_ih", "lstm.w_hh", "lstm.bias", "fc.weight", "fc.bias"];

/// Carried recurrent state of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCarry {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmCarry {
    pub fn zeros(hidden: usize) -> Self {
        LstmCarry { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

/// Intermediates of a forward pass needed by [`ModelState::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub batch: usize,
    pub steps: usize,
    pub mode: Mode,
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
    y: Array2<f64>,
    gates: Array2<f64>,
    c: Array2<f64>,
    tanh_c: Array2<f64>,
    h: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `M x T x N`
    pub logits: Array3<f64>,
    pub cache: ForwardCache,
    pub batch_mean: Array1<f64>,
    pub batch_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub bn_gamma: Array1<f64>,
    pub bn_beta: Array1<f64>,
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub lstm_bias: Array1<f64>,
    pub fc_weight: Array2<f64>,
    pub fc_bias: Array1<f64>,
    /// Gradient with respect to the `M x T x D` input.
    pub input: Array3<f64>,
}

impl ModelGrads {
    pub fn tensors(&self) -> [&[f64]; 7] {
        [
            self.bn_gamma.as_slice().unwrap(),
            self.bn_beta.as_slice().unwrap(),
            self.w_ih.as_slice().unwrap(),
            self.w_hh.as_slice().unwrap(),
            self.lstm_bias.as_slice().unwrap(),
            self.fc_weight.as_slice().unwrap(),
            self.fc_bias.as_slice().unwrap(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 7] {
        [
            self.bn_gamma.as_slice_mut().unwrap(),
            self.bn_beta.as_slice_mut().unwrap(),
            self.w_ih.as_slice_mut().unwrap(),
            self.w_hh.as_slice_mut().unwrap(),
            self.lstm_bias.as_slice_mut().unwrap(),
            self.fc_weight.as_slice_mut().unwrap(),
            self.fc_bias.as_slice_mut().unwrap(),
        ]
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Time-major `(T*M) x D` copy of an `M x T x D` batch.
fn to_time_major(x: &Array3<f64>) -> Array2<f64> {
    let (m, t, d) = x.dim();
    let mut out = Array2::zeros((t * m, d));
    for b in 0..m {
        for step in 0..t {
            out.row_mut(step * m + b).assign(&x.slice(s![b, step, ..]));
        }
    }
    out
}

fn from_time_major(flat: &Array2<f64>, m: usize, t: usize) -> Array3<f64> {
    let width = flat.ncols();
    let mut out = Array3::zeros((m, t, width));
    for b in 0..m {
        for step in 0..t {
            out.slice_mut(s![b, step, ..]).assign(&flat.row(step * m + b));
        }
    }
    out
}

impl ModelState {
    /// Uniform `[-1/sqrt(H), 1/sqrt(H)]` weights, zero biases except the
    /// forget gate at +1, identity batch normalization.
    pub fn new(dims: ModelDims, layout: FeatureLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dims.hidden as f64).sqrt();
        let mut uniform = |shape: (usize, usize)| Array2::from_shape_fn(shape, |_| rng.random_range(-bound..=bound));
        let h = dims.hidden;
        let w_ih = uniform((4 * h, dims.input));
        let w_hh = uniform((4 * h, h));
        let weight = uniform((dims.classes, h));
        let mut bias = Array1::zeros(4 * h);
        bias.slice_mut(s![h..2 * h]).fill(FORGET_BIAS);
        ModelState {
            dims,
            layout,
            bn: BatchNormState::new(dims.input),
            lstm: LstmParams { w_ih, w_hh, bias },
            fc: FcParams { weight, bias: Array1::zeros(dims.classes) },
        }
    }

    pub fn params(&self) -> [&[f64]; 7] {
        [
            self.bn.gamma.as_slice().unwrap(),
            self.bn.beta.as_slice().unwrap(),
            self.lstm.w_ih.as_slice().unwrap(),
            self.lstm.w_hh.as_slice().unwrap(),
            self.lstm.bias.as_slice().unwrap(),
            self.fc.weight.as_slice().unwrap(),
            self.fc.bias.as_slice().unwrap(),
        ]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 7] {
        [
            self.bn.gamma.as_slice_mut().unwrap(),
            self.bn.beta.as_slice_mut().unwrap(),
            self.lstm.w_ih.as_slice_mut().unwrap(),
            self.lstm.w_hh.as_slice_mut().unwrap(),
            self.lstm.bias.as_slice_mut().unwrap(),
            self.fc.weight.as_slice_mut().unwrap(),
            self.fc.bias.as_slice_mut().unwrap(),
        ]
    }

    /// Checks structural invariants (shapes, finiteness, running variance).
    pub fn validate(&self) -> Result<(), ModelError> {
        let ModelDims { input: d, hidden: h, classes: n } = self.dims;
        let checks = [
            (self.bn.gamma.len() == d && self.bn.beta.len() == d, "bn affine"),
            (self.bn.running_mean.len() == d && self.bn.running_var.len() == d, "bn running stats"),
            (self.lstm.w_ih.dim() == (4 * h, d), "lstm.w_ih"),
            (self.lstm.w_hh.dim() == (4 * h, h), "lstm.w_hh"),
            (self.lstm.bias.len() == 4 * h, "lstm.bias"),
            (self.fc.weight.dim() == (n, h), "fc.weight"),
            (self.fc.bias.len() == n, "fc.bias"),
            (self.layout.width() == d, "feature layout width"),
        ];
        for (ok, what) in checks {
            if !ok {
                return Err(ModelError::ShapeMismatch(what.to_string()));
            }
        }
        if self.bn.running_var.iter().any(|&v| v < 0.0) {
            return Err(ModelError::ShapeMismatch("negative running variance".into()));
        }
        if self.params().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(ModelError::ShapeMismatch("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Forward pass; in train mode the running statistics are updated.
    pub fn forward(&mut self, x: &Array3<f64>, mode: Mode) -> Result<(Array3<f64>, ForwardCache), ModelError> {
        let pass = self.forward_pure(x, mode)?;
        if mode == Mode::Train {
            self.update_running_stats(&pass.batch_mean, &pass.batch_var);
        }
        Ok((pass.logits, pass.cache))
    }

    pub fn update_running_stats(&mut self, mean: &Array1<f64>, var: &Array1<f64>) {
        let mom = self.bn.momentum;
        self.bn.running_mean.zip_mut_with(mean, |r, &b| *r = (1.0 - mom) * *r + mom * b);
        self.bn.running_var.zip_mut_with(var, |r, &b| *r = (1.0 - mom) * *r + mom * b);
    }

    /// Forward pass that leaves the state untouched.
    pub fn forward_pure(&self, x: &Array3<f64>, mode: Mode) -> Result<ForwardPass, ModelError> {
        let (m, t, d) = x.dim();
        if d != self.dims.input {
            return Err(ModelError::ShapeMismatch(format!("input width {d}, model expects {}", self.dims.input)));
        }
        if m == 0 || t == 0 {
            return Err(ModelError::ShapeMismatch("empty batch".into()));
        }
        let hsz = self.dims.hidden;
        let rows = m * t;
        let flat = to_time_major(x);

        // Batch normalization over the flattened batch x time axis.
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = flat.mean_axis(Axis(0)).unwrap();
                let mut var = Array1::zeros(d);
                for row in flat.rows() {
                    for j in 0..d {
                        var[j] += (row[j] - mean[j]).powi(2);
                    }
                }
                var /= rows as f64;
                (mean, var)
            }
            Mode::Eval => (self.bn.running_mean.clone(), self.bn.running_var.clone()),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.bn.eps).sqrt());
        let mut x_hat = flat;
        for mut row in x_hat.rows_mut() {
            for j in 0..d {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let mut y = x_hat.clone();
        for mut row in y.rows_mut() {
            for j in 0..d {
                row[j] = self.bn.gamma[j] * row[j] + self.bn.beta[j];
            }
        }

        // Input projections for every step at once, recurrence step by step.
        let mut gates = y.dot(&self.lstm.w_ih.t());
        gates += &self.lstm.bias;
        let mut c = Array2::<f64>::zeros((rows, hsz));
        let mut tanh_c = Array2::<f64>::zeros((rows, hsz));
        let mut h = Array2::<f64>::zeros((rows, hsz));
        for step in 0..t {
            let cur = step * m..(step + 1) * m;
            if step > 0 {
                let prev = (step - 1) * m..step * m;
                let h_prev = h.slice(s![prev.clone(), ..]);
                let mut g = gates.slice_mut(s![cur.clone(), ..]);
                general_mat_mul(1.0, &h_prev, &self.lstm.w_hh.t(), 1.0, &mut g);
            }
            for r in cur {
                let c_prev_row: Option<Vec<f64>> = if step > 0 { Some(c.row(r - m).to_vec()) } else { None };
                let mut g = gates.row_mut(r);
                let g = g.as_slice_mut().unwrap();
                let c_row = c.row_mut(r).into_slice().unwrap();
                let tc_row = tanh_c.row_mut(r).into_slice().unwrap();
                let h_row = h.row_mut(r).into_slice().unwrap();
                for j in 0..hsz {
                    let i_g = sigmoid(g[j]);
                    let f_g = sigmoid(g[hsz + j]);
                    let c_g = g[2 * hsz + j].tanh();
                    let o_g = sigmoid(g[3 * hsz + j]);
                    g[j] = i_g;
                    g[hsz + j] = f_g;
                    g[2 * hsz + j] = c_g;
                    g[3 * hsz + j] = o_g;
                    let cp = c_prev_row.as_ref().map_or(0.0, |v| v[j]);
                    let cv = f_g * cp + i_g * c_g;
                    c_row[j] = cv;
                    tc_row[j] = cv.tanh();
                    h_row[j] = o_g * tc_row[j];
                }
            }
        }
        let mut logits = h.dot(&self.fc.weight.t());
        logits += &self.fc.bias;
        Ok(ForwardPass {
            logits: from_time_major(&logits, m, t),
            cache: ForwardCache { batch: m, steps: t, mode, x_hat, inv_std, y, gates, c, tanh_c, h },
            batch_mean: mean,
            batch_var: var,
        })
    }

    /// Gradients of a scalar loss given `d loss / d logits`.
    pub fn backward(&self, cache: &ForwardCache, d_logits: &Array3<f64>) -> Result<ModelGrads, ModelError> {
        let (m, t) = (cache.batch, cache.steps);
        let n = self.dims.classes;
        if d_logits.dim() != (m, t, n) {
            return Err(ModelError::StaleCache(format!(
                "gradient shape {:?}, cache expects {:?}",
                d_logits.dim(),
                (m, t, n)
            )));
        }
        if cache.h.ncols() != self.dims.hidden || cache.y.ncols() != self.dims.input {
            return Err(ModelError::StaleCache("cache was produced by a different model".into()));
        }
        let hsz = self.dims.hidden;
        let d = self.dims.input;
        let rows = m * t;
        let dl = to_time_major(d_logits);

        let fc_weight = dl.t().dot(&cache.h);
        let fc_bias = dl.sum_axis(Axis(0));
        let dh_all = dl.dot(&self.fc.weight);

        let mut d_gates = Array2::<f64>::zeros((rows, 4 * hsz));
        let mut dh_next = Array2::<f64>::zeros((m, hsz));
        let mut dc_next = Array2::<f64>::zeros((m, hsz));
        for step in (0..t).rev() {
            for b in 0..m {
                let r = step * m + b;
                let g = cache.gates.row(r);
                let tc = cache.tanh_c.row(r);
                let dh_out = dh_all.row(r);
                let mut da = d_gates.row_mut(r);
                for j in 0..hsz {
                    let (i_g, f_g, c_g, o_g) = (g[j], g[hsz + j], g[2 * hsz + j], g[3 * hsz + j]);
                    let cp = if step > 0 { cache.c[(r - m, j)] } else { 0.0 };
                    let dh = dh_out[j] + dh_next[(b, j)];
                    let d_o = dh * tc[j];
                    let dc = dh * o_g * (1.0 - tc[j] * tc[j]) + dc_next[(b, j)];
                    da[j] = dc * c_g * i_g * (1.0 - i_g);
                    da[hsz + j] = dc * cp * f_g * (1.0 - f_g);
                    da[2 * hsz + j] = dc * i_g * (1.0 - c_g * c_g);
                    da[3 * hsz + j] = d_o * o_g * (1.0 - o_g);
                    dc_next[(b, j)] = dc * f_g;
                }
            }
            if step > 0 {
                let da_t = d_gates.slice(s![step * m..(step + 1) * m, ..]);
                general_mat_mul(1.0, &da_t, &self.lstm.w_hh, 0.0, &mut dh_next);
            }
        }
        let w_hh = if t > 1 {
            let da_later: ArrayView2<f64> = d_gates.slice(s![m.., ..]);
            let h_earlier: ArrayView2<f64> = cache.h.slice(s![..(t - 1) * m, ..]);
            da_later.t().dot(&h_earlier)
        } else {
            Array2::zeros((4 * hsz, hsz))
        };
        let w_ih = d_gates.t().dot(&cache.y);
        let lstm_bias = d_gates.sum_axis(Axis(0));
        let dy = d_gates.dot(&self.lstm.w_ih);

        let mut bn_gamma = Array1::zeros(d);
        let mut bn_beta = Array1::zeros(d);
        for (dy_row, xh_row) in dy.rows().into_iter().zip(cache.x_hat.rows()) {
            for j in 0..d {
                bn_gamma[j] += dy_row[j] * xh_row[j];
                bn_beta[j] += dy_row[j];
            }
        }
        let mut dx = Array2::<f64>::zeros((rows, d));
        match cache.mode {
            Mode::Train => {
                // dx = inv_std / n * (n * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
                let nf = rows as f64;
                let mut sum_dxh = Array1::<f64>::zeros(d);
                let mut sum_dxh_xh = Array1::<f64>::zeros(d);
                for (dy_row, xh_row) in dy.rows().into_iter().zip(cache.x_hat.rows()) {
                    for j in 0..d {
                        let dxh = dy_row[j] * self.bn.gamma[j];
                        sum_dxh[j] += dxh;
                        sum_dxh_xh[j] += dxh * xh_row[j];
                    }
                }
                for r in 0..rows {
                    for j in 0..d {
                        let dxh = dy[(r, j)] * self.bn.gamma[j];
                        dx[(r, j)] = cache.inv_std[j] / nf * (nf * dxh - sum_dxh[j] - cache.x_hat[(r, j)] * sum_dxh_xh[j]);
                    }
                }
            }
            Mode::Eval => {
                for r in 0..rows {
                    for j in 0..d {
                        dx[(r, j)] = dy[(r, j)] * self.bn.gamma[j] * cache.inv_std[j];
                    }
                }
            }
        }
        Ok(ModelGrads {
            bn_gamma,
            bn_beta,
            w_ih,
            w_hh,
            lstm_bias,
            fc_weight,
            fc_bias,
            input: from_time_major(&dx, m, t),
        })
    }

    /// One eval-mode step for a single stream. Shared by offline and
    /// streaming prediction so both produce bit-identical logits.
    pub fn step(&self, x: &[f64], carry: &mut LstmCarry) -> Vec<f64> {
        let d = self.dims.input;
        let hsz = self.dims.hidden;
        let y: Vec<f64> = (0..d)
            .map(|j| {
                let inv = 1.0 / (self.bn.running_var[j] + self.bn.eps).sqrt();
                self.bn.gamma[j] * (x[j] - self.bn.running_mean[j]) * inv + self.bn.beta[j]
            })
            .collect();
        let w_ih = self.lstm.w_ih.as_slice().unwrap();
        let w_hh = self.lstm.w_hh.as_slice().unwrap();
        let mut pre = vec![0.0; 4 * hsz];
        for (k, p) in pre.iter_mut().enumerate() {
            let wi = &w_ih[k * d..(k + 1) * d];
            let wh = &w_hh[k * hsz..(k + 1) * hsz];
            let mut acc = self.lstm.bias[k];
            for j in 0..d {
                acc += wi[j] * y[j];
            }
            for j in 0..hsz {
                acc += wh[j] * carry.h[j];
            }
            *p = acc;
        }
        for j in 0..hsz {
            let i_g = sigmoid(pre[j]);
            let f_g = sigmoid(pre[hsz + j]);
            let c_g = pre[2 * hsz + j].tanh();
            let o_g = sigmoid(pre[3 * hsz + j]);
            carry.c[j] = f_g * carry.c[j] + i_g * c_g;
            carry.h[j] = o_g * carry.c[j].tanh();
        }
        let fc = self.fc.weight.as_slice().unwrap();
        (0..self.dims.classes)
            .map(|k| {
                let w = &fc[k * hsz..(k + 1) * hsz];
                self.fc.bias[k] + w.iter().zip(&carry.h).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

/// Numerically stable softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean negative log-likelihood over all `M x T` positions and its
/// gradient `(softmax - onehot) / (M T)`.
pub fn nll_loss(logits: &Array3<f64>, labels: &Array2<usize>) -> Result<(f64, Array3<f64>), ModelError> {
    let (m, t, n) = logits.dim();
    if labels.dim() != (m, t) {
        return Err(ModelError::ShapeMismatch(format!("labels {:?} vs logits {:?}", labels.dim(), (m, t))));
    }
    let count = (m * t) as f64;
    let mut grad = Array3::zeros((m, t, n));
    let mut loss = 0.0;
    for b in 0..m {
        for step in 0..t {
            let label = labels[(b, step)];
            if label >= n {
                return Err(ModelError::LabelOutOfRange { label, classes: n });
            }
            let row = logits.slice(s![b, step, ..]);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
            let log_z = max + sum.ln();
            loss += log_z - row[label];
            for k in 0..n {
                let p = (row[k] - log_z).exp();
                grad[(b, step, k)] = (p - if k == label { 1.0 } else { 0.0 }) / count;
            }
        }
    }
    Ok((loss / count, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramewisePrediction {
    pub labels: Vec<usize>,
    pub probabilities: Vec<Vec<f64>>,
}

/// Eval-mode prediction over a whole sequence with the hidden state carried
/// from the first frame to the last.
pub fn predict_framewise(state: &ModelState, features: &[Vec<f64>]) -> FramewisePrediction {
    let mut carry = LstmCarry::zeros(state.dims.hidden);
    let mut labels = Vec::with_capacity(features.len());
    let mut probabilities = Vec::with_capacity(features.len());
    for x in features {
        let logits = state.step(x, &mut carry);
        labels.push(argmax(&logits));
        probabilities.push(softmax(&logits));
    }
    FramewisePrediction { labels, probabilities }
}
