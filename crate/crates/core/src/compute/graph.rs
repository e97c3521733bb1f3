//! Reverse-mode differentiation over a recorded tape of tensor operations.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles.
//! Parameters enter through [`Graph::param`]; only sets registered with
//! [`Graph::track`] receive gradients, so freezing a network is a matter of
//! not tracking its set.

use std::collections::{HashMap, HashSet};

use super::params::{GradMap, ParamSet};
use super::tensor::{matmul, matmul_nt, matmul_tn, softmax_rows, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Geometry of a 2-D convolution over an `N×C×H×W` batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

/// Statistics source for a batch-norm node.
#[derive(Clone, Debug)]
pub enum NormStats<'a> {
    /// Normalize with the statistics of the current batch.
    Batch,
    /// Normalize with stored running statistics.
    Running { mean: &'a [f64], var: &'a [f64] },
}

/// Pending running-statistics update produced by a training-mode batch-norm.
#[derive(Clone, Debug)]
pub struct StatUpdate {
    pub set: String,
    pub mean_name: String,
    pub var_name: String,
    pub momentum: f64,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param { set: String, name: String },
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Ln { x: Var, floor: f64 },
    Tanh(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    LeakyRelu(Var, f64),
    Elu(Var, f64),
    Softmax(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    LogMeanExp(Var),
    ConcatCols(Var, Var),
    PickCols { x: Var, idx: Vec<usize> },
    Reshape(Var),
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom, cols: Vec<f64> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, channels: usize, inner: usize, batch_stats: bool },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], keyed by parameter set and name.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    map: HashMap<(String, String), Tensor>,
}

impl Gradients {
    /// Gradients for every trainable parameter of `set`; parameters that did
    /// not influence the loss get zeros.
    pub fn for_set(&self, set: &ParamSet) -> GradMap {
        let grads = set
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(name, p)| {
                let g = self
                    .map
                    .get(&(set.tag().to_string(), name.to_string()))
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
                (name.to_string(), g)
            })
            .collect();
        GradMap { grads }
    }

    pub fn get(&self, set: &str, name: &str) -> Option<&Tensor> {
        self.map.get(&(set.to_string(), name.to_string()))
    }
}

/// Tape of recorded operations.
#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    tracked: HashSet<String>,
    recording: bool,
    stat_updates: Vec<StatUpdate>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(g: &Graph, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

fn matrix_dims(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape(format!("{what} expects a matrix, got {s:?}"))),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

impl Graph {
    /// A graph that records operations for a later backward pass.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), tracked: HashSet::new(), recording: true, stat_updates: Vec::new() }
    }

    /// A graph for evaluation only; `backward` on it is a usage error.
    pub fn inference() -> Self {
        Self { recording: false, ..Self::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Requests gradients for the trainable parameters of `set`.
    pub fn track(&mut self, set: &ParamSet) {
        self.tracked.insert(set.tag().to_string());
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn stat_updates(&self) -> &[StatUpdate] {
        &self.stat_updates
    }

    pub(crate) fn push_stat_update(&mut self, update: StatUpdate) {
        self.stat_updates.push(update);
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = self.recording && parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf (data, noise, labels).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Input, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A parameter leaf. Its current value is snapshotted into the tape.
    pub fn param(&mut self, set: &ParamSet, name: &str) -> Result<Var> {
        let p = set
            .get(name)
            .ok_or_else(|| Error::Usage(format!("parameter `{name}` missing from set `{}`", set.tag())))?;
        let needs_grad = self.recording && p.trainable && self.tracked.contains(set.tag());
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Param { set: set.tag().to_string(), name: name.to_string() },
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = matrix_dims(self.value(a), "matmul lhs")?;
        let (k2, m) = matrix_dims(self.value(b), "matmul rhs")?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul inner extents {k} vs {k2}")));
        }
        let out = matmul(self.value(a).data(), self.value(b).data(), n, k, m);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let w = self.value(x).row_len();
        if self.value(bias).len() != w {
            return Err(Error::Shape(format!("bias of {} values for rows of {w}", self.value(bias).len())));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(w) {
            row.iter_mut().zip(&b).for_each(|(o, bv)| *o += bv);
        }
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(self.value(a).shape().to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        self.push(out, Op::Exp(x), &[x])
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn ln(&mut self, x: Var, floor: f64) -> Var {
        let out = self.value(x).map(|v| v.max(floor).ln());
        self.push(out, Op::Ln { x, floor }, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    /// `ln σ(x)` computed without forming `σ(x)`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(log_sigmoid);
        self.push(out, Op::LogSigmoid(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn elu(&mut self, x: Var, alpha: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { alpha * v.exp_m1() });
        self.push(out, Op::Elu(x, alpha), &[x])
    }

    /// Softmax over the last axis of a matrix.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (n, m) = matrix_dims(self.value(x), "softmax")?;
        let out = softmax_rows(self.value(x).data(), m);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Softmax(x), &[x]))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(out, Op::Clamp { x, lo, hi }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Sums each row, giving an `N×1` column.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let w = t.row_len();
        let data: Vec<f64> = t.data().chunks(w).map(|r| r.iter().sum()).collect();
        let n = data.len();
        self.push(Tensor::new(vec![n, 1], data).expect("column"), Op::RowSum(x), &[x])
    }

    /// `ln( mean(exp(x)) )` over all entries, computed stably.
    pub fn log_mean_exp(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = t.data().iter().map(|v| (v - max).exp()).sum();
        let out = max + (s / t.len() as f64).ln();
        self.push(Tensor::scalar(out), Op::LogMeanExp(x), &[x])
    }

    /// Joins two matrices with the same number of rows side by side.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca) = matrix_dims(self.value(a), "concat lhs")?;
        let (n2, cb) = matrix_dims(self.value(b), "concat rhs")?;
        if n != n2 {
            return Err(Error::Shape(format!("concat rows {n} vs {n2}")));
        }
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(self.value(a).row(i));
            data.extend_from_slice(self.value(b).row(i));
        }
        Ok(self.push(Tensor::new(vec![n, ca + cb], data)?, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Picks `x[i, idx[i]]` from each row, giving an `N×1` column.
    pub fn pick_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, m) = matrix_dims(self.value(x), "pick")?;
        if idx.len() != n || idx.iter().any(|&j| j >= m) {
            return Err(Error::Shape(format!("pick indices do not fit {n}×{m}")));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| self.value(x).data()[i * m + j]).collect();
        Ok(self.push(Tensor::new(vec![n, 1], data)?, Op::PickCols { x, idx: idx.to_vec() }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// 2-D convolution of an `N×C×H×W` batch with `O×C×K×K` weights.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (batch, in_channels, height, width) = match self.shape(x) {
            [n, c, h, w] => (*n, *c, *h, *w),
            s => return Err(Error::Shape(format!("conv2d input must be N×C×H×W, got {s:?}"))),
        };
        let (out_channels, kernel) = match self.shape(w) {
            [o, c, k, k2] if *c == in_channels && k == k2 => (*o, *k),
            s => return Err(Error::Shape(format!("conv2d weight {s:?} does not fit {in_channels} input channels"))),
        };
        if self.value(b).len() != out_channels {
            return Err(Error::Shape("conv2d bias length".into()));
        }
        if height + 2 * pad < kernel || width + 2 * pad < kernel || stride == 0 {
            return Err(Error::Shape("conv2d kernel larger than padded input".into()));
        }
        let geom = ConvGeom { batch, in_channels, height, width, out_channels, kernel, stride, pad };
        let cols = im2col(self.value(x).data(), &geom);
        let positions = geom.positions();
        let rows = batch * positions;
        let mat = matmul_nt(&cols, self.value(w).data(), rows, out_channels, geom.patch());
        let bias = self.value(b).data();
        let mut out = vec![0.0; rows * out_channels];
        for n in 0..batch {
            for p in 0..positions {
                for o in 0..out_channels {
                    out[(n * out_channels + o) * positions + p] = mat[(n * positions + p) * out_channels + o] + bias[o];
                }
            }
        }
        let shape = vec![batch, out_channels, geom.out_height(), geom.out_width()];
        Ok(self.push(Tensor::new(shape, out)?, Op::Conv2d { x, w, b, geom, cols }, &[x, w, b]))
    }

    /// Batch normalization over the leading axis (and spatial axes for
    /// `N×C×H×W` input). Returns the output and, for batch statistics, the
    /// batch mean and biased variance per channel.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        stats: NormStats<'_>,
    ) -> Result<(Var, Option<(Vec<f64>, Vec<f64>)>)> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::Shape("batch norm needs a batch axis".into()));
        }
        let channels = shape[1];
        let inner: usize = shape[2..].iter().product();
        let count = (shape[0] * inner) as f64;
        if self.value(gamma).len() != channels || self.value(beta).len() != channels {
            return Err(Error::Shape("batch norm affine parameters".into()));
        }
        let xs = self.value(x).data();
        let channel_of = |i: usize| (i / inner) % channels;
        let (mean, var, batch_stats) = match stats {
            NormStats::Batch => {
                let mut mean = vec![0.0; channels];
                for (i, v) in xs.iter().enumerate() {
                    mean[channel_of(i)] += v;
                }
                mean.iter_mut().for_each(|m| *m /= count);
                let mut var = vec![0.0; channels];
                for (i, v) in xs.iter().enumerate() {
                    let c = channel_of(i);
                    var[c] += (v - mean[c]).powi(2);
                }
                var.iter_mut().for_each(|s| *s /= count);
                (mean, var, true)
            }
            NormStats::Running { mean, var } => {
                if mean.len() != channels || var.len() != channels {
                    return Err(Error::Shape("running statistics length".into()));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; xs.len()];
        let mut out = vec![0.0; xs.len()];
        for (i, v) in xs.iter().enumerate() {
            let c = channel_of(i);
            xhat[i] = (v - mean[c]) * inv_std[c];
            out[i] = g[c] * xhat[i] + bt[c];
        }
        let node = self.push(
            Tensor::new(shape, out)?,
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, channels, inner, batch_stats },
            &[x, gamma, beta],
        );
        Ok((node, batch_stats.then_some((mean, var))))
    }

    /// Runs reverse-mode differentiation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.recording {
            return Err(Error::Usage("backward on a graph that did not record a training forward pass".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage("loss node is not part of this graph".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!("loss must be scalar, got shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let y = node.value.data();
            match &node.op {
                Op::Input => {}
                Op::Param { set, name } => {
                    let t = Tensor::new(node.value.shape().to_vec(), dy)?;
                    out.map
                        .entry((set.clone(), name.clone()))
                        .and_modify(|acc| acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b))
                        .or_insert(t);
                }
                Op::MatMul(a, b) => {
                    let (n, k) = matrix_dims(self.value(*a), "matmul")?;
                    let m = self.value(*b).shape()[1];
                    if self.wants(*a) {
                        self.acc(&mut grads, *a, matmul_nt(&dy, self.value(*b).data(), n, k, m));
                    }
                    if self.wants(*b) {
                        self.acc(&mut grads, *b, matmul_tn(self.value(*a).data(), &dy, n, k, m));
                    }
                }
                Op::AddBias(x, bias) => {
                    let w = self.value(*bias).len();
                    if self.wants(*bias) {
                        let mut db = vec![0.0; w];
                        for row in dy.chunks(w) {
                            db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                        }
                        self.acc(&mut grads, *bias, db);
                    }
                    self.acc(&mut grads, *x, dy);
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, dy.clone());
                    self.acc(&mut grads, *b, dy);
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *b, dy.iter().map(|v| -v).collect());
                    self.acc(&mut grads, *a, dy);
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    if self.wants(*a) {
                        self.acc(&mut grads, *a, dy.iter().zip(bv).map(|(d, b)| d * b).collect());
                    }
                    if self.wants(*b) {
                        self.acc(&mut grads, *b, dy.iter().zip(av).map(|(d, a)| d * a).collect());
                    }
                }
                Op::Scale(x, c) => self.acc(&mut grads, *x, dy.iter().map(|d| d * c).collect()),
                Op::AddScalar(x) => self.acc(&mut grads, *x, dy),
                Op::Exp(x) => self.acc(&mut grads, *x, dy.iter().zip(y).map(|(d, e)| d * e).collect()),
                Op::Ln { x, floor } => {
                    let xv = self.value(*x).data();
                    let g = dy.iter().zip(xv).map(|(d, &v)| if v > *floor { d / v } else { 0.0 }).collect();
                    self.acc(&mut grads, *x, g);
                }
                Op::Tanh(x) => self.acc(&mut grads, *x, dy.iter().zip(y).map(|(d, t)| d * (1.0 - t * t)).collect()),
                Op::Sigmoid(x) => {
                    self.acc(&mut grads, *x, dy.iter().zip(y).map(|(d, s)| d * s * (1.0 - s)).collect())
                }
                Op::LogSigmoid(x) => {
                    let xv = self.value(*x).data();
                    self.acc(&mut grads, *x, dy.iter().zip(xv).map(|(d, &v)| d * sigmoid(-v)).collect());
                }
                Op::LeakyRelu(x, slope) => {
                    let xv = self.value(*x).data();
                    let g = dy.iter().zip(xv).map(|(d, &v)| if v > 0.0 { *d } else { d * slope }).collect();
                    self.acc(&mut grads, *x, g);
                }
                Op::Elu(x, alpha) => {
                    let xv = self.value(*x).data();
                    let g = dy
                        .iter()
                        .zip(xv)
                        .zip(y)
                        .map(|((d, &v), &o)| if v > 0.0 { *d } else { d * (o + alpha) })
                        .collect();
                    self.acc(&mut grads, *x, g);
                }
                Op::Softmax(x) => {
                    let m = node.value.shape()[1];
                    let mut g = vec![0.0; dy.len()];
                    for ((gr, dr), yr) in g.chunks_mut(m).zip(dy.chunks(m)).zip(y.chunks(m)) {
                        let dot: f64 = dr.iter().zip(yr).map(|(d, s)| d * s).sum();
                        for ((gv, d), s) in gr.iter_mut().zip(dr).zip(yr) {
                            *gv = s * (d - dot);
                        }
                    }
                    self.acc(&mut grads, *x, g);
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = self.value(*x).data();
                    let g = dy.iter().zip(xv).map(|(d, &v)| if v > *lo && v < *hi { *d } else { 0.0 }).collect();
                    self.acc(&mut grads, *x, g);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    self.acc(&mut grads, *x, vec![dy[0]; n]);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    self.acc(&mut grads, *x, vec![dy[0] / n as f64; n]);
                }
                Op::RowSum(x) => {
                    let w = self.value(*x).row_len();
                    let g = dy.iter().flat_map(|&d| std::iter::repeat(d).take(w)).collect();
                    self.acc(&mut grads, *x, g);
                }
                Op::LogMeanExp(x) => {
                    let xv = self.value(*x).data();
                    let n = xv.len() as f64;
                    let g = xv.iter().map(|v| dy[0] * (v - y[0]).exp() / n).collect();
                    self.acc(&mut grads, *x, g);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).row_len();
                    let w = node.value.row_len();
                    let mut ga = Vec::with_capacity(dy.len());
                    let mut gb = Vec::with_capacity(dy.len());
                    for row in dy.chunks(w) {
                        ga.extend_from_slice(&row[..ca]);
                        gb.extend_from_slice(&row[ca..]);
                    }
                    self.acc(&mut grads, *a, ga);
                    self.acc(&mut grads, *b, gb);
                }
                Op::PickCols { x, idx } => {
                    let m = self.value(*x).row_len();
                    let mut g = vec![0.0; self.value(*x).len()];
                    for (i, &j) in idx.iter().enumerate() {
                        g[i * m + j] = dy[i];
                    }
                    self.acc(&mut grads, *x, g);
                }
                Op::Reshape(x) => self.acc(&mut grads, *x, dy),
                Op::Conv2d { x, w, b, geom, cols } => {
                    let positions = geom.positions();
                    let rows = geom.batch * positions;
                    let oc = geom.out_channels;
                    let mut dmat = vec![0.0; rows * oc];
                    for n in 0..geom.batch {
                        for o in 0..oc {
                            for p in 0..positions {
                                dmat[(n * positions + p) * oc + o] = dy[(n * oc + o) * positions + p];
                            }
                        }
                    }
                    if self.wants(*b) {
                        let mut db = vec![0.0; oc];
                        for row in dmat.chunks(oc) {
                            db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                        }
                        self.acc(&mut grads, *b, db);
                    }
                    if self.wants(*w) {
                        self.acc(&mut grads, *w, matmul_tn(&dmat, cols, rows, oc, geom.patch()));
                    }
                    if self.wants(*x) {
                        let dcols = matmul(&dmat, self.value(*w).data(), rows, oc, geom.patch());
                        self.acc(&mut grads, *x, col2im(&dcols, geom));
                    }
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std, channels, inner, batch_stats } => {
                    let (channels, inner) = (*channels, *inner);
                    let g = self.value(*gamma).data();
                    let channel_of = |j: usize| (j / inner) % channels;
                    if self.wants(*beta) {
                        let mut db = vec![0.0; channels];
                        for (j, d) in dy.iter().enumerate() {
                            db[channel_of(j)] += d;
                        }
                        self.acc(&mut grads, *beta, db);
                    }
                    if self.wants(*gamma) {
                        let mut dg = vec![0.0; channels];
                        for (j, d) in dy.iter().enumerate() {
                            dg[channel_of(j)] += d * xhat[j];
                        }
                        self.acc(&mut grads, *gamma, dg);
                    }
                    if self.wants(*x) {
                        let mut dx = vec![0.0; dy.len()];
                        if *batch_stats {
                            let count = (dy.len() / channels) as f64;
                            let mut s1 = vec![0.0; channels];
                            let mut s2 = vec![0.0; channels];
                            for (j, d) in dy.iter().enumerate() {
                                let c = channel_of(j);
                                let dh = d * g[c];
                                s1[c] += dh;
                                s2[c] += dh * xhat[j];
                            }
                            for (j, d) in dy.iter().enumerate() {
                                let c = channel_of(j);
                                let dh = d * g[c];
                                dx[j] = inv_std[c] / count * (count * dh - s1[c] - xhat[j] * s2[c]);
                            }
                        } else {
                            for (j, d) in dy.iter().enumerate() {
                                let c = channel_of(j);
                                dx[j] = d * g[c] * inv_std[c];
                            }
                        }
                        self.acc(&mut grads, *x, dx);
                    }
                }
            }
        }
        Ok(out)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
    let patch = g.patch();
    let mut cols = vec![0.0; g.batch * oh * ow * patch];
    for n in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((n * oh + oy) * ow + ox) * patch;
                for c in 0..g.in_channels {
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix >= g.width as isize {
                                continue;
                            }
                            let src = ((n * g.in_channels + c) * g.height + iy as usize) * g.width + ix as usize;
                            cols[row + (c * k + ky) * k + kx] = x[src];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
    let patch = g.patch();
    let mut x = vec![0.0; g.batch * g.in_channels * g.height * g.width];
    for n in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((n * oh + oy) * ow + ox) * patch;
                for c in 0..g.in_channels {
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix >= g.width as isize {
                                continue;
                            }
                            let dst = ((n * g.in_channels + c) * g.height + iy as usize) * g.width + ix as usize;
                            x[dst] += cols[row + (c * k + ky) * k + kx];
                        }
                    }
                }
            }
        }
    }
    x
}
