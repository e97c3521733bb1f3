//! Layer descriptions and feed-forward stacks built from them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NormStats, StatUpdate, Var};
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One row of a layer table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    /// Fully connected layer; weights stored `fan_in × fan_out`.
    Affine { fan_in: usize, fan_out: usize },
    /// Convolution with "same"-style padding `(kernel - 1) / 2`.
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize },
    LeakyRelu { slope: f64 },
    Tanh,
    Elu { alpha: f64 },
    Sigmoid,
    Softmax,
    Flatten,
    BatchNorm { features: usize, momentum: f64, eps: f64 },
}

pub const DEFAULT_BN_MOMENTUM: f64 = 0.99;
pub const DEFAULT_BN_EPS: f64 = 1e-5;

impl LayerSpec {
    pub fn affine(fan_in: usize, fan_out: usize) -> Self {
        Self::Affine { fan_in, fan_out }
    }

    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self::Conv2d { in_channels, out_channels, kernel, stride }
    }

    pub fn batch_norm(features: usize) -> Self {
        Self::BatchNorm { features, momentum: DEFAULT_BN_MOMENTUM, eps: DEFAULT_BN_EPS }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Affine { .. } => "affine",
            Self::Conv2d { .. } => "conv2d",
            Self::LeakyRelu { .. } => "leaky-relu",
            Self::Tanh => "tanh",
            Self::Elu { .. } => "elu",
            Self::Sigmoid => "sigmoid",
            Self::Softmax => "softmax",
            Self::Flatten => "flatten",
            Self::BatchNorm { .. } => "batch-norm",
        }
    }

    fn has_params(&self) -> bool {
        matches!(self, Self::Affine { .. } | Self::Conv2d { .. } | Self::BatchNorm { .. })
    }

    /// Per-example output shape for a per-example input shape.
    fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            Self::Affine { fan_in, fan_out } => match input {
                [f] if *f == fan_in => Ok(vec![fan_out]),
                _ => Err(format!("expects [{fan_in}] input, got {input:?}")),
            },
            Self::Conv2d { in_channels, out_channels, kernel, stride } => match input {
                [c, h, w] if *c == in_channels => {
                    let pad = (kernel - 1) / 2;
                    if h + 2 * pad < kernel || w + 2 * pad < kernel || stride == 0 {
                        return Err(format!("kernel {kernel} does not fit {h}×{w}"));
                    }
                    Ok(vec![out_channels, (h + 2 * pad - kernel) / stride + 1, (w + 2 * pad - kernel) / stride + 1])
                }
                _ => Err(format!("expects [{in_channels}, H, W] input, got {input:?}")),
            },
            Self::Flatten => Ok(vec![input.iter().product()]),
            Self::BatchNorm { features, .. } => {
                if input.first() == Some(&features) {
                    Ok(input.to_vec())
                } else {
                    Err(format!("expects {features} features/channels, got {input:?}"))
                }
            }
            Self::Softmax => match input {
                [_] => Ok(input.to_vec()),
                _ => Err(format!("softmax expects a flat input, got {input:?}")),
            },
            _ => Ok(input.to_vec()),
        }
    }
}

/// How a forward pass treats batch-norm statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are queued for update.
    Train,
    /// Batch statistics; running statistics left untouched.
    TrainFrozenStats,
    /// Running statistics.
    Eval,
}

/// A named feed-forward stack. Parameters live in a [`ParamSet`] under
/// `"{name}.{layer index}.{weight|bias|gamma|beta|running_mean|running_var}"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub name: String,
    /// Per-example input shape, e.g. `[784]` or `[3, 28, 28]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl Network {
    pub fn new(name: impl Into<String>, input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        let net = Self { name: name.into(), input_shape, layers };
        net.output_shape()?;
        Ok(net)
    }

    fn layer_label(&self, i: usize) -> String {
        format!("{}.{} ({})", self.name, i, self.layers[i].kind())
    }

    /// Per-example output shape; fails naming the first inconsistent layer.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer.output_shape(&shape).map_err(|msg| Error::Config { layer: self.layer_label(i), msg })?;
        }
        Ok(shape)
    }

    pub fn output_width(&self) -> Result<usize> {
        Ok(self.output_shape()?.iter().product())
    }

    fn pname(&self, i: usize, what: &str) -> String {
        format!("{}.{i}.{what}", self.name)
    }

    /// Adds freshly initialized parameters for every layer: weights uniform in
    /// `±1/√fan_in`, biases zero, batch-norm scale one and shift zero.
    pub fn init_params<R: Rng>(&self, set: &mut ParamSet, rng: &mut R) {
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Affine { fan_in, fan_out } => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let w = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
                    set.insert(self.pname(i, "weight"), Tensor::new(vec![fan_in, fan_out], w).expect("shape"), true);
                    set.insert(self.pname(i, "bias"), Tensor::zeros(&[fan_out]), true);
                }
                LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                    let fan_in = in_channels * kernel * kernel;
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let w = (0..out_channels * fan_in).map(|_| rng.gen_range(-bound..bound)).collect();
                    let shape = vec![out_channels, in_channels, kernel, kernel];
                    set.insert(self.pname(i, "weight"), Tensor::new(shape, w).expect("shape"), true);
                    set.insert(self.pname(i, "bias"), Tensor::zeros(&[out_channels]), true);
                }
                LayerSpec::BatchNorm { features, .. } => {
                    set.insert(self.pname(i, "gamma"), Tensor::full(&[features], 1.0), true);
                    set.insert(self.pname(i, "beta"), Tensor::zeros(&[features]), true);
                    set.insert(self.pname(i, "running_mean"), Tensor::zeros(&[features]), false);
                    set.insert(self.pname(i, "running_var"), Tensor::full(&[features], 1.0), false);
                }
                _ => {}
            }
        }
    }

    /// Zeroes the weights and bias of the last parameterized layer.
    pub fn zero_last_layer(&self, set: &mut ParamSet) {
        if let Some(i) = self.layers.iter().rposition(LayerSpec::has_params) {
            set.zero_prefix(&format!("{}.{i}.", self.name));
        }
    }

    /// Runs the full stack.
    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: Var, mode: Mode) -> Result<Var> {
        self.forward_range(g, params, x, mode, self.layers.len())
    }

    /// Runs the stack but stops before a trailing sigmoid or softmax, giving
    /// logits for numerically stable losses.
    pub fn forward_logits(&self, g: &mut Graph, params: &ParamSet, x: Var, mode: Mode) -> Result<Var> {
        let end = match self.layers.last() {
            Some(LayerSpec::Sigmoid | LayerSpec::Softmax) => self.layers.len() - 1,
            _ => self.layers.len(),
        };
        self.forward_range(g, params, x, mode, end)
    }

    fn forward_range(&self, g: &mut Graph, params: &ParamSet, x: Var, mode: Mode, end: usize) -> Result<Var> {
        let batch = g.shape(x)[0];
        if g.shape(x)[1..] != self.input_shape[..] {
            return Err(Error::Config {
                layer: if self.layers.is_empty() { self.name.clone() } else { self.layer_label(0) },
                msg: format!("input shape {:?} does not match expected {:?}", &g.shape(x)[1..], self.input_shape),
            });
        }
        let mut h = x;
        for (i, layer) in self.layers[..end].iter().enumerate() {
            let cfg = |e: Error| Error::Config { layer: self.layer_label(i), msg: e.to_string() };
            h = match *layer {
                LayerSpec::Affine { .. } => {
                    let w = g.param(params, &self.pname(i, "weight"))?;
                    let b = g.param(params, &self.pname(i, "bias"))?;
                    let xw = g.matmul(h, w).map_err(cfg)?;
                    g.add_bias(xw, b).map_err(cfg)?
                }
                LayerSpec::Conv2d { kernel, stride, .. } => {
                    let w = g.param(params, &self.pname(i, "weight"))?;
                    let b = g.param(params, &self.pname(i, "bias"))?;
                    g.conv2d(h, w, b, stride, (kernel - 1) / 2).map_err(cfg)?
                }
                LayerSpec::LeakyRelu { slope } => g.leaky_relu(h, slope),
                LayerSpec::Tanh => g.tanh(h),
                LayerSpec::Elu { alpha } => g.elu(h, alpha),
                LayerSpec::Sigmoid => g.sigmoid(h),
                LayerSpec::Softmax => g.softmax(h).map_err(cfg)?,
                LayerSpec::Flatten => {
                    let width = g.value(h).row_len();
                    g.reshape(h, vec![batch, width]).map_err(cfg)?
                }
                LayerSpec::BatchNorm { momentum, eps, .. } => {
                    let gamma = g.param(params, &self.pname(i, "gamma"))?;
                    let beta = g.param(params, &self.pname(i, "beta"))?;
                    let mean_name = self.pname(i, "running_mean");
                    let var_name = self.pname(i, "running_var");
                    let (out, stats) = match mode {
                        Mode::Eval => {
                            let mean = params.value(&mean_name)?.data();
                            let var = params.value(&var_name)?.data();
                            g.batch_norm(h, gamma, beta, eps, NormStats::Running { mean, var }).map_err(cfg)?
                        }
                        _ => g.batch_norm(h, gamma, beta, eps, NormStats::Batch).map_err(cfg)?,
                    };
                    if let (Mode::Train, Some((batch_mean, batch_var))) = (mode, stats) {
                        g.push_stat_update(StatUpdate {
                            set: params.tag().to_string(),
                            mean_name,
                            var_name,
                            momentum,
                            batch_mean,
                            batch_var,
                        });
                    }
                    out
                }
            };
        }
        Ok(h)
    }

    /// Evaluation-mode forward pass outside any training graph.
    pub fn eval(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference();
        let xv = g.input(x.clone());
        let out = self.forward(&mut g, params, xv, Mode::Eval)?;
        Ok(g.value(out).clone())
    }
}
