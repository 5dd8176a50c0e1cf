//! A small deterministic feed-forward network engine.
//!
//! Networks are a declarative [`NetworkSpec`] (a layer list plus an input
//! shape) and a separate [`Parameters`] value holding the weights. Every
//! operation is a function of those values and explicit seeds, so two runs with
//! the same inputs produce bit-identical results.
//!
//! Layout conventions:
//! - batches are [`Matrix`] values with one flattened sample per row;
//! - image tensors flatten as `channel, row, column` (row-major);
//! - dense weights are `(out, in)` row-major, conv kernels
//!   `(out_channel, in_channel, ky, kx)`.

mod curve;
mod layers;
mod loss;
mod matrix;
mod train;

pub use curve::{read_curve_csv, write_curve_csv, LossCurve};
pub use loss::{loss_cross_entropy, loss_mse, LossKind, Targets, PROBABILITY_FLOOR};
pub use matrix::Matrix;
pub use train::{
    evaluate_loss, per_sample_losses, sgd_step, train, train_model, TrainConfig,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Shape;
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnetError {
    #[error("shape error{}: {message}", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    Shape {
        layer: Option<usize>,
        message: String,
    },
    #[error("loss became non-finite ({value}) in epoch {epoch}")]
    NonFiniteLoss { epoch: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl NnetError {
    pub(crate) fn shape(layer: Option<usize>, message: impl Into<String>) -> Self {
        NnetError::Shape {
            layer,
            message: message.into(),
        }
    }
}

pub type Result<T, E = NnetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Dense {
        #[serde(rename = "in")]
        inputs: usize,
        #[serde(rename = "out")]
        outputs: usize,
    },
    #[serde(rename = "conv2d")]
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    #[serde(rename = "max_pool2d")]
    MaxPool2d { window: usize, stride: usize },
    Activation { function: Activation },
    SoftmaxHead,
}

impl Layer {
    /// Output shape for `input`, or a description of the mismatch.
    fn output_shape(&self, input: Shape) -> std::result::Result<Shape, String> {
        match *self {
            Layer::Dense { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err("dense layer needs positive widths".into());
                }
                if input.len() != inputs {
                    return Err(format!("dense layer expects {inputs} inputs, got {input}"));
                }
                Ok(Shape::Flat(outputs))
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let Shape::Image {
                    channels,
                    height,
                    width,
                } = input
                else {
                    return Err(format!("conv2d needs an image input, got {input}"));
                };
                if kernel == 0 || stride == 0 || out_channels == 0 {
                    return Err("conv2d needs positive kernel, stride and channels".into());
                }
                if channels != in_channels {
                    return Err(format!(
                        "conv2d expects {in_channels} channels, got {channels}"
                    ));
                }
                if kernel > height || kernel > width {
                    return Err(format!("kernel {kernel} larger than input {input}"));
                }
                Ok(Shape::Image {
                    channels: out_channels,
                    height: (height - kernel) / stride + 1,
                    width: (width - kernel) / stride + 1,
                })
            }
            Layer::MaxPool2d { window, stride } => {
                let Shape::Image {
                    channels,
                    height,
                    width,
                } = input
                else {
                    return Err(format!("max_pool2d needs an image input, got {input}"));
                };
                if window == 0 || stride == 0 {
                    return Err("max_pool2d needs positive window and stride".into());
                }
                if window > height || window > width {
                    return Err(format!("window {window} larger than input {input}"));
                }
                Ok(Shape::Image {
                    channels,
                    height: (height - window) / stride + 1,
                    width: (width - window) / stride + 1,
                })
            }
            Layer::Activation { .. } | Layer::SoftmaxHead => Ok(input),
        }
    }

    /// `(weight count, bias count)`.
    fn parameter_shape(&self) -> (usize, usize) {
        match *self {
            Layer::Dense { inputs, outputs } => (inputs * outputs, outputs),
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (out_channels * in_channels * kernel * kernel, out_channels),
            _ => (0, 0),
        }
    }

    fn fans(&self) -> (usize, usize) {
        match *self {
            Layer::Dense { inputs, outputs } => (inputs, outputs),
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (in_channels * kernel * kernel, out_channels * kernel * kernel),
            _ => (0, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: Shape,
    pub layers: Vec<Layer>,
}

impl NetworkSpec {
    pub fn new(input_shape: Shape, layers: Vec<Layer>) -> Self {
        Self {
            input_shape,
            layers,
        }
    }

    /// `input -> Dense -> act -> ... -> Dense(classes) -> softmax`.
    pub fn dense_classifier(
        input_shape: Shape,
        hidden: &[usize],
        activation: Activation,
        classes: usize,
    ) -> Self {
        let mut layers = Vec::new();
        let mut width = input_shape.len();
        for &h in hidden {
            layers.push(Layer::Dense {
                inputs: width,
                outputs: h,
            });
            layers.push(Layer::Activation {
                function: activation,
            });
            width = h;
        }
        layers.push(Layer::Dense {
            inputs: width,
            outputs: classes,
        });
        layers.push(Layer::SoftmaxHead);
        Self::new(input_shape, layers)
    }

    /// Shape after every layer; `shapes[i]` is the output of layer `i`.
    pub fn layer_shapes(&self) -> Result<Vec<Shape>> {
        let mut shape = self.input_shape;
        if shape.is_empty() {
            return Err(NnetError::shape(None, "input shape has no features"));
        }
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer
                .output_shape(shape)
                .map_err(|m| NnetError::shape(Some(i), m))?;
            out.push(shape);
        }
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<Shape> {
        Ok(self.layer_shapes()?.last().copied().unwrap_or(self.input_shape))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let (w, b) = l.parameter_shape();
                w + b
            })
            .sum()
    }

    /// Checks the spec can be trained on `num_classes` labels with `loss`.
    ///
    /// The output width must equal `num_classes`; cross-entropy additionally
    /// requires a final [`Layer::SoftmaxHead`].
    pub fn check_classifier(&self, num_classes: usize, loss: LossKind) -> Result<()> {
        let out = self.output_shape()?;
        let last = self.layers.len().checked_sub(1);
        if out.len() != num_classes {
            return Err(NnetError::shape(
                last,
                format!("network emits {} outputs for {num_classes} classes", out.len()),
            ));
        }
        if loss == LossKind::CrossEntropy && self.layers.last() != Some(&Layer::SoftmaxHead) {
            return Err(NnetError::shape(
                last,
                "cross-entropy needs a softmax head as the final layer",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Trainable weights, one entry per layer (empty for parameter-free layers).
/// Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub layers: Vec<LayerParams>,
}

impl Parameters {
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.layer_shapes()?;
        Ok(Self {
            layers: spec
                .layers
                .iter()
                .map(|l| {
                    let (w, b) = l.parameter_shape();
                    LayerParams {
                        weights: vec![0.0; w],
                        bias: vec![0.0; b],
                    }
                })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All values, weights before biases, layer by layer.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn same_shape(&self, other: &Parameters) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.len() == b.weights.len() && a.bias.len() == b.bias.len())
    }

    pub(crate) fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layers.len() != spec.layers.len() {
            return Err(NnetError::shape(
                None,
                format!(
                    "parameters have {} layers, spec has {}",
                    self.layers.len(),
                    spec.layers.len()
                ),
            ));
        }
        for (i, (p, l)) in self.layers.iter().zip(&spec.layers).enumerate() {
            let (w, b) = l.parameter_shape();
            if p.weights.len() != w || p.bias.len() != b {
                return Err(NnetError::shape(
                    Some(i),
                    format!(
                        "expected {w} weights and {b} biases, found {} and {}",
                        p.weights.len(),
                        p.bias.len()
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases.
///
/// Each weighted layer draws from `±sqrt(6 / (fan_in + fan_out))`; for conv
/// layers the fans include the kernel area.
pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Parameters> {
    let mut params = Parameters::zeros(spec)?;
    let mut rng = rng::seeded(seed);
    for (layer, p) in spec.layers.iter().zip(params.layers.iter_mut()) {
        let (fan_in, fan_out) = layer.fans();
        if fan_in + fan_out == 0 {
            continue;
        }
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in p.weights.iter_mut() {
            *w = rng.random_range(-bound..=bound);
        }
    }
    Ok(params)
}

/// Forward pass over a batch (one flattened sample per row).
pub fn forward(params: &Parameters, spec: &NetworkSpec, batch: &Matrix) -> Result<Matrix> {
    layers::check_inputs(params, spec, batch)?;
    Ok(layers::run_forward(params, spec, batch, false).output())
}

/// Gradient of the mean batch loss with respect to every parameter.
pub fn backward(
    params: &Parameters,
    spec: &NetworkSpec,
    batch: &Matrix,
    targets: Targets<'_>,
    loss: LossKind,
) -> Result<Parameters> {
    Ok(loss_and_gradient(params, spec, batch, targets, loss)?.1)
}

/// Mean batch loss and its gradient from one forward/backward sweep.
pub fn loss_and_gradient(
    params: &Parameters,
    spec: &NetworkSpec,
    batch: &Matrix,
    targets: Targets<'_>,
    loss: LossKind,
) -> Result<(f64, Parameters)> {
    layers::check_inputs(params, spec, batch)?;
    let trace = layers::run_forward(params, spec, batch, true);
    let output = trace.output_ref();
    let (value, upstream) = loss::loss_and_output_gradient(loss, output, targets)?;
    let grads = layers::run_backward(params, spec, &trace, upstream);
    Ok((value, grads))
}
