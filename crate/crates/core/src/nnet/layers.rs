//! Forward and backward kernels for each layer kind.

use super::{Activation, Layer, LayerParams, Matrix, NetworkSpec, NnetError, Parameters, Result};
use crate::dataset::Shape;

/// Intermediate values of one forward pass.
pub(crate) struct Trace {
    /// `values[0]` is the input, `values[i + 1]` the output of layer `i`.
    /// Without `keep`, only the final output is retained.
    values: Vec<Matrix>,
    /// Per layer: flat input index chosen by each max-pool output cell.
    pool_argmax: Vec<Vec<usize>>,
}

impl Trace {
    pub(crate) fn output(mut self) -> Matrix {
        self.values.pop().expect("trace holds at least the input")
    }

    pub(crate) fn output_ref(&self) -> &Matrix {
        self.values.last().expect("trace holds at least the input")
    }
}

pub(crate) fn check_inputs(params: &Parameters, spec: &NetworkSpec, batch: &Matrix) -> Result<()> {
    spec.layer_shapes()?;
    params.check_against(spec)?;
    if batch.cols() != spec.input_shape.len() {
        return Err(NnetError::shape(
            None,
            format!(
                "batch rows have {} features, network input is {}",
                batch.cols(),
                spec.input_shape
            ),
        ));
    }
    Ok(())
}

fn image_dims(shape: Shape) -> (usize, usize, usize) {
    match shape {
        Shape::Image {
            channels,
            height,
            width,
        } => (channels, height, width),
        Shape::Flat(_) => unreachable!("spec validation guarantees image input"),
    }
}

/// Runs the network. Callers validate shapes first via [`check_inputs`].
pub(crate) fn run_forward(params: &Parameters, spec: &NetworkSpec, batch: &Matrix, keep: bool) -> Trace {
    let shapes = spec.layer_shapes().expect("validated spec");
    let mut values = vec![batch.clone()];
    let mut pool_argmax = vec![Vec::new(); spec.layers.len()];
    let mut in_shape = spec.input_shape;
    for (i, layer) in spec.layers.iter().enumerate() {
        let x = values.last().expect("non-empty");
        let p = &params.layers[i];
        let y = match *layer {
            Layer::Dense { outputs, .. } => dense_forward(x, p, outputs),
            Layer::Conv2d {
                out_channels,
                kernel,
                stride,
                ..
            } => conv_forward(x, p, image_dims(in_shape), out_channels, kernel, stride, image_dims(shapes[i])),
            Layer::MaxPool2d { window, stride } => {
                let (y, arg) = pool_forward(x, image_dims(in_shape), window, stride, image_dims(shapes[i]));
                if keep {
                    pool_argmax[i] = arg;
                }
                y
            }
            Layer::Activation { function } => activation_forward(x, function),
            Layer::SoftmaxHead => softmax_forward(x),
        };
        if keep {
            values.push(y);
        } else {
            values[0] = y;
        }
        in_shape = shapes[i];
    }
    Trace { values, pool_argmax }
}

/// Backpropagates `upstream` (d loss / d output) through a kept trace.
pub(crate) fn run_backward(params: &Parameters, spec: &NetworkSpec, trace: &Trace, upstream: Matrix) -> Parameters {
    let shapes = spec.layer_shapes().expect("validated spec");
    let mut grads = Parameters::zeros(spec).expect("validated spec");
    let mut g = upstream;
    for (i, layer) in spec.layers.iter().enumerate().rev() {
        let x = &trace.values[i];
        let y = &trace.values[i + 1];
        let in_shape = if i == 0 { spec.input_shape } else { shapes[i - 1] };
        let need_dx = i > 0;
        let p = &params.layers[i];
        let grad = &mut grads.layers[i];
        let dx = match *layer {
            Layer::Dense { .. } => dense_backward(x, p, &g, grad, need_dx),
            Layer::Conv2d { kernel, stride, .. } => conv_backward(
                x,
                p,
                &g,
                grad,
                image_dims(in_shape),
                kernel,
                stride,
                image_dims(shapes[i]),
                need_dx,
            ),
            Layer::MaxPool2d { .. } => pool_backward(x, &g, &trace.pool_argmax[i]),
            Layer::Activation { function } => activation_backward(y, &g, function),
            Layer::SoftmaxHead => softmax_backward(y, &g),
        };
        if !need_dx {
            break;
        }
        g = dx.expect("dx requested");
    }
    grads
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dense_forward(x: &Matrix, p: &LayerParams, outputs: usize) -> Matrix {
    let inputs = x.cols();
    let mut y = Matrix::zeros(x.rows(), outputs);
    for r in 0..x.rows() {
        let xr = x.row(r);
        for (o, out) in y.row_mut(r).iter_mut().enumerate() {
            *out = p.bias[o] + dot(&p.weights[o * inputs..(o + 1) * inputs], xr);
        }
    }
    y
}

fn dense_backward(x: &Matrix, p: &LayerParams, g: &Matrix, grad: &mut LayerParams, need_dx: bool) -> Option<Matrix> {
    let inputs = x.cols();
    let mut dx = need_dx.then(|| Matrix::zeros(x.rows(), inputs));
    for r in 0..x.rows() {
        let xr = x.row(r);
        for (o, &go) in g.row(r).iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            grad.bias[o] += go;
            axpy(&mut grad.weights[o * inputs..(o + 1) * inputs], go, xr);
            if let Some(dx) = dx.as_mut() {
                axpy(dx.row_mut(r), go, &p.weights[o * inputs..(o + 1) * inputs]);
            }
        }
    }
    dx
}

fn conv_forward(
    x: &Matrix,
    p: &LayerParams,
    (channels, height, width): (usize, usize, usize),
    out_channels: usize,
    kernel: usize,
    stride: usize,
    (_, out_h, out_w): (usize, usize, usize),
) -> Matrix {
    let mut y = Matrix::zeros(x.rows(), out_channels * out_h * out_w);
    for r in 0..x.rows() {
        let xr = x.row(r);
        let yr = y.row_mut(r);
        for oc in 0..out_channels {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = p.bias[oc];
                    for ic in 0..channels {
                        for ky in 0..kernel {
                            let w_row = ((oc * channels + ic) * kernel + ky) * kernel;
                            let x_row = ic * height * width + (oy * stride + ky) * width + ox * stride;
                            acc += dot(&p.weights[w_row..w_row + kernel], &xr[x_row..x_row + kernel]);
                        }
                    }
                    yr[(oc * out_h + oy) * out_w + ox] = acc;
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &Matrix,
    p: &LayerParams,
    g: &Matrix,
    grad: &mut LayerParams,
    (channels, height, width): (usize, usize, usize),
    kernel: usize,
    stride: usize,
    (out_channels, out_h, out_w): (usize, usize, usize),
    need_dx: bool,
) -> Option<Matrix> {
    let mut dx = need_dx.then(|| Matrix::zeros(x.rows(), x.cols()));
    for r in 0..x.rows() {
        let xr = x.row(r);
        let gr = g.row(r);
        for oc in 0..out_channels {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let go = gr[(oc * out_h + oy) * out_w + ox];
                    if go == 0.0 {
                        continue;
                    }
                    grad.bias[oc] += go;
                    for ic in 0..channels {
                        for ky in 0..kernel {
                            let w_row = ((oc * channels + ic) * kernel + ky) * kernel;
                            let x_row = ic * height * width + (oy * stride + ky) * width + ox * stride;
                            axpy(&mut grad.weights[w_row..w_row + kernel], go, &xr[x_row..x_row + kernel]);
                            if let Some(dx) = dx.as_mut() {
                                axpy(
                                    &mut dx.row_mut(r)[x_row..x_row + kernel],
                                    go,
                                    &p.weights[w_row..w_row + kernel],
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Ties go to the first maximal element in row-major window order.
fn pool_forward(
    x: &Matrix,
    (channels, height, width): (usize, usize, usize),
    window: usize,
    stride: usize,
    (_, out_h, out_w): (usize, usize, usize),
) -> (Matrix, Vec<usize>) {
    let cells = channels * out_h * out_w;
    let mut y = Matrix::zeros(x.rows(), cells);
    let mut argmax = Vec::with_capacity(x.rows() * cells);
    for r in 0..x.rows() {
        let xr = x.row(r);
        let yr = y.row_mut(r);
        for c in 0..channels {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut best = c * height * width + (oy * stride) * width + ox * stride;
                    for ky in 0..window {
                        for kx in 0..window {
                            let idx = c * height * width + (oy * stride + ky) * width + ox * stride + kx;
                            if xr[idx] > xr[best] {
                                best = idx;
                            }
                        }
                    }
                    yr[(c * out_h + oy) * out_w + ox] = xr[best];
                    argmax.push(best);
                }
            }
        }
    }
    (y, argmax)
}

fn pool_backward(x: &Matrix, g: &Matrix, argmax: &[usize]) -> Option<Matrix> {
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    let cells = g.cols();
    for r in 0..x.rows() {
        let gr = g.row(r);
        let dxr = dx.row_mut(r);
        for (cell, &go) in gr.iter().enumerate() {
            dxr[argmax[r * cells + cell]] += go;
        }
    }
    Some(dx)
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn activation_forward(x: &Matrix, function: Activation) -> Matrix {
    let f: fn(f64) -> f64 = match function {
        Activation::Relu => |v| v.max(0.0),
        Activation::Sigmoid => sigmoid,
        Activation::Tanh => f64::tanh,
    };
    Matrix::from_vec(x.rows(), x.cols(), x.as_slice().iter().map(|&v| f(v)).collect())
}

/// Derivatives are taken from the layer output.
fn activation_backward(y: &Matrix, g: &Matrix, function: Activation) -> Option<Matrix> {
    let d: fn(f64) -> f64 = match function {
        Activation::Relu => |y| if y > 0.0 { 1.0 } else { 0.0 },
        Activation::Sigmoid => |y| y * (1.0 - y),
        Activation::Tanh => |y| 1.0 - y * y,
    };
    let data = y
        .as_slice()
        .iter()
        .zip(g.as_slice())
        .map(|(&yv, &gv)| gv * d(yv))
        .collect();
    Some(Matrix::from_vec(y.rows(), y.cols(), data))
}

fn softmax_forward(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    for r in 0..y.rows() {
        let row = y.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    y
}

fn softmax_backward(y: &Matrix, g: &Matrix) -> Option<Matrix> {
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let yr = y.row(r);
        let gr = g.row(r);
        let inner = dot(yr, gr);
        for ((d, &yv), &gv) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
            *d = yv * (gv - inner);
        }
    }
    Some(dx)
}
