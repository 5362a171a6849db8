//! Layer vocabulary for 1D-CNN classifiers: Conv1D, Dense, ReLU, MaxPool1D,
//! Flatten. Each layer owns its parameters, accumulated parameter gradients,
//! and the forward cache its backward pass needs.
//!
//! Runtime tensors carry the batch as dimension 0; the static shape algebra
//! in [`LayerSpec::output_shape`] works on per-sample shapes (no batch dim).

use serde::{Deserialize, Serialize};

use super::NnError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    MaxPool1d {
        /// Pooling window; stride equals the window, ragged tail dropped.
        window: usize,
    },
    Flatten,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "Conv1d",
            LayerSpec::Dense { .. } => "Dense",
            LayerSpec::Relu => "Relu",
            LayerSpec::MaxPool1d { .. } => "MaxPool1d",
            LayerSpec::Flatten => "Flatten",
        }
    }

    /// Number of trainable scalars (weight + bias).
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => out_channels * in_channels * kernel_size + out_channels,
            LayerSpec::Dense {
                in_features,
                out_features,
            } => out_features * in_features + out_features,
            _ => 0,
        }
    }

    /// Static shape algebra on per-sample shapes.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
            } => {
                let [c, l] = two_dims(input)?;
                if c != in_channels {
                    return Err(NnError::shape(
                        format!("[{in_channels}, len]"),
                        format!("{input:?}"),
                    ));
                }
                let padded = l + 2 * padding;
                if padded < kernel_size {
                    return Err(NnError::shape(
                        format!("length + 2*{padding} >= kernel {kernel_size}"),
                        format!("length {l}"),
                    ));
                }
                let out_len = (padded - kernel_size) / stride + 1;
                Ok(vec![out_channels, out_len])
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                if input.len() != 1 || input[0] != in_features {
                    return Err(NnError::shape(
                        format!("[{in_features}]"),
                        format!("{input:?}"),
                    ));
                }
                Ok(vec![out_features])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool1d { window } => {
                let [c, l] = two_dims(input)?;
                let out_len = l / window;
                if out_len == 0 {
                    return Err(NnError::shape(
                        format!("length >= pool window {window}"),
                        format!("length {l}"),
                    ));
                }
                Ok(vec![c, out_len])
            }
            LayerSpec::Flatten => {
                if input.is_empty() {
                    return Err(NnError::shape("at least 1 dim", "0 dims"));
                }
                Ok(vec![input.iter().product()])
            }
        }
    }
}

fn two_dims(shape: &[usize]) -> Result<[usize; 2], NnError> {
    if shape.len() != 2 {
        return Err(NnError::shape(
            "[channels, length]",
            format!("{shape:?}"),
        ));
    }
    Ok([shape[0], shape[1]])
}

/// Forward cache; valid only between a forward and its matching backward.
#[derive(Debug, Clone)]
enum Cache {
    Conv { input: Tensor },
    Dense { input: Tensor },
    Relu { positive: Vec<bool> },
    MaxPool { input_shape: Vec<usize>, argmax: Vec<usize> },
    Flatten { input_shape: Vec<usize> },
}

/// A layer with its parameters, gradient accumulators and forward cache.
#[derive(Debug, Clone)]
pub struct Layer {
    spec: LayerSpec,
    weight: Option<Tensor>,
    bias: Option<Tensor>,
    grad_weight: Option<Tensor>,
    grad_bias: Option<Tensor>,
    cache: Option<Cache>,
}

impl Layer {
    /// Builds the layer with zeroed parameters of the spec's shapes.
    pub fn new(spec: LayerSpec) -> Self {
        let (weight, bias) = match spec {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => (
                Some(Tensor::zeros(vec![out_channels, in_channels, kernel_size])),
                Some(Tensor::zeros(vec![out_channels])),
            ),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => (
                Some(Tensor::zeros(vec![out_features, in_features])),
                Some(Tensor::zeros(vec![out_features])),
            ),
            _ => (None, None),
        };
        let grad_weight = weight.as_ref().map(|w| Tensor::zeros(w.shape().to_vec()));
        let grad_bias = bias.as_ref().map(|b| Tensor::zeros(b.shape().to_vec()));
        Layer {
            spec,
            weight,
            bias,
            grad_weight,
            grad_bias,
            cache: None,
        }
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn weight(&self) -> Option<&Tensor> {
        self.weight.as_ref()
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    pub fn weight_mut(&mut self) -> Option<&mut Tensor> {
        self.weight.as_mut()
    }

    pub fn bias_mut(&mut self) -> Option<&mut Tensor> {
        self.bias.as_mut()
    }

    pub fn grad_weight(&self) -> Option<&Tensor> {
        self.grad_weight.as_ref()
    }

    pub fn grad_bias(&self) -> Option<&Tensor> {
        self.grad_bias.as_ref()
    }

    /// Mutable (param, grad) pairs in weight-then-bias order, for optimizers.
    pub fn params_and_grads(&mut self) -> Vec<(&mut Tensor, &Tensor)> {
        let mut out = Vec::new();
        if let (Some(w), Some(gw)) = (self.weight.as_mut(), self.grad_weight.as_ref()) {
            out.push((w, gw));
        }
        if let (Some(b), Some(gb)) = (self.bias.as_mut(), self.grad_bias.as_ref()) {
            out.push((b, gb));
        }
        out
    }

    pub fn zero_grads(&mut self) {
        if let Some(g) = self.grad_weight.as_mut() {
            g.fill(0.0);
        }
        if let Some(g) = self.grad_bias.as_mut() {
            g.fill(0.0);
        }
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// Forward pass, populating the cache for the matching backward.
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor, NnError> {
        let (out, cache) = compute_forward(&self.spec, self.weight.as_ref(), self.bias.as_ref(), input)?;
        self.cache = Some(cache);
        Ok(out)
    }

    /// Forward pass without caching; usable for read-only evaluation.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor, NnError> {
        compute_forward(&self.spec, self.weight.as_ref(), self.bias.as_ref(), input)
            .map(|(out, _)| out)
    }

    /// Backward pass: consumes the cache, accumulates parameter gradients,
    /// returns the gradient with respect to the forward input.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor, NnError> {
        let cache = self.cache.take().ok_or(NnError::MissingCache)?;
        match (&self.spec, cache) {
            (
                &LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel_size,
                    stride,
                    padding,
                },
                Cache::Conv { input },
            ) => conv1d_backward(
                &input,
                grad_out,
                self.weight.as_ref().unwrap(),
                self.grad_weight.as_mut().unwrap(),
                self.grad_bias.as_mut().unwrap(),
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
            ),
            (&LayerSpec::Dense { in_features, out_features }, Cache::Dense { input }) => {
                dense_backward(
                    &input,
                    grad_out,
                    self.weight.as_ref().unwrap(),
                    self.grad_weight.as_mut().unwrap(),
                    self.grad_bias.as_mut().unwrap(),
                    in_features,
                    out_features,
                )
            }
            (LayerSpec::Relu, Cache::Relu { positive }) => {
                if grad_out.numel() != positive.len() {
                    return Err(NnError::shape(
                        format!("{} elements", positive.len()),
                        format!("{} elements", grad_out.numel()),
                    ));
                }
                let data = grad_out
                    .data()
                    .iter()
                    .zip(&positive)
                    .map(|(&g, &p)| if p { g } else { 0.0 })
                    .collect();
                Tensor::new(grad_out.shape().to_vec(), data).map_err(|e| {
                    NnError::ParamMismatch(e.to_string())
                })
            }
            (LayerSpec::MaxPool1d { .. }, Cache::MaxPool { input_shape, argmax }) => {
                if grad_out.numel() != argmax.len() {
                    return Err(NnError::shape(
                        format!("{} pooled elements", argmax.len()),
                        format!("{} elements", grad_out.numel()),
                    ));
                }
                let mut grad_in = Tensor::zeros(input_shape);
                let gi = grad_in.data_mut();
                for (&src, &g) in argmax.iter().zip(grad_out.data()) {
                    gi[src] += g;
                }
                Ok(grad_in)
            }
            (LayerSpec::Flatten, Cache::Flatten { input_shape }) => {
                let expected: usize = input_shape.iter().product();
                if grad_out.numel() != expected {
                    return Err(NnError::shape(
                        format!("{expected} elements"),
                        format!("{} elements", grad_out.numel()),
                    ));
                }
                grad_out
                    .clone()
                    .reshape(input_shape)
                    .map_err(|e| NnError::ParamMismatch(e.to_string()))
            }
            _ => Err(NnError::MissingCache),
        }
    }
}

fn compute_forward(
    spec: &LayerSpec,
    weight: Option<&Tensor>,
    bias: Option<&Tensor>,
    input: &Tensor,
) -> Result<(Tensor, Cache), NnError> {
    match *spec {
        LayerSpec::Conv1d {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
        } => {
            let out = conv1d_forward(
                input,
                weight.unwrap(),
                bias.unwrap(),
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
            )?;
            Ok((out, Cache::Conv { input: input.clone() }))
        }
        LayerSpec::Dense {
            in_features,
            out_features,
        } => {
            let out = dense_forward(input, weight.unwrap(), bias.unwrap(), in_features, out_features)?;
            Ok((out, Cache::Dense { input: input.clone() }))
        }
        LayerSpec::Relu => {
            let positive: Vec<bool> = input.data().iter().map(|&x| x > 0.0).collect();
            let data = input.data().iter().map(|&x| x.max(0.0)).collect();
            let out = Tensor::new(input.shape().to_vec(), data).expect("same shape");
            Ok((out, Cache::Relu { positive }))
        }
        LayerSpec::MaxPool1d { window } => {
            let (out, argmax) = maxpool1d_forward(input, window)?;
            Ok((
                out,
                Cache::MaxPool {
                    input_shape: input.shape().to_vec(),
                    argmax,
                },
            ))
        }
        LayerSpec::Flatten => {
            let shape = input.shape();
            if shape.len() < 2 {
                return Err(NnError::shape("[batch, ...]", format!("{shape:?}")));
            }
            let batch = shape[0];
            let rest: usize = shape[1..].iter().product();
            let out = input
                .clone()
                .reshape(vec![batch, rest])
                .expect("same element count");
            Ok((
                out,
                Cache::Flatten {
                    input_shape: shape.to_vec(),
                },
            ))
        }
    }
}

/// Valid output index range for a kernel offset: all `i` with
/// `0 <= i*stride + kk - padding < input_len`.
fn conv_span(out_len: usize, input_len: usize, stride: usize, padding: usize, kk: usize) -> (usize, usize) {
    let lo = if kk >= padding {
        0
    } else {
        (padding - kk).div_ceil(stride)
    };
    let hi = if kk > input_len - 1 + padding {
        0
    } else {
        (input_len - 1 + padding - kk) / stride + 1
    };
    (lo.min(out_len), hi.min(out_len))
}

#[allow(clippy::too_many_arguments)]
fn conv1d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    in_channels: usize,
    out_channels: usize,
    kernel_size: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor, NnError> {
    let shape = input.shape();
    if shape.len() != 3 || shape[1] != in_channels {
        return Err(NnError::shape(
            format!("[batch, {in_channels}, len]"),
            format!("{shape:?}"),
        ));
    }
    let (batch, len) = (shape[0], shape[2]);
    let padded = len + 2 * padding;
    if padded < kernel_size {
        return Err(NnError::shape(
            format!("length + 2*{padding} >= kernel {kernel_size}"),
            format!("length {len}"),
        ));
    }
    let out_len = (padded - kernel_size) / stride + 1;

    let mut out = Tensor::zeros(vec![batch, out_channels, out_len]);
    let x = input.data();
    let w = weight.data();
    let b = bias.data();
    let y = out.data_mut();
    for bi in 0..batch {
        for oc in 0..out_channels {
            let y_row = &mut y[(bi * out_channels + oc) * out_len..][..out_len];
            y_row.fill(b[oc]);
            for ic in 0..in_channels {
                let x_row = &x[(bi * in_channels + ic) * len..][..len];
                let w_row = &w[(oc * in_channels + ic) * kernel_size..][..kernel_size];
                for (kk, &wv) in w_row.iter().enumerate() {
                    let (lo, hi) = conv_span(out_len, len, stride, padding, kk);
                    for i in lo..hi {
                        y_row[i] += wv * x_row[i * stride + kk - padding];
                    }
                }
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    input: &Tensor,
    grad_out: &Tensor,
    weight: &Tensor,
    grad_weight: &mut Tensor,
    grad_bias: &mut Tensor,
    in_channels: usize,
    out_channels: usize,
    kernel_size: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor, NnError> {
    let (batch, len) = (input.shape()[0], input.shape()[2]);
    let out_len = (len + 2 * padding - kernel_size) / stride + 1;
    let expected = [batch, out_channels, out_len];
    if grad_out.shape() != expected {
        return Err(NnError::shape(
            format!("{expected:?}"),
            format!("{:?}", grad_out.shape()),
        ));
    }

    let mut grad_in = Tensor::zeros(input.shape().to_vec());
    let x = input.data();
    let w = weight.data();
    let g = grad_out.data();
    let gw = grad_weight.data_mut();
    let gb = grad_bias.data_mut();
    let gx = grad_in.data_mut();
    for bi in 0..batch {
        for oc in 0..out_channels {
            let g_row = &g[(bi * out_channels + oc) * out_len..][..out_len];
            gb[oc] += g_row.iter().sum::<f32>();
            for ic in 0..in_channels {
                let x_row = &x[(bi * in_channels + ic) * len..][..len];
                let gx_row = &mut gx[(bi * in_channels + ic) * len..][..len];
                let w_row = &w[(oc * in_channels + ic) * kernel_size..][..kernel_size];
                let gw_row = &mut gw[(oc * in_channels + ic) * kernel_size..][..kernel_size];
                for kk in 0..kernel_size {
                    let (lo, hi) = conv_span(out_len, len, stride, padding, kk);
                    let wv = w_row[kk];
                    let mut acc = 0.0;
                    for i in lo..hi {
                        let t = i * stride + kk - padding;
                        acc += g_row[i] * x_row[t];
                        gx_row[t] += g_row[i] * wv;
                    }
                    gw_row[kk] += acc;
                }
            }
        }
    }
    Ok(grad_in)
}

fn dense_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    in_features: usize,
    out_features: usize,
) -> Result<Tensor, NnError> {
    let shape = input.shape();
    if shape.len() != 2 || shape[1] != in_features {
        return Err(NnError::shape(
            format!("[batch, {in_features}]"),
            format!("{shape:?}"),
        ));
    }
    let batch = shape[0];
    let mut out = Tensor::zeros(vec![batch, out_features]);
    let x = input.data();
    let w = weight.data();
    let b = bias.data();
    let y = out.data_mut();
    for bi in 0..batch {
        let x_row = &x[bi * in_features..][..in_features];
        let y_row = &mut y[bi * out_features..][..out_features];
        for o in 0..out_features {
            let w_row = &w[o * in_features..][..in_features];
            let mut acc = b[o];
            for (xv, wv) in x_row.iter().zip(w_row) {
                acc += xv * wv;
            }
            y_row[o] = acc;
        }
    }
    Ok(out)
}

fn dense_backward(
    input: &Tensor,
    grad_out: &Tensor,
    weight: &Tensor,
    grad_weight: &mut Tensor,
    grad_bias: &mut Tensor,
    in_features: usize,
    out_features: usize,
) -> Result<Tensor, NnError> {
    let batch = input.shape()[0];
    let expected = [batch, out_features];
    if grad_out.shape() != expected {
        return Err(NnError::shape(
            format!("{expected:?}"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut grad_in = Tensor::zeros(input.shape().to_vec());
    let x = input.data();
    let w = weight.data();
    let g = grad_out.data();
    let gw = grad_weight.data_mut();
    let gb = grad_bias.data_mut();
    let gx = grad_in.data_mut();
    for bi in 0..batch {
        let x_row = &x[bi * in_features..][..in_features];
        let g_row = &g[bi * out_features..][..out_features];
        let gx_row = &mut gx[bi * in_features..][..in_features];
        for o in 0..out_features {
            let gv = g_row[o];
            gb[o] += gv;
            let w_row = &w[o * in_features..][..in_features];
            let gw_row = &mut gw[o * in_features..][..in_features];
            for i in 0..in_features {
                gw_row[i] += gv * x_row[i];
                gx_row[i] += gv * w_row[i];
            }
        }
    }
    Ok(grad_in)
}

fn maxpool1d_forward(input: &Tensor, window: usize) -> Result<(Tensor, Vec<usize>), NnError> {
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(NnError::shape("[batch, channels, len]", format!("{shape:?}")));
    }
    let (batch, channels, len) = (shape[0], shape[1], shape[2]);
    let out_len = len / window;
    if out_len == 0 {
        return Err(NnError::shape(
            format!("length >= pool window {window}"),
            format!("length {len}"),
        ));
    }
    let x = input.data();
    let mut out = Tensor::zeros(vec![batch, channels, out_len]);
    let mut argmax = vec![0usize; batch * channels * out_len];
    let y = out.data_mut();
    for bc in 0..batch * channels {
        let x_row = &x[bc * len..][..len];
        for i in 0..out_len {
            let start = i * window;
            // first maximum wins on ties
            let mut best = start;
            for t in start + 1..start + window {
                if x_row[t] > x_row[best] {
                    best = t;
                }
            }
            y[bc * out_len + i] = x_row[best];
            argmax[bc * out_len + i] = bc * len + best;
        }
    }
    Ok((out, argmax))
}
