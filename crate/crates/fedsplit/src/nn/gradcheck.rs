//! Gradient verification: analytic f32 gradients against central finite
//! differences of an independent f64 re-evaluation of the loss.
//!
//! The reference path below re-implements every layer in f64 arithmetic and
//! never touches the f32 forward/backward code it is checking.

use super::layer::LayerSpec;
use super::network::Network;
use super::{softmax_cross_entropy, NnError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// A single-element parameter perturbation for the reference loss.
#[derive(Debug, Clone, Copy)]
pub struct Perturb {
    pub layer: usize,
    pub param: ParamKind,
    pub index: usize,
    pub delta: f64,
}

/// Elements where both gradients fall below this magnitude are compared
/// against the floor instead of their own (noise-dominated) scale.
const REL_FLOOR: f64 = 1e-2;

/// Cross-entropy loss of the network on `(input, labels)`, evaluated entirely
/// in f64, with an optional single-parameter perturbation.
pub fn reference_loss_f64(
    net: &Network,
    input: &Tensor,
    labels: &[usize],
    perturb: Option<Perturb>,
) -> f64 {
    let mut shape: Vec<usize> = input.shape().to_vec();
    let mut x: Vec<f64> = input.data().iter().map(|&v| f64::from(v)).collect();

    for (li, layer) in net.layers().iter().enumerate() {
        let weight = lift_param(layer.weight(), perturb, li, ParamKind::Weight);
        let bias = lift_param(layer.bias(), perturb, li, ParamKind::Bias);
        let (next, next_shape) = layer_forward_f64(layer.spec(), &x, &shape, &weight, &bias);
        x = next;
        shape = next_shape;
    }

    let (batch, classes) = (shape[0], shape[1]);
    let mut loss = 0.0;
    for b in 0..batch {
        let row = &x[b * classes..][..classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        loss += denom.ln() - (row[labels[b]] - max);
    }
    loss / batch as f64
}

fn lift_param(
    t: Option<&Tensor>,
    perturb: Option<Perturb>,
    layer: usize,
    kind: ParamKind,
) -> Vec<f64> {
    let mut out: Vec<f64> = t
        .map(|t| t.data().iter().map(|&v| f64::from(v)).collect())
        .unwrap_or_default();
    if let Some(p) = perturb {
        if p.layer == layer && p.param == kind {
            out[p.index] += p.delta;
        }
    }
    out
}

fn layer_forward_f64(
    spec: &LayerSpec,
    x: &[f64],
    shape: &[usize],
    weight: &[f64],
    bias: &[f64],
) -> (Vec<f64>, Vec<usize>) {
    match *spec {
        LayerSpec::Conv1d {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
        } => {
            let (batch, len) = (shape[0], shape[2]);
            let out_len = (len + 2 * padding - kernel_size) / stride + 1;
            let mut y = vec![0.0; batch * out_channels * out_len];
            for b in 0..batch {
                for oc in 0..out_channels {
                    for i in 0..out_len {
                        let mut acc = bias[oc];
                        for ic in 0..in_channels {
                            for kk in 0..kernel_size {
                                let t = i * stride + kk;
                                if t >= padding && t - padding < len {
                                    acc += weight[(oc * in_channels + ic) * kernel_size + kk]
                                        * x[(b * in_channels + ic) * len + t - padding];
                                }
                            }
                        }
                        y[(b * out_channels + oc) * out_len + i] = acc;
                    }
                }
            }
            (y, vec![batch, out_channels, out_len])
        }
        LayerSpec::Dense {
            in_features,
            out_features,
        } => {
            let batch = shape[0];
            let mut y = vec![0.0; batch * out_features];
            for b in 0..batch {
                for o in 0..out_features {
                    let mut acc = bias[o];
                    for i in 0..in_features {
                        acc += weight[o * in_features + i] * x[b * in_features + i];
                    }
                    y[b * out_features + o] = acc;
                }
            }
            (y, vec![batch, out_features])
        }
        LayerSpec::Relu => (x.iter().map(|&v| v.max(0.0)).collect(), shape.to_vec()),
        LayerSpec::MaxPool1d { window } => {
            let (batch, channels, len) = (shape[0], shape[1], shape[2]);
            let out_len = len / window;
            let mut y = vec![0.0; batch * channels * out_len];
            for bc in 0..batch * channels {
                for i in 0..out_len {
                    let seg = &x[bc * len + i * window..][..window];
                    y[bc * out_len + i] = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                }
            }
            (y, vec![batch, channels, out_len])
        }
        LayerSpec::Flatten => {
            let batch = shape[0];
            let rest: usize = shape[1..].iter().product();
            (x.to_vec(), vec![batch, rest])
        }
    }
}

/// Compares every parameter's analytic gradient against central finite
/// differences of [`reference_loss_f64`] and returns the worst relative
/// error. Intended for small models (at most a few thousand parameters).
pub fn gradient_check(
    net: &mut Network,
    input: &Tensor,
    labels: &[usize],
    epsilon: f64,
) -> Result<f64, NnError> {
    net.zero_grads();
    let logits = net.forward(input)?;
    let (_, grad) = softmax_cross_entropy(&logits, labels)?;
    net.backward(&grad)?;

    let mut worst = 0.0f64;
    let layer_count = net.len();
    for li in 0..layer_count {
        for kind in [ParamKind::Weight, ParamKind::Bias] {
            let count = {
                let layer = &net.layers()[li];
                match kind {
                    ParamKind::Weight => layer.grad_weight().map_or(0, Tensor::numel),
                    ParamKind::Bias => layer.grad_bias().map_or(0, Tensor::numel),
                }
            };
            for index in 0..count {
                let analytic = {
                    let layer = &net.layers()[li];
                    let g = match kind {
                        ParamKind::Weight => layer.grad_weight().unwrap(),
                        ParamKind::Bias => layer.grad_bias().unwrap(),
                    };
                    f64::from(g.data()[index])
                };
                let up = Perturb {
                    layer: li,
                    param: kind,
                    index,
                    delta: epsilon,
                };
                let down = Perturb {
                    delta: -epsilon,
                    ..up
                };
                let loss_up = reference_loss_f64(net, input, labels, Some(up));
                let loss_down = reference_loss_f64(net, input, labels, Some(down));
                let numeric = (loss_up - loss_down) / (2.0 * epsilon);
                let rel =
                    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(REL_FLOOR);
                if rel > worst {
                    worst = rel;
                }
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;
    use rand::Rng;

    fn fill_uniform(net: &mut Network, seed: u64) {
        let mut rng = crate::seed::rng_for(seed, &[crate::seed::tag::INIT]);
        for layer in net.layers_mut() {
            let fan_in = match *layer.spec() {
                LayerSpec::Conv1d {
                    in_channels,
                    kernel_size,
                    ..
                } => in_channels * kernel_size,
                LayerSpec::Dense { in_features, .. } => in_features,
                _ => continue,
            };
            let bound = 1.0 / (fan_in as f32).sqrt();
            if let Some(w) = layer.weight_mut() {
                for v in w.data_mut() {
                    *v = rng.random_range(-bound..bound);
                }
            }
            if let Some(b) = layer.bias_mut() {
                for v in b.data_mut() {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
    }

    fn random_input(shape: Vec<usize>, classes: usize, seed: u64) -> (Tensor, Vec<usize>) {
        let mut rng = crate::seed::rng_for(seed, &[99]);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let labels = (0..shape[0]).map(|_| rng.random_range(0..classes)).collect();
        (Tensor::new(shape, data).unwrap(), labels)
    }

    #[test]
    fn dense_softmax_model_passes_fd_check() {
        let mut net = Network::new(vec![Layer::new(LayerSpec::Dense {
            in_features: 6,
            out_features: 4,
        })]);
        fill_uniform(&mut net, 11);
        let (input, labels) = random_input(vec![3, 6], 4, 12);
        let err = gradient_check(&mut net, &input, &labels, 1e-3).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn conv_dense_model_passes_fd_check() {
        let mut net = Network::new(vec![
            Layer::new(LayerSpec::Conv1d {
                in_channels: 1,
                out_channels: 3,
                kernel_size: 3,
                stride: 1,
                padding: 1,
            }),
            Layer::new(LayerSpec::Relu),
            Layer::new(LayerSpec::MaxPool1d { window: 2 }),
            Layer::new(LayerSpec::Conv1d {
                in_channels: 3,
                out_channels: 4,
                kernel_size: 3,
                stride: 2,
                padding: 0,
            }),
            Layer::new(LayerSpec::Relu),
            Layer::new(LayerSpec::Flatten),
            Layer::new(LayerSpec::Dense {
                in_features: 4 * 3,
                out_features: 3,
            }),
        ]);
        fill_uniform(&mut net, 21);
        let (input, labels) = random_input(vec![2, 1, 16], 3, 22);
        let err = gradient_check(&mut net, &input, &labels, 1e-3).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_input_stays_finite() {
        let mut net = Network::new(vec![
            Layer::new(LayerSpec::Flatten),
            Layer::new(LayerSpec::Dense {
                in_features: 8,
                out_features: 2,
            }),
        ]);
        fill_uniform(&mut net, 31);
        let input = Tensor::zeros(vec![2, 1, 8]);
        let err = gradient_check(&mut net, &input, &[0, 1], 1e-3).unwrap();
        assert!(err.is_finite());
        assert!(err < 1e-4, "max relative error {err}");
    }
}
