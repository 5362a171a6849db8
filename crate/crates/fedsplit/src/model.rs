//! Builders for the 1D-CNN classifiers the experiments train, plus parameter
//! counting and cut-layer splitting into client/server sub-networks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Layer, LayerSpec, Network, NnError};
use crate::seed::{rng_for, tag};
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("conv_depth must be within 4..=8, got {0}")]
    InvalidDepth(usize),
    #[error("invalid geometry at layer {layer_index}: {source}")]
    Geometry {
        layer_index: usize,
        #[source]
        source: NnError,
    },
    #[error("cut index {cut} out of range 1..{layer_count}")]
    InvalidCut { cut: usize, layer_count: usize },
    #[error("model has fewer than {wanted} conv blocks")]
    NotEnoughBlocks { wanted: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Ordered layer descriptions plus input geometry and class count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    /// (channels, length) of one sample.
    pub input_shape: (usize, usize),
    pub classes: usize,
}

impl ModelSpec {
    /// Per-sample shape after the first `upto` layers.
    pub fn shape_at(&self, upto: usize) -> Result<Vec<usize>, ModelError> {
        let mut shape = vec![self.input_shape.0, self.input_shape.1];
        for (idx, spec) in self.layers.iter().take(upto).enumerate() {
            shape = spec
                .output_shape(&shape)
                .map_err(|source| ModelError::Geometry {
                    layer_index: idx,
                    source,
                })?;
        }
        Ok(shape)
    }

    /// Checks the whole chain and the final logit shape.
    pub fn validate(&self) -> Result<(), ModelError> {
        let out = self.shape_at(self.layers.len())?;
        if out != [self.classes] {
            return Err(ModelError::Invalid(format!(
                "final layer produces {out:?}, expected [{}] logits",
                self.classes
            )));
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// The cut-layer output shape crossing the wire ("smashed data"),
    /// excluding the batch dimension.
    pub fn smashed_shape(&self, cut: usize) -> Result<Vec<usize>, ModelError> {
        check_cut(cut, self.layers.len())?;
        self.shape_at(cut)
    }

    /// Smashed elements per sample.
    pub fn smashed_elems(&self, cut: usize) -> Result<usize, ModelError> {
        Ok(self.smashed_shape(cut)?.iter().product())
    }

    /// Layer specs of the client and server slices.
    pub fn split_layers(&self, cut: usize) -> Result<(&[LayerSpec], &[LayerSpec]), ModelError> {
        check_cut(cut, self.layers.len())?;
        Ok(self.layers.split_at(cut))
    }
}

fn check_cut(cut: usize, layer_count: usize) -> Result<(), ModelError> {
    if cut == 0 || cut >= layer_count {
        return Err(ModelError::InvalidCut { cut, layer_count });
    }
    Ok(())
}

/// Everything needed to build one classifier; serializable so experiment
/// configs can carry model profiles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub conv_depth: usize,
    pub channels: usize,
    pub kernel: usize,
    /// Max-pool window appended to a conv block; 0 disables pooling.
    pub pool_window: usize,
    /// Only the first N conv blocks get a pool layer.
    pub pooled_blocks: usize,
    pub hidden_dense: usize,
    pub classes: usize,
    pub input_channels: usize,
    pub input_len: usize,
}

impl ModelProfile {
    /// ECG-scale default: 4 conv + 2 dense over (1, 124) inputs, 5 classes,
    /// roughly 69k parameters.
    pub fn ecg_default() -> Self {
        ModelProfile {
            conv_depth: 4,
            channels: 32,
            kernel: 5,
            pool_window: 2,
            pooled_blocks: usize::MAX,
            hidden_dense: 232,
            classes: 5,
            input_channels: 1,
            input_len: 124,
        }
    }

    pub fn build(&self) -> Result<ModelSpec, ModelError> {
        build_conv1d_classifier(self)
    }
}

/// Builds `conv_depth` Conv1D+ReLU blocks (pooling as configured), then
/// Flatten and two Dense layers ending in `classes` logits. Convolutions use
/// stride 1 and zero padding of `(kernel - 1) / 2`.
pub fn build_conv1d_classifier(profile: &ModelProfile) -> Result<ModelSpec, ModelError> {
    if !(4..=8).contains(&profile.conv_depth) {
        return Err(ModelError::InvalidDepth(profile.conv_depth));
    }
    if profile.channels == 0
        || profile.kernel == 0
        || profile.hidden_dense == 0
        || profile.classes == 0
        || profile.input_channels == 0
        || profile.input_len == 0
    {
        return Err(ModelError::Invalid(
            "all profile size fields must be >= 1".into(),
        ));
    }

    let mut layers = Vec::new();
    let mut shape = vec![profile.input_channels, profile.input_len];
    let push = |layers: &mut Vec<LayerSpec>, shape: &mut Vec<usize>, spec: LayerSpec| {
        let idx = layers.len();
        *shape = spec
            .output_shape(shape)
            .map_err(|source| ModelError::Geometry {
                layer_index: idx,
                source,
            })?;
        layers.push(spec);
        Ok::<(), ModelError>(())
    };

    let padding = (profile.kernel - 1) / 2;
    let mut in_ch = profile.input_channels;
    for block in 0..profile.conv_depth {
        push(
            &mut layers,
            &mut shape,
            LayerSpec::Conv1d {
                in_channels: in_ch,
                out_channels: profile.channels,
                kernel_size: profile.kernel,
                stride: 1,
                padding,
            },
        )?;
        push(&mut layers, &mut shape, LayerSpec::Relu)?;
        if profile.pool_window >= 2 && block < profile.pooled_blocks {
            push(
                &mut layers,
                &mut shape,
                LayerSpec::MaxPool1d {
                    window: profile.pool_window,
                },
            )?;
        }
        in_ch = profile.channels;
    }
    push(&mut layers, &mut shape, LayerSpec::Flatten)?;
    let flat = shape[0];
    push(
        &mut layers,
        &mut shape,
        LayerSpec::Dense {
            in_features: flat,
            out_features: profile.hidden_dense,
        },
    )?;
    push(&mut layers, &mut shape, LayerSpec::Relu)?;
    push(
        &mut layers,
        &mut shape,
        LayerSpec::Dense {
            in_features: profile.hidden_dense,
            out_features: profile.classes,
        },
    )?;

    let spec = ModelSpec {
        layers,
        input_shape: (profile.input_channels, profile.input_len),
        classes: profile.classes,
    };
    spec.validate()?;
    Ok(spec)
}

/// Sum of weight and bias element counts over all layers.
pub fn count_params(spec: &ModelSpec) -> usize {
    spec.layers.iter().map(LayerSpec::param_count).sum()
}

/// Deterministic weight initialization: every parameter tensor is drawn
/// uniformly from ±1/sqrt(fan_in) of its layer.
pub fn init_network(spec: &ModelSpec, seed: u64) -> Network {
    let mut rng = rng_for(seed, &[tag::INIT]);
    let mut layers = Vec::with_capacity(spec.layers.len());
    for layer_spec in &spec.layers {
        let mut layer = Layer::new(*layer_spec);
        let fan_in = match *layer_spec {
            LayerSpec::Conv1d {
                in_channels,
                kernel_size,
                ..
            } => in_channels * kernel_size,
            LayerSpec::Dense { in_features, .. } => in_features,
            _ => 0,
        };
        if fan_in > 0 {
            let bound = 1.0 / (fan_in as f32).sqrt();
            let mut fill = |t: Option<&mut Tensor>| {
                if let Some(t) = t {
                    for v in t.data_mut() {
                        *v = rng.random_range(-bound..bound);
                    }
                }
            };
            fill(layer.weight_mut());
            fill(layer.bias_mut());
        }
        layers.push(layer);
    }
    Network::new(layers)
}

/// Splits a network at the cut layer into client and server sub-networks.
/// The parts carry disjoint parameter sets and rejoin to the original.
pub fn split_model(net: Network, cut: usize) -> Result<(Network, Network), ModelError> {
    check_cut(cut, net.len())?;
    Ok(net.split_off(cut))
}

/// Raw cut index that keeps the first `blocks` conv blocks (each conv plus
/// its activation and pooling, when present) on the client. Pooling layers do
/// not count toward the block depth; they ride with their conv.
pub fn cut_for_conv_blocks(spec: &ModelSpec, blocks: usize) -> Result<usize, ModelError> {
    if blocks == 0 {
        return Err(ModelError::NotEnoughBlocks { wanted: blocks });
    }
    let mut convs_seen = 0;
    for (idx, layer) in spec.layers.iter().enumerate() {
        if matches!(layer, LayerSpec::Conv1d { .. }) {
            convs_seen += 1;
            if convs_seen == blocks {
                // absorb the block's trailing non-parametric layers
                let mut cut = idx + 1;
                while cut < spec.layers.len()
                    && matches!(
                        spec.layers[cut],
                        LayerSpec::Relu | LayerSpec::MaxPool1d { .. }
                    )
                {
                    cut += 1;
                }
                check_cut(cut, spec.layers.len())?;
                return Ok(cut);
            }
        }
    }
    Err(ModelError::NotEnoughBlocks { wanted: blocks })
}
