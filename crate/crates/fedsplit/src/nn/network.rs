//! A network is an ordered list of layers. Forward and backward run over a
//! layer range so a model can execute only its client or server slice.

use super::layer::Layer;
use super::NnError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Network { layers }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Full forward pass, caching for backward.
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor, NnError> {
        self.forward_range(input, 0, self.layers.len())
    }

    /// Composition of layer forwards over `[from, to)`; caches are populated
    /// for that range only. An empty range returns the input unchanged.
    pub fn forward_range(
        &mut self,
        input: &Tensor,
        from: usize,
        to: usize,
    ) -> Result<Tensor, NnError> {
        self.check_range(from, to)?;
        let mut x = input.clone();
        for idx in from..to {
            let layer = &mut self.layers[idx];
            x = layer
                .forward(&x)
                .map_err(|e| e.at_layer(idx, layer.spec()))?;
        }
        Ok(x)
    }

    /// Forward without caching; usable on a shared reference for evaluation.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor, NnError> {
        let mut x = input.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            x = layer.infer(&x).map_err(|e| e.at_layer(idx, layer.spec()))?;
        }
        Ok(x)
    }

    /// Full backward pass; returns the gradient at the network input.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor, NnError> {
        self.backward_range(grad, self.layers.len(), 0)
    }

    /// Backward from layer `from_top` (exclusive) down to layer `down_to`,
    /// returning the gradient flowing out of layer `down_to`'s input.
    /// Parameter gradients accumulate into each layer.
    pub fn backward_range(
        &mut self,
        grad: &Tensor,
        from_top: usize,
        down_to: usize,
    ) -> Result<Tensor, NnError> {
        self.check_range(down_to, from_top)?;
        let mut g = grad.clone();
        for idx in (down_to..from_top).rev() {
            let layer = &mut self.layers[idx];
            g = layer
                .backward(&g)
                .map_err(|e| e.at_layer(idx, layer.spec()))?;
        }
        Ok(g)
    }

    fn check_range(&self, from: usize, to: usize) -> Result<(), NnError> {
        if from > to || to > self.layers.len() {
            return Err(NnError::RangeOutOfBounds {
                from,
                to,
                len: self.layers.len(),
            });
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grads();
        }
    }

    pub fn clear_caches(&mut self) {
        for layer in &mut self.layers {
            layer.clear_cache();
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec().param_count()).sum()
    }

    /// All (param, grad) pairs in layer order, weight before bias.
    pub fn params_and_grads(&mut self) -> Vec<(&mut Tensor, &Tensor)> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_and_grads())
            .collect()
    }

    /// Parameters flattened into one vector in layer order, weight then bias.
    /// The length always equals [`Network::param_count`].
    pub fn flat_params(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            if let Some(w) = layer.weight() {
                out.extend_from_slice(w.data());
            }
            if let Some(b) = layer.bias() {
                out.extend_from_slice(b.data());
            }
        }
        out
    }

    /// Writes a flat vector produced by [`Network::flat_params`] back.
    pub fn set_flat_params(&mut self, flat: &[f32]) -> Result<(), NnError> {
        if flat.len() != self.param_count() {
            return Err(NnError::ParamMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            if let Some(w) = layer.weight_mut() {
                let n = w.numel();
                w.data_mut().copy_from_slice(&flat[offset..offset + n]);
                offset += n;
            }
            if let Some(b) = layer.bias_mut() {
                let n = b.numel();
                b.data_mut().copy_from_slice(&flat[offset..offset + n]);
                offset += n;
            }
        }
        Ok(())
    }

    /// Accumulated gradients flattened in the same order as `flat_params`.
    pub fn flat_grads(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            if let Some(g) = layer.grad_weight() {
                out.extend_from_slice(g.data());
            }
            if let Some(g) = layer.grad_bias() {
                out.extend_from_slice(g.data());
            }
        }
        out
    }

    /// Splits into `(first cut layers, rest)`.
    pub fn split_off(mut self, cut: usize) -> (Network, Network) {
        assert!(cut <= self.layers.len(), "cut {cut} out of range");
        let tail = self.layers.split_off(cut);
        (Network::new(self.layers), Network::new(tail))
    }

    /// Concatenates two slices back into one network.
    pub fn join(front: Network, back: Network) -> Network {
        let mut layers = front.layers;
        layers.extend(back.layers);
        Network::new(layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{softmax_cross_entropy, LayerSpec};

    fn tiny_net(seedish: f32) -> Network {
        let mut dense = Layer::new(LayerSpec::Dense {
            in_features: 4,
            out_features: 3,
        });
        for (i, w) in dense.weight_mut().unwrap().data_mut().iter_mut().enumerate() {
            *w = seedish * (i as f32 * 0.13 - 0.5);
        }
        let mut out = Layer::new(LayerSpec::Dense {
            in_features: 3,
            out_features: 2,
        });
        for (i, w) in out.weight_mut().unwrap().data_mut().iter_mut().enumerate() {
            *w = seedish * (0.4 - i as f32 * 0.11);
        }
        Network::new(vec![dense, Layer::new(LayerSpec::Relu), out])
    }

    #[test]
    fn empty_range_is_identity() {
        let mut net = tiny_net(1.0);
        let x = Tensor::new(vec![1, 4], vec![0.5, -0.25, 1.0, 2.0]).unwrap();
        let y = net.forward_range(&x, 1, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn range_composition_equals_full_forward() {
        let mut net = tiny_net(0.8);
        let x = Tensor::new(vec![2, 4], vec![0.5, -0.25, 1.0, 2.0, -1.0, 0.1, 0.2, 0.3]).unwrap();
        let full = net.forward(&x).unwrap();
        for cut in 0..=net.len() {
            let head = net.forward_range(&x, 0, cut).unwrap();
            let tail = net.forward_range(&head, cut, net.len()).unwrap();
            assert_eq!(tail, full, "composition differs at cut {cut}");
        }
    }

    #[test]
    fn full_range_backward_equals_monolithic_backward() {
        let x = Tensor::new(vec![2, 4], vec![0.5, -0.25, 1.0, 2.0, -1.0, 0.1, 0.2, 0.3]).unwrap();
        let labels = [1usize, 0];

        let mut mono = tiny_net(0.8);
        let logits = mono.forward(&x).unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        let gin_mono = mono.backward(&grad).unwrap();

        let mut ranged = tiny_net(0.8);
        let cut = 2;
        let smashed = ranged.forward_range(&x, 0, cut).unwrap();
        let logits2 = ranged.forward_range(&smashed, cut, 3).unwrap();
        assert_eq!(logits2, logits);
        let (_, grad2) = softmax_cross_entropy(&logits2, &labels).unwrap();
        let g_cut = ranged.backward_range(&grad2, 3, cut).unwrap();
        let gin_ranged = ranged.backward_range(&g_cut, cut, 0).unwrap();

        assert_eq!(gin_mono, gin_ranged);
        assert_eq!(mono.flat_grads(), ranged.flat_grads());
    }

    #[test]
    fn out_of_bounds_range_is_an_error() {
        let mut net = tiny_net(1.0);
        let x = Tensor::zeros(vec![1, 4]);
        assert!(matches!(
            net.forward_range(&x, 0, 4),
            Err(NnError::RangeOutOfBounds { .. })
        ));
        assert!(matches!(
            net.forward_range(&x, 2, 1),
            Err(NnError::RangeOutOfBounds { .. })
        ));
    }

    #[test]
    fn backward_range_without_matching_forward_fails() {
        let mut net = tiny_net(1.0);
        let g = Tensor::zeros(vec![1, 2]);
        let err = net.backward_range(&g, 3, 0).unwrap_err();
        assert!(err.to_string().contains("without a cached forward"), "{err}");
    }

    #[test]
    fn flat_params_roundtrip() {
        let net = tiny_net(0.3);
        let flat = net.flat_params();
        assert_eq!(flat.len(), net.param_count());
        let mut other = tiny_net(0.9);
        other.set_flat_params(&flat).unwrap();
        assert_eq!(other.flat_params(), flat);
        assert!(other.set_flat_params(&flat[1..]).is_err());
    }

    #[test]
    fn split_and_join_restore_structure_and_values() {
        let net = tiny_net(0.7);
        let flat = net.flat_params();
        let (client, server) = net.split_off(2);
        assert_eq!(client.len(), 2);
        assert_eq!(server.len(), 1);
        let joined = Network::join(client, server);
        assert_eq!(joined.flat_params(), flat);
    }
}
