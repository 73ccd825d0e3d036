use super::conv::{ConvCache, ConvTCache};
use super::layers::{BatchNormCache, LinearCache};
use super::{Activation, BatchNorm2d, Conv2d, ConvTranspose2d, Linear, Mode, Module, Param, Tensor};

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    ConvT(ConvTranspose2d),
    BatchNorm(BatchNorm2d),
    Linear(Linear),
    Act(Activation),
    /// `[n, c, h, w]` to `[n, c*h*w, 1, 1]`.
    Flatten,
}

#[derive(Debug, Clone)]
pub enum LayerCache {
    Conv(ConvCache),
    ConvT(ConvTCache),
    BatchNorm(BatchNormCache),
    Linear(LinearCache),
    /// Activation output.
    Act(Tensor),
    Flatten([usize; 4]),
}

impl Layer {
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> (Tensor, LayerCache) {
        match self {
            Layer::Conv(l) => {
                let (y, c) = l.forward(x);
                (y, LayerCache::Conv(c))
            }
            Layer::ConvT(l) => {
                let (y, c) = l.forward(x);
                (y, LayerCache::ConvT(c))
            }
            Layer::BatchNorm(l) => {
                let (y, c) = l.forward(x, mode);
                (y, LayerCache::BatchNorm(c))
            }
            Layer::Linear(l) => {
                let (y, c) = l.forward(x);
                (y, LayerCache::Linear(c))
            }
            Layer::Act(a) => {
                let y = a.forward(x);
                (y.clone(), LayerCache::Act(y))
            }
            Layer::Flatten => (
                x.clone().reshaped([x.n(), x.item_len(), 1, 1]),
                LayerCache::Flatten(x.shape),
            ),
        }
    }

    pub fn backward(&mut self, cache: &LayerCache, dy: &Tensor, param_grads: bool) -> Tensor {
        match (self, cache) {
            (Layer::Conv(l), LayerCache::Conv(c)) => l.backward(c, dy, param_grads),
            (Layer::ConvT(l), LayerCache::ConvT(c)) => l.backward(c, dy, param_grads),
            (Layer::BatchNorm(l), LayerCache::BatchNorm(c)) => l.backward(c, dy, param_grads),
            (Layer::Linear(l), LayerCache::Linear(c)) => l.backward(c, dy, param_grads),
            (Layer::Act(a), LayerCache::Act(y)) => a.backward(y, dy),
            (Layer::Flatten, LayerCache::Flatten(shape)) => dy.clone().reshaped(*shape),
            _ => panic!("layer cache does not belong to this layer"),
        }
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        match self {
            Layer::Conv(l) => {
                out.push(("weight".to_string(), &mut l.weight));
                if let Some(b) = &mut l.bias {
                    out.push(("bias".to_string(), b));
                }
            }
            Layer::ConvT(l) => {
                out.push(("weight".to_string(), &mut l.weight));
                if let Some(b) = &mut l.bias {
                    out.push(("bias".to_string(), b));
                }
            }
            Layer::BatchNorm(l) => {
                out.push(("weight".to_string(), &mut l.gamma));
                out.push(("bias".to_string(), &mut l.beta));
            }
            Layer::Linear(l) => {
                out.push(("weight".to_string(), &mut l.weight));
                out.push(("bias".to_string(), &mut l.bias));
            }
            Layer::Act(_) | Layer::Flatten => {}
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f32>)> {
        match self {
            Layer::BatchNorm(l) => vec![
                ("running_mean".to_string(), &mut l.running_mean),
                ("running_var".to_string(), &mut l.running_var),
            ],
            _ => Vec::new(),
        }
    }
}

/// Layers applied in order.
#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> (Tensor, Vec<LayerCache>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &mut self.layers {
            let (y, c) = layer.forward(&h, mode);
            caches.push(c);
            h = y;
        }
        (h, caches)
    }

    pub fn backward(&mut self, caches: &[LayerCache], dy: &Tensor, param_grads: bool) -> Tensor {
        assert_eq!(caches.len(), self.layers.len());
        let mut g = dy.clone();
        for (layer, cache) in self.layers.iter_mut().zip(caches).rev() {
            g = layer.backward(cache, &g, param_grads);
        }
        g
    }
}

impl Module for Sequential {
    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| super::prefixed(&i.to_string(), l.params_mut()))
            .collect()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f32>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| super::prefixed(&i.to_string(), l.buffers_mut()))
            .collect()
    }
}
