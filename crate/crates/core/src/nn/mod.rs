//! Minimal CPU neural-network toolkit: NCHW `f32` tensors, layers with
//! explicit backward passes, and Adam.
//!
//! Each forward pass returns a cache that the matching backward pass
//! consumes, so one layer can be evaluated several times before any
//! gradient flows back. Parameter gradients accumulate into [`Param::grad`]
//! until [`Param::zero_grad`] is called.

mod conv;
mod gemm;
mod layers;
mod optim;
mod sequential;

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use conv::{Conv2d, ConvTranspose2d};
pub use layers::{Activation, BatchNorm2d, Linear};
pub use optim::{Adam, AdamConfig};
pub use sequential::{Layer, LayerCache, Sequential};

use crate::error::{Error, Result};

/// Whether batch normalization uses batch statistics (and updates its running
/// estimates) or the running estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dense `[n, c, h, w]` tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 4],
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(format!("{shape:?}"), format!("{} values", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    /// Values per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn item(&self, i: usize) -> &[f32] {
        let l = self.item_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn reshaped(mut self, shape: [usize; 4]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }

    /// Stacks equally shaped `[c, h, w]` items into a batch.
    pub fn stack(items: &[&[f32]], chw: [usize; 3]) -> Result<Self> {
        let l = chw.iter().product::<usize>();
        let mut data = Vec::with_capacity(l * items.len());
        for item in items {
            if item.len() != l {
                return Err(Error::shape(format!("{chw:?}"), format!("{} values", item.len())));
            }
            data.extend_from_slice(item);
        }
        Ok(Tensor {
            shape: [items.len(), chw[0], chw[1], chw[2]],
            data,
        })
    }

    /// Concatenates along the channel axis.
    pub fn cat_channels(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!(a.n(), b.n());
        assert_eq!(a.shape[2..], b.shape[2..]);
        let (la, lb) = (a.item_len(), b.item_len());
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        for i in 0..a.n() {
            data.extend_from_slice(a.item(i));
            data.extend_from_slice(b.item(i));
        }
        debug_assert_eq!(data.len(), a.n() * (la + lb));
        Tensor {
            shape: [a.n(), a.c() + b.c(), a.h(), a.w()],
            data,
        }
    }

    /// Inverse of [`Tensor::cat_channels`]: splits after `c_first` channels.
    pub fn split_channels(&self, c_first: usize) -> (Tensor, Tensor) {
        let hw = self.h() * self.w();
        let (la, l) = (c_first * hw, self.item_len());
        let mut a = Vec::with_capacity(self.n() * la);
        let mut b = Vec::with_capacity(self.n() * (l - la));
        for i in 0..self.n() {
            let item = self.item(i);
            a.extend_from_slice(&item[..la]);
            b.extend_from_slice(&item[la..]);
        }
        (
            Tensor {
                shape: [self.n(), c_first, self.h(), self.w()],
                data: a,
            },
            Tensor {
                shape: [self.n(), self.c() - c_first, self.h(), self.w()],
                data: b,
            },
        )
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A learnable array with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub shape: Vec<usize>,
}

impl Param {
    pub fn new(shape: Vec<usize>, value: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Param { value, grad, shape }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Param::new(shape, vec![0.0; n])
    }

    pub fn uniform(shape: Vec<usize>, bound: f32, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let value = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Param::new(shape, value)
    }

    pub fn normal(shape: Vec<usize>, mean: f32, std: f32, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let dist = Normal::new(mean, std).expect("finite std");
        let value = (0..n).map(|_| dist.sample(rng)).collect();
        Param::new(shape, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Weight initialization scheme for convolution and linear layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    FanInUniform,
    /// `N(0, std)` weights and zero biases.
    Normal(f32),
}

/// Anything that owns named parameters and non-learnable state buffers.
pub trait Module {
    /// Every learnable parameter with a stable, unique name.
    fn params_mut(&mut self) -> Vec<(String, &mut Param)>;

    /// Non-learnable state (batch-norm running statistics).
    fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f32>)>;

    fn num_params(&mut self) -> usize {
        self.params_mut().iter().map(|(_, p)| p.len()).sum()
    }

    fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Snapshot of every parameter and buffer value, by name.
    fn state(&mut self) -> Vec<(String, Vec<f32>)> {
        let mut out: Vec<(String, Vec<f32>)> = self
            .params_mut()
            .into_iter()
            .map(|(n, p)| (n, p.value.clone()))
            .collect();
        out.extend(self.buffers_mut().into_iter().map(|(n, b)| (n, b.clone())));
        out
    }

    /// Restores a snapshot produced by [`Module::state`].
    fn load_state(&mut self, state: &[(String, Vec<f32>)]) -> Result<()> {
        let lookup: std::collections::HashMap<&str, &Vec<f32>> =
            state.iter().map(|(n, v)| (n.as_str(), v)).collect();
        let copy = |name: &str, dst: &mut Vec<f32>| -> Result<()> {
            let src = lookup
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))?;
            if src.len() != dst.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{name}' has {} values, expected {}",
                    src.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(src);
            Ok(())
        };
        for (name, p) in self.params_mut() {
            copy(&name, &mut p.value)?;
        }
        for (name, b) in self.buffers_mut() {
            copy(&name, b)?;
        }
        Ok(())
    }
}

/// Prefixes every name in `items` with `prefix.`.
pub(crate) fn prefixed<T>(prefix: &str, items: Vec<(String, T)>) -> Vec<(String, T)> {
    items
        .into_iter()
        .map(|(n, v)| (format!("{prefix}.{n}"), v))
        .collect()
}
