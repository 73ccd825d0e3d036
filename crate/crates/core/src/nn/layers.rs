//! Batch normalization, fully connected layers and pointwise activations.

use rand::Rng;

use super::gemm::{gemm, Mat};
use super::{Init, Mode, Param, Tensor};

/// Per-channel batch normalization over `(n, h, w)`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    shape: [usize; 4],
    mode: Mode,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(vec![channels], vec![1.0; channels]),
            beta: Param::zeros(vec![channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Scale drawn from `N(1, std)` instead of ones.
    pub fn with_random_scale(channels: usize, std: f32, rng: &mut impl Rng) -> Self {
        let mut bn = BatchNorm2d::new(channels);
        bn.gamma = Param::normal(vec![channels], 1.0, std, rng);
        bn
    }

    fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> (Tensor, BatchNormCache) {
        let c = self.channels();
        assert_eq!(x.c(), c, "batch norm channels");
        let (n, hw) = (x.n(), x.h() * x.w());
        let count = (n * hw) as f64;
        let (mean, var): (Vec<f32>, Vec<f32>) = match mode {
            Mode::Train => (0..c)
                .map(|ch| {
                    let values = (0..n).flat_map(|b| x.data[(b * c + ch) * hw..][..hw].iter());
                    let (mut s, mut s2) = (0.0f64, 0.0f64);
                    for &v in values {
                        s += v as f64;
                        s2 += (v as f64) * (v as f64);
                    }
                    let m = s / count;
                    ((m as f32), ((s2 / count - m * m).max(0.0)) as f32)
                })
                .unzip(),
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        if mode == Mode::Train {
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            for ch in 0..c {
                let m = self.momentum;
                self.running_mean[ch] = (1.0 - m) * self.running_mean[ch] + m * mean[ch];
                self.running_var[ch] = (1.0 - m) * self.running_var[ch] + m * (var[ch] as f64 * unbias) as f32;
            }
        }
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.data.len()];
        let mut y = vec![0.0; x.data.len()];
        for (i, (xs, (hs, ys))) in x
            .data
            .chunks(hw)
            .zip(xhat.chunks_mut(hw).zip(y.chunks_mut(hw)))
            .enumerate()
        {
            let ch = i % c;
            let (m, s, g, b) = (mean[ch], inv_std[ch], self.gamma.value[ch], self.beta.value[ch]);
            for ((xv, h), yv) in xs.iter().zip(hs.iter_mut()).zip(ys.iter_mut()) {
                *h = (xv - m) * s;
                *yv = g * *h + b;
            }
        }
        (
            Tensor { shape: x.shape, data: y },
            BatchNormCache {
                xhat,
                inv_std,
                shape: x.shape,
                mode,
            },
        )
    }

    pub fn backward(&mut self, cache: &BatchNormCache, dy: &Tensor, param_grads: bool) -> Tensor {
        let c = self.channels();
        let [n, _, h, w] = cache.shape;
        let hw = h * w;
        let count = (n * hw) as f32;
        // per-channel sums of dy and dy * xhat
        let mut sum_dy = vec![0.0f64; c];
        let mut sum_dy_xhat = vec![0.0f64; c];
        for (i, (ds, hs)) in dy.data.chunks(hw).zip(cache.xhat.chunks(hw)).enumerate() {
            let ch = i % c;
            for (d, x) in ds.iter().zip(hs) {
                sum_dy[ch] += *d as f64;
                sum_dy_xhat[ch] += (*d * *x) as f64;
            }
        }
        if param_grads {
            for ch in 0..c {
                self.gamma.grad[ch] += sum_dy_xhat[ch] as f32;
                self.beta.grad[ch] += sum_dy[ch] as f32;
            }
        }
        let mut dx = vec![0.0; dy.data.len()];
        for (i, ((ds, hs), out)) in dy
            .data
            .chunks(hw)
            .zip(cache.xhat.chunks(hw))
            .zip(dx.chunks_mut(hw))
            .enumerate()
        {
            let ch = i % c;
            let scale = self.gamma.value[ch] * cache.inv_std[ch];
            match cache.mode {
                Mode::Eval => {
                    for (o, d) in out.iter_mut().zip(ds) {
                        *o = scale * d;
                    }
                }
                Mode::Train => {
                    let mean_dy = sum_dy[ch] as f32 / count;
                    let mean_dy_xhat = sum_dy_xhat[ch] as f32 / count;
                    for ((o, d), x) in out.iter_mut().zip(ds).zip(hs) {
                        *o = scale * (d - mean_dy - x * mean_dy_xhat);
                    }
                }
            }
        }
        Tensor {
            shape: cache.shape,
            data: dx,
        }
    }
}

/// Fully connected layer on `[n, in, 1, 1]` tensors; weights are `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_f: usize,
    pub out_f: usize,
    pub weight: Param,
    pub bias: Param,
}

#[derive(Debug, Clone)]
pub struct LinearCache {
    x: Vec<f32>,
    n: usize,
}

impl Linear {
    pub fn new(in_f: usize, out_f: usize, init: Init, rng: &mut impl Rng) -> Self {
        let (weight, bias) = match init {
            Init::FanInUniform => {
                let bound = 1.0 / (in_f as f32).sqrt();
                (
                    Param::uniform(vec![out_f, in_f], bound, rng),
                    Param::uniform(vec![out_f], bound, rng),
                )
            }
            Init::Normal(std) => (Param::normal(vec![out_f, in_f], 0.0, std, rng), Param::zeros(vec![out_f])),
        };
        Linear {
            in_f,
            out_f,
            weight,
            bias,
        }
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, LinearCache) {
        let n = x.n();
        assert_eq!(x.item_len(), self.in_f, "linear input features");
        let mut y = vec![0.0; n * self.out_f];
        for row in y.chunks_mut(self.out_f) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(
            Mat::new(&x.data, n, self.in_f),
            Mat::new(&self.weight.value, self.out_f, self.in_f).t(),
            1.0,
            &mut y,
        );
        (
            Tensor {
                shape: [n, self.out_f, 1, 1],
                data: y,
            },
            LinearCache { x: x.data.clone(), n },
        )
    }

    pub fn backward(&mut self, cache: &LinearCache, dy: &Tensor, param_grads: bool) -> Tensor {
        let n = cache.n;
        if param_grads {
            gemm(
                Mat::new(&dy.data, n, self.out_f).t(),
                Mat::new(&cache.x, n, self.in_f),
                1.0,
                &mut self.weight.grad,
            );
            for row in dy.data.chunks(self.out_f) {
                for (g, d) in self.bias.grad.iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        let mut dx = vec![0.0; n * self.in_f];
        gemm(
            Mat::new(&dy.data, n, self.out_f),
            Mat::new(&self.weight.value, self.out_f, self.in_f),
            0.0,
            &mut dx,
        );
        Tensor {
            shape: [n, self.in_f, 1, 1],
            data: dx,
        }
    }
}

/// Pointwise nonlinearities. Each backward pass only needs the output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f32),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, v: f32) -> f32 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu(slope) => {
                if v > 0.0 {
                    v
                } else {
                    slope * v
                }
            }
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        }
    }

    /// Derivative expressed through the output `y`.
    pub fn derivative_from_output(self, y: f32) -> f32 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if y > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn forward(self, x: &Tensor) -> Tensor {
        Tensor {
            shape: x.shape,
            data: x.data.iter().map(|&v| self.apply(v)).collect(),
        }
    }

    pub fn backward(self, y: &Tensor, dy: &Tensor) -> Tensor {
        Tensor {
            shape: y.shape,
            data: y
                .data
                .iter()
                .zip(&dy.data)
                .map(|(&o, &d)| d * self.derivative_from_output(o))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], rng: &mut impl Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        }
    }

    fn weighted_sum(y: &Tensor, u: &Tensor) -> f64 {
        y.data.iter().zip(&u.data).map(|(a, b)| *a as f64 * *b as f64).sum()
    }

    /// Central difference of `<bn(x), u>` with respect to x, in f32 with a
    /// coarse step; returns the worst relative error against `dx`.
    fn bn_fd_error(bn: &BatchNorm2d, x: &Tensor, u: &Tensor, dx: &Tensor, mode: Mode) -> f64 {
        let mut worst: f64 = 0.0;
        let h = 1e-2;
        for i in (0..x.data.len()).step_by(3) {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fp = weighted_sum(&bn.clone().forward(&xp, mode).0, u);
            let fm = weighted_sum(&bn.clone().forward(&xm, mode).0, u);
            let fd = (fp - fm) / (2.0 * h as f64);
            let an = dx.data[i] as f64;
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-2));
        }
        worst
    }

    #[test]
    fn batch_norm_train_normalizes_and_backprops() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut bn = BatchNorm2d::with_random_scale(3, 0.3, &mut rng);
        bn.beta.value = vec![0.1, -0.2, 0.3];
        let x = random([4, 3, 3, 2], &mut rng);
        let frozen = bn.clone();
        let (y, cache) = bn.forward(&x, Mode::Train);
        // normalized channels have zero mean and unit variance before the affine map
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| cache.xhat[(b * 3 + ch) * 6..][..6].to_vec())
                .map(|v| v as f64)
                .collect();
            let m = vals.iter().sum::<f64>() / 24.0;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 24.0;
            assert!(m.abs() < 1e-5 && (v - 1.0).abs() < 1e-3);
        }
        let u = random(y.shape, &mut rng);
        let dx = bn.backward(&cache, &u, true);
        assert!(bn_fd_error(&frozen, &x, &u, &dx, Mode::Train) < 1e-2);
        // running statistics moved towards the batch statistics
        assert!(bn.running_mean != vec![0.0; 3]);
    }

    #[test]
    fn batch_norm_eval_is_batch_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bn = BatchNorm2d::new(2);
        for _ in 0..5 {
            bn.forward(&random([3, 2, 4, 4], &mut rng), Mode::Train);
        }
        let x = random([3, 2, 4, 4], &mut rng);
        let (full, cache) = bn.forward(&x, Mode::Eval);
        let single = Tensor::from_vec([1, 2, 4, 4], x.item(1).to_vec()).unwrap();
        let (one, _) = bn.forward(&single, Mode::Eval);
        assert_eq!(one.data, full.item(1));
        let u = random(full.shape, &mut rng);
        let frozen = bn.clone();
        let dx = bn.backward(&cache, &u, true);
        assert!(bn_fd_error(&frozen, &x, &u, &dx, Mode::Eval) < 1e-2);
    }

    #[test]
    fn linear_matches_manual_product_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut lin = Linear::new(5, 3, Init::FanInUniform, &mut rng);
        let x = random([2, 5, 1, 1], &mut rng);
        let (y, cache) = lin.forward(&x);
        for b in 0..2 {
            for o in 0..3 {
                let manual: f32 = lin.bias.value[o]
                    + (0..5).map(|i| lin.weight.value[o * 5 + i] * x.data[b * 5 + i]).sum::<f32>();
                assert!((y.data[b * 3 + o] - manual).abs() < 1e-5);
            }
        }
        let u = random(y.shape, &mut rng);
        let dx = lin.backward(&cache, &u, true);
        for b in 0..2 {
            for i in 0..5 {
                let manual: f32 = (0..3).map(|o| u.data[b * 3 + o] * lin.weight.value[o * 5 + i]).sum();
                assert!((dx.data[b * 5 + i] - manual).abs() < 1e-5);
            }
        }
        for o in 0..3 {
            for i in 0..5 {
                let manual: f32 = (0..2).map(|b| u.data[b * 3 + o] * x.data[b * 5 + i]).sum();
                assert!((lin.weight.grad[o * 5 + i] - manual).abs() < 1e-5);
            }
            assert!((lin.bias.grad[o] - (u.data[o] + u.data[3 + o])).abs() < 1e-6);
        }
    }

    #[test]
    fn activation_derivatives_match_differences() {
        for act in [
            Activation::Relu,
            Activation::LeakyRelu(0.2),
            Activation::Tanh,
            Activation::Sigmoid,
        ] {
            for &v in &[-1.7f32, -0.3, 0.4, 2.2] {
                let h = 1e-3f64;
                let f = |x: f64| act.apply(x as f32) as f64;
                let fd = (f(v as f64 + h) - f(v as f64 - h)) / (2.0 * h);
                let an = act.derivative_from_output(act.apply(v)) as f64;
                assert!((fd - an).abs() < 1e-3, "{act:?} at {v}");
            }
        }
    }
}
