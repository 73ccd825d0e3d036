//! Strided 2D convolution and its transpose, lowered to matrix products with
//! im2col over the whole batch.

use rand::Rng;

use super::gemm::{gemm, Mat};
use super::{Init, Param, Tensor};

/// Geometry of a convolution from a `c x h x w` image to an `oh x ow` grid.
#[derive(Debug, Clone, Copy)]
struct Patch {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
}

impl Patch {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cells(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds every receptive field into a column: `[c*k*k, n*oh*ow]`.
fn im2col(x: &[f32], n: usize, g: Patch) -> Vec<f32> {
    let (p_cells, width) = (g.cells(), n * g.cells());
    let mut cols = vec![0.0f32; g.rows() * width];
    for ch in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ch * g.k + ki) * g.k + kj;
                let dst_row = &mut cols[row * width..(row + 1) * width];
                for b in 0..n {
                    let src = &x[(b * g.c + ch) * g.h * g.w..][..g.h * g.w];
                    let dst = &mut dst_row[b * p_cells..(b + 1) * p_cells];
                    for oy in 0..g.oh {
                        let iy = (oy * g.s + ki) as isize - g.p as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..][..g.w];
                        let dst = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.s + kj) as isize - g.p as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back into `[n, c, h, w]`.
fn col2im(cols: &[f32], n: usize, g: Patch) -> Vec<f32> {
    let (p_cells, width) = (g.cells(), n * g.cells());
    let mut x = vec![0.0f32; n * g.c * g.h * g.w];
    for ch in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ch * g.k + ki) * g.k + kj;
                let src_row = &cols[row * width..(row + 1) * width];
                for b in 0..n {
                    let dst = &mut x[(b * g.c + ch) * g.h * g.w..][..g.h * g.w];
                    let src = &src_row[b * p_cells..(b + 1) * p_cells];
                    for oy in 0..g.oh {
                        let iy = (oy * g.s + ki) as isize - g.p as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * g.w..][..g.w];
                        for (ox, v) in src[oy * g.ow..(oy + 1) * g.ow].iter().enumerate() {
                            let ix = (ox * g.s + kj) as isize - g.p as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[n, c, hw]` to `[c, n*hw]`.
fn to_channel_major(x: &Tensor) -> Vec<f32> {
    let (n, c, hw) = (x.n(), x.c(), x.h() * x.w());
    let mut out = vec![0.0; x.data.len()];
    for b in 0..n {
        for ch in 0..c {
            out[(ch * n + b) * hw..][..hw].copy_from_slice(&x.data[(b * c + ch) * hw..][..hw]);
        }
    }
    out
}

/// `[c, n*hw]` to `[n, c, hw]`.
fn from_channel_major(data: &[f32], shape: [usize; 4]) -> Tensor {
    let [n, c, h, w] = shape;
    let hw = h * w;
    let mut out = vec![0.0; data.len()];
    for ch in 0..c {
        for b in 0..n {
            out[(b * c + ch) * hw..][..hw].copy_from_slice(&data[(ch * n + b) * hw..][..hw]);
        }
    }
    Tensor { shape, data: out }
}

fn add_channel_bias(y: &mut Tensor, bias: &[f32]) {
    let hw = y.h() * y.w();
    for (i, chunk) in y.data.chunks_mut(hw).enumerate() {
        let b = bias[i % bias.len()];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_channel_bias_grad(dy: &Tensor, grad: &mut [f32]) {
    let hw = dy.h() * dy.w();
    let c = dy.c();
    for (i, chunk) in dy.data.chunks(hw).enumerate() {
        grad[i % c] += chunk.iter().sum::<f32>();
    }
}

fn init_weight(shape: Vec<usize>, fan_in: usize, init: Init, rng: &mut impl Rng) -> Param {
    match init {
        Init::FanInUniform => Param::uniform(shape, 1.0 / (fan_in as f32).sqrt(), rng),
        Init::Normal(std) => Param::normal(shape, 0.0, std, rng),
    }
}

fn init_bias(len: usize, fan_in: usize, init: Init, rng: &mut impl Rng) -> Param {
    match init {
        Init::FanInUniform => Param::uniform(vec![len], 1.0 / (fan_in as f32).sqrt(), rng),
        Init::Normal(_) => Param::zeros(vec![len]),
    }
}

/// `k x k` convolution with stride and symmetric zero padding. Weights are
/// laid out `[out, in, k, k]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param,
    pub bias: Option<Param>,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Vec<f32>,
    in_shape: [usize; 4],
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_c * k * k;
        let weight = init_weight(vec![out_c, in_c, k, k], fan_in, init, rng);
        let bias = bias.then(|| init_bias(out_c, fan_in, init, rng));
        Conv2d {
            in_c,
            out_c,
            k,
            stride,
            pad,
            weight,
            bias,
        }
    }

    pub fn output_size(&self, h: usize) -> usize {
        (h + 2 * self.pad - self.k) / self.stride + 1
    }

    fn patch(&self, shape: [usize; 4]) -> Patch {
        Patch {
            c: self.in_c,
            h: shape[2],
            w: shape[3],
            k: self.k,
            s: self.stride,
            p: self.pad,
            oh: self.output_size(shape[2]),
            ow: self.output_size(shape[3]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, ConvCache) {
        assert_eq!(x.c(), self.in_c, "conv input channels");
        let g = self.patch(x.shape);
        let n = x.n();
        let cols = im2col(&x.data, n, g);
        let mut y = vec![0.0; self.out_c * n * g.cells()];
        gemm(
            Mat::new(&self.weight.value, self.out_c, g.rows()),
            Mat::new(&cols, g.rows(), n * g.cells()),
            0.0,
            &mut y,
        );
        let mut y = from_channel_major(&y, [n, self.out_c, g.oh, g.ow]);
        if let Some(b) = &self.bias {
            add_channel_bias(&mut y, &b.value);
        }
        (y, ConvCache { cols, in_shape: x.shape })
    }

    pub fn backward(&mut self, cache: &ConvCache, dy: &Tensor, param_grads: bool) -> Tensor {
        let g = self.patch(cache.in_shape);
        let n = cache.in_shape[0];
        let dy_cm = to_channel_major(dy);
        let width = n * g.cells();
        if param_grads {
            gemm(
                Mat::new(&dy_cm, self.out_c, width),
                Mat::new(&cache.cols, g.rows(), width).t(),
                1.0,
                &mut self.weight.grad,
            );
            if let Some(b) = &mut self.bias {
                accumulate_channel_bias_grad(dy, &mut b.grad);
            }
        }
        let mut dcols = vec![0.0; g.rows() * width];
        gemm(
            Mat::new(&self.weight.value, self.out_c, g.rows()).t(),
            Mat::new(&dy_cm, self.out_c, width),
            0.0,
            &mut dcols,
        );
        Tensor {
            shape: cache.in_shape,
            data: col2im(&dcols, n, g),
        }
    }
}

/// Transposed convolution (fractionally strided), the adjoint of a
/// [`Conv2d`] with the same kernel, stride and padding. Weights are laid out
/// `[in, out, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param,
    pub bias: Option<Param>,
}

#[derive(Debug, Clone)]
pub struct ConvTCache {
    x_cm: Vec<f32>,
    in_shape: [usize; 4],
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = out_c * k * k;
        let weight = init_weight(vec![in_c, out_c, k, k], fan_in, init, rng);
        let bias = bias.then(|| init_bias(out_c, fan_in, init, rng));
        ConvTranspose2d {
            in_c,
            out_c,
            k,
            stride,
            pad,
            weight,
            bias,
        }
    }

    pub fn output_size(&self, h: usize) -> usize {
        (h - 1) * self.stride + self.k - 2 * self.pad
    }

    fn patch(&self, shape: [usize; 4]) -> Patch {
        Patch {
            c: self.out_c,
            h: self.output_size(shape[2]),
            w: self.output_size(shape[3]),
            k: self.k,
            s: self.stride,
            p: self.pad,
            oh: shape[2],
            ow: shape[3],
        }
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, ConvTCache) {
        assert_eq!(x.c(), self.in_c, "transposed conv input channels");
        let g = self.patch(x.shape);
        let n = x.n();
        let width = n * g.cells();
        let x_cm = to_channel_major(x);
        let mut cols = vec![0.0; g.rows() * width];
        gemm(
            Mat::new(&self.weight.value, self.in_c, g.rows()).t(),
            Mat::new(&x_cm, self.in_c, width),
            0.0,
            &mut cols,
        );
        let mut y = Tensor {
            shape: [n, self.out_c, g.h, g.w],
            data: col2im(&cols, n, g),
        };
        if let Some(b) = &self.bias {
            add_channel_bias(&mut y, &b.value);
        }
        (y, ConvTCache { x_cm, in_shape: x.shape })
    }

    pub fn backward(&mut self, cache: &ConvTCache, dy: &Tensor, param_grads: bool) -> Tensor {
        let g = self.patch(cache.in_shape);
        let n = cache.in_shape[0];
        let width = n * g.cells();
        let dcols = im2col(&dy.data, n, g);
        if param_grads {
            gemm(
                Mat::new(&cache.x_cm, self.in_c, width),
                Mat::new(&dcols, g.rows(), width).t(),
                1.0,
                &mut self.weight.grad,
            );
            if let Some(b) = &mut self.bias {
                accumulate_channel_bias_grad(dy, &mut b.grad);
            }
        }
        let mut dx = vec![0.0; self.in_c * width];
        gemm(
            Mat::new(&self.weight.value, self.in_c, g.rows()),
            Mat::new(&dcols, g.rows(), width),
            0.0,
            &mut dx,
        );
        from_channel_major(&dx, cache.in_shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: [usize; 4], rng: &mut impl Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    /// Direct nested-loop convolution.
    fn conv_oracle(conv: &Conv2d, x: &Tensor) -> Tensor {
        let (oh, ow) = (conv.output_size(x.h()), conv.output_size(x.w()));
        let mut y = Tensor::zeros([x.n(), conv.out_c, oh, ow]);
        let k = conv.k;
        for b in 0..x.n() {
            for o in 0..conv.out_c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |bias| bias.value[o] as f64);
                        for i in 0..conv.in_c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * conv.stride + ki) as isize - conv.pad as isize;
                                    let ix = (ox * conv.stride + kj) as isize - conv.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= x.h() as isize || ix >= x.w() as isize {
                                        continue;
                                    }
                                    let xv = x.data[((b * conv.in_c + i) * x.h() + iy as usize) * x.w() + ix as usize];
                                    let wv = conv.weight.value[((o * conv.in_c + i) * k + ki) * k + kj];
                                    acc += (xv * wv) as f64;
                                }
                            }
                        }
                        y.data[((b * conv.out_c + o) * oh + oy) * ow + ox] = acc as f32;
                    }
                }
            }
        }
        y
    }

    fn dot(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (*x as f64) * (*y as f64)).sum()
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (k, s, p) in [(5, 2, 2), (4, 2, 1), (3, 1, 1)] {
            let conv = Conv2d::new(3, 5, k, s, p, true, Init::FanInUniform, &mut rng);
            let x = random_tensor([2, 3, 9, 8], &mut rng);
            let (y, _) = conv.forward(&x);
            let expected = conv_oracle(&conv, &x);
            assert_eq!(y.shape, expected.shape);
            for (a, b) in y.data.iter().zip(&expected.data) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn conv_backward_is_the_adjoint() {
        // <conv(x), u> = <x, conv^T(u)> and the weight gradient equals the
        // directional derivative along a random weight perturbation.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::new(3, 4, 4, 2, 1, false, Init::Normal(0.3), &mut rng);
        let x = random_tensor([2, 3, 8, 8], &mut rng);
        let (y, cache) = conv.forward(&x);
        let u = random_tensor(y.shape, &mut rng);
        let dx = conv.backward(&cache, &u, true);
        assert!((dot(&y.data, &u.data) - dot(&x.data, &dx.data)).abs() < 1e-4);
        // conv is linear in w: <conv_w(x), u> = <w, dL/dw>
        assert!((dot(&y.data, &u.data) - dot(&conv.weight.value, &conv.weight.grad)).abs() < 1e-4);
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut convt = ConvTranspose2d::new(6, 3, 4, 2, 1, false, Init::Normal(0.2), &mut rng);
        // A Conv2d sharing the weights maps 3 -> 6 channels.
        let conv = Conv2d {
            in_c: 3,
            out_c: 6,
            k: 4,
            stride: 2,
            pad: 1,
            weight: convt.weight.clone(),
            bias: None,
        };
        let x = random_tensor([2, 6, 4, 5], &mut rng);
        let (y, cache) = convt.forward(&x);
        assert_eq!(y.shape, [2, 3, 8, 10]);
        let z = random_tensor(y.shape, &mut rng);
        let (cz, _) = conv.forward(&z);
        // <convT(x), z> = <x, conv(z)>
        assert!((dot(&y.data, &z.data) - dot(&x.data, &cz.data)).abs() < 1e-4);
        // its backward is the conv itself
        let dx = convt.backward(&cache, &z, true);
        for (a, b) in dx.data.iter().zip(&cz.data) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!((dot(&y.data, &z.data) - dot(&convt.weight.value, &convt.weight.grad)).abs() < 1e-4);
    }

    #[test]
    fn bias_gradient_sums_over_batch_and_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut convt = ConvTranspose2d::new(2, 3, 4, 2, 1, true, Init::FanInUniform, &mut rng);
        let x = random_tensor([2, 2, 3, 3], &mut rng);
        let (y, cache) = convt.forward(&x);
        let ones = Tensor {
            shape: y.shape,
            data: vec![1.0; y.data.len()],
        };
        convt.backward(&cache, &ones, true);
        let per_channel = (2 * 6 * 6) as f32;
        assert!(convt.bias.unwrap().grad.iter().all(|&g| g == per_channel));
    }
}
