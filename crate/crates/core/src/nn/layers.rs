use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::gemm::{matmul, Transpose};
use super::{Mode, Scalar, Tensor};

/// Batch-norm variance epsilon.
pub const BN_EPS: f64 = 1e-3;
/// Weight of the current batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// Square-kernel convolution, stride 1, 'same' padding.
///
/// Even kernels pad one extra row/column at the bottom/right.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `out_channels x (in_channels * kernel * kernel)`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        let mut conv = Self::zeroed(in_channels, out_channels, kernel);
        let normal = Normal::new(0.0, (2.0 / conv.patch_len() as f64).sqrt()).expect("valid std");
        conv.weight
            .iter_mut()
            .for_each(|w| *w = T::from_f64_lossy(normal.sample(rng)));
        conv
    }

    /// All-zero weights and bias.
    pub fn zeroed(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        assert!(kernel >= 1, "kernel must be at least 1");
        let fan_in = in_channels * kernel * kernel;
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: vec![T::zero(); out_channels * fan_in],
            bias: vec![T::zero(); out_channels],
            grad_weight: vec![T::zero(); out_channels * fan_in],
            grad_bias: vec![T::zero(); out_channels],
            input: None,
        }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn pad_before(&self) -> usize {
        (self.kernel - 1) / 2
    }

    fn im2col(&self, img: &[T], h: usize, w: usize, col: &mut [T]) {
        let k = self.kernel;
        let pb = self.pad_before() as isize;
        let hw = h * w;
        for ci in 0..self.in_channels {
            let plane = &img[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                    let dx = kx as isize - pb;
                    let x0 = (-dx).clamp(0, w as isize) as usize;
                    let x1 = (w as isize - dx).clamp(0, w as isize) as usize;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pb;
                        let out = &mut row[y * w..(y + 1) * w];
                        if sy < 0 || sy >= h as isize || x0 >= x1 {
                            out.fill(T::zero());
                            continue;
                        }
                        let src = &plane[sy as usize * w..][..w];
                        out[..x0].fill(T::zero());
                        out[x1..].fill(T::zero());
                        let s0 = (x0 as isize + dx) as usize;
                        out[x0..x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[T], h: usize, w: usize, img: &mut [T]) {
        let k = self.kernel;
        let pb = self.pad_before() as isize;
        let hw = h * w;
        for ci in 0..self.in_channels {
            let plane = &mut img[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                    let dx = kx as isize - pb;
                    let x0 = (-dx).clamp(0, w as isize) as usize;
                    let x1 = (w as isize - dx).clamp(0, w as isize) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pb;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[sy as usize * w..][..w];
                        let s0 = (x0 as isize + dx) as usize;
                        for (d, &v) in dst[s0..s0 + (x1 - x0)].iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_channels, "conv input channels");
        let hw = h * w;
        let kk = self.patch_len();
        let mut out = Tensor::zeros([n, self.out_channels, h, w]);
        let mut col = if self.kernel > 1 {
            vec![T::zero(); kk * hw]
        } else {
            Vec::new()
        };
        for b in 0..n {
            let img = x.image(b);
            let rhs: &[T] = if self.kernel == 1 {
                img
            } else {
                self.im2col(img, h, w, &mut col);
                &col
            };
            let dst = out.image_mut(b);
            matmul(
                self.out_channels,
                kk,
                hw,
                &self.weight,
                Transpose::No,
                rhs,
                Transpose::No,
                dst,
                false,
            );
            for (co, plane) in dst.chunks_exact_mut(hw).enumerate() {
                let bias = self.bias[co];
                plane.iter_mut().for_each(|v| *v += bias);
            }
        }
        self.input = Some(x);
        out
    }

    pub fn backward(&mut self, grad: Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("conv backward without forward");
        let [n, _, h, w] = x.shape();
        let hw = h * w;
        let kk = self.patch_len();
        let mut dx = Tensor::zeros(x.shape());
        let (mut col, mut dcol) = if self.kernel > 1 {
            (vec![T::zero(); kk * hw], vec![T::zero(); kk * hw])
        } else {
            (Vec::new(), Vec::new())
        };
        for b in 0..n {
            let g = grad.image(b);
            for (co, plane) in g.chunks_exact(hw).enumerate() {
                self.grad_bias[co] += plane.iter().copied().sum::<T>();
            }
            if self.kernel == 1 {
                let img = x.image(b);
                matmul(
                    self.out_channels,
                    hw,
                    kk,
                    g,
                    Transpose::No,
                    img,
                    Transpose::Yes,
                    &mut self.grad_weight,
                    true,
                );
                matmul(
                    kk,
                    self.out_channels,
                    hw,
                    &self.weight,
                    Transpose::Yes,
                    g,
                    Transpose::No,
                    dx.image_mut(b),
                    false,
                );
            } else {
                self.im2col(x.image(b), h, w, &mut col);
                matmul(
                    self.out_channels,
                    hw,
                    kk,
                    g,
                    Transpose::No,
                    &col,
                    Transpose::Yes,
                    &mut self.grad_weight,
                    true,
                );
                matmul(
                    kk,
                    self.out_channels,
                    hw,
                    &self.weight,
                    Transpose::Yes,
                    g,
                    Transpose::No,
                    &mut dcol,
                    false,
                );
                self.col2im(&dcol, h, w, dx.image_mut(b));
            }
        }
        dx
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub(crate) fn clear_cache(&mut self) {
        self.input = None;
    }
}

struct BnCache<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

/// Per-channel batch normalization with running statistics.
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
    cache: Option<BnCache<T>>,
}

impl<T> std::fmt::Debug for BatchNorm2d<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BatchNorm2d").field("channels", &self.channels).finish()
    }
}

impl<T: Clone> Clone for BatchNorm2d<T> {
    fn clone(&self) -> Self {
        Self {
            channels: self.channels,
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            running_mean: self.running_mean.clone(),
            running_var: self.running_var.clone(),
            grad_gamma: self.grad_gamma.clone(),
            grad_beta: self.grad_beta.clone(),
            cache: None,
        }
    }
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            grad_gamma: vec![T::zero(); channels],
            grad_beta: vec![T::zero(); channels],
            cache: None,
        }
    }

    pub fn forward(&mut self, mut x: Tensor<T>, mode: Mode) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels, "batch-norm channels");
        let hw = h * w;
        let count = (n * hw) as f64;
        let eps = BN_EPS;
        let mut inv_std = vec![T::zero(); c];
        let mut x_hat = vec![T::zero(); x.data().len()];
        for ch in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = 0.0;
                    for b in 0..n {
                        sum += x.image(b)[ch * hw..(ch + 1) * hw]
                            .iter()
                            .map(|v| v.to_f64_lossy())
                            .sum::<f64>();
                    }
                    let mean = sum / count;
                    let mut sq = 0.0;
                    for b in 0..n {
                        sq += x.image(b)[ch * hw..(ch + 1) * hw]
                            .iter()
                            .map(|v| {
                                let d = v.to_f64_lossy() - mean;
                                d * d
                            })
                            .sum::<f64>();
                    }
                    // tracked without Bessel's correction, so eval mode reproduces
                    // train mode on a fixed batch however few values a channel has
                    let var = sq / count;
                    let m = BN_MOMENTUM;
                    self.running_mean[ch] =
                        T::from_f64_lossy((1.0 - m) * self.running_mean[ch].to_f64_lossy() + m * mean);
                    self.running_var[ch] = T::from_f64_lossy((1.0 - m) * self.running_var[ch].to_f64_lossy() + m * var);
                    (mean, var)
                }
                Mode::Eval => (
                    self.running_mean[ch].to_f64_lossy(),
                    self.running_var[ch].to_f64_lossy(),
                ),
            };
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[ch] = T::from_f64_lossy(istd);
            let (mean_t, istd_t) = (T::from_f64_lossy(mean), T::from_f64_lossy(istd));
            let (g, bt) = (self.gamma[ch], self.beta[ch]);
            let len = c * hw;
            for b in 0..n {
                let base = b * len + ch * hw;
                for i in base..base + hw {
                    let xh = (x.data()[i] - mean_t) * istd_t;
                    x_hat[i] = xh;
                    x.data_mut()[i] = g * xh + bt;
                }
            }
        }
        self.cache = Some(BnCache { x_hat, inv_std, mode });
        x
    }

    pub fn backward(&mut self, mut grad: Tensor<T>) -> Tensor<T> {
        let cache = self.cache.take().expect("batch-norm backward without forward");
        let [n, c, h, w] = grad.shape();
        let hw = h * w;
        let len = c * hw;
        let count = T::from_usize(n * hw).unwrap();
        for ch in 0..c {
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for b in 0..n {
                let base = b * len + ch * hw;
                for i in base..base + hw {
                    let g = grad.data()[i];
                    sum_g += g;
                    sum_gx += g * cache.x_hat[i];
                }
            }
            self.grad_beta[ch] += sum_g;
            self.grad_gamma[ch] += sum_gx;
            let scale = self.gamma[ch] * cache.inv_std[ch];
            match cache.mode {
                Mode::Eval => {
                    for b in 0..n {
                        let base = b * len + ch * hw;
                        grad.data_mut()[base..base + hw].iter_mut().for_each(|g| *g *= scale);
                    }
                }
                Mode::Train => {
                    let mean_g = sum_g / count;
                    let mean_gx = sum_gx / count;
                    for b in 0..n {
                        let base = b * len + ch * hw;
                        for i in base..base + hw {
                            let g = grad.data()[i];
                            grad.data_mut()[i] = scale * (g - mean_g - cache.x_hat[i] * mean_gx);
                        }
                    }
                }
            }
        }
        grad
    }

    /// Scale, shift, running mean and running variance.
    pub fn param_count(&self) -> usize {
        4 * self.channels
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// One executable step of a network.
#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Relu {
        mask: Vec<bool>,
    },
    BatchNorm(BatchNorm2d<T>),
    /// 2x2 max pooling, stride 2.
    MaxPool {
        argmax: Vec<usize>,
        input_shape: [usize; 4],
    },
    /// Nearest-neighbour x2 upsampling.
    Upsample {
        input_shape: [usize; 4],
    },
    /// Pushes the current activation onto the skip stack.
    SaveSkip,
    /// Pops the skip stack and concatenates `[skip, current]` along channels.
    ConcatSkip {
        skip_channels: usize,
    },
}

impl<T: Scalar> Layer<T> {
    pub fn relu() -> Self {
        Layer::Relu { mask: Vec::new() }
    }

    pub fn max_pool() -> Self {
        Layer::MaxPool {
            argmax: Vec::new(),
            input_shape: [0; 4],
        }
    }

    pub fn upsample() -> Self {
        Layer::Upsample { input_shape: [0; 4] }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Relu { .. } => "relu",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::MaxPool { .. } => "max_pool",
            Layer::Upsample { .. } => "upsample",
            Layer::SaveSkip => "save_skip",
            Layer::ConcatSkip { .. } => "concat_skip",
        }
    }

    pub fn forward(&mut self, x: Tensor<T>, mode: Mode, skips: &mut Vec<Tensor<T>>) -> Tensor<T> {
        match self {
            Layer::Conv(conv) => conv.forward(x),
            Layer::BatchNorm(bn) => bn.forward(x, mode),
            Layer::Relu { mask } => {
                let mut x = x;
                mask.clear();
                mask.extend(x.data().iter().map(|&v| v > T::zero()));
                for (v, &keep) in x.data_mut().iter_mut().zip(mask.iter()) {
                    if !keep {
                        *v = T::zero();
                    }
                }
                x
            }
            Layer::MaxPool { argmax, input_shape } => {
                let [n, c, h, w] = x.shape();
                *input_shape = x.shape();
                let (oh, ow) = (h / 2, w / 2);
                let mut out = Tensor::zeros([n, c, oh, ow]);
                argmax.clear();
                argmax.reserve(n * c * oh * ow);
                let data = x.data();
                let mut k = 0;
                for plane in 0..n * c {
                    let base = plane * h * w;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = base + 2 * oy * w + 2 * ox;
                            for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                                if data[i] > data[best] {
                                    best = i;
                                }
                            }
                            out.data_mut()[k] = data[best];
                            argmax.push(best);
                            k += 1;
                        }
                    }
                }
                out
            }
            Layer::Upsample { input_shape } => {
                let [n, c, h, w] = x.shape();
                *input_shape = x.shape();
                let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
                let ow = 2 * w;
                for plane in 0..n * c {
                    let src = &x.data()[plane * h * w..(plane + 1) * h * w];
                    let dst = &mut out.data_mut()[plane * 4 * h * w..(plane + 1) * 4 * h * w];
                    for y in 0..2 * h {
                        let row = &src[(y / 2) * w..(y / 2 + 1) * w];
                        for (xo, d) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                            *d = row[xo / 2];
                        }
                    }
                }
                out
            }
            Layer::SaveSkip => {
                skips.push(x.clone());
                x
            }
            Layer::ConcatSkip { skip_channels } => {
                let skip = skips.pop().expect("concat without saved skip");
                let [n, c, h, w] = x.shape();
                assert_eq!(skip.shape(), [n, *skip_channels, h, w], "skip shape");
                let mut out = Tensor::zeros([n, c + *skip_channels, h, w]);
                for b in 0..n {
                    let dst = out.image_mut(b);
                    let split = *skip_channels * h * w;
                    dst[..split].copy_from_slice(skip.image(b));
                    dst[split..].copy_from_slice(x.image(b));
                }
                out
            }
        }
    }

    pub fn backward(&mut self, grad: Tensor<T>, skip_grads: &mut Vec<Tensor<T>>) -> Tensor<T> {
        match self {
            Layer::Conv(conv) => conv.backward(grad),
            Layer::BatchNorm(bn) => bn.backward(grad),
            Layer::Relu { mask } => {
                let mut grad = grad;
                for (g, &keep) in grad.data_mut().iter_mut().zip(mask.iter()) {
                    if !keep {
                        *g = T::zero();
                    }
                }
                grad
            }
            Layer::MaxPool { argmax, input_shape } => {
                let mut dx = Tensor::zeros(*input_shape);
                for (&i, &g) in argmax.iter().zip(grad.data()) {
                    dx.data_mut()[i] += g;
                }
                dx
            }
            Layer::Upsample { input_shape } => {
                let [n, c, h, w] = *input_shape;
                let mut dx = Tensor::zeros(*input_shape);
                let ow = 2 * w;
                for plane in 0..n * c {
                    let src = &grad.data()[plane * 4 * h * w..(plane + 1) * 4 * h * w];
                    let dst = &mut dx.data_mut()[plane * h * w..(plane + 1) * h * w];
                    for y in 0..2 * h {
                        for xo in 0..ow {
                            dst[(y / 2) * w + xo / 2] += src[y * ow + xo];
                        }
                    }
                }
                dx
            }
            Layer::SaveSkip => {
                let mut grad = grad;
                let skip = skip_grads.pop().expect("skip gradient missing");
                for (g, s) in grad.data_mut().iter_mut().zip(skip.data()) {
                    *g += *s;
                }
                grad
            }
            Layer::ConcatSkip { skip_channels } => {
                let [n, c, h, w] = grad.shape();
                let main = c - *skip_channels;
                let split = *skip_channels * h * w;
                let mut dskip = Tensor::zeros([n, *skip_channels, h, w]);
                let mut dmain = Tensor::zeros([n, main, h, w]);
                for b in 0..n {
                    let g = grad.image(b);
                    dskip.image_mut(b).copy_from_slice(&g[..split]);
                    dmain.image_mut(b).copy_from_slice(&g[split..]);
                }
                skip_grads.push(dskip);
                dmain
            }
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        match self {
            Layer::Conv(c) => c.clear_cache(),
            Layer::BatchNorm(b) => b.clear_cache(),
            Layer::Relu { mask } => *mask = Vec::new(),
            Layer::MaxPool { argmax, .. } => *argmax = Vec::new(),
            _ => {}
        }
    }
}
