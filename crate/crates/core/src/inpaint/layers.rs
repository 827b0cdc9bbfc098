//! Network building blocks with explicit forward caches and backward passes.

use super::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

const NORM_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.2;

/// 2-D convolution, square kernel, zero padding k/2 ("same" for stride 1,
/// exact halving for stride 2 on even inputs).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    /// (out_c, in_c * k * k), row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    /// Fan-in-scaled uniform init.
    pub fn init(in_c: usize, out_c: usize, k: usize, stride: usize, rng: &mut ChaCha12Rng) -> Self {
        let fan_in = (in_c * k * k) as f64;
        let bound = (1.0 / fan_in).sqrt();
        let weight = (0..out_c * in_c * k * k)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let bias = (0..out_c).map(|_| rng.gen_range(-bound..bound)).collect();
        Self {
            in_c,
            out_c,
            k,
            stride,
            weight,
            bias,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let pad = self.k / 2;
        (
            (h + 2 * pad - self.k) / self.stride + 1,
            (w + 2 * pad - self.k) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &Tensor, oh: usize, ow: usize) -> Vec<f64> {
        let k = self.k;
        let pad = (k / 2) as isize;
        let kk = self.in_c * k * k;
        let n = oh * ow;
        let mut cols = vec![0.0; kk * n];
        for c in 0..self.in_c {
            let plane = x.plane(c);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..oh {
                        let sy = (oy * self.stride + ky) as isize - pad;
                        if sy < 0 || sy >= x.h as isize {
                            continue;
                        }
                        let src_row = &plane[sy as usize * x.w..(sy as usize + 1) * x.w];
                        let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                        if self.stride == 1 {
                            // Contiguous span: ox + kx - pad must land in
                            // [0, x.w).
                            let lo = (pad - kx as isize).max(0) as usize;
                            let hi = ((x.w as isize + pad - kx as isize).min(ow as isize)) as usize;
                            if lo < hi {
                                let s0 = (lo as isize + kx as isize - pad) as usize;
                                dst_row[lo..hi].copy_from_slice(&src_row[s0..s0 + (hi - lo)]);
                            }
                        } else {
                            for (ox, d) in dst_row.iter_mut().enumerate() {
                                let sx = (ox * self.stride + kx) as isize - pad;
                                if sx >= 0 && sx < x.w as isize {
                                    *d = src_row[sx as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (oh, ow) = self.out_size(x.h, x.w);
        let n = oh * ow;
        let kk = self.in_c * self.k * self.k;
        let cols = self.im2col(x, oh, ow);
        let mut out = Tensor::zeros(self.out_c, oh, ow);
        unsafe {
            matrixmultiply::dgemm(
                self.out_c,
                kk,
                n,
                1.0,
                self.weight.as_ptr(),
                kk as isize,
                1,
                cols.as_ptr(),
                n as isize,
                1,
                0.0,
                out.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        for c in 0..self.out_c {
            let b = self.bias[c];
            for v in &mut out.data[c * n..(c + 1) * n] {
                *v += b;
            }
        }
        out
    }

    /// Returns (grad_input, grad_weight, grad_bias).
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
        let (oh, ow) = (grad_out.h, grad_out.w);
        let n = oh * ow;
        let kk = self.in_c * self.k * self.k;
        let cols = self.im2col(x, oh, ow);

        // grad_w = grad_out (out_c x n) * cols^T (n x kk)
        let mut grad_w = vec![0.0; self.out_c * kk];
        unsafe {
            matrixmultiply::dgemm(
                self.out_c,
                n,
                kk,
                1.0,
                grad_out.data.as_ptr(),
                n as isize,
                1,
                cols.as_ptr(),
                1,
                n as isize,
                0.0,
                grad_w.as_mut_ptr(),
                kk as isize,
                1,
            );
        }
        let grad_b: Vec<f64> = (0..self.out_c)
            .map(|c| grad_out.data[c * n..(c + 1) * n].iter().sum())
            .collect();

        // grad_cols = weight^T (kk x out_c) * grad_out (out_c x n)
        let mut grad_cols = vec![0.0; kk * n];
        unsafe {
            matrixmultiply::dgemm(
                kk,
                self.out_c,
                n,
                1.0,
                self.weight.as_ptr(),
                1,
                kk as isize,
                grad_out.data.as_ptr(),
                n as isize,
                1,
                0.0,
                grad_cols.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        // col2im scatter-add.
        let mut grad_x = Tensor::zeros(x.c, x.h, x.w);
        let k = self.k;
        let pad = (k / 2) as isize;
        for c in 0..self.in_c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &grad_cols[row * n..(row + 1) * n];
                    for oy in 0..oh {
                        let sy = (oy * self.stride + ky) as isize - pad;
                        if sy < 0 || sy >= x.h as isize {
                            continue;
                        }
                        let base = (c * x.h + sy as usize) * x.w;
                        let src_row = &src[oy * ow..(oy + 1) * ow];
                        if self.stride == 1 {
                            let lo = (pad - kx as isize).max(0) as usize;
                            let hi = ((x.w as isize + pad - kx as isize).min(ow as isize)) as usize;
                            if lo < hi {
                                let s0 = (lo as isize + kx as isize - pad) as usize;
                                let dst_row = &mut grad_x.data[base + s0..base + s0 + (hi - lo)];
                                for (d, s) in dst_row.iter_mut().zip(&src_row[lo..hi]) {
                                    *d += s;
                                }
                            }
                        } else {
                            for (ox, s) in src_row.iter().enumerate() {
                                let sx = (ox * self.stride + kx) as isize - pad;
                                if sx >= 0 && sx < x.w as isize {
                                    grad_x.data[base + sx as usize] += s;
                                }
                            }
                        }
                    }
                }
            }
        }
        (grad_x, grad_w, grad_b)
    }
}

/// Per-channel instance normalization with learnable gain and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceNorm {
    pub channels: usize,
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

pub struct NormCache {
    normed: Tensor,
    inv_std: Vec<f64>,
}

impl InstanceNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gain: vec![1.0; channels],
            bias: vec![0.0; channels],
        }
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, NormCache) {
        let n = (x.h * x.w) as f64;
        let mut out = x.clone();
        let mut normed = Tensor::zeros(x.c, x.h, x.w);
        let mut inv_std = vec![0.0; x.c];
        let len = x.h * x.w;
        for (c, istd_slot) in inv_std.iter_mut().enumerate() {
            let plane = x.plane(c);
            let mean = plane.iter().sum::<f64>() / n;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let istd = 1.0 / (var + NORM_EPS).sqrt();
            *istd_slot = istd;
            let (g, b) = (self.gain[c], self.bias[c]);
            for (i, &pv) in plane.iter().enumerate() {
                let xn = (pv - mean) * istd;
                normed.data[c * len + i] = xn;
                out.data[c * len + i] = g * xn + b;
            }
        }
        (out, NormCache { normed, inv_std })
    }

    /// Returns (grad_input, grad_gain, grad_bias).
    pub fn backward(&self, cache: &NormCache, grad_out: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
        let n = (grad_out.h * grad_out.w) as f64;
        let len = grad_out.h * grad_out.w;
        let mut grad_x = Tensor::zeros(grad_out.c, grad_out.h, grad_out.w);
        let mut grad_gain = vec![0.0; self.channels];
        let mut grad_bias = vec![0.0; self.channels];
        for c in 0..grad_out.c {
            let dy = &grad_out.data[c * len..(c + 1) * len];
            let xn = &cache.normed.data[c * len..(c + 1) * len];
            let g = self.gain[c];
            let mut sum_dy = 0.0;
            let mut sum_dy_xn = 0.0;
            for i in 0..len {
                sum_dy += dy[i];
                sum_dy_xn += dy[i] * xn[i];
            }
            grad_bias[c] = sum_dy;
            grad_gain[c] = sum_dy_xn;
            let k = g * cache.inv_std[c];
            for i in 0..len {
                grad_x.data[c * len + i] = k * (dy[i] - sum_dy / n - xn[i] * sum_dy_xn / n);
            }
        }
        (grad_x, grad_gain, grad_bias)
    }
}

/// Leaky rectifier.
pub fn leaky_relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in &mut out.data {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
    out
}

pub fn leaky_relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut grad = grad_out.clone();
    for (g, &v) in grad.data.iter_mut().zip(&x.data) {
        if v < 0.0 {
            *g *= LEAKY_SLOPE;
        }
    }
    grad
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_tensor(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in &mut out.data {
        *v = sigmoid(*v);
    }
    out
}

/// Backward through an elementwise sigmoid given its output.
pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut grad = grad_out.clone();
    for (g, &yv) in grad.data.iter_mut().zip(&y.data) {
        *g *= yv * (1.0 - yv);
    }
    grad
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.c, x.h * 2, x.w * 2);
    for c in 0..x.c {
        for y in 0..x.h {
            for xx in 0..x.w {
                let v = x.at(c, y, xx);
                *out.at_mut(c, 2 * y, 2 * xx) = v;
                *out.at_mut(c, 2 * y, 2 * xx + 1) = v;
                *out.at_mut(c, 2 * y + 1, 2 * xx) = v;
                *out.at_mut(c, 2 * y + 1, 2 * xx + 1) = v;
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &Tensor) -> Tensor {
    let (c, h, w) = (grad_out.c, grad_out.h / 2, grad_out.w / 2);
    let mut grad = Tensor::zeros(c, h, w);
    for cc in 0..c {
        for y in 0..h {
            for x in 0..w {
                *grad.at_mut(cc, y, x) = grad_out.at(cc, 2 * y, 2 * x)
                    + grad_out.at(cc, 2 * y, 2 * x + 1)
                    + grad_out.at(cc, 2 * y + 1, 2 * x)
                    + grad_out.at(cc, 2 * y + 1, 2 * x + 1);
            }
        }
    }
    grad
}

/// Fully connected head used by the discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub weight: Vec<f64>,
    /// Single-element bias, kept as a vector for uniform optimizer slots.
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn init(in_dim: usize, rng: &mut ChaCha12Rng) -> Self {
        let bound = (1.0 / in_dim as f64).sqrt();
        Self {
            in_dim,
            weight: (0..in_dim).map(|_| rng.gen_range(-bound..bound)).collect(),
            bias: vec![rng.gen_range(-bound..bound)],
        }
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        self.weight.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[0]
    }

    /// Returns (grad_input, grad_weight, grad_bias) for a scalar output grad.
    pub fn backward(&self, x: &[f64], grad_out: f64) -> (Vec<f64>, Vec<f64>, f64) {
        let grad_in = self.weight.iter().map(|w| w * grad_out).collect();
        let grad_w = x.iter().map(|v| v * grad_out).collect();
        (grad_in, grad_w, grad_out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn rng() -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(1)
    }

    fn random_tensor(c: usize, h: usize, w: usize, rng: &mut ChaCha12Rng) -> Tensor {
        let mut t = Tensor::zeros(c, h, w);
        for v in &mut t.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        t
    }

    /// Scalar probe loss: weighted sum of the output entries.
    fn probe_loss(t: &Tensor, weights: &Tensor) -> f64 {
        t.data.iter().zip(&weights.data).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn conv_stride1_matches_direct_convolution() {
        let mut r = rng();
        let conv = Conv2d::init(2, 3, 3, 1, &mut r);
        let x = random_tensor(2, 5, 5, &mut r);
        let y = conv.forward(&x);
        assert_eq!((y.c, y.h, y.w), (3, 5, 5));
        // Direct nested-loop oracle.
        for oc in 0..3 {
            for oy in 0..5usize {
                for ox in 0..5usize {
                    let mut acc = conv.bias[oc];
                    for ic in 0..2 {
                        for ky in 0..3usize {
                            for kx in 0..3usize {
                                let sy = oy as isize + ky as isize - 1;
                                let sx = ox as isize + kx as isize - 1;
                                if !(0..5).contains(&sy) || !(0..5).contains(&sx) {
                                    continue;
                                }
                                let w = conv.weight[((oc * 2 + ic) * 3 + ky) * 3 + kx];
                                acc += w * x.at(ic, sy as usize, sx as usize);
                            }
                        }
                    }
                    assert_relative_eq!(y.at(oc, oy, ox), acc, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_stride2_halves_even_inputs() {
        let mut r = rng();
        let conv = Conv2d::init(1, 2, 3, 2, &mut r);
        let x = random_tensor(1, 8, 8, &mut r);
        let y = conv.forward(&x);
        assert_eq!((y.h, y.w), (4, 4));
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut r = rng();
        let conv = Conv2d::init(2, 2, 3, 2, &mut r);
        let x = random_tensor(2, 6, 6, &mut r);
        let y = conv.forward(&x);
        let probe = random_tensor(y.c, y.h, y.w, &mut r);
        let (gx, gw, gb) = conv.backward(&x, &probe);

        let h = 1e-6;
        // Input gradient.
        for idx in [0usize, 7, 20, 71] {
            let mut xp = x.clone();
            xp.data[idx] += h;
            let mut xm = x.clone();
            xm.data[idx] -= h;
            let fd = (probe_loss(&conv.forward(&xp), &probe)
                - probe_loss(&conv.forward(&xm), &probe))
                / (2.0 * h);
            assert_relative_eq!(gx.data[idx], fd, epsilon = 1e-6, max_relative = 1e-6);
        }
        let _ = &gx;
        // Weight gradient.
        for idx in [0usize, 5, 17, 35] {
            let mut cp = conv.clone();
            cp.weight[idx] += h;
            let mut cm = conv.clone();
            cm.weight[idx] -= h;
            let fd = (probe_loss(&cp.forward(&x), &probe) - probe_loss(&cm.forward(&x), &probe))
                / (2.0 * h);
            assert_relative_eq!(gw[idx], fd, epsilon = 1e-6, max_relative = 1e-6);
        }
        // Bias gradient.
        for idx in [0usize, 1] {
            let mut cp = conv.clone();
            cp.bias[idx] += h;
            let mut cm = conv.clone();
            cm.bias[idx] -= h;
            let fd = (probe_loss(&cp.forward(&x), &probe) - probe_loss(&cm.forward(&x), &probe))
                / (2.0 * h);
            assert_relative_eq!(gb[idx], fd, epsilon = 1e-6, max_relative = 1e-6);
        }
    }

    #[test]
    fn instance_norm_normalizes_and_backward_matches_fd() {
        let mut r = rng();
        let mut norm = InstanceNorm::new(2);
        norm.gain = vec![1.3, 0.7];
        norm.bias = vec![0.1, -0.2];
        let x = random_tensor(2, 4, 4, &mut r);
        let (y, cache) = norm.forward(&x);
        // Per-channel standardization before gain/bias.
        for c in 0..2 {
            let plane = &cache.normed.data[c * 16..(c + 1) * 16];
            let mean: f64 = plane.iter().sum::<f64>() / 16.0;
            let var: f64 = plane.iter().map(|v| v * v).sum::<f64>() / 16.0 - mean * mean;
            assert_relative_eq!(mean, 0.0, epsilon = 1e-12);
            assert_relative_eq!(var, 1.0, epsilon = 1e-4);
        }
        let probe = random_tensor(2, 4, 4, &mut r);
        let (gx, gg, gb) = norm.backward(&cache, &probe);
        let h = 1e-6;
        for idx in [0usize, 9, 31] {
            let mut xp = x.clone();
            xp.data[idx] += h;
            let mut xm = x.clone();
            xm.data[idx] -= h;
            let fd = (probe_loss(&norm.forward(&xp).0, &probe)
                - probe_loss(&norm.forward(&xm).0, &probe))
                / (2.0 * h);
            assert_relative_eq!(gx.data[idx], fd, epsilon = 1e-5, max_relative = 1e-5);
        }
        for c in 0..2 {
            let mut np = norm.clone();
            np.gain[c] += h;
            let mut nm = norm.clone();
            nm.gain[c] -= h;
            let fd = (probe_loss(&np.forward(&x).0, &probe)
                - probe_loss(&nm.forward(&x).0, &probe))
                / (2.0 * h);
            assert_relative_eq!(gg[c], fd, epsilon = 1e-6, max_relative = 1e-6);
            let _ = gb[c];
        }
        let _ = y;
    }

    #[test]
    fn upsample_backward_sums_blocks() {
        let mut r = rng();
        let x = random_tensor(2, 3, 3, &mut r);
        let y = upsample2(&x);
        assert_eq!((y.h, y.w), (6, 6));
        assert_eq!(y.at(0, 1, 1), x.at(0, 0, 0));
        let probe = random_tensor(2, 6, 6, &mut r);
        let gx = upsample2_backward(&probe);
        let h = 1e-6;
        for idx in [0usize, 5, 17] {
            let mut xp = x.clone();
            xp.data[idx] += h;
            let mut xm = x.clone();
            xm.data[idx] -= h;
            let fd = (probe_loss(&upsample2(&xp), &probe) - probe_loss(&upsample2(&xm), &probe))
                / (2.0 * h);
            assert_relative_eq!(gx.data[idx], fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn sigmoid_is_stable_and_bounded() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        assert_relative_eq!(sigmoid(3.0) + sigmoid(-3.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn leaky_relu_slope() {
        let mut x = Tensor::zeros(1, 1, 2);
        x.data = vec![2.0, -2.0];
        let y = leaky_relu(&x);
        assert_eq!(y.data, vec![2.0, -0.4]);
        let mut g = Tensor::zeros(1, 1, 2);
        g.data = vec![1.0, 1.0];
        let gx = leaky_relu_backward(&x, &g);
        assert_eq!(gx.data, vec![1.0, LEAKY_SLOPE]);
    }
}
