//! Forward and backward kernels of the individual layers.

use super::tensor::{gemm, Act, Scalar};

/// Square convolution without bias, "same"-style padding `k / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn out_dim(&self, d: usize) -> usize {
        (d + 2 * self.pad() - self.k) / self.stride + 1
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// Unfolds one item `[cin][h][w]` into `[cin·k·k][ho·wo]`.
    fn im2col<T: Scalar>(&self, x: &[T], h: usize, w: usize, cols: &mut [T]) {
        let (ho, wo, pad) = (self.out_dim(h), self.out_dim(w), self.pad() as isize);
        let s = self.stride as isize;
        let mut row = 0;
        for c in 0..self.cin {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..self.k as isize {
                for kx in 0..self.k as isize {
                    let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = oy as isize * s + ky - pad;
                        let line = &mut dst[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = ox as isize * s + kx - pad;
                            *v = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adds `[cin·k·k][ho·wo]` columns back into one item `[cin][h][w]`.
    fn col2im<T: Scalar>(&self, cols: &[T], h: usize, w: usize, x: &mut [T]) {
        let (ho, wo, pad) = (self.out_dim(h), self.out_dim(w), self.pad() as isize);
        let s = self.stride as isize;
        let mut row = 0;
        for c in 0..self.cin {
            let plane = &mut x[c * h * w..(c + 1) * h * w];
            for ky in 0..self.k as isize {
                for kx in 0..self.k as isize {
                    let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = oy as isize * s + ky - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = ox as isize * s + kx - pad;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] = dst[ix as usize] + src[oy * wo + ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    pub fn forward<T: Scalar>(&self, weight: &[T], x: &Act<T>) -> Act<T> {
        debug_assert_eq!(x.channels, self.cin);
        let (ho, wo) = (self.out_dim(x.height), self.out_dim(x.width));
        let mut y = Act::zeros(x.batch, self.cout, ho, wo);
        let mut cols = vec![T::zero(); self.patch() * ho * wo];
        let out_len = self.cout * ho * wo;
        for b in 0..x.batch {
            self.im2col(x.item(b), x.height, x.width, &mut cols);
            let yb = &mut y.data[b * out_len..(b + 1) * out_len];
            gemm(false, false, self.cout, self.patch(), ho * wo, weight, &cols, T::zero(), yb);
        }
        y
    }

    /// Accumulates the weight gradient into `dweight` and returns the input
    /// gradient when `need_dx`.
    pub fn backward<T: Scalar>(&self, weight: &[T], x: &Act<T>, dy: &Act<T>, dweight: &mut [T], need_dx: bool) -> Option<Act<T>> {
        let (ho, wo) = (dy.height, dy.width);
        let mut cols = vec![T::zero(); self.patch() * ho * wo];
        let mut dcols = vec![T::zero(); if need_dx { self.patch() * ho * wo } else { 0 }];
        let mut dx = need_dx.then(|| x.same_shape());
        let in_len = x.item_len();
        for b in 0..x.batch {
            self.im2col(x.item(b), x.height, x.width, &mut cols);
            let dyb = dy.item(b);
            gemm(false, true, self.cout, ho * wo, self.patch(), dyb, &cols, T::one(), dweight);
            if let Some(dx) = dx.as_mut() {
                gemm(true, false, self.patch(), self.cout, ho * wo, weight, dyb, T::zero(), &mut dcols);
                self.col2im(&dcols, x.height, x.width, &mut dx.data[b * in_len..(b + 1) * in_len]);
            }
        }
        dx
    }
}

/// Per-channel statistics kept by a training-mode batch norm for backward.
#[derive(Debug, Clone)]
pub struct BnTape<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Unbiased batch variance, for the running estimate.
    pub var_unbiased: Vec<f64>,
}

/// Batch norm over batch and spatial positions using batch statistics.
pub fn bn_forward_train<T: Scalar>(x: &Act<T>, gamma: &[T], beta: &[T], eps: f64) -> (Act<T>, BnTape<T>) {
    let (c_n, plane) = (x.channels, x.plane());
    let n = (x.batch * plane) as f64;
    let mut y = x.same_shape();
    let mut xhat = vec![T::zero(); x.data.len()];
    let mut tape = BnTape {
        xhat: Vec::new(),
        inv_std: vec![0.0; c_n],
        mean: vec![0.0; c_n],
        var_unbiased: vec![0.0; c_n],
    };
    for c in 0..c_n {
        let slices = || (0..x.batch).map(move |b| (b * c_n + c) * plane);
        let mut sum = 0.0;
        for o in slices() {
            sum += x.data[o..o + plane].iter().map(|v| v.f64()).sum::<f64>();
        }
        let mean = sum / n;
        let mut ss = 0.0;
        for o in slices() {
            ss += x.data[o..o + plane].iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>();
        }
        let var = ss / n;
        let inv = 1.0 / (var + eps).sqrt();
        let (g, bt) = (gamma[c].f64(), beta[c].f64());
        for o in slices() {
            for i in o..o + plane {
                let h = (x.data[i].f64() - mean) * inv;
                xhat[i] = T::of(h);
                y.data[i] = T::of(g * h + bt);
            }
        }
        tape.inv_std[c] = inv;
        tape.mean[c] = mean;
        tape.var_unbiased[c] = if n > 1.0 { ss / (n - 1.0) } else { 0.0 };
    }
    tape.xhat = xhat;
    (y, tape)
}

pub fn bn_forward_eval<T: Scalar>(x: &Act<T>, gamma: &[T], beta: &[T], mean: &[T], var: &[T], eps: f64) -> Act<T> {
    let (c_n, plane) = (x.channels, x.plane());
    let mut y = x.same_shape();
    for b in 0..x.batch {
        for c in 0..c_n {
            let scale = gamma[c].f64() / (var[c].f64() + eps).sqrt();
            let shift = beta[c].f64() - mean[c].f64() * scale;
            let o = (b * c_n + c) * plane;
            for i in o..o + plane {
                y.data[i] = T::of(x.data[i].f64() * scale + shift);
            }
        }
    }
    y
}

/// Returns the input gradient and accumulates `dgamma`, `dbeta`.
pub fn bn_backward<T: Scalar>(tape: &BnTape<T>, gamma: &[T], dy: &Act<T>, dgamma: &mut [T], dbeta: &mut [T]) -> Act<T> {
    let (c_n, plane) = (dy.channels, dy.plane());
    let n = (dy.batch * plane) as f64;
    let mut dx = dy.same_shape();
    for c in 0..c_n {
        let offsets: Vec<usize> = (0..dy.batch).map(|b| (b * c_n + c) * plane).collect();
        let (mut sdy, mut sdyx) = (0.0, 0.0);
        for &o in &offsets {
            for i in o..o + plane {
                let d = dy.data[i].f64();
                sdy += d;
                sdyx += d * tape.xhat[i].f64();
            }
        }
        dgamma[c] = dgamma[c] + T::of(sdyx);
        dbeta[c] = dbeta[c] + T::of(sdy);
        let k = gamma[c].f64() * tape.inv_std[c] / n;
        for &o in &offsets {
            for i in o..o + plane {
                dx.data[i] = T::of(k * (n * dy.data[i].f64() - sdy - tape.xhat[i].f64() * sdyx));
            }
        }
    }
    dx
}

pub fn relu_inplace<T: Scalar>(x: &mut Act<T>) {
    for v in &mut x.data {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

/// Zeroes `dy` wherever the ReLU output `y` was not positive.
pub fn relu_backward_inplace<T: Scalar>(y: &Act<T>, dy: &mut Act<T>) {
    for (d, v) in dy.data.iter_mut().zip(&y.data) {
        if !(*v > T::zero()) {
            *d = T::zero();
        }
    }
}

/// Global average pool to `[batch][channels]`.
pub fn gap_forward<T: Scalar>(x: &Act<T>) -> Vec<T> {
    let plane = x.plane();
    x.data.chunks(plane).map(|p| T::of(p.iter().map(|v| v.f64()).sum::<f64>() / plane as f64)).collect()
}

pub fn gap_backward<T: Scalar>(dpooled: &[T], like: &Act<T>) -> Act<T> {
    let plane = like.plane();
    let mut dx = like.same_shape();
    for (chunk, d) in dx.data.chunks_mut(plane).zip(dpooled) {
        chunk.fill(T::of(d.f64() / plane as f64));
    }
    dx
}

/// One logit per item: `w · pooled + b`.
pub fn dense_forward<T: Scalar>(pooled: &[T], channels: usize, w: &[T], bias: T) -> Vec<T> {
    pooled
        .chunks(channels)
        .map(|p| T::of(p.iter().zip(w).map(|(a, b)| a.f64() * b.f64()).sum::<f64>() + bias.f64()))
        .collect()
}

/// Returns the pooled-feature gradient; accumulates `dw`, `dbias`.
pub fn dense_backward<T: Scalar>(pooled: &[T], channels: usize, w: &[T], dlogits: &[T], dw: &mut [T], dbias: &mut T) -> Vec<T> {
    let mut dp = vec![T::zero(); pooled.len()];
    for (b, &dl) in dlogits.iter().enumerate() {
        let p = &pooled[b * channels..(b + 1) * channels];
        for c in 0..channels {
            dw[c] = dw[c] + dl * p[c];
            dp[b * channels + c] = dl * w[c];
        }
        *dbias = *dbias + dl;
    }
    dp
}
