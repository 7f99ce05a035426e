//! Model layers with explicit forward and backward passes.
//!
//! Everything runs in f64 with fixed reduction orders: per-image work is
//! parallelized with rayon, per-parameter gradient reductions happen
//! sequentially in image order, so results are bit-identical across runs
//! regardless of thread count.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::tensor::Tensor4;

/// 2-D convolution with square kernel.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Layout: (out_c, in_c, ky, kx).
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Option<Vec<f64>>,
}

impl Conv2d {
    /// Fan-in scaled normal init (gain for a following rectifier).
    pub fn new_kaiming(in_c: usize, out_c: usize, kernel: usize, stride: usize, pad: usize, with_bias: bool, rng: &mut impl Rng) -> Self {
        let fan_in = (in_c * kernel * kernel) as f64;
        let std = (2.0 / fan_in).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let weight: Vec<f64> = (0..out_c * in_c * kernel * kernel).map(|_| normal.sample(rng)).collect();
        let bias = with_bias.then(|| vec![0.0; out_c]);
        Self {
            in_c,
            out_c,
            kernel,
            stride,
            pad,
            grad_weight: vec![0.0; weight.len()],
            grad_bias: bias.as_ref().map(|b| vec![0.0; b.len()]),
            weight,
            bias,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    // Valid output-column range for a kernel column offset kx:
    // ix = ox*stride + kx - pad must land in [0, w).
    #[inline]
    fn ox_range(&self, kx: usize, w: usize, ow: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let shift = kx as isize - self.pad as isize;
        let lo = (-shift + s - 1).div_euclid(s).max(0) as usize;
        let hi_excl = ((w as isize - shift + s - 1).div_euclid(s)).clamp(0, ow as isize) as usize;
        (lo.min(hi_excl), hi_excl)
    }

    pub fn forward(&self, x: &Tensor4) -> Tensor4 {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let (oh, ow) = self.out_hw(x.h, x.w);
        let mut out = Tensor4::zeros(x.n, self.out_c, oh, ow);
        let (h, w, k, s, p) = (x.h, x.w, self.kernel, self.stride, self.pad);
        let img_len = out.image_len();
        out.data
            .par_chunks_mut(img_len)
            .enumerate()
            .for_each(|(n, out_img)| {
                let x_img = x.image(n);
                for oc in 0..self.out_c {
                    let out_plane = &mut out_img[oc * oh * ow..(oc + 1) * oh * ow];
                    if let Some(b) = &self.bias {
                        out_plane.fill(b[oc]);
                    }
                    for ic in 0..self.in_c {
                        let x_plane = &x_img[ic * h * w..(ic + 1) * h * w];
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = self.weight[((oc * self.in_c + ic) * k + ky) * k + kx];
                                let (ox_lo, ox_hi) = self.ox_range(kx, w, ow);
                                if ox_lo >= ox_hi {
                                    continue;
                                }
                                for oy in 0..oh {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let ix0 = (ox_lo * s + kx) as isize - p as isize;
                                    let src_base = iy as usize * w + ix0 as usize;
                                    let dst = &mut out_plane[oy * ow + ox_lo..oy * ow + ox_hi];
                                    if s == 1 {
                                        let src = &x_plane[src_base..src_base + dst.len()];
                                        for (d, &sv) in dst.iter_mut().zip(src) {
                                            *d += wv * sv;
                                        }
                                    } else {
                                        for (j, d) in dst.iter_mut().enumerate() {
                                            *d += wv * x_plane[src_base + j * s];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        out
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor4, dy: &Tensor4) -> Tensor4 {
        let (oh, ow) = self.out_hw(x.h, x.w);
        assert_eq!((dy.c, dy.h, dy.w), (self.out_c, oh, ow), "conv grad shape");
        let (h, w, k, s, p) = (x.h, x.w, self.kernel, self.stride, self.pad);
        let mut dx = Tensor4::zeros(x.n, self.in_c, h, w);

        let wlen = self.weight.len();
        let dx_len = dx.image_len();
        let partials: Vec<(Vec<f64>, Vec<f64>)> = dx
            .data
            .par_chunks_mut(dx_len)
            .enumerate()
            .map(|(n, dx_img)| {
                let x_img = x.image(n);
                let dy_img = dy.image(n);
                let mut dw = vec![0.0; wlen];
                let mut db = vec![0.0; if self.bias.is_some() { self.out_c } else { 0 }];
                for oc in 0..self.out_c {
                    let dy_plane = &dy_img[oc * oh * ow..(oc + 1) * oh * ow];
                    if self.bias.is_some() {
                        db[oc] = dy_plane.iter().sum();
                    }
                    for ic in 0..self.in_c {
                        let x_plane = &x_img[ic * h * w..(ic + 1) * h * w];
                        let dx_plane = &mut dx_img[ic * h * w..(ic + 1) * h * w];
                        for ky in 0..k {
                            for kx in 0..k {
                                let widx = ((oc * self.in_c + ic) * k + ky) * k + kx;
                                let wv = self.weight[widx];
                                let mut acc = 0.0;
                                let (ox_lo, ox_hi) = self.ox_range(kx, w, ow);
                                if ox_lo >= ox_hi {
                                    continue;
                                }
                                for oy in 0..oh {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let ix0 = (ox_lo * s + kx) as isize - p as isize;
                                    let src_base = iy as usize * w + ix0 as usize;
                                    let dyrow = &dy_plane[oy * ow + ox_lo..oy * ow + ox_hi];
                                    if s == 1 {
                                        let xrow = &x_plane[src_base..src_base + dyrow.len()];
                                        let dxrow = &mut dx_plane[src_base..src_base + dyrow.len()];
                                        for ((&g, &xv), dxv) in dyrow.iter().zip(xrow).zip(dxrow.iter_mut()) {
                                            acc += g * xv;
                                            *dxv += wv * g;
                                        }
                                    } else {
                                        for (j, &g) in dyrow.iter().enumerate() {
                                            let si = src_base + j * s;
                                            acc += g * x_plane[si];
                                            dx_plane[si] += wv * g;
                                        }
                                    }
                                }
                                dw[widx] += acc;
                            }
                        }
                    }
                }
                (dw, db)
            })
            .collect();

        // Sequential reduction in image order keeps gradients bit-stable.
        for (dw, db) in &partials {
            for (g, &d) in self.grad_weight.iter_mut().zip(dw) {
                *g += d;
            }
            if let Some(gb) = &mut self.grad_bias {
                for (g, &d) in gb.iter_mut().zip(db) {
                    *g += d;
                }
            }
        }
        dx
    }

    pub fn zero_grads(&mut self) {
        self.grad_weight.fill(0.0);
        if let Some(gb) = &mut self.grad_bias {
            gb.fill(0.0);
        }
    }
}

/// Per-channel batch normalization.
///
/// Training mode normalizes with batch statistics over (image, row, col) and
/// updates running averages; evaluation mode uses the stored averages only.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub c: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Batch statistics cached for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm2d {
    pub fn new(c: usize) -> Self {
        Self {
            c,
            eps: 1e-5,
            momentum: 0.1,
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            grad_gamma: vec![0.0; c],
            grad_beta: vec![0.0; c],
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
        }
    }

    pub fn forward_train(&mut self, x: &Tensor4) -> (Tensor4, BnCache) {
        assert_eq!(x.c, self.c);
        let count = (x.n * x.h * x.w) as f64;
        let mut mean = vec![0.0; self.c];
        let mut var = vec![0.0; self.c];
        for c in 0..self.c {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for n in 0..x.n {
                for &v in x.plane(n, c) {
                    sum += v;
                    sum_sq += v * v;
                }
            }
            let m = sum / count;
            mean[c] = m;
            var[c] = (sum_sq / count - m * m).max(0.0);
        }
        for c in 0..self.c {
            self.running_mean[c] = (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean[c];
            self.running_var[c] = (1.0 - self.momentum) * self.running_var[c] + self.momentum * var[c];
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + self.eps).sqrt()).collect();
        let out = self.normalize(x, &mean, &inv_std);
        (out, BnCache { mean, inv_std })
    }

    pub fn forward_eval(&self, x: &Tensor4) -> Tensor4 {
        assert_eq!(x.c, self.c);
        let inv_std: Vec<f64> = self.running_var.iter().map(|&v| 1.0 / (v + self.eps).sqrt()).collect();
        self.normalize(x, &self.running_mean, &inv_std)
    }

    fn normalize(&self, x: &Tensor4, mean: &[f64], inv_std: &[f64]) -> Tensor4 {
        let mut out = Tensor4::zeros(x.n, x.c, x.h, x.w);
        let hw = x.h * x.w;
        let img_len = x.image_len();
        out.data
            .par_chunks_mut(img_len)
            .enumerate()
            .for_each(|(n, out_img)| {
                let x_img = x.image(n);
                for c in 0..self.c {
                    let scale = self.gamma[c] * inv_std[c];
                    let shift = self.beta[c] - scale * mean[c];
                    let src = &x_img[c * hw..(c + 1) * hw];
                    let dst = &mut out_img[c * hw..(c + 1) * hw];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = scale * v + shift;
                    }
                }
            });
        out
    }

    pub fn backward(&mut self, x: &Tensor4, dy: &Tensor4, cache: &BnCache) -> Tensor4 {
        assert!(x.same_shape(dy));
        let count = (x.n * x.h * x.w) as f64;
        let hw = x.h * x.w;
        let mut dx = Tensor4::zeros(x.n, x.c, x.h, x.w);

        // Per-channel sums, sequential over images for determinism.
        let stats: Vec<(f64, f64)> = (0..self.c)
            .into_par_iter()
            .map(|c| {
                let mut sum_dy = 0.0;
                let mut sum_dy_xhat = 0.0;
                for n in 0..x.n {
                    let xp = x.plane(n, c);
                    let dp = dy.plane(n, c);
                    for (&xv, &g) in xp.iter().zip(dp) {
                        let xhat = (xv - cache.mean[c]) * cache.inv_std[c];
                        sum_dy += g;
                        sum_dy_xhat += g * xhat;
                    }
                }
                (sum_dy, sum_dy_xhat)
            })
            .collect();

        for c in 0..self.c {
            self.grad_beta[c] += stats[c].0;
            self.grad_gamma[c] += stats[c].1;
        }

        let img_len = x.image_len();
        dx.data
            .par_chunks_mut(img_len)
            .enumerate()
            .for_each(|(n, dx_img)| {
                for c in 0..self.c {
                    let (sum_dy, sum_dy_xhat) = stats[c];
                    let inv_std = cache.inv_std[c];
                    let mean = cache.mean[c];
                    let g = self.gamma[c];
                    let xp = x.plane(n, c);
                    let dst = &mut dx_img[c * hw..(c + 1) * hw];
                    for ((d, &xv), &dyv) in dst.iter_mut().zip(xp).zip(dy.plane(n, c)) {
                        let xhat = (xv - mean) * inv_std;
                        *d = g * inv_std * (dyv - sum_dy / count - xhat * sum_dy_xhat / count);
                    }
                }
            });
        dx
    }

    pub fn zero_grads(&mut self) {
        self.grad_gamma.fill(0.0);
        self.grad_beta.fill(0.0);
    }
}

/// Rectifier. The forward output doubles as the backward cache.
pub fn relu_forward(x: &mut Tensor4) {
    x.data.par_iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0;
        }
    });
}

pub fn relu_backward(y: &Tensor4, dy: &mut Tensor4) {
    assert!(y.same_shape(dy));
    dy.data.par_iter_mut().zip(&y.data).for_each(|(g, &v)| {
        if v <= 0.0 {
            *g = 0.0;
        }
    });
}

// Source coordinate tables for bilinear resizing with half-pixel centers.
fn bilinear_table(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|o| {
            let pos = (o as f64 + 0.5) * src as f64 / dst as f64 - 0.5;
            let floor = pos.floor();
            let frac = pos - floor;
            let lo = (floor.max(0.0) as usize).min(src - 1);
            let hi = ((floor + 1.0).max(0.0) as usize).min(src - 1);
            (lo, hi, frac)
        })
        .collect()
}

/// Bilinear upsampling to (out_h, out_w).
pub fn upsample_bilinear(x: &Tensor4, out_h: usize, out_w: usize) -> Tensor4 {
    let rows = bilinear_table(x.h, out_h);
    let cols = bilinear_table(x.w, out_w);
    let mut out = Tensor4::zeros(x.n, x.c, out_h, out_w);
    let plane_out = out_h * out_w;
    let hw = x.h * x.w;
    out.data
        .par_chunks_mut(plane_out)
        .enumerate()
        .for_each(|(idx, dst)| {
            let (n, c) = (idx / x.c, idx % x.c);
            let src = &x.data[(n * x.c + c) * hw..(n * x.c + c + 1) * hw];
            for (oy, &(y0, y1, wy)) in rows.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in cols.iter().enumerate() {
                    let top = src[y0 * x.w + x0] * (1.0 - wx) + src[y0 * x.w + x1] * wx;
                    let bot = src[y1 * x.w + x0] * (1.0 - wx) + src[y1 * x.w + x1] * wx;
                    dst[oy * out_w + ox] = top * (1.0 - wy) + bot * wy;
                }
            }
        });
    out
}

/// Adjoint of [`upsample_bilinear`]: scatters the output gradient back to
/// the source grid.
pub fn upsample_bilinear_backward(dy: &Tensor4, in_h: usize, in_w: usize) -> Tensor4 {
    let rows = bilinear_table(in_h, dy.h);
    let cols = bilinear_table(in_w, dy.w);
    let mut dx = Tensor4::zeros(dy.n, dy.c, in_h, in_w);
    let plane_in = in_h * in_w;
    let plane_out = dy.h * dy.w;
    dx.data
        .par_chunks_mut(plane_in)
        .enumerate()
        .for_each(|(idx, dst)| {
            let src = &dy.data[idx * plane_out..(idx + 1) * plane_out];
            for (oy, &(y0, y1, wy)) in rows.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in cols.iter().enumerate() {
                    let g = src[oy * dy.w + ox];
                    dst[y0 * in_w + x0] += g * (1.0 - wy) * (1.0 - wx);
                    dst[y0 * in_w + x1] += g * (1.0 - wy) * wx;
                    dst[y1 * in_w + x0] += g * wy * (1.0 - wx);
                    dst[y1 * in_w + x1] += g * wy * wx;
                }
            }
        });
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..len).map(|_| normal.sample(rng)).collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn conv_forward_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv2d::new_kaiming(2, 3, 3, 2, 1, true, &mut rng);
        let x = Tensor4::from_data(1, 2, 5, 6, randn(&mut rng, 60));
        let y = conv.forward(&x);
        let (oh, ow) = conv.out_hw(5, 6);
        assert_eq!((y.h, y.w), (oh, ow));
        // Direct evaluation at a few positions.
        for (oc, oy, ox) in [(0usize, 0usize, 0usize), (2, 1, 2), (1, 2, 1)] {
            let mut acc = conv.bias.as_ref().unwrap()[oc];
            for ic in 0..2 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = (oy * 2 + ky) as isize - 1;
                        let ix = (ox * 2 + kx) as isize - 1;
                        if iy >= 0 && iy < 5 && ix >= 0 && ix < 6 {
                            acc += conv.weight[((oc * 2 + ic) * 3 + ky) * 3 + kx]
                                * x.data[(ic * 5 + iy as usize) * 6 + ix as usize];
                        }
                    }
                }
            }
            let got = y.data[(oc * oh + oy) * ow + ox];
            assert!((acc - got).abs() < 1e-12, "mismatch at ({oc},{oy},{ox}): {acc} vs {got}");
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::new_kaiming(2, 3, 3, 2, 1, true, &mut rng);
        let x = Tensor4::from_data(2, 2, 5, 5, randn(&mut rng, 100));
        // Loss: weighted sum of outputs, fixed weights.
        let w_out = randn(&mut rng, conv.forward(&x).data.len());
        let loss = |c: &Conv2d, xt: &Tensor4| -> f64 {
            c.forward(xt).data.iter().zip(&w_out).map(|(a, b)| a * b).sum()
        };

        let y = conv.forward(&x);
        let dy = Tensor4::from_data(y.n, y.c, y.h, y.w, w_out.clone());
        conv.zero_grads();
        let dx = conv.backward(&x, &dy);

        let mut c2 = conv.clone();
        for i in (0..c2.weight.len()).step_by(7) {
            let orig = c2.weight[i];
            c2.weight[i] = orig + 1e-6;
            let hi = loss(&c2, &x);
            c2.weight[i] = orig - 1e-6;
            let lo = loss(&c2, &x);
            c2.weight[i] = orig;
            let fd = (hi - lo) / 2e-6;
            assert!(rel_err(fd, conv.grad_weight[i]) < 1e-6, "dW[{i}]: fd {fd} vs {}", conv.grad_weight[i]);
        }
        let mut x2 = x.clone();
        for i in (0..x2.data.len()).step_by(13) {
            let orig = x2.data[i];
            x2.data[i] = orig + 1e-6;
            let hi = loss(&conv, &x2);
            x2.data[i] = orig - 1e-6;
            let lo = loss(&conv, &x2);
            x2.data[i] = orig;
            let fd = (hi - lo) / 2e-6;
            assert!(rel_err(fd, dx.data[i]) < 1e-6, "dX[{i}]: fd {fd} vs {}", dx.data[i]);
        }
    }

    #[test]
    fn batchnorm_train_output_is_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bn = BatchNorm2d::new(3);
        let x = Tensor4::from_data(2, 3, 4, 4, randn(&mut rng, 96));
        let (y, _) = bn.forward_train(&x);
        for c in 0..3 {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for n in 0..2 {
                for &v in y.plane(n, c) {
                    sum += v;
                    sum_sq += v * v;
                }
            }
            let mean = sum / 32.0;
            let var = sum_sq / 32.0 - mean * mean;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor4::from_data(2, 2, 3, 3, randn(&mut rng, 36));
        let w_out = randn(&mut rng, 36);
        let loss = |bn: &BatchNorm2d, xt: &Tensor4| -> f64 {
            let mut b = bn.clone();
            b.forward_train(xt).0.data.iter().zip(&w_out).map(|(a, b)| a * b).sum()
        };
        let mut bn = BatchNorm2d::new(2);
        // Non-trivial affine parameters.
        bn.gamma = vec![1.3, 0.7];
        bn.beta = vec![0.1, -0.2];
        let (y, cache) = bn.clone().forward_train(&x);
        let dy = Tensor4::from_data(y.n, y.c, y.h, y.w, w_out.clone());
        let mut bn_b = bn.clone();
        bn_b.zero_grads();
        let dx = bn_b.backward(&x, &dy, &cache);

        let mut x2 = x.clone();
        for i in 0..x2.data.len() {
            let orig = x2.data[i];
            x2.data[i] = orig + 1e-6;
            let hi = loss(&bn, &x2);
            x2.data[i] = orig - 1e-6;
            let lo = loss(&bn, &x2);
            x2.data[i] = orig;
            let fd = (hi - lo) / 2e-6;
            assert!(rel_err(fd, dx.data[i]) < 1e-5, "dX[{i}]: fd {fd} vs {}", dx.data[i]);
        }
        let mut bn2 = bn.clone();
        for c in 0..2 {
            for pick_gamma in [true, false] {
                let orig = if pick_gamma { bn2.gamma[c] } else { bn2.beta[c] };
                *(if pick_gamma { &mut bn2.gamma[c] } else { &mut bn2.beta[c] }) = orig + 1e-6;
                let hi = loss(&bn2, &x);
                *(if pick_gamma { &mut bn2.gamma[c] } else { &mut bn2.beta[c] }) = orig - 1e-6;
                let lo = loss(&bn2, &x);
                *(if pick_gamma { &mut bn2.gamma[c] } else { &mut bn2.beta[c] }) = orig;
                let fd = (hi - lo) / 2e-6;
                let analytic = if pick_gamma { bn_b.grad_gamma[c] } else { bn_b.grad_beta[c] };
                assert!(rel_err(fd, analytic) < 1e-6, "bn param ({c},{pick_gamma}): fd {fd} vs {analytic}");
            }
        }
    }

    #[test]
    fn upsample_preserves_constants_and_adjoint_is_consistent() {
        let x = Tensor4::from_data(1, 1, 2, 2, vec![3.0; 4]);
        let y = upsample_bilinear(&x, 8, 8);
        assert!(y.data.iter().all(|&v| (v - 3.0).abs() < 1e-12));

        // <A x, y> == <x, A^T y> for random x, y.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor4::from_data(2, 3, 4, 5, randn(&mut rng, 120));
        let y = Tensor4::from_data(2, 3, 9, 11, randn(&mut rng, 2 * 3 * 99));
        let ax = upsample_bilinear(&x, 9, 11);
        let aty = upsample_bilinear_backward(&y, 4, 5);
        let lhs: f64 = ax.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&aty.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn relu_masks_gradient() {
        let mut y = Tensor4::from_data(1, 1, 1, 4, vec![-1.0, 0.5, 0.0, 2.0]);
        relu_forward(&mut y);
        assert_eq!(y.data, vec![0.0, 0.5, 0.0, 2.0]);
        let mut dy = Tensor4::from_data(1, 1, 1, 4, vec![1.0, 1.0, 1.0, 1.0]);
        relu_backward(&y, &mut dy);
        assert_eq!(dy.data, vec![0.0, 1.0, 0.0, 1.0]);
    }
}
