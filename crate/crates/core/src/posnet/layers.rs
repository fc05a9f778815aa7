//! Forward and reverse-mode kernels for the network's building blocks.
//!
//! Every function works on whole `[N, C, T, F]` tensors. Convolutions are
//! causal in time (all time padding sits before the first frame) and
//! symmetric in frequency.

use matrixmultiply::dgemm;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreqPadding {
    #[default]
    Zero,
    /// Circular wrap in frequency; only used to probe shift equivariance.
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub kt: usize,
    pub kf: usize,
    pub freq_padding: FreqPadding,
}

impl ConvSpec {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kt * self.kf
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.kt * self.kf
    }
}

/// `C = A * B` (or `C += A * B` when `accumulate`), row-major with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the callers size every buffer to the (m, k, n) extents with the given strides.
    unsafe {
        dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

fn source_f(f: isize, width: usize, pf: usize, padding: FreqPadding) -> Option<usize> {
    let s = f - pf as isize;
    if s >= 0 && (s as usize) < width {
        Some(s as usize)
    } else {
        match padding {
            FreqPadding::Zero => None,
            FreqPadding::Periodic => Some(s.rem_euclid(width as isize) as usize),
        }
    }
}

/// Output columns `[lo, hi)` whose source `f + shift` lies inside the row.
fn valid_range(shift: isize, f_len: usize) -> (usize, usize) {
    let lo = (-shift).clamp(0, f_len as isize) as usize;
    let hi = (f_len as isize - shift).clamp(lo as isize, f_len as isize) as usize;
    (lo, hi)
}

/// Unrolls one batch element into a `[cin*kt*kf, t*f]` column matrix.
fn im2col(spec: &ConvSpec, x: &Tensor, b: usize, cols: &mut [f64]) {
    let (t_len, f_len) = (x.t, x.f);
    let pf = (spec.kf - 1) / 2;
    let plane = t_len * f_len;
    let mut row = 0;
    for ci in 0..spec.cin {
        let src = x.channel(b, ci);
        for kt in 0..spec.kt {
            let dt = spec.kt - 1 - kt;
            for kf in 0..spec.kf {
                let shift = kf as isize - pf as isize;
                let (lo, hi) = valid_range(shift, f_len);
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for t in 0..t_len {
                    let out_row = &mut dst[t * f_len..(t + 1) * f_len];
                    if t < dt {
                        out_row.fill(0.0);
                        continue;
                    }
                    let in_row = &src[(t - dt) * f_len..(t - dt + 1) * f_len];
                    let s0 = (lo as isize + shift) as usize;
                    out_row[lo..hi].copy_from_slice(&in_row[s0..s0 + (hi - lo)]);
                    for f in (0..lo).chain(hi..f_len) {
                        out_row[f] = match source_f(f as isize + kf as isize, f_len, pf, spec.freq_padding) {
                            Some(s) => in_row[s],
                            None => 0.0,
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into the input layout.
fn col2im(spec: &ConvSpec, cols: &[f64], dx: &mut Tensor, b: usize) {
    let (t_len, f_len) = (dx.t, dx.f);
    let pf = (spec.kf - 1) / 2;
    let plane = t_len * f_len;
    let base = dx.idx(b, 0, 0, 0);
    let mut row = 0;
    for ci in 0..spec.cin {
        let chan = &mut dx.data[base + ci * plane..base + (ci + 1) * plane];
        for kt in 0..spec.kt {
            let dt = spec.kt - 1 - kt;
            for kf in 0..spec.kf {
                let shift = kf as isize - pf as isize;
                let (lo, hi) = valid_range(shift, f_len);
                let src = &cols[row * plane..(row + 1) * plane];
                for t in dt..t_len {
                    let dst_row = &mut chan[(t - dt) * f_len..(t - dt + 1) * f_len];
                    let src_row = &src[t * f_len..(t + 1) * f_len];
                    let s0 = (lo as isize + shift) as usize;
                    for (d, v) in dst_row[s0..s0 + (hi - lo)].iter_mut().zip(&src_row[lo..hi]) {
                        *d += v;
                    }
                    for f in (0..lo).chain(hi..f_len) {
                        if let Some(s) = source_f(f as isize + kf as isize, f_len, pf, spec.freq_padding) {
                            dst_row[s] += src_row[f];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

thread_local! {
    static SCRATCH: std::cell::RefCell<(Vec<f64>, Vec<f64>)> = const { std::cell::RefCell::new((Vec::new(), Vec::new())) };
}

/// Runs `f` with two scratch buffers of at least `n` entries each (contents unspecified).
fn with_scratch<R>(n: usize, f: impl FnOnce(&mut [f64], &mut [f64]) -> R) -> R {
    SCRATCH.with(|s| {
        let mut s = s.borrow_mut();
        let (a, b) = &mut *s;
        if a.len() < n {
            a.resize(n, 0.0);
            b.resize(n, 0.0);
        }
        f(&mut a[..n], &mut b[..n])
    })
}

fn is_pointwise(spec: &ConvSpec) -> bool {
    spec.kt == 1 && spec.kf == 1
}

pub fn conv_forward(spec: &ConvSpec, x: &Tensor, w: &[f64], bias: Option<&[f64]>) -> Tensor {
    debug_assert_eq!(x.c, spec.cin);
    debug_assert_eq!(w.len(), spec.weight_len());
    let plane = x.plane();
    let k = spec.fan_in();
    let mut y = Tensor::zeros(x.n, spec.cout, x.t, x.f);
    let scratch = if is_pointwise(spec) { 0 } else { k * plane };
    with_scratch(scratch, |cols, _| {
        for b in 0..x.n {
            let colsref: &[f64] = if is_pointwise(spec) {
                x.sample(b)
            } else {
                im2col(spec, x, b, cols);
                cols
            };
            let out = y.sample_mut(b);
            gemm(spec.cout, k, plane, w, k as isize, 1, colsref, plane as isize, 1, out, false);
            if let Some(bias) = bias {
                for (co, bv) in bias.iter().enumerate() {
                    out[co * plane..(co + 1) * plane].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
    });
    y
}

/// Accumulates weight (and bias) gradients and returns the input gradient.
pub fn conv_backward(
    spec: &ConvSpec,
    x: &Tensor,
    w: &[f64],
    dy: &Tensor,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
) -> Tensor {
    let plane = x.plane();
    let k = spec.fan_in();
    let mut dx = Tensor::zeros(x.n, x.c, x.t, x.f);
    with_scratch(k * plane, |cols, dcols| {
        for b in 0..x.n {
            let g = dy.sample(b);
            let colsref: &[f64] = if is_pointwise(spec) {
                x.sample(b)
            } else {
                im2col(spec, x, b, cols);
                cols
            };
            // dW += dY * cols^T
            gemm(spec.cout, plane, k, g, plane as isize, 1, colsref, 1, plane as isize, dw, true);
            if is_pointwise(spec) {
                gemm(k, spec.cout, plane, w, 1, k as isize, g, plane as isize, 1, dx.sample_mut(b), false);
            } else {
                // dcols = W^T * dY
                gemm(k, spec.cout, plane, w, 1, k as isize, g, plane as isize, 1, dcols, false);
                col2im(spec, dcols, &mut dx, b);
            }
        }
    });
    if let Some(db) = db {
        for b in 0..dy.n {
            for (co, d) in db.iter_mut().enumerate() {
                *d += dy.channel(b, co).iter().sum::<f64>();
            }
        }
    }
    dx
}

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    train: bool,
}

/// Batch statistics from a train-mode pass: biased mean and unbiased variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn bn_apply(x: &Tensor, gamma: &[f64], beta: &[f64], mean: &[f64], inv_std: &[f64]) -> (Tensor, Tensor) {
    let plane = x.plane();
    let mut xhat = x.clone();
    let mut y = x.clone();
    for b in 0..x.n {
        for c in 0..x.c {
            let start = (b * x.c + c) * plane;
            for i in start..start + plane {
                let h = (x.data[i] - mean[c]) * inv_std[c];
                xhat.data[i] = h;
                y.data[i] = gamma[c] * h + beta[c];
            }
        }
    }
    (y, xhat)
}

pub fn bn_forward_train(x: &Tensor, gamma: &[f64], beta: &[f64]) -> (Tensor, BnCache, BatchStats) {
    let count = (x.n * x.plane()) as f64;
    let mut mean = vec![0.0; x.c];
    let mut var = vec![0.0; x.c];
    for c in 0..x.c {
        let s: f64 = (0..x.n).map(|b| x.channel(b, c).iter().sum::<f64>()).sum();
        mean[c] = s / count;
        let ss: f64 = (0..x.n)
            .map(|b| x.channel(b, c).iter().map(|v| (v - mean[c]) * (v - mean[c])).sum::<f64>())
            .sum();
        var[c] = ss / count;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let (y, xhat) = bn_apply(x, gamma, beta, &mean, &inv_std);
    let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
    let stats = BatchStats { mean, var: var.iter().map(|v| v * unbiased).collect() };
    (y, BnCache { xhat, inv_std, train: true }, stats)
}

pub fn bn_forward_eval(x: &Tensor, gamma: &[f64], beta: &[f64], rmean: &[f64], rvar: &[f64]) -> (Tensor, BnCache) {
    let inv_std: Vec<f64> = rvar.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let (y, xhat) = bn_apply(x, gamma, beta, rmean, &inv_std);
    (y, BnCache { xhat, inv_std, train: false })
}

pub fn bn_backward(cache: &BnCache, gamma: &[f64], dy: &Tensor, dgamma: &mut [f64], dbeta: &mut [f64]) -> Tensor {
    let plane = dy.plane();
    let count = (dy.n * plane) as f64;
    let xh = &cache.xhat;
    let mut dx = Tensor::zeros(dy.n, dy.c, dy.t, dy.f);
    for c in 0..dy.c {
        let mut sum_dy = 0.0;
        let mut sum_dy_xh = 0.0;
        for b in 0..dy.n {
            for (g, h) in dy.channel(b, c).iter().zip(xh.channel(b, c)) {
                sum_dy += g;
                sum_dy_xh += g * h;
            }
        }
        dgamma[c] += sum_dy_xh;
        dbeta[c] += sum_dy;
        let k = gamma[c] * cache.inv_std[c];
        for b in 0..dy.n {
            let start = (b * dy.c + c) * plane;
            for i in start..start + plane {
                dx.data[i] = if cache.train {
                    k * (dy.data[i] - sum_dy / count - xh.data[i] * sum_dy_xh / count)
                } else {
                    k * dy.data[i]
                };
            }
        }
    }
    dx
}

pub fn relu_forward(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
}

/// Gradient through ReLU given its output; ties at zero get no gradient.
pub fn relu_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    dx.data.iter_mut().zip(&y.data).for_each(|(d, &v)| {
        if v <= 0.0 {
            *d = 0.0
        }
    });
    dx
}

/// 2x2 average pooling; time and frequency extents must be even.
pub fn avgpool_forward(x: &Tensor) -> Tensor {
    let (t2, f2) = (x.t / 2, x.f / 2);
    let mut y = Tensor::zeros(x.n, x.c, t2, f2);
    for b in 0..x.n {
        for c in 0..x.c {
            let src = x.channel(b, c);
            let base = y.idx(b, c, 0, 0);
            for t in 0..t2 {
                for f in 0..f2 {
                    let i = 2 * t * x.f + 2 * f;
                    y.data[base + t * f2 + f] = 0.25 * (src[i] + src[i + 1] + src[i + x.f] + src[i + x.f + 1]);
                }
            }
        }
    }
    y
}

pub fn avgpool_backward(dy: &Tensor) -> Tensor {
    let (t, f) = (dy.t * 2, dy.f * 2);
    let mut dx = Tensor::zeros(dy.n, dy.c, t, f);
    for b in 0..dy.n {
        for c in 0..dy.c {
            let src = dy.channel(b, c);
            let base = dx.idx(b, c, 0, 0);
            for tt in 0..t {
                for ff in 0..f {
                    dx.data[base + tt * f + ff] = 0.25 * src[(tt / 2) * dy.f + ff / 2];
                }
            }
        }
    }
    dx
}

pub fn upsample_forward(x: &Tensor) -> Tensor {
    let (t, f) = (x.t * 2, x.f * 2);
    let mut y = Tensor::zeros(x.n, x.c, t, f);
    for b in 0..x.n {
        for c in 0..x.c {
            let src = x.channel(b, c);
            let base = y.idx(b, c, 0, 0);
            for tt in 0..t {
                for ff in 0..f {
                    y.data[base + tt * f + ff] = src[(tt / 2) * x.f + ff / 2];
                }
            }
        }
    }
    y
}

pub fn upsample_backward(dy: &Tensor) -> Tensor {
    let (t2, f2) = (dy.t / 2, dy.f / 2);
    let mut dx = Tensor::zeros(dy.n, dy.c, t2, f2);
    for b in 0..dy.n {
        for c in 0..dy.c {
            let src = dy.channel(b, c);
            let base = dx.idx(b, c, 0, 0);
            for tt in 0..dy.t {
                for ff in 0..dy.f {
                    dx.data[base + (tt / 2) * f2 + ff / 2] += src[tt * dy.f + ff];
                }
            }
        }
    }
    dx
}
