//! Raw numeric kernels behind the graph ops.
//!
//! Every kernel writes each output element from exactly one task with a
//! fixed inner summation order, so rayon parallelism never changes results.

use rayon::prelude::*;

/// Parallelize only when the work is worth the fork overhead.
const PAR_THRESHOLD: usize = 64 * 1024;

/// c[m,n] = a[m,k] @ b[k,n]
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let row = |(i, crow): (usize, &mut [f64])| {
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    };
    if m * n * k >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        c.chunks_mut(n).enumerate().for_each(row);
    }
    c
}

/// c[m,n] = a[m,k] @ b[n,k]^T  (dot products of contiguous rows)
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let row = |(i, crow): (usize, &mut [f64])| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            *cv = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    };
    if m * n * k >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        c.chunks_mut(n).enumerate().for_each(row);
    }
    c
}

/// c[k,n] = a[m,k]^T @ b[m,n]
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    let row = |(kk, crow): (usize, &mut [f64])| {
        for i in 0..m {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &b[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    };
    if m * n * k >= PAR_THRESHOLD && k > 1 {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        c.chunks_mut(n).enumerate().for_each(row);
    }
    c
}

/// Strided 1-D convolution, left-aligned zero-padded framing.
///
/// x: [batch, t, c_in], w: [kernel, c_in, c_out], out: [batch, ceil(t/stride), c_out].
/// Input index `t_out * stride + kk - pad_left`; out-of-range taps read zero.
#[allow(clippy::too_many_arguments)]
pub fn conv1d(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    batch: usize,
    t: usize,
    c_in: usize,
    kernel: usize,
    c_out: usize,
    stride: usize,
    pad_left: usize,
) -> Vec<f64> {
    let t_out = super::conv_out_len(t, stride);
    let mut out = vec![0.0; batch * t_out * c_out];
    let one = |(bo, orow): (usize, &mut [f64])| {
        let (b, to) = (bo / t_out, bo % t_out);
        if let Some(bias) = bias {
            orow.copy_from_slice(bias);
        }
        for kk in 0..kernel {
            let ti = (to * stride + kk) as isize - pad_left as isize;
            if ti < 0 || ti >= t as isize {
                continue;
            }
            let xrow = &x[(b * t + ti as usize) * c_in..][..c_in];
            let wk = &w[kk * c_in * c_out..][..c_in * c_out];
            for (ci, &xv) in xrow.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wrow = &wk[ci * c_out..][..c_out];
                for (ov, &wv) in orow.iter_mut().zip(wrow) {
                    *ov += xv * wv;
                }
            }
        }
    };
    if batch * t_out * c_out * kernel * c_in >= PAR_THRESHOLD && batch * t_out > 1 {
        out.par_chunks_mut(c_out).enumerate().for_each(one);
    } else {
        out.chunks_mut(c_out).enumerate().for_each(one);
    }
    out
}

/// Gradient of conv1d w.r.t. its input.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_grad_x(
    dy: &[f64],
    w: &[f64],
    batch: usize,
    t: usize,
    c_in: usize,
    kernel: usize,
    c_out: usize,
    stride: usize,
    pad_left: usize,
) -> Vec<f64> {
    let t_out = super::conv_out_len(t, stride);
    let mut dx = vec![0.0; batch * t * c_in];
    let one = |(bi, dxrow): (usize, &mut [f64])| {
        let (b, ti) = (bi / t, bi % t);
        for kk in 0..kernel {
            // ti = to * stride + kk - pad_left  =>  to = (ti + pad_left - kk) / stride
            let num = ti as isize + pad_left as isize - kk as isize;
            if num < 0 || num % stride as isize != 0 {
                continue;
            }
            let to = (num / stride as isize) as usize;
            if to >= t_out {
                continue;
            }
            let dyrow = &dy[(b * t_out + to) * c_out..][..c_out];
            let wk = &w[kk * c_in * c_out..][..c_in * c_out];
            for (ci, dv) in dxrow.iter_mut().enumerate() {
                let wrow = &wk[ci * c_out..][..c_out];
                *dv += dyrow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    };
    if batch * t * c_in * kernel * c_out >= PAR_THRESHOLD && batch * t > 1 {
        dx.par_chunks_mut(c_in).enumerate().for_each(one);
    } else {
        dx.chunks_mut(c_in).enumerate().for_each(one);
    }
    dx
}

/// Gradient of conv1d w.r.t. its weights (and bias, summed by the caller).
#[allow(clippy::too_many_arguments)]
pub fn conv1d_grad_w(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    t: usize,
    c_in: usize,
    kernel: usize,
    c_out: usize,
    stride: usize,
    pad_left: usize,
) -> Vec<f64> {
    let t_out = super::conv_out_len(t, stride);
    let mut dw = vec![0.0; kernel * c_in * c_out];
    // Parallel over (kernel, c_in) rows of dw; inner loops in fixed order.
    let one = |(kc, dwrow): (usize, &mut [f64])| {
        let (kk, ci) = (kc / c_in, kc % c_in);
        for b in 0..batch {
            for to in 0..t_out {
                let ti = (to * stride + kk) as isize - pad_left as isize;
                if ti < 0 || ti >= t as isize {
                    continue;
                }
                let xv = x[(b * t + ti as usize) * c_in + ci];
                if xv == 0.0 {
                    continue;
                }
                let dyrow = &dy[(b * t_out + to) * c_out..][..c_out];
                for (dv, &gy) in dwrow.iter_mut().zip(dyrow) {
                    *dv += xv * gy;
                }
            }
        }
    };
    if batch * t_out * kernel * c_in * c_out >= PAR_THRESHOLD && kernel * c_in > 1 {
        dw.par_chunks_mut(c_out).enumerate().for_each(one);
    } else {
        dw.chunks_mut(c_out).enumerate().for_each(one);
    }
    dw
}

/// Transposed strided 1-D convolution (temporal upsampling).
///
/// x: [batch, t, c_in], w: [kernel, c_in, c_out], out: [batch, t * stride, c_out].
/// out[o] collects taps with `o = t_in * stride + kk - pad_left`.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose1d(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    batch: usize,
    t: usize,
    c_in: usize,
    kernel: usize,
    c_out: usize,
    stride: usize,
    pad_left: usize,
) -> Vec<f64> {
    let t_out = t * stride;
    let mut out = vec![0.0; batch * t_out * c_out];
    let one = |(bo, orow): (usize, &mut [f64])| {
        let (b, o) = (bo / t_out, bo % t_out);
        if let Some(bias) = bias {
            orow.copy_from_slice(bias);
        }
        for kk in 0..kernel {
            let num = o as isize + pad_left as isize - kk as isize;
            if num < 0 || num % stride as isize != 0 {
                continue;
            }
            let ti = (num / stride as isize) as usize;
            if ti >= t {
                continue;
            }
            let xrow = &x[(b * t + ti) * c_in..][..c_in];
            let wk = &w[kk * c_in * c_out..][..c_in * c_out];
            for (ci, &xv) in xrow.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wrow = &wk[ci * c_out..][..c_out];
                for (ov, &wv) in orow.iter_mut().zip(wrow) {
                    *ov += xv * wv;
                }
            }
        }
    };
    if batch * t_out * c_out * kernel >= PAR_THRESHOLD && batch * t_out > 1 {
        out.par_chunks_mut(c_out).enumerate().for_each(one);
    } else {
        out.chunks_mut(c_out).enumerate().for_each(one);
    }
    out
}

/// Gradient of conv_transpose1d w.r.t. its input: a plain gather convolution
/// of `dy` with the same taps.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose1d_grad_x(
    dy: &[f64],
    w: &[f64],
    batch: usize,
    t: usize,
    c_in: usize,
    kernel: usize,
    c_out: usize,
    stride: usize,
    pad_left: usize,
) -> Vec<f64> {
    let t_out = t * stride;
    let mut dx = vec![0.0; batch * t * c_in];
    let one = |(bt, dxrow): (usize, &mut [f64])| {
        let (b, ti) = (bt / t, bt % t);
        for kk in 0..kernel {
            let o = (ti * stride + kk) as isize - pad_left as isize;
            if o < 0 || o >= t_out as isize {
                continue;
            }
            let dyrow = &dy[(b * t_out + o as usize) * c_out..][..c_out];
            let wk = &w[kk * c_in * c_out..][..c_in * c_out];
            for (ci, dv) in dxrow.iter_mut().enumerate() {
                let wrow = &wk[ci * c_out..][..c_out];
                *dv += dyrow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    };
    if batch * t * c_in * kernel * c_out >= PAR_THRESHOLD && batch * t > 1 {
        dx.par_chunks_mut(c_in).enumerate().for_each(one);
    } else {
        dx.chunks_mut(c_in).enumerate().for_each(one);
    }
    dx
}

/// Gradient of conv_transpose1d w.r.t. its weights.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose1d_grad_w(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    t: usize,
    c_in: usize,
    kernel: usize,
    c_out: usize,
    stride: usize,
    pad_left: usize,
) -> Vec<f64> {
    let t_out = t * stride;
    let mut dw = vec![0.0; kernel * c_in * c_out];
    let one = |(kc, dwrow): (usize, &mut [f64])| {
        let (kk, ci) = (kc / c_in, kc % c_in);
        for b in 0..batch {
            for ti in 0..t {
                let o = (ti * stride + kk) as isize - pad_left as isize;
                if o < 0 || o >= t_out as isize {
                    continue;
                }
                let xv = x[(b * t + ti) * c_in + ci];
                if xv == 0.0 {
                    continue;
                }
                let dyrow = &dy[(b * t_out + o as usize) * c_out..][..c_out];
                for (dv, &gy) in dwrow.iter_mut().zip(dyrow) {
                    *dv += xv * gy;
                }
            }
        }
    };
    if batch * t * kernel * c_in * c_out >= PAR_THRESHOLD && kernel * c_in > 1 {
        dw.par_chunks_mut(c_out).enumerate().for_each(one);
    } else {
        dw.chunks_mut(c_out).enumerate().for_each(one);
    }
    dw
}

/// Numerically stable softmax over the last axis, in place row by row.
pub fn softmax_rows(data: &mut [f64], last: usize) {
    for row in data.chunks_mut(last) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}
