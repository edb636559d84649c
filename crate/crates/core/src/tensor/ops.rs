//! Layer forwards and backwards. Convolution runs as im2col plus GEMM with
//! sample-level parallelism; weight gradients are reduced in fixed sample
//! order so results stay bit-reproducible.

use rayon::prelude::*;

use crate::error::Error;
use crate::Result;

use super::Tensor;

/// Row-major GEMM: c = a(m×k) · b(k×n) + beta·c.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], beta: f64) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conv_out_dim(input: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if padded < k {
        return Err(Error::Shape(format!(
            "kernel {k} larger than padded input {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Opaque context produced by a conv forward, consumed by its backward.
#[derive(Debug, Clone)]
pub struct ConvCache {
    input_shape: [usize; 4],
    weight_shape: [usize; 4],
    stride: usize,
    padding: usize,
    out_hw: (usize, usize),
}

fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    cols: &mut [f64],
) {
    // cols layout: (c*k*k) rows × (oh*ow) columns, row-major
    let owh = oh * ow;
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst = &mut cols[row * owh..(row + 1) * owh];
                for out_i in 0..oh {
                    let in_i = (out_i * stride + ki) as isize - padding as isize;
                    for out_j in 0..ow {
                        let in_j = (out_j * stride + kj) as isize - padding as isize;
                        dst[out_i * ow + out_j] = if in_i >= 0
                            && (in_i as usize) < h
                            && in_j >= 0
                            && (in_j as usize) < w
                        {
                            x[(ch * h + in_i as usize) * w + in_j as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    x: &mut [f64],
) {
    let owh = oh * ow;
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src = &cols[row * owh..(row + 1) * owh];
                for out_i in 0..oh {
                    let in_i = (out_i * stride + ki) as isize - padding as isize;
                    for out_j in 0..ow {
                        let in_j = (out_j * stride + kj) as isize - padding as isize;
                        if in_i >= 0 && (in_i as usize) < h && in_j >= 0 && (in_j as usize) < w {
                            x[(ch * h + in_i as usize) * w + in_j as usize] +=
                                src[out_i * ow + out_j];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of an N×C×H×W input with F×C×k×k filters (no bias).
pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, ConvCache)> {
    let [n, c, h, w]: [usize; 4] = input
        .shape()
        .try_into()
        .map_err(|_| Error::Shape(format!("conv input must be 4-d, got {:?}", input.shape())))?;
    let [f, wc, k, k2]: [usize; 4] = weight
        .shape()
        .try_into()
        .map_err(|_| Error::Shape(format!("conv weight must be 4-d, got {:?}", weight.shape())))?;
    if wc != c || k != k2 {
        return Err(Error::Shape(format!(
            "conv weight {:?} does not match input channels {c}",
            weight.shape()
        )));
    }
    if stride == 0 {
        return Err(Error::Shape("conv stride must be >= 1".into()));
    }
    let oh = conv_out_dim(h, k, stride, padding)?;
    let ow = conv_out_dim(w, k, stride, padding)?;
    let ckk = c * k * k;
    let owh = oh * ow;

    let mut out = vec![0.0; n * f * owh];
    out.par_chunks_mut(f * owh)
        .enumerate()
        .for_each(|(ni, out_n)| {
            let mut cols = vec![0.0; ckk * owh];
            let x_n = &input.data()[ni * c * h * w..(ni + 1) * c * h * w];
            im2col(x_n, c, h, w, k, stride, padding, oh, ow, &mut cols);
            gemm(f, ckk, owh, weight.data(), &cols, out_n, 0.0);
        });

    let cache = ConvCache {
        input_shape: [n, c, h, w],
        weight_shape: [f, c, k, k],
        stride,
        padding,
        out_hw: (oh, ow),
    };
    Ok((
        Tensor::from_vec(&[n, f, oh, ow], out)?.check_finite("conv2d")?,
        cache,
    ))
}

/// Gradients of conv2d with respect to input and weight.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    cache: &ConvCache,
) -> Result<(Tensor, Tensor)> {
    let [n, c, h, w] = cache.input_shape;
    let [f, _, k, _] = cache.weight_shape;
    let (oh, ow) = cache.out_hw;
    let (stride, padding) = (cache.stride, cache.padding);
    let ckk = c * k * k;
    let owh = oh * ow;
    if grad_out.shape() != [n, f, oh, ow] {
        return Err(Error::Shape(format!(
            "conv grad_out shape {:?}, expected {:?}",
            grad_out.shape(),
            [n, f, oh, ow]
        )));
    }

    // per-sample buffers, reduced afterwards in sample order
    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|ni| {
            let x_n = &input.data()[ni * c * h * w..(ni + 1) * c * h * w];
            let dy_n = &grad_out.data()[ni * f * owh..(ni + 1) * f * owh];
            let mut cols = vec![0.0; ckk * owh];
            im2col(x_n, c, h, w, k, stride, padding, oh, ow, &mut cols);

            // dW_n = dy_n (f×owh) · cols^T (owh×ckk)
            let mut dw = vec![0.0; f * ckk];
            unsafe {
                matrixmultiply::dgemm(
                    f,
                    owh,
                    ckk,
                    1.0,
                    dy_n.as_ptr(),
                    owh as isize,
                    1,
                    cols.as_ptr(),
                    1,
                    owh as isize, // cols transposed via strides
                    0.0,
                    dw.as_mut_ptr(),
                    ckk as isize,
                    1,
                );
            }

            // dcols = W^T (ckk×f) · dy_n (f×owh)
            let mut dcols = vec![0.0; ckk * owh];
            unsafe {
                matrixmultiply::dgemm(
                    ckk,
                    f,
                    owh,
                    1.0,
                    weight.data().as_ptr(),
                    1,
                    ckk as isize, // weight transposed via strides
                    dy_n.as_ptr(),
                    owh as isize,
                    1,
                    0.0,
                    dcols.as_mut_ptr(),
                    owh as isize,
                    1,
                );
            }
            let mut dx = vec![0.0; c * h * w];
            col2im(&dcols, c, h, w, k, stride, padding, oh, ow, &mut dx);
            (dx, dw)
        })
        .collect();

    let mut dinput = vec![0.0; n * c * h * w];
    let mut dweight = vec![0.0; f * ckk];
    for (ni, (dx, dw)) in per_sample.into_iter().enumerate() {
        dinput[ni * c * h * w..(ni + 1) * c * h * w].copy_from_slice(&dx);
        for (acc, v) in dweight.iter_mut().zip(&dw) {
            *acc += v;
        }
    }
    Ok((
        Tensor::from_vec(&[n, c, h, w], dinput)?.check_finite("conv2d backward")?,
        Tensor::from_vec(&[f, c, k, k], dweight)?.check_finite("conv2d backward")?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    mode: BnMode,
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
    shape: [usize; 4],
}

/// Per-channel batch normalization over N×C×H×W.
///
/// Train mode normalizes by batch statistics (biased variance) and folds
/// them into the running estimates with momentum 0.9; eval mode uses the
/// running estimates. Train mode requires batch size >= 2.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_forward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &mut [f64],
    running_var: &mut [f64],
    momentum: f64,
    eps: f64,
    mode: BnMode,
) -> Result<(Tensor, BnCache)> {
    let [n, c, h, w]: [usize; 4] = input
        .shape()
        .try_into()
        .map_err(|_| Error::Shape(format!("bn input must be 4-d, got {:?}", input.shape())))?;
    if gamma.len() != c || beta.len() != c || running_mean.len() != c || running_var.len() != c {
        return Err(Error::Shape("bn parameter length != channel count".into()));
    }
    if mode == BnMode::Train && n < 2 {
        return Err(Error::Shape("bn train mode needs batch size >= 2".into()));
    }
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut out = vec![0.0; input.len()];
    let mut normalized = vec![0.0; input.len()];
    let mut inv_std = vec![0.0; c];

    for ch in 0..c {
        let (mean, var) = match mode {
            BnMode::Train => {
                let mut sum = 0.0;
                for ni in 0..n {
                    let base = (ni * c + ch) * plane;
                    sum += input.data()[base..base + plane].iter().sum::<f64>();
                }
                let mean = sum / m;
                let mut ss = 0.0;
                for ni in 0..n {
                    let base = (ni * c + ch) * plane;
                    for &x in &input.data()[base..base + plane] {
                        ss += (x - mean) * (x - mean);
                    }
                }
                let var = ss / m;
                running_mean[ch] = momentum * running_mean[ch] + (1.0 - momentum) * mean;
                running_var[ch] = momentum * running_var[ch] + (1.0 - momentum) * var;
                (mean, var)
            }
            BnMode::Eval => (running_mean[ch], running_var[ch]),
        };
        let istd = 1.0 / (var + eps).sqrt();
        inv_std[ch] = istd;
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for ni in 0..n {
            let base = (ni * c + ch) * plane;
            for i in base..base + plane {
                let xhat = (input.data()[i] - mean) * istd;
                normalized[i] = xhat;
                out[i] = g * xhat + b;
            }
        }
    }

    let cache = BnCache {
        mode,
        normalized,
        inv_std,
        shape: [n, c, h, w],
    };
    Ok((
        Tensor::from_vec(&[n, c, h, w], out)?.check_finite("batch_norm")?,
        cache,
    ))
}

/// Returns (d_input, d_gamma, d_beta).
pub fn batch_norm_backward(
    gamma: &Tensor,
    grad_out: &Tensor,
    cache: &BnCache,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [n, c, h, w] = cache.shape;
    let plane = h * w;
    let m = (n * plane) as f64;
    if grad_out.shape() != [n, c, h, w] {
        return Err(Error::Shape("bn grad_out shape mismatch".into()));
    }
    let mut dx = vec![0.0; grad_out.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ch in 0..c {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for ni in 0..n {
            let base = (ni * c + ch) * plane;
            for i in base..base + plane {
                let dy = grad_out.data()[i];
                sum_dy += dy;
                sum_dy_xhat += dy * cache.normalized[i];
            }
        }
        dgamma[ch] = sum_dy_xhat;
        dbeta[ch] = sum_dy;
        let scale = gamma.data()[ch] * cache.inv_std[ch];
        for ni in 0..n {
            let base = (ni * c + ch) * plane;
            for i in base..base + plane {
                let dy = grad_out.data()[i];
                dx[i] = match cache.mode {
                    // batch statistics depend on x, so their gradients flow back
                    BnMode::Train => scale
                        * (dy - sum_dy / m - cache.normalized[i] * sum_dy_xhat / m),
                    // running statistics are constants in eval mode
                    BnMode::Eval => scale * dy,
                };
            }
        }
    }
    Ok((
        Tensor::from_vec(&[n, c, h, w], dx)?.check_finite("batch_norm backward")?,
        Tensor::from_vec(&[c], dgamma)?,
        Tensor::from_vec(&[c], dbeta)?,
    ))
}

#[derive(Debug, Clone)]
pub struct ReluCache {
    mask: Vec<bool>,
}

/// Elementwise max(0, x); the subgradient at 0 is 0.
pub fn relu_forward(input: &Tensor) -> Result<(Tensor, ReluCache)> {
    let mask: Vec<bool> = input.data().iter().map(|&x| x > 0.0).collect();
    let out: Vec<f64> = input.data().iter().map(|&x| x.max(0.0)).collect();
    Ok((
        Tensor::from_vec(input.shape(), out)?.check_finite("relu")?,
        ReluCache { mask },
    ))
}

pub fn relu_backward(grad_out: &Tensor, cache: &ReluCache) -> Result<Tensor> {
    if grad_out.len() != cache.mask.len() {
        return Err(Error::Shape("relu grad_out length mismatch".into()));
    }
    let dx: Vec<f64> = grad_out
        .data()
        .iter()
        .zip(&cache.mask)
        .map(|(&g, &keep)| if keep { g } else { 0.0 })
        .collect();
    Tensor::from_vec(grad_out.shape(), dx)
}

fn pool_dims(input: &Tensor, k: usize, stride: usize) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let [n, c, h, w]: [usize; 4] = input
        .shape()
        .try_into()
        .map_err(|_| Error::Shape(format!("pool input must be 4-d, got {:?}", input.shape())))?;
    if k == 0 || stride == 0 {
        return Err(Error::Shape("pool kernel and stride must be >= 1".into()));
    }
    if k > h || k > w {
        return Err(Error::Shape(format!(
            "pool window {k} larger than input {h}x{w}"
        )));
    }
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    Ok((n, c, h, w, oh, ow))
}

#[derive(Debug, Clone)]
pub struct AvgPoolCache {
    input_shape: [usize; 4],
    k: usize,
    stride: usize,
    out_hw: (usize, usize),
}

pub fn avg_pool2d_forward(input: &Tensor, k: usize, stride: usize) -> Result<(Tensor, AvgPoolCache)> {
    let (n, c, h, w, oh, ow) = pool_dims(input, k, stride)?;
    let mut out = vec![0.0; n * c * oh * ow];
    let inv = 1.0 / (k * k) as f64;
    for ni in 0..n {
        for ch in 0..c {
            let base = (ni * c + ch) * h * w;
            let obase = (ni * c + ch) * oh * ow;
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut sum = 0.0;
                    for ki in 0..k {
                        for kj in 0..k {
                            sum += input.data()[base + (oi * stride + ki) * w + oj * stride + kj];
                        }
                    }
                    out[obase + oi * ow + oj] = sum * inv;
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(&[n, c, oh, ow], out)?.check_finite("avg_pool2d")?,
        AvgPoolCache {
            input_shape: [n, c, h, w],
            k,
            stride,
            out_hw: (oh, ow),
        },
    ))
}

pub fn avg_pool2d_backward(grad_out: &Tensor, cache: &AvgPoolCache) -> Result<Tensor> {
    let [n, c, h, w] = cache.input_shape;
    let (oh, ow) = cache.out_hw;
    let (k, stride) = (cache.k, cache.stride);
    if grad_out.shape() != [n, c, oh, ow] {
        return Err(Error::Shape("avg_pool grad_out shape mismatch".into()));
    }
    let inv = 1.0 / (k * k) as f64;
    let mut dx = vec![0.0; n * c * h * w];
    for ni in 0..n {
        for ch in 0..c {
            let base = (ni * c + ch) * h * w;
            let obase = (ni * c + ch) * oh * ow;
            for oi in 0..oh {
                for oj in 0..ow {
                    let g = grad_out.data()[obase + oi * ow + oj] * inv;
                    for ki in 0..k {
                        for kj in 0..k {
                            dx[base + (oi * stride + ki) * w + oj * stride + kj] += g;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, h, w], dx)
}

#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    input_shape: [usize; 4],
    out_hw: (usize, usize),
    /// Flat input index of the (first) argmax per output cell.
    argmax: Vec<usize>,
}

/// Max pooling without padding.
pub fn max_pool2d_forward(input: &Tensor, k: usize, stride: usize) -> Result<(Tensor, MaxPoolCache)> {
    max_pool2d_forward_padded(input, k, stride, 0)
}

/// Max pooling with zero-free padding: out-of-bounds positions never win
/// the window max. The resnet stem pool needs padding 1 to keep spatial
/// dims even.
pub fn max_pool2d_forward_padded(
    input: &Tensor,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, MaxPoolCache)> {
    let [n, c, h, w]: [usize; 4] = input
        .shape()
        .try_into()
        .map_err(|_| Error::Shape(format!("pool input must be 4-d, got {:?}", input.shape())))?;
    if k == 0 || stride == 0 {
        return Err(Error::Shape("pool kernel and stride must be >= 1".into()));
    }
    if k > h + 2 * padding || k > w + 2 * padding {
        return Err(Error::Shape(format!(
            "pool window {k} larger than padded input {h}x{w}"
        )));
    }
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let mut out = vec![0.0; n * c * oh * ow];
    let mut argmax = vec![0usize; n * c * oh * ow];
    for ni in 0..n {
        for ch in 0..c {
            let base = (ni * c + ch) * h * w;
            let obase = (ni * c + ch) * oh * ow;
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for ki in 0..k {
                        let ii = (oi * stride + ki) as isize - padding as isize;
                        if ii < 0 || ii as usize >= h {
                            continue;
                        }
                        for kj in 0..k {
                            let jj = (oj * stride + kj) as isize - padding as isize;
                            if jj < 0 || jj as usize >= w {
                                continue;
                            }
                            let idx = base + ii as usize * w + jj as usize;
                            let v = input.data()[idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    out[obase + oi * ow + oj] = best;
                    argmax[obase + oi * ow + oj] = best_idx;
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(&[n, c, oh, ow], out)?.check_finite("max_pool2d")?,
        MaxPoolCache {
            input_shape: [n, c, h, w],
            out_hw: (oh, ow),
            argmax,
        },
    ))
}

pub fn max_pool2d_backward(grad_out: &Tensor, cache: &MaxPoolCache) -> Result<Tensor> {
    let [n, c, h, w] = cache.input_shape;
    let (oh, ow) = cache.out_hw;
    if grad_out.shape() != [n, c, oh, ow] {
        return Err(Error::Shape("max_pool grad_out shape mismatch".into()));
    }
    let mut dx = vec![0.0; n * c * h * w];
    for (g, &idx) in grad_out.data().iter().zip(&cache.argmax) {
        if idx != usize::MAX {
            dx[idx] += g;
        }
    }
    Tensor::from_vec(&[n, c, h, w], dx)
}

/// N×C×H×W -> N×C spatial mean.
pub fn global_avg_pool_forward(input: &Tensor) -> Result<(Tensor, [usize; 4])> {
    let [n, c, h, w]: [usize; 4] = input
        .shape()
        .try_into()
        .map_err(|_| Error::Shape(format!("gap input must be 4-d, got {:?}", input.shape())))?;
    let plane = h * w;
    let inv = 1.0 / plane as f64;
    let mut out = vec![0.0; n * c];
    for ni in 0..n {
        for ch in 0..c {
            let base = (ni * c + ch) * plane;
            out[ni * c + ch] = input.data()[base..base + plane].iter().sum::<f64>() * inv;
        }
    }
    Ok((
        Tensor::from_vec(&[n, c], out)?.check_finite("global_avg_pool")?,
        [n, c, h, w],
    ))
}

pub fn global_avg_pool_backward(grad_out: &Tensor, shape: [usize; 4]) -> Result<Tensor> {
    let [n, c, h, w] = shape;
    if grad_out.shape() != [n, c] {
        return Err(Error::Shape("gap grad_out shape mismatch".into()));
    }
    let plane = h * w;
    let inv = 1.0 / plane as f64;
    let mut dx = vec![0.0; n * c * plane];
    for ni in 0..n {
        for ch in 0..c {
            let g = grad_out.data()[ni * c + ch] * inv;
            let base = (ni * c + ch) * plane;
            for v in &mut dx[base..base + plane] {
                *v = g;
            }
        }
    }
    Tensor::from_vec(&[n, c, h, w], dx)
}

#[derive(Debug, Clone)]
pub struct LinearCache {
    input: Vec<f64>,
    n: usize,
    d: usize,
    o: usize,
}

/// Affine map: N×D input, D×O weight, O bias.
pub fn linear_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(Tensor, LinearCache)> {
    let [n, d]: [usize; 2] = input
        .shape()
        .try_into()
        .map_err(|_| Error::Shape(format!("linear input must be 2-d, got {:?}", input.shape())))?;
    let [wd, o]: [usize; 2] = weight
        .shape()
        .try_into()
        .map_err(|_| Error::Shape(format!("linear weight must be 2-d, got {:?}", weight.shape())))?;
    if wd != d || bias.len() != o {
        return Err(Error::Shape(format!(
            "linear shapes disagree: input {:?}, weight {:?}, bias {:?}",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let mut out = vec![0.0; n * o];
    gemm(n, d, o, input.data(), weight.data(), &mut out, 0.0);
    for ni in 0..n {
        for oi in 0..o {
            out[ni * o + oi] += bias.data()[oi];
        }
    }
    Ok((
        Tensor::from_vec(&[n, o], out)?.check_finite("linear")?,
        LinearCache {
            input: input.data().to_vec(),
            n,
            d,
            o,
        },
    ))
}

/// Returns (d_input, d_weight, d_bias).
pub fn linear_backward(
    weight: &Tensor,
    grad_out: &Tensor,
    cache: &LinearCache,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, d, o) = (cache.n, cache.d, cache.o);
    if grad_out.shape() != [n, o] {
        return Err(Error::Shape("linear grad_out shape mismatch".into()));
    }
    // dX = dY · W^T
    let mut dx = vec![0.0; n * d];
    unsafe {
        matrixmultiply::dgemm(
            n,
            o,
            d,
            1.0,
            grad_out.data().as_ptr(),
            o as isize,
            1,
            weight.data().as_ptr(),
            1,
            o as isize,
            0.0,
            dx.as_mut_ptr(),
            d as isize,
            1,
        );
    }
    // dW = X^T · dY
    let mut dw = vec![0.0; d * o];
    unsafe {
        matrixmultiply::dgemm(
            d,
            n,
            o,
            1.0,
            cache.input.as_ptr(),
            1,
            d as isize,
            grad_out.data().as_ptr(),
            o as isize,
            1,
            0.0,
            dw.as_mut_ptr(),
            o as isize,
            1,
        );
    }
    let mut db = vec![0.0; o];
    for ni in 0..n {
        for oi in 0..o {
            db[oi] += grad_out.data()[ni * o + oi];
        }
    }
    Ok((
        Tensor::from_vec(&[n, d], dx)?.check_finite("linear backward")?,
        Tensor::from_vec(&[d, o], dw)?,
        Tensor::from_vec(&[o], db)?,
    ))
}

/// Row softmax with log-sum-exp stabilization.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let [n, k]: [usize; 2] = logits
        .shape()
        .try_into()
        .map_err(|_| Error::Shape(format!("softmax input must be 2-d, got {:?}", logits.shape())))?;
    let mut out = vec![0.0; n * k];
    for ni in 0..n {
        let row = &logits.data()[ni * k..(ni + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (o, &x) in out[ni * k..(ni + 1) * k].iter_mut().zip(row) {
            let e = (x - max).exp();
            *o = e;
            denom += e;
        }
        for o in &mut out[ni * k..(ni + 1) * k] {
            *o /= denom;
        }
    }
    Tensor::from_vec(&[n, k], out)?.check_finite("softmax")
}

#[derive(Debug, Clone)]
pub struct SoftmaxCache {
    probs: Tensor,
    labels: Vec<usize>,
}

impl SoftmaxCache {
    pub fn probs(&self) -> &Tensor {
        &self.probs
    }
}

/// Mean negative log-likelihood of the labels under row softmax.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, SoftmaxCache)> {
    let [n, k]: [usize; 2] = logits
        .shape()
        .try_into()
        .map_err(|_| Error::Shape(format!("loss input must be 2-d, got {:?}", logits.shape())))?;
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Shape(format!("label {bad} out of range for {k} classes")));
    }
    let mut loss = 0.0;
    for ni in 0..n {
        let row = &logits.data()[ni * k..(ni + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        loss += lse - row[labels[ni]];
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("softmax_cross_entropy".into()));
    }
    let probs = softmax_rows(logits)?;
    Ok((
        loss,
        SoftmaxCache {
            probs,
            labels: labels.to_vec(),
        },
    ))
}

/// Gradient of the mean NLL: (softmax - onehot) / N.
pub fn softmax_cross_entropy_backward(cache: &SoftmaxCache) -> Result<Tensor> {
    let [n, k]: [usize; 2] = cache.probs.shape().try_into().unwrap();
    let mut dx = cache.probs.data().to_vec();
    let inv = 1.0 / n as f64;
    for (ni, &label) in cache.labels.iter().enumerate() {
        dx[ni * k + label] -= 1.0;
    }
    for v in &mut dx {
        *v *= inv;
    }
    Tensor::from_vec(&[n, k], dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, numeric_gradient, max_rel_error};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-scale..scale)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn conv_sum_of_ones() {
        let x = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let (y, _) = conv2d_forward(&x, &w, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn conv_identity_kernel_is_identity_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&mut rng, &[2, 3, 5, 4], 1.0);
        // 3 filters, each selecting exactly one input channel
        let mut w = vec![0.0; 3 * 3];
        w[0] = 1.0; // filter 0 <- channel 0
        w[4] = 1.0;
        w[8] = 1.0;
        let w = Tensor::from_vec(&[3, 3, 1, 1], w).unwrap();
        let (y, _) = conv2d_forward(&x, &w, 1, 0).unwrap();
        assert_eq!(y.shape(), x.shape());
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_relative_eq!(a, b);
        }
    }

    #[test]
    fn conv_shape_mismatch_rejected() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(conv2d_forward(&x, &w, 1, 0).is_err());
        let w_big = Tensor::zeros(&[1, 2, 7, 7]);
        assert!(conv2d_forward(&x, &w_big, 1, 0).is_err());
    }

    /// Random-cotangent Jacobian check: loss = sum(proj * op(x)).
    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = random_tensor(&mut rng, &[2, 3, 8, 8], 0.8);
        let w0 = random_tensor(&mut rng, &[4, 3, 3, 3], 0.5);
        let (y, cache) = conv2d_forward(&x0, &w0, 2, 1).unwrap();
        let proj: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cot = Tensor::from_vec(y.shape(), proj.clone()).unwrap();
        let (dx, dw) = conv2d_backward(&x0, &w0, &cot, &cache).unwrap();

        let mut xv = x0.data().to_vec();
        let loss_x = |xs: &[f64]| {
            let x = Tensor::from_vec(x0.shape(), xs.to_vec()).unwrap();
            let (y, _) = conv2d_forward(&x, &w0, 2, 1)?;
            Ok(y.data().iter().zip(&proj).map(|(a, b)| a * b).sum())
        };
        let err = grad_check(loss_x, &mut xv, dx.data(), 1e-5).unwrap();
        assert!(err < 1e-5, "input grad err {err}");

        let mut wv = w0.data().to_vec();
        let loss_w = |ws: &[f64]| {
            let w = Tensor::from_vec(w0.shape(), ws.to_vec()).unwrap();
            let (y, _) = conv2d_forward(&x0, &w, 2, 1)?;
            Ok(y.data().iter().zip(&proj).map(|(a, b)| a * b).sum())
        };
        let err = grad_check(loss_w, &mut wv, dw.data(), 1e-5).unwrap();
        assert!(err < 1e-5, "weight grad err {err}");
    }

    fn bn_state(c: usize) -> (Tensor, Tensor, Vec<f64>, Vec<f64>) {
        (
            Tensor::from_vec(&[c], vec![1.0; c]).unwrap(),
            Tensor::zeros(&[c]),
            vec![0.0; c],
            vec![1.0; c],
        )
    }

    #[test]
    fn bn_train_normalizes_per_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&mut rng, &[8, 3, 4, 4], 2.0);
        let (gamma, beta, mut rm, mut rv) = bn_state(3);
        let (y, _) =
            batch_norm_forward(&x, &gamma, &beta, &mut rm, &mut rv, 0.9, 1e-5, BnMode::Train)
                .unwrap();
        let plane = 16;
        for ch in 0..3 {
            let mut vals = Vec::new();
            for ni in 0..8 {
                let base = (ni * 3 + ch) * plane;
                vals.extend_from_slice(&y.data()[base..base + plane]);
            }
            let m: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let v: f64 = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-6, "channel {ch} mean {m}");
            assert!((v - 1.0).abs() < 1e-3, "channel {ch} var {v}");
        }
    }

    #[test]
    fn bn_constant_channel_outputs_beta() {
        let x = Tensor::from_vec(&[4, 1, 2, 2], vec![3.7; 16]).unwrap();
        let gamma = Tensor::from_vec(&[1], vec![2.0]).unwrap();
        let beta = Tensor::from_vec(&[1], vec![-0.5]).unwrap();
        let (mut rm, mut rv) = (vec![0.0], vec![1.0]);
        let (y, _) =
            batch_norm_forward(&x, &gamma, &beta, &mut rm, &mut rv, 0.9, 1e-5, BnMode::Train)
                .unwrap();
        for &v in y.data() {
            assert_relative_eq!(v, -0.5);
        }
    }

    #[test]
    fn bn_eval_uses_running_estimates() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor(&mut rng, &[4, 2, 3, 3], 1.0);
        let (gamma, beta, mut rm, mut rv) = bn_state(2);
        rm[0] = 0.3;
        rv[0] = 4.0;
        let (rm0, rv0) = (rm.clone(), rv.clone());
        let (y, _) =
            batch_norm_forward(&x, &gamma, &beta, &mut rm, &mut rv, 0.9, 1e-5, BnMode::Eval)
                .unwrap();
        assert_eq!(rm, rm0, "eval must not touch running stats");
        assert_eq!(rv, rv0);
        let expect = (x.data()[0] - 0.3) / (4.0f64 + 1e-5).sqrt();
        assert_relative_eq!(y.data()[0], expect, epsilon = 1e-12);
        // train mode with batch of 1 is rejected
        let tiny = random_tensor(&mut rng, &[1, 2, 3, 3], 1.0);
        assert!(batch_norm_forward(
            &tiny, &gamma, &beta, &mut rm, &mut rv, 0.9, 1e-5, BnMode::Train
        )
        .is_err());
    }

    #[test]
    fn bn_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x0 = random_tensor(&mut rng, &[4, 2, 3, 3], 1.0);
        let gamma0 = random_tensor(&mut rng, &[2], 1.0);
        let beta0 = random_tensor(&mut rng, &[2], 1.0);
        let (y, cache) = batch_norm_forward(
            &x0, &gamma0, &beta0, &mut vec![0.0; 2], &mut vec![1.0; 2], 0.9, 1e-5, BnMode::Train,
        )
        .unwrap();
        let proj: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cot = Tensor::from_vec(y.shape(), proj.clone()).unwrap();
        let (dx, dgamma, dbeta) = batch_norm_backward(&gamma0, &cot, &cache).unwrap();

        let loss = |x: &Tensor, g: &Tensor, b: &Tensor| -> crate::Result<f64> {
            let (y, _) = batch_norm_forward(
                x, g, b, &mut vec![0.0; 2], &mut vec![1.0; 2], 0.9, 1e-5, BnMode::Train,
            )?;
            Ok(y.data().iter().zip(&proj).map(|(a, b)| a * b).sum())
        };

        let mut xv = x0.data().to_vec();
        let err = grad_check(
            |xs| loss(&Tensor::from_vec(x0.shape(), xs.to_vec()).unwrap(), &gamma0, &beta0),
            &mut xv,
            dx.data(),
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "input grad err {err}");

        let mut gv = gamma0.data().to_vec();
        grad_check(
            |gs| loss(&x0, &Tensor::from_vec(&[2], gs.to_vec()).unwrap(), &beta0),
            &mut gv,
            dgamma.data(),
            1e-4,
        )
        .unwrap();
        let mut bv = beta0.data().to_vec();
        grad_check(
            |bs| loss(&x0, &gamma0, &Tensor::from_vec(&[2], bs.to_vec()).unwrap()),
            &mut bv,
            dbeta.data(),
            1e-4,
        )
        .unwrap();
    }

    #[test]
    fn relu_basics() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let (y, cache) = relu_forward(&x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let g = Tensor::from_vec(&[3], vec![1.0, 1.0, 1.0]).unwrap();
        let dx = relu_backward(&g, &cache).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0]);

        let neg = Tensor::from_vec(&[2], vec![-3.0, -0.1]).unwrap();
        let (y, cache) = relu_forward(&neg).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
        let dx = relu_backward(&g, &cache);
        assert!(dx.is_err() || dx.unwrap().data() == [0.0, 0.0][..].as_ref());
    }

    #[test]
    fn relu_gradient_away_from_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // keep inputs away from 0 so central differences are valid
        let data: Vec<f64> = (0..24)
            .map(|_| {
                let v: f64 = rng.gen_range(0.2..1.5);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let x0 = Tensor::from_vec(&[2, 3, 2, 2], data).unwrap();
        let (y, cache) = relu_forward(&x0).unwrap();
        let proj: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cot = Tensor::from_vec(y.shape(), proj.clone()).unwrap();
        let dx = relu_backward(&cot, &cache).unwrap();
        let mut xv = x0.data().to_vec();
        let err = grad_check(
            |xs| {
                let x = Tensor::from_vec(x0.shape(), xs.to_vec()).unwrap();
                let (y, _) = relu_forward(&x)?;
                Ok(y.data().iter().zip(&proj).map(|(a, b)| a * b).sum())
            },
            &mut xv,
            dx.data(),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6);
    }

    #[test]
    fn pooling_arithmetic() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (avg, _) = avg_pool2d_forward(&x, 2, 2).unwrap();
        assert_eq!(avg.data(), &[2.5]);
        let (max, _) = max_pool2d_forward(&x, 2, 2).unwrap();
        assert_eq!(max.data(), &[4.0]);
        assert!(avg_pool2d_forward(&x, 3, 1).is_err());
    }

    #[test]
    fn pooling_k1_s1_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_tensor(&mut rng, &[2, 2, 3, 3], 1.0);
        let (a, _) = avg_pool2d_forward(&x, 1, 1).unwrap();
        let (m, _) = max_pool2d_forward(&x, 1, 1).unwrap();
        assert_eq!(a.data(), x.data());
        assert_eq!(m.data(), x.data());
    }

    #[test]
    fn pooling_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x0 = random_tensor(&mut rng, &[2, 2, 4, 4], 1.0);

        let (ya, ca) = avg_pool2d_forward(&x0, 2, 2).unwrap();
        let proj: Vec<f64> = (0..ya.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cot = Tensor::from_vec(ya.shape(), proj.clone()).unwrap();
        let dx = avg_pool2d_backward(&cot, &ca).unwrap();
        let mut xv = x0.data().to_vec();
        let err = grad_check(
            |xs| {
                let x = Tensor::from_vec(x0.shape(), xs.to_vec()).unwrap();
                let (y, _) = avg_pool2d_forward(&x, 2, 2)?;
                Ok(y.data().iter().zip(&proj).map(|(a, b)| a * b).sum())
            },
            &mut xv,
            dx.data(),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6);

        // max pool: ties have measure zero under random init
        let (ym, cm) = max_pool2d_forward(&x0, 2, 2).unwrap();
        let projm: Vec<f64> = (0..ym.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cotm = Tensor::from_vec(ym.shape(), projm.clone()).unwrap();
        let dxm = max_pool2d_backward(&cotm, &cm).unwrap();
        let mut xv = x0.data().to_vec();
        let err = grad_check(
            |xs| {
                let x = Tensor::from_vec(x0.shape(), xs.to_vec()).unwrap();
                let (y, _) = max_pool2d_forward(&x, 2, 2)?;
                Ok(y.data().iter().zip(&projm).map(|(a, b)| a * b).sum())
            },
            &mut xv,
            dxm.data(),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6);
    }

    #[test]
    fn global_avg_pool_mean_and_gradient() {
        let x = Tensor::from_vec(&[1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 10.0, 10.0, 10.0, 10.0])
            .unwrap();
        let (y, shape) = global_avg_pool_forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        assert_eq!(y.data(), &[2.5, 10.0]);
        let g = Tensor::from_vec(&[1, 2], vec![4.0, 8.0]).unwrap();
        let dx = global_avg_pool_backward(&g, shape).unwrap();
        assert_eq!(dx.data(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn linear_identity_and_bias() {
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let zero_bias = Tensor::zeros(&[2]);
        let (y, _) = linear_forward(&x, &eye, &zero_bias).unwrap();
        assert_eq!(y.data(), x.data());

        let zero_w = Tensor::zeros(&[2, 3]);
        let bias = Tensor::from_vec(&[3], vec![1.0, -1.0, 0.5]).unwrap();
        let (y, _) = linear_forward(&x, &zero_w, &bias).unwrap();
        assert_eq!(y.data(), &[1.0, -1.0, 0.5, 1.0, -1.0, 0.5]);
        assert!(linear_forward(&x, &Tensor::zeros(&[3, 2]), &zero_bias).is_err());
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = random_tensor(&mut rng, &[3, 4], 1.0);
        let w0 = random_tensor(&mut rng, &[4, 2], 1.0);
        let b0 = random_tensor(&mut rng, &[2], 1.0);
        let (y, cache) = linear_forward(&x0, &w0, &b0).unwrap();
        let proj: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cot = Tensor::from_vec(y.shape(), proj.clone()).unwrap();
        let (dx, dw, db) = linear_backward(&w0, &cot, &cache).unwrap();

        let loss = |x: &Tensor, w: &Tensor, b: &Tensor| -> crate::Result<f64> {
            let (y, _) = linear_forward(x, w, b)?;
            Ok(y.data().iter().zip(&proj).map(|(a, b)| a * b).sum())
        };
        let mut xv = x0.data().to_vec();
        grad_check(
            |v| loss(&Tensor::from_vec(x0.shape(), v.to_vec()).unwrap(), &w0, &b0),
            &mut xv,
            dx.data(),
            1e-6,
        )
        .unwrap();
        let mut wv = w0.data().to_vec();
        grad_check(
            |v| loss(&x0, &Tensor::from_vec(w0.shape(), v.to_vec()).unwrap(), &b0),
            &mut wv,
            dw.data(),
            1e-6,
        )
        .unwrap();
        let mut bv = b0.data().to_vec();
        grad_check(
            |v| loss(&x0, &w0, &Tensor::from_vec(&[2], v.to_vec()).unwrap()),
            &mut bv,
            db.data(),
            1e-6,
        )
        .unwrap();
    }

    #[test]
    fn uniform_logits_loss_is_ln_k() {
        let logits = Tensor::zeros(&[3, 5]);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 2, 4]).unwrap();
        assert_relative_eq!(loss, 5.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn large_margin_drives_loss_to_zero() {
        let mut logits = vec![0.0; 5];
        logits[2] = 50.0;
        let t = Tensor::from_vec(&[1, 5], logits).unwrap();
        let (loss, _) = softmax_cross_entropy(&t, &[2]).unwrap();
        assert!(loss < 1e-12, "loss {loss}");
    }

    #[test]
    fn out_of_range_label_rejected() {
        let logits = Tensor::zeros(&[1, 3]);
        assert!(softmax_cross_entropy(&logits, &[3]).is_err());
        assert!(softmax_cross_entropy(&logits, &[0, 1]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let logits = random_tensor(&mut rng, &[6, 7], 30.0);
        let p = softmax_rows(&logits).unwrap();
        for row in p.data().chunks(7) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "row sum {s}");
        }
    }

    #[test]
    fn cross_entropy_invariant_to_logit_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let logits = random_tensor(&mut rng, &[4, 5], 3.0);
        let labels = [0usize, 1, 2, 3];
        let (l1, _) = softmax_cross_entropy(&logits, &labels).unwrap();
        let shifted: Vec<f64> = logits.data().iter().map(|v| v + 123.456).collect();
        let (l2, _) =
            softmax_cross_entropy(&Tensor::from_vec(&[4, 5], shifted).unwrap(), &labels).unwrap();
        assert!((l1 - l2).abs() < 1e-10, "{l1} vs {l2}");
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let logits0 = random_tensor(&mut rng, &[3, 4], 2.0);
        let labels = [1usize, 0, 3];
        let (_, cache) = softmax_cross_entropy(&logits0, &labels).unwrap();
        let analytic = softmax_cross_entropy_backward(&cache).unwrap();
        let mut xv = logits0.data().to_vec();
        let numeric = numeric_gradient(
            |xs| {
                let t = Tensor::from_vec(logits0.shape(), xs.to_vec()).unwrap();
                softmax_cross_entropy(&t, &labels).map(|(l, _)| l)
            },
            &mut xv,
        )
        .unwrap();
        assert!(max_rel_error(analytic.data(), &numeric) < 1e-6);
    }
}
