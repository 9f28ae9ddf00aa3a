//! Stateless layer kernels with explicit forward and backward passes.
//!
//! Image tensors are NCHW. Dense tensors are N×F. Every kernel iterates in a
//! fixed order so results are bit-reproducible.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn dims4<T: Scalar>(t: &Tensor<T>, op: &'static str, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::shape(op, format!("{what} must be rank 4, got {:?}", t.shape()))),
    }
}

fn dims2<T: Scalar>(t: &Tensor<T>, op: &'static str, what: &str) -> Result<[usize; 2]> {
    match *t.shape() {
        [a, b] => Ok([a, b]),
        _ => Err(Error::shape(op, format!("{what} must be rank 2, got {:?}", t.shape()))),
    }
}

/// Output edge of a convolution or pooling window along one axis.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    let [_, c, h, w] = dims4(input, "conv2d", "input")?;
    let [o, wc, kh, kw] = dims4(weight, "conv2d", "weight")?;
    if wc != c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels but weight expects {wc}"),
        ));
    }
    if bias.shape() != [o] {
        return Err(Error::shape(
            "conv2d",
            format!("bias shape {:?} does not match {o} output channels", bias.shape()),
        ));
    }
    let out_h = conv_output_len(h, kh, stride, padding);
    let out_w = conv_output_len(w, kw, stride, padding);
    match (out_h, out_w) {
        (Some(out_h), Some(out_w)) => Ok(ConvGeometry {
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            out_h,
            out_w,
            stride,
            padding,
        }),
        _ => Err(Error::shape(
            "conv2d",
            format!("kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}, stride {stride}"),
        )),
    }
}

/// Unfolds one sample (C×H×W) into a (C·KH·KW)×(OH·OW) column matrix.
fn im2col<T: Scalar>(sample: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let p = g.positions();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &sample[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy as usize >= g.height {
                        line.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *v = if ix < 0 || ix as usize >= g.width {
                            T::ZERO
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatters column gradients back onto a C×H×W sample gradient.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, sample_grad: &mut [T]) {
    let p = g.positions();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut sample_grad[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy as usize >= g.height {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            plane[iy as usize * g.width + ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// 2-D cross-correlation. Output edge is `floor((H + 2·pad − K)/stride) + 1`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input, weight, bias, stride, padding)?;
    let n = input.shape()[0];
    let o = weight.shape()[0];
    let (k, p) = (g.patch_len(), g.positions());
    let sample_len = g.channels * g.height * g.width;
    let w = weight.data();
    let mut cols = vec![T::ZERO; k * p];
    let mut out = vec![T::ZERO; n * o * p];
    for s in 0..n {
        im2col(&input.data()[s * sample_len..(s + 1) * sample_len], &g, &mut cols);
        let out_s = &mut out[s * o * p..(s + 1) * o * p];
        for oc in 0..o {
            let dst = &mut out_s[oc * p..(oc + 1) * p];
            dst.fill(bias.data()[oc]);
            for (ki, &wv) in w[oc * k..(oc + 1) * k].iter().enumerate() {
                let src = &cols[ki * p..(ki + 1) * p];
                for (d, &c) in dst.iter_mut().zip(src) {
                    *d += wv * c;
                }
            }
        }
    }
    Tensor::new(vec![n, o, g.out_h, g.out_w], out)
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads<T>> {
    let o = weight.shape().first().copied().unwrap_or(0);
    let bias_probe = Tensor::zeros(&[o.max(1)]);
    let g = conv_geometry(input, weight, &bias_probe, stride, padding)?;
    let n = input.shape()[0];
    if grad_out.shape() != [n, o, g.out_h, g.out_w] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "grad_out {:?} does not match forward output {:?}",
                grad_out.shape(),
                [n, o, g.out_h, g.out_w]
            ),
        ));
    }
    let (k, p) = (g.patch_len(), g.positions());
    let sample_len = g.channels * g.height * g.width;
    let w = weight.data();
    let mut cols = vec![T::ZERO; k * p];
    let mut grad_cols = vec![T::ZERO; k * p];
    let mut gw = vec![T::ZERO; o * k];
    let mut gb = vec![T::ZERO; o];
    let mut gx = vec![T::ZERO; input.len()];
    for s in 0..n {
        im2col(&input.data()[s * sample_len..(s + 1) * sample_len], &g, &mut cols);
        let go = &grad_out.data()[s * o * p..(s + 1) * o * p];
        grad_cols.fill(T::ZERO);
        for oc in 0..o {
            let gorow = &go[oc * p..(oc + 1) * p];
            gb[oc] += gorow.iter().copied().sum();
            let gw_row = &mut gw[oc * k..(oc + 1) * k];
            for ki in 0..k {
                let c = &cols[ki * p..(ki + 1) * p];
                let mut acc = T::ZERO;
                for (&a, &b) in gorow.iter().zip(c) {
                    acc += a * b;
                }
                gw_row[ki] += acc;
                let wv = w[oc * k + ki];
                for (gc, &gval) in grad_cols[ki * p..(ki + 1) * p].iter_mut().zip(gorow) {
                    *gc += wv * gval;
                }
            }
        }
        col2im(&grad_cols, &g, &mut gx[s * sample_len..(s + 1) * sample_len]);
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        weight: Tensor::new(weight.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![o], gb)?,
    })
}

/// Views an (N, C, ...) tensor as (N, C, S) for per-channel normalization.
fn channel_view<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    let shape = t.shape();
    if shape.len() < 2 {
        return Err(Error::shape(op, format!("need at least rank 2, got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

/// Values needed by [`batchnorm_backward`] after a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Population variance over the batch (denominator `N·S`).
    pub var: Vec<T>,
    /// Number of values each channel statistic was computed from.
    pub count: usize,
}

pub fn batchnorm_train_forward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    epsilon: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>, BatchStats<T>)> {
    let (n, c, s) = channel_view(input, "batchnorm")?;
    if n < 2 {
        return Err(Error::Config(format!(
            "batchnorm in train mode needs a batch of at least 2, got {n}"
        )));
    }
    check_affine(gamma, beta, c)?;
    let x = input.data();
    let m = n * s;
    let m_t = T::from_f64(m as f64);
    let mut mean = vec![T::ZERO; c];
    let mut var = vec![T::ZERO; c];
    for ch in 0..c {
        let mut acc = T::ZERO;
        for i in 0..n {
            for &v in &x[(i * c + ch) * s..(i * c + ch + 1) * s] {
                acc += v;
            }
        }
        let mu = acc / m_t;
        let mut sq = T::ZERO;
        for i in 0..n {
            for &v in &x[(i * c + ch) * s..(i * c + ch + 1) * s] {
                let d = v - mu;
                sq += d * d;
            }
        }
        mean[ch] = mu;
        var[ch] = sq / m_t;
    }
    let eps = T::from_f64(epsilon);
    let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::ZERO; x.len()];
    let mut y = vec![T::ZERO; x.len()];
    for i in 0..n {
        for ch in 0..c {
            let range = (i * c + ch) * s..(i * c + ch + 1) * s;
            let (g, b, mu, is) = (gamma.data()[ch], beta.data()[ch], mean[ch], inv_std[ch]);
            for j in range {
                let h = (x[j] - mu) * is;
                xhat[j] = h;
                y[j] = g * h + b;
            }
        }
    }
    let shape = input.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), y)?,
        BatchNormCache {
            normalized: Tensor::new(shape, xhat)?,
            inv_std,
        },
        BatchStats { mean, var, count: m },
    ))
}

pub fn batchnorm_eval_forward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    epsilon: f64,
) -> Result<Tensor<T>> {
    let (n, c, s) = channel_view(input, "batchnorm")?;
    check_affine(gamma, beta, c)?;
    check_affine(running_mean, running_var, c)?;
    let eps = T::from_f64(epsilon);
    let x = input.data();
    let mut y = vec![T::ZERO; x.len()];
    for i in 0..n {
        for ch in 0..c {
            let scale = gamma.data()[ch] / (running_var.data()[ch] + eps).sqrt();
            let shift = beta.data()[ch] - running_mean.data()[ch] * scale;
            let range = (i * c + ch) * s..(i * c + ch + 1) * s;
            for j in range {
                y[j] = x[j] * scale + shift;
            }
        }
    }
    Tensor::new(input.shape().to_vec(), y)
}

fn check_affine<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, c: usize) -> Result<()> {
    if a.shape() != [c] || b.shape() != [c] {
        return Err(Error::shape(
            "batchnorm",
            format!("per-channel tensors {:?}/{:?} do not match {c} channels", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// Exponential running-stat update; the variance estimate is unbiased.
pub fn update_running_stats<T: Scalar>(
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    stats: &BatchStats<T>,
    momentum: f64,
) {
    let m = T::from_f64(momentum);
    let keep = T::ONE - m;
    let correction = T::from_f64(stats.count as f64 / (stats.count as f64 - 1.0).max(1.0));
    for (r, &b) in running_mean.data_mut().iter_mut().zip(&stats.mean) {
        *r = keep * *r + m * b;
    }
    for (r, &b) in running_var.data_mut().iter_mut().zip(&stats.var) {
        *r = keep * *r + m * b * correction;
    }
}

pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn batchnorm_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    if grad_out.shape() != cache.normalized.shape() {
        return Err(Error::shape(
            "batchnorm_backward",
            format!("grad {:?} vs cached {:?}", grad_out.shape(), cache.normalized.shape()),
        ));
    }
    let (n, c, s) = channel_view(grad_out, "batchnorm_backward")?;
    let m_t = T::from_f64((n * s) as f64);
    let g = grad_out.data();
    let xhat = cache.normalized.data();
    let mut ggamma = vec![T::ZERO; c];
    let mut gbeta = vec![T::ZERO; c];
    for i in 0..n {
        for ch in 0..c {
            for j in (i * c + ch) * s..(i * c + ch + 1) * s {
                gbeta[ch] += g[j];
                ggamma[ch] += g[j] * xhat[j];
            }
        }
    }
    let mut gx = vec![T::ZERO; g.len()];
    for i in 0..n {
        for ch in 0..c {
            let k = gamma.data()[ch] * cache.inv_std[ch] / m_t;
            for j in (i * c + ch) * s..(i * c + ch + 1) * s {
                gx[j] = k * (m_t * g[j] - gbeta[ch] - xhat[j] * ggamma[ch]);
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(grad_out.shape().to_vec(), gx)?,
        gamma: Tensor::new(vec![c], ggamma)?,
        beta: Tensor::new(vec![c], gbeta)?,
    })
}

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != input.shape() {
        return Err(Error::shape("relu_backward", format!("{:?} vs {:?}", grad_out.shape(), input.shape())));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > T::ZERO { g } else { T::ZERO })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Returns the pooled tensor and, for every output element, the flat index
/// of the input element that produced it.
pub fn maxpool2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = dims4(input, "maxpool2", "input")?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::shape("maxpool2", format!("input {h}x{w} too small for 2x2 pooling")));
    }
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, argmax))
}

pub fn maxpool2_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::shape("maxpool2_backward", "gradient does not match cached argmax"));
    }
    let mut gx = Tensor::zeros(input_shape);
    let data = gx.data_mut();
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        data[idx] += g;
    }
    Ok(gx)
}

/// N×C×H×W → N×C spatial mean.
pub fn global_avg_pool_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4(input, "global_avg_pool", "input")?;
    let s = h * w;
    let inv = T::from_f64(1.0 / s as f64);
    let out = input
        .data()
        .chunks_exact(s)
        .map(|plane| plane.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(vec![n, c], out)
}

pub fn global_avg_pool_backward<T: Scalar>(grad_out: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
    let s: usize = input_shape[2..].iter().product();
    if grad_out.len() * s != input_shape.iter().product::<usize>() {
        return Err(Error::shape("global_avg_pool_backward", "gradient does not match input shape"));
    }
    let inv = T::from_f64(1.0 / s as f64);
    let mut data = Vec::with_capacity(grad_out.len() * s);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g * inv, s));
    }
    Tensor::new(input_shape.to_vec(), data)
}

/// `y = x·Wᵀ + b` with `W` stored as out×in.
pub fn linear_forward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, i] = dims2(input, "linear", "input")?;
    let [o, wi] = dims2(weight, "linear", "weight")?;
    if wi != i || bias.shape() != [o] {
        return Err(Error::shape(
            "linear",
            format!("input {:?}, weight {:?}, bias {:?}", input.shape(), weight.shape(), bias.shape()),
        ));
    }
    let (x, w, b) = (input.data(), weight.data(), bias.data());
    let mut out = Vec::with_capacity(n * o);
    for row in x.chunks_exact(i) {
        for oc in 0..o {
            let mut acc = b[oc];
            for (&a, &c) in row.iter().zip(&w[oc * i..(oc + 1) * i]) {
                acc += a * c;
            }
            out.push(acc);
        }
    }
    Tensor::new(vec![n, o], out)
}

pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn linear_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let [n, i] = dims2(input, "linear_backward", "input")?;
    let [o, _] = dims2(weight, "linear_backward", "weight")?;
    if grad_out.shape() != [n, o] {
        return Err(Error::shape(
            "linear_backward",
            format!("grad {:?} does not match output [{n}, {o}]", grad_out.shape()),
        ));
    }
    let (g, x, w) = (grad_out.data(), input.data(), weight.data());
    let mut gx = vec![T::ZERO; n * i];
    let mut gw = vec![T::ZERO; o * i];
    let mut gb = vec![T::ZERO; o];
    for s in 0..n {
        let xrow = &x[s * i..(s + 1) * i];
        let gxrow = &mut gx[s * i..(s + 1) * i];
        for oc in 0..o {
            let gv = g[s * o + oc];
            gb[oc] += gv;
            let wrow = &w[oc * i..(oc + 1) * i];
            let gwrow = &mut gw[oc * i..(oc + 1) * i];
            for k in 0..i {
                gwrow[k] += gv * xrow[k];
                gxrow[k] += gv * wrow[k];
            }
        }
    }
    Ok(LinearGrads {
        input: Tensor::new(vec![n, i], gx)?,
        weight: Tensor::new(vec![o, i], gw)?,
        bias: Tensor::new(vec![o], gb)?,
    })
}

pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Inverted dropout. Returns the output and the per-element multiplier
/// (0 or `1/(1−rate)`) needed for the backward pass.
pub fn dropout_train_forward<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    rng: &mut R,
) -> Result<(Tensor<T>, Vec<T>)> {
    check_dropout_rate(rate)?;
    let scale = T::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.random::<f64>() < rate { T::ZERO } else { scale })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((Tensor::new(input.shape().to_vec(), data)?, mask))
}

pub fn dropout_backward<T: Scalar>(grad_out: &Tensor<T>, mask: &[T]) -> Result<Tensor<T>> {
    if grad_out.len() != mask.len() {
        return Err(Error::shape("dropout_backward", "gradient does not match cached mask"));
    }
    let data = grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
    Tensor::new(grad_out.shape().to_vec(), data)
}
