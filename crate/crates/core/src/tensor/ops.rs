//! Forward and backward kernels. Everything here is a pure function over
//! tensors; the tape in `graph.rs` decides which of them to call.

use super::{Result, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == (1, 1) && self.padding == (0, 0)
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

pub(crate) fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<(usize, usize, ConvGeom)> {
    let (n, c, h, w) = input.dims4("conv2d")?;
    let (o, kc, kh, kw) = kernel.dims4("conv2d")?;
    if kc != c {
        return Err(TensorError::shape(
            "conv2d",
            format!("input has {c} channels, kernel expects {kc}"),
        ));
    }
    if stride.0 == 0 || stride.1 == 0 {
        return Err(TensorError::shape("conv2d", "stride must be positive"));
    }
    if h + 2 * padding.0 < kh || w + 2 * padding.1 < kw {
        return Err(TensorError::shape(
            "conv2d",
            format!("kernel {kh}x{kw} larger than padded input {h}x{w}"),
        ));
    }
    let out_h = (h + 2 * padding.0 - kh) / stride.0 + 1;
    let out_w = (w + 2 * padding.1 - kw) / stride.1 + 1;
    Ok((
        n,
        o,
        ConvGeom {
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            stride,
            padding,
            out_h,
            out_w,
        },
    ))
}

/// Output columns `[lo, hi)` whose stride-1 input column `ox + k − pad`
/// lies inside `[0, width)`.
fn valid_range(k: usize, pad: usize, width: usize, out_w: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k).min(out_w);
    let hi = (width + pad).saturating_sub(k).min(out_w).max(lo);
    (lo, hi)
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride.0 + ki) as isize - g.padding.0 as isize;
                    let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy as usize >= g.height {
                        dst_row.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    if g.stride.1 == 1 {
                        // Valid ox satisfy 0 <= ox + kj - pad < width.
                        let (lo, hi) = valid_range(kj, g.padding.1, g.width, g.out_w);
                        dst_row[..lo].fill(T::ZERO);
                        dst_row[hi..].fill(T::ZERO);
                        if lo < hi {
                            let s0 = lo + kj - g.padding.1;
                            dst_row[lo..hi].copy_from_slice(&src[s0..s0 + hi - lo]);
                        }
                        continue;
                    }
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride.1 + kj) as isize - g.padding.1 as isize;
                        *d = if ix < 0 || ix as usize >= g.width {
                            T::ZERO
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride.0 + ki) as isize - g.padding.0 as isize;
                    if iy < 0 || iy as usize >= g.height {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    if g.stride.1 == 1 {
                        let (lo, hi) = valid_range(kj, g.padding.1, g.width, g.out_w);
                        if lo < hi {
                            let d0 = lo + kj - g.padding.1;
                            let row_src = &src[oy * g.out_w + lo..oy * g.out_w + hi];
                            for (d, &v) in dst[d0..d0 + hi - lo].iter_mut().zip(row_src) {
                                *d += v;
                            }
                        }
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride.1 + kj) as isize - g.padding.1 as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c[m×n] = a[m×k] · b[k×n]` (+ `beta·c`), with optional transposes.
#[allow(clippy::too_many_arguments)]
fn matmul<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    beta: T,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: slice lengths were checked above against the declared strides.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::ONE,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor<T>> {
    let (n, o, g) = conv_geometry(x, w, stride, padding)?;
    let in_size = g.channels * g.height * g.width;
    let out_size = o * g.col_cols();
    let mut out = vec![T::ZERO; n * out_size];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::ZERO; g.col_rows() * g.col_cols()]
    };
    for b in 0..n {
        let xs = &x.data()[b * in_size..(b + 1) * in_size];
        let ys = &mut out[b * out_size..(b + 1) * out_size];
        let rhs = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, &g, &mut col);
            &col
        };
        matmul(
            o,
            g.col_rows(),
            g.col_cols(),
            w.data(),
            false,
            rhs,
            false,
            ys,
            T::ZERO,
        );
    }
    Tensor::new(vec![n, o, g.out_h, g.out_w], out)
}

/// Returns `(dx, dw)`; either may be skipped when not needed.
/// Input and weight gradients, each present only when requested.
pub(crate) type ConvGrads<T> = (Option<Tensor<T>>, Option<Tensor<T>>);

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: (usize, usize),
    padding: (usize, usize),
    need_dx: bool,
    need_dw: bool,
) -> Result<ConvGrads<T>> {
    let (n, o, g) = conv_geometry(x, w, stride, padding)?;
    let in_size = g.channels * g.height * g.width;
    let out_size = o * g.col_cols();
    let rows = g.col_rows();
    let cols = g.col_cols();
    let mut dx = need_dx.then(|| vec![T::ZERO; x.len()]);
    let mut dw = need_dw.then(|| vec![T::ZERO; w.len()]);
    let mut col = vec![T::ZERO; if g.is_pointwise() { 0 } else { rows * cols }];
    let mut dcol = vec![
        T::ZERO;
        if g.is_pointwise() || !need_dx {
            0
        } else {
            rows * cols
        }
    ];
    for b in 0..n {
        let xs = &x.data()[b * in_size..(b + 1) * in_size];
        let dys = &dy.data()[b * out_size..(b + 1) * out_size];
        if let Some(dw) = dw.as_mut() {
            let rhs = if g.is_pointwise() {
                xs
            } else {
                im2col(xs, &g, &mut col);
                &col
            };
            // dw[o×rows] += dy[o×cols] · colᵀ
            matmul(o, cols, rows, dys, false, rhs, true, dw, T::ONE);
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[b * in_size..(b + 1) * in_size];
            if g.is_pointwise() {
                matmul(rows, o, cols, w.data(), true, dys, false, dxs, T::ZERO);
            } else {
                matmul(
                    rows,
                    o,
                    cols,
                    w.data(),
                    true,
                    dys,
                    false,
                    &mut dcol,
                    T::ZERO,
                );
                col2im(&dcol, &g, dxs);
            }
        }
    }
    Ok((
        dx.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?,
        dw.map(|d| Tensor::new(w.shape().to_vec(), d)).transpose()?,
    ))
}

pub(crate) struct BnForward<T> {
    pub out: Tensor<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn check_bn<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4("batch_norm")?;
    if gamma.len() != c || beta.len() != c {
        return Err(TensorError::shape(
            "batch_norm",
            format!(
                "{c} channels but gamma/beta have {}/{} entries",
                gamma.len(),
                beta.len()
            ),
        ));
    }
    Ok((n, c, h * w))
}

fn bn_apply<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: Vec<f64>,
    var: Vec<f64>,
    eps: f64,
) -> Result<BnForward<T>> {
    let (n, c, hw) = check_bn(x, gamma, beta)?;
    let inv_std: Vec<T> = var
        .iter()
        .map(|v| T::from_f64(1.0 / (v + eps).sqrt()))
        .collect();
    let mut xhat = vec![T::ZERO; x.len()];
    let mut out = vec![T::ZERO; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let m = T::from_f64(mean[ch]);
            let (s, g, bt) = (inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in off..off + hw {
                let z = (x.data()[i] - m) * s;
                xhat[i] = z;
                out[i] = g * z + bt;
            }
        }
    }
    Ok(BnForward {
        out: Tensor::new(x.shape().to_vec(), out)?,
        xhat,
        inv_std,
        mean,
        var,
    })
}

pub(crate) fn batch_norm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<BnForward<T>> {
    let (n, c, hw) = check_bn(x, gamma, beta)?;
    if n == 0 || hw == 0 {
        return Err(TensorError::EmptyBatch);
    }
    let count = (n * hw) as f64;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            let off = (b * c + ch) * hw;
            s += x.data()[off..off + hw]
                .iter()
                .map(|v| v.to_f64())
                .sum::<f64>();
        }
        let m = s / count;
        let mut ss = 0.0;
        for b in 0..n {
            let off = (b * c + ch) * hw;
            ss += x.data()[off..off + hw]
                .iter()
                .map(|v| {
                    let d = v.to_f64() - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ch] = m;
        var[ch] = ss / count;
    }
    bn_apply(x, gamma, beta, mean, var, eps)
}

pub(crate) fn batch_norm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<BnForward<T>> {
    let (_, c, _) = check_bn(x, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(TensorError::shape("batch_norm", "running stats length"));
    }
    bn_apply(
        x,
        gamma,
        beta,
        running_mean.to_vec(),
        running_var.to_vec(),
        eps,
    )
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn batch_norm_backward<T: Scalar>(
    dy: &Tensor<T>,
    gamma: &Tensor<T>,
    xhat: &[T],
    inv_std: &[T],
    train: bool,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = dy.dims4("batch_norm")?;
    let hw = h * w;
    let count = (n * hw) as f64;
    let mut dx = vec![T::ZERO; dy.len()];
    let mut dgamma = vec![T::ZERO; c];
    let mut dbeta = vec![T::ZERO; c];
    for ch in 0..c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for b in 0..n {
            let off = (b * c + ch) * hw;
            for (d, xh) in dy.data()[off..off + hw].iter().zip(&xhat[off..off + hw]) {
                let d = d.to_f64();
                sum_dy += d;
                sum_dy_xhat += d * xh.to_f64();
            }
        }
        dgamma[ch] = T::from_f64(sum_dy_xhat);
        dbeta[ch] = T::from_f64(sum_dy);
        let g = gamma.data()[ch].to_f64();
        let s = inv_std[ch].to_f64();
        for b in 0..n {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                let d = dy.data()[i].to_f64();
                dx[i] = T::from_f64(if train {
                    g * s * (d - sum_dy / count - xhat[i].to_f64() * sum_dy_xhat / count)
                } else {
                    g * s * d
                });
            }
        }
    }
    Ok((
        Tensor::new(dy.shape().to_vec(), dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}

/// 2×2 stride-2 average pooling in ceil mode: a trailing odd row/column forms
/// a partial window averaged over its in-bounds elements.
pub(crate) fn avg_pool2_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("avg_pool2d")?;
    if h == 0 || w == 0 {
        return Err(TensorError::shape("avg_pool2d", "empty spatial dims"));
    }
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = vec![T::ZERO; n * c * oh * ow];
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            let ys = 2 * oy..(2 * oy + 2).min(h);
            for ox in 0..ow {
                let xs = 2 * ox..(2 * ox + 2).min(w);
                let cnt = (ys.len() * xs.len()) as f64;
                let mut s = 0.0f64;
                for iy in ys.clone() {
                    for ix in xs.clone() {
                        s += src[iy * w + ix].to_f64();
                    }
                }
                dst[oy * ow + ox] = T::from_f64(s / cnt);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub(crate) fn avg_pool2_backward<T: Scalar>(x_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut dx = vec![T::ZERO; n * c * h * w];
    for p in 0..n * c {
        let src = &dy.data()[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let ys = 2 * oy..(2 * oy + 2).min(h);
            for ox in 0..ow {
                let xs = 2 * ox..(2 * ox + 2).min(w);
                let share = src[oy * ow + ox] / T::from_f64((ys.len() * xs.len()) as f64);
                for iy in ys.clone() {
                    for ix in xs.clone() {
                        dst[iy * w + ix] += share;
                    }
                }
            }
        }
    }
    Tensor {
        shape: x_shape.to_vec(),
        data: dx,
    }
}

/// `[n, c, h, w] -> [n, c]` spatial means.
pub(crate) fn global_avg_pool_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("global_avg_pool")?;
    let hw = h * w;
    if hw == 0 {
        return Err(TensorError::shape("global_avg_pool", "empty spatial dims"));
    }
    let out = x
        .data()
        .chunks(hw)
        .map(|plane| T::from_f64(plane.iter().map(|v| v.to_f64()).sum::<f64>() / hw as f64))
        .collect();
    Tensor::new(vec![n, c], out)
}

pub(crate) fn global_avg_pool_backward<T: Scalar>(x_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let hw = x_shape[2] * x_shape[3];
    let scale = T::from_f64(1.0 / hw as f64);
    let mut dx = Vec::with_capacity(dy.len() * hw);
    for &d in dy.data() {
        dx.extend(std::iter::repeat_n(d * scale, hw));
    }
    Tensor {
        shape: x_shape.to_vec(),
        data: dx,
    }
}

/// Bias-free dense layer: `x[n×k] · wᵀ` with `w[classes×k]`.
pub(crate) fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k) = x.dims2("dense")?;
    let (o, wk) = w.dims2("dense")?;
    if wk != k {
        return Err(TensorError::shape(
            "dense",
            format!("input width {k} but weight expects {wk}"),
        ));
    }
    let mut out = vec![T::ZERO; n * o];
    matmul(n, k, o, x.data(), false, w.data(), true, &mut out, T::ZERO);
    Tensor::new(vec![n, o], out)
}

pub(crate) fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (n, k) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    let mut dx = vec![T::ZERO; n * k];
    matmul(n, o, k, dy.data(), false, w.data(), false, &mut dx, T::ZERO);
    let mut dw = vec![T::ZERO; o * k];
    matmul(o, n, k, dy.data(), true, x.data(), false, &mut dw, T::ZERO);
    (
        Tensor {
            shape: x.shape().to_vec(),
            data: dx,
        },
        Tensor {
            shape: w.shape().to_vec(),
            data: dw,
        },
    )
}

pub(crate) fn concat_channels_forward<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::shape("concat_channels", "no operands"))?;
    let (n, _, h, w) = first.dims4("concat_channels")?;
    let mut total_c = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4("concat_channels")?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(TensorError::shape(
                "concat_channels",
                format!("operand {:?} vs {:?}", p.shape(), first.shape()),
            ));
        }
        total_c += pc;
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * total_c * hw);
    for b in 0..n {
        for p in parts {
            let pc = p.shape()[1];
            out.extend_from_slice(&p.data()[b * pc * hw..(b + 1) * pc * hw]);
        }
    }
    Tensor::new(vec![n, total_c, h, w], out)
}

/// Channel range `[start, start+len)` of an NCHW tensor.
pub(crate) fn slice_channels<T: Scalar>(
    x: &Tensor<T>,
    start: usize,
    len: usize,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("slice_channels")?;
    if start + len > c {
        return Err(TensorError::shape(
            "slice_channels",
            format!("range {start}..{} exceeds {c} channels", start + len),
        ));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * len * hw);
    for b in 0..n {
        let off = (b * c + start) * hw;
        out.extend_from_slice(&x.data()[off..off + len * hw]);
    }
    Tensor::new(vec![n, len, h, w], out)
}

/// Adds `dy` (shaped like the slice) into the channel range of `dx`.
pub(crate) fn scatter_channels_add<T: Scalar>(dx: &mut Tensor<T>, dy: &Tensor<T>, start: usize) {
    let (n, c, h, w) = (dx.shape[0], dx.shape[1], dx.shape[2], dx.shape[3]);
    let len = dy.shape()[1];
    let hw = h * w;
    for b in 0..n {
        let off = (b * c + start) * hw;
        let src = &dy.data()[b * len * hw..(b + 1) * len * hw];
        for (d, &s) in dx.data[off..off + len * hw].iter_mut().zip(src) {
            *d += s;
        }
    }
}

pub(crate) fn bce_forward<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() {
        return Err(TensorError::shape(
            "bce_loss",
            format!("pred {:?} vs target {:?}", pred.shape(), target.shape()),
        ));
    }
    if pred.is_empty() {
        return Err(TensorError::shape("bce_loss", "empty prediction"));
    }
    let mut total = 0.0f64;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let p = p.to_f64().clamp(eps, 1.0 - eps);
        let t = t.to_f64();
        total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    Tensor::new(vec![1], vec![T::from_f64(total / pred.len() as f64)])
}

pub(crate) fn bce_backward<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    dy: T,
    eps: f64,
) -> Tensor<T> {
    let m = pred.len() as f64;
    let scale = dy.to_f64() / m;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.to_f64();
            if p < eps || p > 1.0 - eps {
                return T::ZERO;
            }
            let t = t.to_f64();
            T::from_f64(scale * ((1.0 - t) / (1.0 - p) - t / p))
        })
        .collect();
    Tensor {
        shape: pred.shape().to_vec(),
        data,
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    let x = v.to_f64();
    // Split by sign so exp never overflows.
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    T::from_f64(y)
}
