//! Low-level numeric kernels shared by the tape operations.
//!
//! Everything here is a pure function over flat row-major buffers; shape
//! validation happens one level up in the tape. Loops are written so the
//! inner dimension is contiguous and bounds checks vanish under
//! optimization. All accumulation orders are fixed, which is what makes
//! forward/backward bitwise reproducible run to run.

#![allow(clippy::needless_range_loop)] // strided index arithmetic reads clearer spelled out

use crate::tensor::{strides_of, Scalar};

// ---------------------------------------------------------------------------
// elementwise with broadcasting
// ---------------------------------------------------------------------------

/// Apply `f` over `a` and `b` broadcast to `out_shape` (already validated).
pub(crate) fn binary_broadcast<T: Scalar>(
    a: &[T],
    a_shape: &[usize],
    b: &[T],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    let n: usize = out_shape.iter().product();

    if a_shape == b_shape {
        return a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect();
    }
    if b.len() == 1 {
        let y = b[0];
        return a.iter().map(|&x| f(x, y)).collect();
    }
    if a.len() == 1 {
        let x = a[0];
        return b.iter().map(|&y| f(x, y)).collect();
    }

    // Fast paths for the hot patterns (bias adds, batch-norm affine,
    // per-row scalars). They all require the non-broadcast side to already
    // have the output shape.
    if a_shape == out_shape {
        if let Some(out) = broadcast_small_right(a, b, b_shape, out_shape, &f) {
            return out;
        }
    }
    if b_shape == out_shape {
        if let Some(out) = broadcast_small_right(b, a, a_shape, out_shape, &|x, y| f(y, x)) {
            return out;
        }
    }

    // General case: odometer walk over the output index space with
    // zero strides on expanded axes.
    let a_str = padded_broadcast_strides(a_shape, out_shape);
    let b_str = padded_broadcast_strides(b_shape, out_shape);
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut ai = 0usize;
    let mut bi = 0usize;
    for _ in 0..n {
        out.push(f(a[ai], b[bi]));
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            ai += a_str[d];
            bi += b_str[d];
            if idx[d] < out_shape[d] {
                break;
            }
            ai -= a_str[d] * out_shape[d];
            bi -= b_str[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

/// `big` has `out_shape`; `small` broadcasts into it. Handles three layouts:
/// suffix tile (`[..1s.., S...]`), prefix run (`[P..., ..1s..]`) and a single
/// non-1 middle axis (the `[1, C, 1, 1]` batch-norm case).
fn broadcast_small_right<T: Scalar>(
    big: &[T],
    small: &[T],
    small_shape: &[usize],
    out_shape: &[usize],
    f: &impl Fn(T, T) -> T,
) -> Option<Vec<T>> {
    let rank = out_shape.len();
    let mut padded = vec![1usize; rank];
    let off = rank - small_shape.len();
    padded[off..].copy_from_slice(small_shape);

    let non_one: Vec<usize> = (0..rank).filter(|&d| padded[d] != 1).collect();
    if non_one.is_empty() {
        return None; // scalar, handled earlier
    }
    let first = non_one[0];
    let last = *non_one.last().unwrap();
    // Contiguity: the non-1 dims must be a single consecutive block that
    // matches the output extents there.
    if non_one.len() != last - first + 1 {
        return None;
    }
    for &d in &non_one {
        if padded[d] != out_shape[d] {
            return None;
        }
    }

    let inner: usize = out_shape[last + 1..].iter().product();
    let block: usize = small.len();
    let outer: usize = out_shape[..first].iter().product();

    let mut out = Vec::with_capacity(big.len());
    if inner == 1 {
        // suffix tile: repeat `small` across the leading dims
        for chunk in big.chunks_exact(block) {
            out.extend(chunk.iter().zip(small.iter()).map(|(&x, &y)| f(x, y)));
        }
    } else {
        // each small element covers a contiguous run of `inner`,
        // the whole pattern repeats `outer` times
        let mut pos = 0;
        for _ in 0..outer {
            for &y in small.iter() {
                out.extend(big[pos..pos + inner].iter().map(|&x| f(x, y)));
                pos += inner;
            }
        }
    }
    Some(out)
}

/// Strides of `shape` viewed under `out_shape` broadcasting (0 on expanded axes).
pub(crate) fn padded_broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let off = rank - shape.len();
    let own = strides_of(shape);
    let mut out = vec![0usize; rank];
    for d in 0..shape.len() {
        out[off + d] = if shape[d] == 1 { 0 } else { own[d] };
    }
    out
}

/// Sum `grad` (shaped `grad_shape`) down to `target_shape`, undoing a
/// broadcast. Used by the backward pass of every broadcast binary op.
pub(crate) fn reduce_grad_to_shape<T: Scalar>(
    grad: &[T],
    grad_shape: &[usize],
    target_shape: &[usize],
) -> Vec<T> {
    if grad_shape == target_shape {
        return grad.to_vec();
    }
    let n_target: usize = target_shape.iter().product();
    let t_str = padded_broadcast_strides(target_shape, grad_shape);
    let mut out = vec![T::ZERO; n_target];
    let mut idx = vec![0usize; grad_shape.len()];
    let mut ti = 0usize;
    for &g in grad {
        out[ti] += g;
        for d in (0..grad_shape.len()).rev() {
            idx[d] += 1;
            ti += t_str[d];
            if idx[d] < grad_shape[d] {
                break;
            }
            ti -= t_str[d] * grad_shape[d];
            idx[d] = 0;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

/// Shape after reducing `axes`, with reduced extents kept as 1.
pub(crate) fn reduced_shape_keepdims(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let mut out = shape.to_vec();
    for &ax in axes {
        out[ax] = 1;
    }
    out
}

/// Sum over `axes`; output uses the keepdims shape.
pub(crate) fn reduce_sum<T: Scalar>(data: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let out_shape = reduced_shape_keepdims(shape, axes);
    let n_out: usize = out_shape.iter().product();
    let contrib = padded_broadcast_strides(&out_shape, shape);
    let mut out = vec![T::ZERO; n_out];
    let mut idx = vec![0usize; shape.len()];
    let mut oi = 0usize;
    for &v in data {
        out[oi] += v;
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            oi += contrib[d];
            if idx[d] < shape[d] {
                break;
            }
            oi -= contrib[d] * shape[d];
            idx[d] = 0;
        }
    }
    out
}

/// Max over `axes`; output uses the keepdims shape.
pub(crate) fn reduce_max<T: Scalar>(data: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let out_shape = reduced_shape_keepdims(shape, axes);
    let n_out: usize = out_shape.iter().product();
    let contrib = padded_broadcast_strides(&out_shape, shape);
    let mut out = vec![None::<T>; n_out];
    let mut idx = vec![0usize; shape.len()];
    let mut oi = 0usize;
    for &v in data {
        match &mut out[oi] {
            Some(m) => {
                if v > *m {
                    *m = v;
                }
            }
            slot @ None => *slot = Some(v),
        }
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            oi += contrib[d];
            if idx[d] < shape[d] {
                break;
            }
            oi -= contrib[d] * shape[d];
            idx[d] = 0;
        }
    }
    out.into_iter()
        .map(|m| m.expect("empty reduction group"))
        .collect()
}

/// Scatter `grad_out` back over the input of a max reduction: the first
/// position attaining the maximum in each group receives the gradient.
pub(crate) fn reduce_max_backward<T: Scalar>(
    grad_out: &[T],
    max_vals: &[T],
    data: &[T],
    shape: &[usize],
    axes: &[usize],
) -> Vec<T> {
    let out_shape = reduced_shape_keepdims(shape, axes);
    let contrib = padded_broadcast_strides(&out_shape, shape);
    let mut taken = vec![false; grad_out.len()];
    let mut grad_in = vec![T::ZERO; data.len()];
    let mut idx = vec![0usize; shape.len()];
    let mut oi = 0usize;
    for (i, &v) in data.iter().enumerate() {
        if !taken[oi] && v == max_vals[oi] {
            grad_in[i] = grad_out[oi];
            taken[oi] = true;
        }
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            oi += contrib[d];
            if idx[d] < shape[d] {
                break;
            }
            oi -= contrib[d] * shape[d];
            idx[d] = 0;
        }
    }
    grad_in
}

/// Broadcast the keepdims-shaped `grad_out` back over the full input shape,
/// scaling by `scale` (1 for sum, 1/n for mean).
pub(crate) fn reduce_sum_backward<T: Scalar>(
    grad_out: &[T],
    shape: &[usize],
    axes: &[usize],
    scale: T,
) -> Vec<T> {
    let out_shape = reduced_shape_keepdims(shape, axes);
    let contrib = padded_broadcast_strides(&out_shape, shape);
    let n: usize = shape.iter().product();
    let mut grad_in = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    let mut oi = 0usize;
    for _ in 0..n {
        grad_in.push(grad_out[oi] * scale);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            oi += contrib[d];
            if idx[d] < shape[d] {
                break;
            }
            oi -= contrib[d] * shape[d];
            idx[d] = 0;
        }
    }
    grad_in
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

/// c[m,n] = a[m,k] · b[k,n]
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::ZERO; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in a[i * k..(i + 1) * k].iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row.iter()) {
                *cv += a_ip * bv;
            }
        }
    }
    c
}

/// c[m,n] = a[m,k] · b[n,k]ᵀ
pub(crate) fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::ZERO; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::ZERO;
            for (&av, &bv) in a_row.iter().zip(b_row.iter()) {
                acc += av * bv;
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// c[m,n] = a[k,m]ᵀ · b[k,n]
pub(crate) fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::ZERO; m * n];
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row.iter()) {
                *cv += av * bv;
            }
        }
    }
    c
}

// ---------------------------------------------------------------------------
// 2-d convolution (cross-correlation) and friends
// ---------------------------------------------------------------------------

pub(crate) fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Valid output range `[lo, hi)` along one axis for a fixed kernel tap, such
/// that `o*stride + tap - pad` stays inside `[0, input)`.
#[inline]
fn tap_range(
    out_extent: usize,
    input: usize,
    stride: usize,
    pad: usize,
    tap: usize,
) -> (usize, usize) {
    let shift = tap as i64 - pad as i64;
    let lo = if shift >= 0 {
        0
    } else {
        ((-shift) as usize).div_ceil(stride)
    };
    let max_o = (input as i64 - 1 - shift) / stride as i64;
    let hi = if max_o < 0 {
        0
    } else {
        (max_o as usize + 1).min(out_extent)
    };
    (lo.min(hi), hi)
}

/// Standard multi-channel cross-correlation with zero padding.
///
/// input `[N,Ci,H,W]`, weight `[Co,Ci,kh,kw]`, bias `[Co]` → `[N,Co,OH,OW]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_forward<T: Scalar>(
    input: &[T],
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[T],
    c_out: usize,
    kh: usize,
    kw: usize,
    bias: Option<&[T]>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Vec<T> {
    let (sh, sw) = stride;
    let (ph, pw) = pad;
    let oh = conv_out_extent(h, kh, sh, ph);
    let ow = conv_out_extent(w, kw, sw, pw);
    let mut out = vec![T::ZERO; n * c_out * oh * ow];

    for img in 0..n {
        for co in 0..c_out {
            let out_base = (img * c_out + co) * oh * ow;
            if let Some(b) = bias {
                out[out_base..out_base + oh * ow].fill(b[co]);
            }
            for ci in 0..c_in {
                let in_base = (img * c_in + ci) * h * w;
                for kr in 0..kh {
                    let (olo, ohi) = tap_range(oh, h, sh, ph, kr);
                    for kc in 0..kw {
                        let wv = weight[((co * c_in + ci) * kh + kr) * kw + kc];
                        let (wlo, whi) = tap_range(ow, w, sw, pw, kc);
                        if wlo >= whi {
                            continue;
                        }
                        for o_r in olo..ohi {
                            let ir = o_r * sh + kr - ph;
                            let in_row = &input[in_base + ir * w..in_base + (ir + 1) * w];
                            let out_row = &mut out[out_base + o_r * ow..out_base + (o_r + 1) * ow];
                            if sw == 1 {
                                // wlo guarantees wlo + kc - pw >= 0
                                let src = &in_row[(wlo as i64 + kc as i64 - pw as i64) as usize..];
                                for (ov, &iv) in out_row[wlo..whi].iter_mut().zip(src.iter()) {
                                    *ov += wv * iv;
                                }
                            } else {
                                for o_c in wlo..whi {
                                    let ic = o_c * sw + kc - pw;
                                    out_row[o_c] += wv * in_row[ic];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`] w.r.t. input, weight and bias.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    grad_out: &[T],
    input: &[T],
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[T],
    c_out: usize,
    kh: usize,
    kw: usize,
    has_bias: bool,
    stride: (usize, usize),
    pad: (usize, usize),
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let (sh, sw) = stride;
    let (ph, pw) = pad;
    let oh = conv_out_extent(h, kh, sh, ph);
    let ow = conv_out_extent(w, kw, sw, pw);

    let mut g_in = vec![T::ZERO; n * c_in * h * w];
    let mut g_w = vec![T::ZERO; c_out * c_in * kh * kw];
    let mut g_b = if has_bias {
        Some(vec![T::ZERO; c_out])
    } else {
        None
    };

    for img in 0..n {
        for co in 0..c_out {
            let go_base = (img * c_out + co) * oh * ow;
            if let Some(gb) = g_b.as_mut() {
                let mut acc = T::ZERO;
                for &g in &grad_out[go_base..go_base + oh * ow] {
                    acc += g;
                }
                gb[co] += acc;
            }
            for ci in 0..c_in {
                let in_base = (img * c_in + ci) * h * w;
                for kr in 0..kh {
                    let (olo, ohi) = tap_range(oh, h, sh, ph, kr);
                    for kc in 0..kw {
                        let widx = ((co * c_in + ci) * kh + kr) * kw + kc;
                        let wv = weight[widx];
                        let (wlo, whi) = tap_range(ow, w, sw, pw, kc);
                        if wlo >= whi {
                            continue;
                        }
                        let mut wacc = T::ZERO;
                        for o_r in olo..ohi {
                            let ir = o_r * sh + kr - ph;
                            let go_row = &grad_out[go_base + o_r * ow..go_base + (o_r + 1) * ow];
                            let in_row_base = in_base + ir * w;
                            if sw == 1 {
                                let ic0 = (wlo as i64 + kc as i64 - pw as i64) as usize;
                                let gi_row =
                                    &mut g_in[in_row_base + ic0..in_row_base + ic0 + (whi - wlo)];
                                let in_row =
                                    &input[in_row_base + ic0..in_row_base + ic0 + (whi - wlo)];
                                for ((gi, &iv), &g) in gi_row
                                    .iter_mut()
                                    .zip(in_row.iter())
                                    .zip(go_row[wlo..whi].iter())
                                {
                                    *gi += wv * g;
                                    wacc += iv * g;
                                }
                            } else {
                                for o_c in wlo..whi {
                                    let ic = o_c * sw + kc - pw;
                                    let g = go_row[o_c];
                                    g_in[in_row_base + ic] += wv * g;
                                    wacc += input[in_row_base + ic] * g;
                                }
                            }
                        }
                        g_w[widx] += wacc;
                    }
                }
            }
        }
    }
    (g_in, g_w, g_b)
}

/// Depthwise cross-correlation: one single-channel kernel per input channel.
///
/// input `[N,C,H,W]`, weight `[C,1,kh,kw]` → `[N,C,OH,OW]`. Tap order matches
/// [`conv2d_forward`] restricted to one channel, so composing this with a
/// 1×1 convolution reproduces the grouped formulation exactly.
#[allow(clippy::too_many_arguments)]
pub(crate) fn depthwise_forward<T: Scalar>(
    input: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    weight: &[T],
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Vec<T> {
    let (sh, sw) = stride;
    let (ph, pw) = pad;
    let oh = conv_out_extent(h, kh, sh, ph);
    let ow = conv_out_extent(w, kw, sw, pw);
    let mut out = vec![T::ZERO; n * c * oh * ow];

    for img in 0..n {
        for ch in 0..c {
            let in_base = (img * c + ch) * h * w;
            let out_base = (img * c + ch) * oh * ow;
            for kr in 0..kh {
                let (olo, ohi) = tap_range(oh, h, sh, ph, kr);
                for kc in 0..kw {
                    let wv = weight[(ch * kh + kr) * kw + kc];
                    let (wlo, whi) = tap_range(ow, w, sw, pw, kc);
                    if wlo >= whi {
                        continue;
                    }
                    for o_r in olo..ohi {
                        let ir = o_r * sh + kr - ph;
                        let in_row = &input[in_base + ir * w..in_base + (ir + 1) * w];
                        let out_row = &mut out[out_base + o_r * ow..out_base + (o_r + 1) * ow];
                        if sw == 1 {
                            let src = &in_row[(wlo as i64 + kc as i64 - pw as i64) as usize..];
                            for (ov, &iv) in out_row[wlo..whi].iter_mut().zip(src.iter()) {
                                *ov += wv * iv;
                            }
                        } else {
                            for o_c in wlo..whi {
                                out_row[o_c] += wv * in_row[o_c * sw + kc - pw];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`depthwise_forward`] w.r.t. input and weight.
#[allow(clippy::too_many_arguments)]
pub(crate) fn depthwise_backward<T: Scalar>(
    grad_out: &[T],
    input: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    weight: &[T],
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    pad: (usize, usize),
) -> (Vec<T>, Vec<T>) {
    let (sh, sw) = stride;
    let (ph, pw) = pad;
    let oh = conv_out_extent(h, kh, sh, ph);
    let ow = conv_out_extent(w, kw, sw, pw);

    let mut g_in = vec![T::ZERO; n * c * h * w];
    let mut g_w = vec![T::ZERO; c * kh * kw];

    for img in 0..n {
        for ch in 0..c {
            let in_base = (img * c + ch) * h * w;
            let go_base = (img * c + ch) * oh * ow;
            for kr in 0..kh {
                let (olo, ohi) = tap_range(oh, h, sh, ph, kr);
                for kc in 0..kw {
                    let widx = (ch * kh + kr) * kw + kc;
                    let wv = weight[widx];
                    let (wlo, whi) = tap_range(ow, w, sw, pw, kc);
                    if wlo >= whi {
                        continue;
                    }
                    let mut wacc = T::ZERO;
                    for o_r in olo..ohi {
                        let ir = o_r * sh + kr - ph;
                        let go_row = &grad_out[go_base + o_r * ow..go_base + (o_r + 1) * ow];
                        let row_base = in_base + ir * w;
                        for o_c in wlo..whi {
                            let ic = o_c * sw + kc - pw;
                            let g = go_row[o_c];
                            g_in[row_base + ic] += wv * g;
                            wacc += input[row_base + ic] * g;
                        }
                    }
                    g_w[widx] += wacc;
                }
            }
        }
    }
    (g_in, g_w)
}

// ---------------------------------------------------------------------------
// average pooling
// ---------------------------------------------------------------------------

/// Mean over each window, zero padding counted in the divisor
/// (divisor is always `wh*ww`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn avg_pool_forward<T: Scalar>(
    input: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    window: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
) -> Vec<T> {
    let (wh, ww) = window;
    let (sh, sw) = stride;
    let (ph, pw) = pad;
    let oh = conv_out_extent(h, wh, sh, ph);
    let ow = conv_out_extent(w, ww, sw, pw);
    let inv = T::ONE / T::from_usize(wh * ww);
    let mut out = vec![T::ZERO; n * c * oh * ow];

    for plane in 0..n * c {
        let in_base = plane * h * w;
        let out_base = plane * oh * ow;
        for o_r in 0..oh {
            for o_c in 0..ow {
                let mut acc = T::ZERO;
                for kr in 0..wh {
                    let ir = (o_r * sh + kr) as i64 - ph as i64;
                    if ir < 0 || ir >= h as i64 {
                        continue;
                    }
                    for kc in 0..ww {
                        let ic = (o_c * sw + kc) as i64 - pw as i64;
                        if ic < 0 || ic >= w as i64 {
                            continue;
                        }
                        acc += input[in_base + ir as usize * w + ic as usize];
                    }
                }
                out[out_base + o_r * ow + o_c] = acc * inv;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn avg_pool_backward<T: Scalar>(
    grad_out: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    window: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
) -> Vec<T> {
    let (wh, ww) = window;
    let (sh, sw) = stride;
    let (ph, pw) = pad;
    let oh = conv_out_extent(h, wh, sh, ph);
    let ow = conv_out_extent(w, ww, sw, pw);
    let inv = T::ONE / T::from_usize(wh * ww);
    let mut g_in = vec![T::ZERO; n * c * h * w];

    for plane in 0..n * c {
        let in_base = plane * h * w;
        let go_base = plane * oh * ow;
        for o_r in 0..oh {
            for o_c in 0..ow {
                let g = grad_out[go_base + o_r * ow + o_c] * inv;
                for kr in 0..wh {
                    let ir = (o_r * sh + kr) as i64 - ph as i64;
                    if ir < 0 || ir >= h as i64 {
                        continue;
                    }
                    for kc in 0..ww {
                        let ic = (o_c * sw + kc) as i64 - pw as i64;
                        if ic < 0 || ic >= w as i64 {
                            continue;
                        }
                        g_in[in_base + ir as usize * w + ic as usize] += g;
                    }
                }
            }
        }
    }
    g_in
}
