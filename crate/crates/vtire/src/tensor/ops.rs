//! Core numeric operations and their hand-written backward passes.
//!
//! Summation orders are fixed, so every op is bit-deterministic for a given
//! precision. Hot loops are written over contiguous slices so the compiler
//! can vectorize them.

use super::{Scalar, Tensor, TensorError};

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

/// C[m,n] = A[m,k] . B[k,n]
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(TensorError::DimensionMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut c = Tensor::zeros(&[m, n]);
    mm(m, k, n, a.data(), b.data(), c.data_mut());
    Ok(c)
}

/// dC -> (dA, dB) with dA = dC . B^T and dB = A^T . dC.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    dc: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    assert_eq!(dc.shape(), &[m, n], "matmul_backward upstream shape");
    let mut da = Tensor::zeros(&[m, k]);
    let mut db = Tensor::zeros(&[k, n]);
    mm_nt(m, n, k, dc.data(), b.data(), da.data_mut());
    mm_tn(m, k, n, a.data(), dc.data(), db.data_mut());
    (da, db)
}

/// c += a . b over raw row-major slices. Column-tiled so the active C/B
/// tiles stay in cache; per-element accumulation order is plain ascending k,
/// identical to the untiled loop.
pub fn mm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    const TILE: usize = 512;
    let mut j0 = 0;
    while j0 < n {
        let j1 = (j0 + TILE).min(n);
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut c[i * n + j0..i * n + j1];
            for (p, &ap) in arow.iter().enumerate() {
                let brow = &b[p * n + j0..p * n + j1];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += ap * bv;
                }
            }
        }
        j0 = j1;
    }
}

/// c += a . b^T where a is m-by-k and b is n-by-k (both row-major).
pub fn mm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            *cv += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// c += a^T . b where a is m-by-k and b is m-by-n (both row-major).
/// Column-tiled like [`mm`]; accumulation order per element is ascending i.
pub fn mm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    const TILE: usize = 512;
    let mut j0 = 0;
    while j0 < n {
        let j1 = (j0 + TILE).min(n);
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let brow = &b[i * n + j0..i * n + j1];
            for (p, &ap) in arow.iter().enumerate() {
                let crow = &mut c[p * n + j0..p * n + j1];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += ap * bv;
                }
            }
        }
        j0 = j1;
    }
}

/// Dot product with 8-lane accumulators and a fixed reduction tree.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let ra = ca.remainder();
    let rb = cb.remainder();
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + xa[l] * xb[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]));
    for (&xa, &xb) in ra.iter().zip(rb) {
        s = s + xa * xb;
    }
    s
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

/// Numerically stabilized softmax along `axis`.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    assert!(axis < x.shape().len(), "softmax axis {axis} out of range");
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let mut y = Tensor::zeros(x.shape());
    let xd = x.data();
    let yd = y.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut maxv = T::neg_infinity();
            for a in 0..len {
                maxv = maxv.max(xd[base + a * inner]);
            }
            let mut sum = T::zero();
            for a in 0..len {
                let e = (xd[base + a * inner] - maxv).exp();
                yd[base + a * inner] = e;
                sum += e;
            }
            let inv = T::one() / sum;
            for a in 0..len {
                yd[base + a * inner] *= inv;
            }
        }
    }
    y
}

/// dX given the softmax output `y` and upstream `dy`:
/// dx = y * (dy - sum(dy * y)) per slice.
pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>, axis: usize) -> Tensor<T> {
    assert_eq!(y.shape(), dy.shape());
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let mut dx = Tensor::zeros(y.shape());
    let (yd, dyd) = (y.data(), dy.data());
    let dxd = dx.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut s = T::zero();
            for a in 0..len {
                s += dyd[base + a * inner] * yd[base + a * inner];
            }
            for a in 0..len {
                let idx = base + a * inner;
                dxd[idx] = yd[idx] * (dyd[idx] - s);
            }
        }
    }
    dx
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

// ---------------------------------------------------------------------------
// layernorm
// ---------------------------------------------------------------------------

/// Cache from the layernorm forward pass needed by its backward pass.
#[derive(Clone)]
pub struct LayerNormCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

/// Per-token normalization over the feature axis of `x[tokens, d]`,
/// then affine scale/shift: `y = gamma * xhat + beta`.
pub fn layernorm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> (Tensor<T>, LayerNormCache<T>) {
    assert_eq!(x.shape().len(), 2, "layernorm expects [tokens, d]");
    let (t, d) = (x.shape()[0], x.shape()[1]);
    assert_eq!(gamma.len(), d);
    assert_eq!(beta.len(), d);
    assert!(eps > T::zero());
    let mut y = Tensor::zeros(x.shape());
    let mut xhat = Tensor::zeros(x.shape());
    let mut inv_std = vec![T::zero(); t];
    let dn = T::from_f64(d as f64);
    for r in 0..t {
        let row = &x.data()[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / dn;
        let mut var = T::zero();
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        var = var / dn;
        let istd = T::one() / (var + eps).sqrt();
        inv_std[r] = istd;
        for c in 0..d {
            let h = (row[c] - mean) * istd;
            xhat.data_mut()[r * d + c] = h;
            y.data_mut()[r * d + c] = gamma.data()[c] * h + beta.data()[c];
        }
    }
    (
        y,
        LayerNormCache {
            normalized: xhat,
            inv_std,
        },
    )
}

/// Returns (dx, dgamma, dbeta).
pub fn layernorm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (t, d) = (dy.shape()[0], dy.shape()[1]);
    let mut dx = Tensor::zeros(dy.shape());
    let mut dgamma = Tensor::zeros(&[d]);
    let mut dbeta = Tensor::zeros(&[d]);
    let dn = T::from_f64(d as f64);
    for r in 0..t {
        let dyr = &dy.data()[r * d..(r + 1) * d];
        let hr = &cache.normalized.data()[r * d..(r + 1) * d];
        // dL/dxhat = dy * gamma; dx follows the standard layernorm identity
        let mut sum_g = T::zero();
        let mut sum_gh = T::zero();
        for c in 0..d {
            let g = dyr[c] * gamma.data()[c];
            sum_g += g;
            sum_gh += g * hr[c];
            dgamma.data_mut()[c] += dyr[c] * hr[c];
            dbeta.data_mut()[c] += dyr[c];
        }
        let istd = cache.inv_std[r];
        for c in 0..d {
            let g = dyr[c] * gamma.data()[c];
            dx.data_mut()[r * d + c] = istd * (g - (sum_g + hr[c] * sum_gh) / dn);
        }
    }
    (dx, dgamma, dbeta)
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

/// Spatial output extent for one axis; errors if the kernel does not fit.
pub fn conv_out_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<usize, TensorError> {
    let padded = input + 2 * pad;
    if kernel > padded || kernel == 0 || stride == 0 {
        return Err(TensorError::KernelTooLarge {
            kernel: vec![kernel],
            input: vec![input, pad],
        });
    }
    Ok((padded - kernel) / stride + 1)
}

/// Cross-correlation of `x[cin, h, w]` with `w[cout, cin, kh, kw]` plus bias.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, TensorError> {
    assert_eq!(x.shape().len(), 3, "conv2d expects [cin, h, w]");
    assert_eq!(weight.shape().len(), 4);
    let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if weight.shape()[1] != cin {
        return Err(TensorError::DimensionMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    let (cout, kh, kw) = (weight.shape()[0], weight.shape()[2], weight.shape()[3]);
    assert_eq!(bias.len(), cout);
    let ho = conv_out_extent(h, kh, stride, pad)?;
    let wo = conv_out_extent(w, kw, stride, pad)?;
    let mut y = Tensor::zeros(&[cout, ho, wo]);
    conv2d_raw(
        x.data(),
        cin,
        h,
        w,
        weight.data(),
        cout,
        kh,
        kw,
        bias.data(),
        stride,
        pad,
        y.data_mut(),
        ho,
        wo,
    );
    Ok(y)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_raw<T: Scalar>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    cout: usize,
    kh: usize,
    kw: usize,
    bias: &[T],
    stride: usize,
    pad: usize,
    y: &mut [T],
    ho: usize,
    wo: usize,
) {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let xp = pad_plane_all(x, cin, h, w, pad);
    for co in 0..cout {
        let yplane = &mut y[co * ho * wo..(co + 1) * ho * wo];
        yplane.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..cin {
            let plane = &xp[ci * hp * wp..(ci + 1) * hp * wp];
            for dy in 0..kh {
                for dx in 0..kw {
                    let wv = weight[((co * cin + ci) * kh + dy) * kw + dx];
                    if stride == 1 {
                        for oh in 0..ho {
                            let irow = &plane[(oh + dy) * wp + dx..(oh + dy) * wp + dx + wo];
                            let orow = &mut yplane[oh * wo..(oh + 1) * wo];
                            for (ov, &iv) in orow.iter_mut().zip(irow) {
                                *ov += wv * iv;
                            }
                        }
                    } else {
                        for oh in 0..ho {
                            let rbase = (oh * stride + dy) * wp + dx;
                            let orow = &mut yplane[oh * wo..(oh + 1) * wo];
                            for (ow, ov) in orow.iter_mut().enumerate() {
                                *ov += wv * plane[rbase + ow * stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Returns (dx, dweight, dbias).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, kh, kw) = (weight.shape()[0], weight.shape()[2], weight.shape()[3]);
    let (ho, wo) = (dy.shape()[1], dy.shape()[2]);
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[cout]);
    conv2d_backward_raw(
        x.data(),
        cin,
        h,
        w,
        weight.data(),
        cout,
        kh,
        kw,
        dy.data(),
        ho,
        wo,
        stride,
        pad,
        dx.data_mut(),
        dw.data_mut(),
        db.data_mut(),
    );
    (dx, dw, db)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward_raw<T: Scalar>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    cout: usize,
    kh: usize,
    kw: usize,
    dy: &[T],
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
    dx: &mut [T],
    dw: &mut [T],
    db: &mut [T],
) {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let xp = pad_plane_all(x, cin, h, w, pad);
    let mut dxp = vec![T::zero(); cin * hp * wp];
    for co in 0..cout {
        let dyplane = &dy[co * ho * wo..(co + 1) * ho * wo];
        db[co] += dyplane.iter().copied().sum::<T>();
        for ci in 0..cin {
            let plane = &xp[ci * hp * wp..(ci + 1) * hp * wp];
            let dplane = &mut dxp[ci * hp * wp..(ci + 1) * hp * wp];
            for dyk in 0..kh {
                for dxk in 0..kw {
                    let widx = ((co * cin + ci) * kh + dyk) * kw + dxk;
                    let wv = weight[widx];
                    let mut wacc = T::zero();
                    if stride == 1 {
                        for oh in 0..ho {
                            let rbase = (oh + dyk) * wp + dxk;
                            let dyrow = &dyplane[oh * wo..(oh + 1) * wo];
                            wacc += dot(dyrow, &plane[rbase..rbase + wo]);
                            let drow = &mut dplane[rbase..rbase + wo];
                            for (dv, &gv) in drow.iter_mut().zip(dyrow) {
                                *dv += wv * gv;
                            }
                        }
                    } else {
                        for oh in 0..ho {
                            let rbase = (oh * stride + dyk) * wp + dxk;
                            let dyrow = &dyplane[oh * wo..(oh + 1) * wo];
                            for (ow, &gv) in dyrow.iter().enumerate() {
                                wacc += gv * plane[rbase + ow * stride];
                                dplane[rbase + ow * stride] += wv * gv;
                            }
                        }
                    }
                    dw[widx] += wacc;
                }
            }
        }
    }
    // crop padded gradient back to the input extent
    for ci in 0..cin {
        for r in 0..h {
            let src = ci * hp * wp + (r + pad) * wp + pad;
            let dst = ci * h * w + r * w;
            for c in 0..w {
                dx[dst + c] += dxp[src + c];
            }
        }
    }
}

/// Batched im2col for stride-1 convolution: x is [b, cin, h, w], the result
/// is [cin*k*k, b*ho*wo] with row r = (ci*k + dy)*k + dx matching the
/// flattened weight layout.
pub(crate) fn im2col<T: Scalar>(
    x: &[T],
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
) -> Vec<T> {
    let mut cols = Vec::new();
    im2col_into(x, b, cin, h, w, k, pad, &mut cols);
    cols
}

/// As [`im2col`], reusing the allocation of `cols`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col_into<T: Scalar>(
    x: &[T],
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    cols: &mut Vec<T>,
) {
    let ho = h + 2 * pad - k + 1;
    let wo = w + 2 * pad - k + 1;
    let n = b * ho * wo;
    cols.clear();
    cols.resize(cin * k * k * n, T::zero());
    for ci in 0..cin {
        for dy in 0..k {
            for dx in 0..k {
                let row = &mut cols[((ci * k + dy) * k + dx) * n..((ci * k + dy) * k + dx + 1) * n];
                for bi in 0..b {
                    let plane = &x[(bi * cin + ci) * h * w..(bi * cin + ci + 1) * h * w];
                    for oh in 0..ho {
                        let ih = (oh + dy) as isize - pad as isize;
                        let dst = &mut row[(bi * ho + oh) * wo..(bi * ho + oh + 1) * wo];
                        if ih < 0 || ih >= h as isize {
                            continue; // stays zero
                        }
                        let ih = ih as usize;
                        // iw = ow + dx - pad for ow in 0..wo
                        let shift = dx as isize - pad as isize;
                        let ow_lo = (-shift).max(0) as usize;
                        let ow_hi = ((w as isize - shift).min(wo as isize)).max(0) as usize;
                        if ow_lo < ow_hi {
                            let src_lo = (ow_lo as isize + shift) as usize;
                            dst[ow_lo..ow_hi].copy_from_slice(
                                &plane[ih * w + src_lo..ih * w + src_lo + (ow_hi - ow_lo)],
                            );
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add the im2col gradient back to input layout [b, cin, h, w].
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im<T: Scalar>(
    dcols: &[T],
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    dx_out: &mut [T],
) {
    let ho = h + 2 * pad - k + 1;
    let wo = w + 2 * pad - k + 1;
    let n = b * ho * wo;
    for ci in 0..cin {
        for dy in 0..k {
            for dxk in 0..k {
                let row = &dcols[((ci * k + dy) * k + dxk) * n..((ci * k + dy) * k + dxk + 1) * n];
                for bi in 0..b {
                    let plane = &mut dx_out[(bi * cin + ci) * h * w..(bi * cin + ci + 1) * h * w];
                    for oh in 0..ho {
                        let ih = (oh + dy) as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let ih = ih as usize;
                        let src = &row[(bi * ho + oh) * wo..(bi * ho + oh + 1) * wo];
                        let shift = dxk as isize - pad as isize;
                        let ow_lo = (-shift).max(0) as usize;
                        let ow_hi = ((w as isize - shift).min(wo as isize)).max(0) as usize;
                        if ow_lo < ow_hi {
                            let dst_lo = ih * w + (ow_lo as isize + shift) as usize;
                            let dst = &mut plane[dst_lo..dst_lo + (ow_hi - ow_lo)];
                            for (d, &s) in dst.iter_mut().zip(&src[ow_lo..ow_hi]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn pad_plane_all<T: Scalar>(x: &[T], cin: usize, h: usize, w: usize, pad: usize) -> Vec<T> {
    if pad == 0 {
        return x.to_vec();
    }
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut xp = vec![T::zero(); cin * hp * wp];
    for ci in 0..cin {
        for r in 0..h {
            let src = ci * h * w + r * w;
            let dst = ci * hp * wp + (r + pad) * wp + pad;
            xp[dst..dst + w].copy_from_slice(&x[src..src + w]);
        }
    }
    xp
}

// ---------------------------------------------------------------------------
// relu / maxpool2
// ---------------------------------------------------------------------------

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// dx = dy where x > 0 else 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    assert_eq!(x.shape(), dy.shape());
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// 2x2 stride-2 max pooling over `x[c, h, w]`. Odd extents are handled by
/// replicating the last row/column. Ties route to the first element in
/// row-major window order. Returns (y, argmax) where argmax holds the flat
/// input index that produced each output.
pub fn maxpool2<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    assert_eq!(x.shape().len(), 3);
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let mut y = Tensor::zeros(&[c, ho, wo]);
    let mut arg = vec![0usize; c * ho * wo];
    for ci in 0..c {
        let plane = &x.data()[ci * h * w..(ci + 1) * h * w];
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = T::neg_infinity();
                let mut best_idx = 0usize;
                for dr in 0..2 {
                    for dc in 0..2 {
                        let r = (2 * oh + dr).min(h - 1);
                        let cc = (2 * ow + dc).min(w - 1);
                        let v = plane[r * w + cc];
                        if v > best {
                            best = v;
                            best_idx = r * w + cc;
                        }
                    }
                }
                let o = (ci * ho + oh) * wo + ow;
                y.data_mut()[o] = best;
                arg[o] = ci * h * w + best_idx;
            }
        }
    }
    (y, arg)
}

pub fn maxpool2_backward<T: Scalar>(
    in_shape: &[usize],
    argmax: &[usize],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape);
    for (o, &src) in argmax.iter().enumerate() {
        dx.data_mut()[src] += dy.data()[o];
    }
    dx
}

// ---------------------------------------------------------------------------
// bilinear upsample
// ---------------------------------------------------------------------------

/// Per-axis source indices and weights for align-corners-false sampling.
fn upsample_taps(out_len: usize, in_len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) / factor as f64 - 0.5;
            let src = src.clamp(0.0, (in_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear upsampling by an integer factor (align-corners-false).
/// Exact on constant images. Fixed, not learned.
pub fn bilinear_upsample<T: Scalar>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    assert!(matches!(factor, 2 | 4 | 8), "factor must be 2, 4 or 8");
    assert_eq!(x.shape().len(), 3);
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ho, wo) = (h * factor, w * factor);
    let rows = upsample_taps(ho, h, factor);
    let cols = upsample_taps(wo, w, factor);
    let mut y = Tensor::zeros(&[c, ho, wo]);
    for ci in 0..c {
        let plane = &x.data()[ci * h * w..(ci + 1) * h * w];
        for (oh, &(r0, r1, fr)) in rows.iter().enumerate() {
            let fr = T::from_f64(fr);
            let out_row = &mut y.data_mut()[(ci * ho + oh) * wo..(ci * ho + oh + 1) * wo];
            for (ow, &(c0, c1, fc)) in cols.iter().enumerate() {
                let fc = T::from_f64(fc);
                let v00 = plane[r0 * w + c0];
                let v01 = plane[r0 * w + c1];
                let v10 = plane[r1 * w + c0];
                let v11 = plane[r1 * w + c1];
                let top = v00 + (v01 - v00) * fc;
                let bot = v10 + (v11 - v10) * fc;
                out_row[ow] = top + (bot - top) * fr;
            }
        }
    }
    y
}

pub fn bilinear_upsample_backward<T: Scalar>(
    in_shape: &[usize],
    factor: usize,
    dy: &Tensor<T>,
) -> Tensor<T> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (ho, wo) = (h * factor, w * factor);
    assert_eq!(dy.shape(), &[c, ho, wo]);
    let rows = upsample_taps(ho, h, factor);
    let cols = upsample_taps(wo, w, factor);
    let mut dx = Tensor::zeros(in_shape);
    for ci in 0..c {
        let dplane = &mut dx.data_mut()[ci * h * w..(ci + 1) * h * w];
        for (oh, &(r0, r1, fr)) in rows.iter().enumerate() {
            let fr = T::from_f64(fr);
            let dyrow = &dy.data()[(ci * ho + oh) * wo..(ci * ho + oh + 1) * wo];
            for (ow, &(c0, c1, fc)) in cols.iter().enumerate() {
                let fc = T::from_f64(fc);
                let g = dyrow[ow];
                let one = T::one();
                dplane[r0 * w + c0] += g * (one - fr) * (one - fc);
                dplane[r0 * w + c1] += g * (one - fr) * fc;
                dplane[r1 * w + c0] += g * fr * (one - fc);
                dplane[r1 * w + c1] += g * fr * fc;
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// cross entropy
// ---------------------------------------------------------------------------

/// Mean over the batch of -log softmax(logits)[label].
/// Returns (loss, probs) where probs feeds the backward pass.
pub fn cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>), TensorError> {
    assert_eq!(logits.shape().len(), 2);
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    assert_eq!(labels.len(), b, "one label per row");
    for &l in labels {
        if l >= c {
            return Err(TensorError::LabelOutOfRange {
                label: l,
                classes: c,
            });
        }
    }
    let probs = softmax(logits, 1);
    let mut loss = T::zero();
    for (r, &l) in labels.iter().enumerate() {
        // log of the stabilized softmax; probs > 0 by construction
        loss -= probs.at2(r, l).max(T::from_f64(1e-300)).ln();
    }
    Ok((loss / T::from_f64(b as f64), probs))
}

/// dlogits = (softmax - onehot) / B.
pub fn cross_entropy_backward<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Tensor<T> {
    let (b, _c) = (probs.shape()[0], probs.shape()[1]);
    let inv_b = T::one() / T::from_f64(b as f64);
    let mut d = probs.scale(inv_b);
    for (r, &l) in labels.iter().enumerate() {
        let v = d.at2(r, l);
        d.set2(r, l, v - inv_b);
    }
    d
}

// ---------------------------------------------------------------------------
// adam
// ---------------------------------------------------------------------------

/// One Adam update with bias correction. `t` is the step count starting at 1.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
) {
    assert_eq!(param.len(), grad.len());
    assert_eq!(param.len(), m.len());
    assert_eq!(param.len(), v.len());
    let one = T::one();
    let bc1 = one - beta1.powi(t as i32);
    let bc2 = one - beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (one - beta1) * g;
        v[i] = beta2 * v[i] + (one - beta2) * g * g;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        param[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let eye = Tensor::from_vec(&[3, 3], vec![1.0, 0., 0., 0., 1., 0., 0., 0., 1.]);
        let b = Tensor::from_vec(&[3, 2], vec![1.0, 2., 3., 4., 5., 6.]);
        let c = matmul(&eye, &b).unwrap();
        assert_eq!(c, b);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2., 3., 4.]);
        let b = Tensor::from_vec(&[2, 1], vec![0.0, 1.]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[4, 2]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn softmax_uniform_on_zeros() {
        let x = Tensor::from_vec(&[4], vec![0.0; 4]);
        let y = softmax(&x, 0);
        for &v in y.data() {
            assert!((v - 0.25f64).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_survives_large_inputs() {
        let x = Tensor::from_vec(&[2], vec![1000.0, 0.0]);
        let y = softmax(&x, 0);
        assert!(y.all_finite());
        assert!((y.data()[0] - 1.0f64).abs() < 1e-12);
        assert!(y.data()[1] < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_vec(&[3, 4], (0..12).map(|i| (i as f64) * 0.37 - 2.0).collect());
        let y = softmax(&x, 1);
        for r in 0..3 {
            let s: f64 = (0..4).map(|c| y.at2(r, c)).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn layernorm_constant_row_maps_to_beta() {
        let x = Tensor::from_vec(&[1, 4], vec![5.0f64; 4]);
        let gamma = Tensor::filled(&[4], 1.0);
        let beta = Tensor::zeros(&[4]);
        let (y, _) = layernorm(&x, &gamma, &beta, 1e-5);
        for &v in y.data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layernorm_zero_gamma_gives_beta() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2., 3., -4., 0., 9.]);
        let gamma = Tensor::zeros(&[3]);
        let beta = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]);
        let (y, _) = layernorm(&x, &gamma, &beta, 1e-5);
        for r in 0..2 {
            assert_eq!(y.at2(r, 0), 0.5);
            assert_eq!(y.at2(r, 1), -1.0);
            assert_eq!(y.at2(r, 2), 2.0);
        }
    }

    #[test]
    fn layernorm_normalizes_rows() {
        let x = Tensor::from_vec(&[2, 8], (0..16).map(|i| (i as f64) * 0.7 - 3.0).collect());
        let gamma = Tensor::filled(&[8], 1.0);
        let beta = Tensor::zeros(&[8]);
        let (y, _) = layernorm(&x, &gamma, &beta, 1e-9);
        for r in 0..2 {
            let mean: f64 = (0..8).map(|c| y.at2(r, c)).sum::<f64>() / 8.0;
            let var: f64 = (0..8).map(|c| y.at2(r, c).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-9, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn conv_identity_with_unit_1x1_kernel() {
        let x = Tensor::from_vec(&[1, 3, 3], (0..9).map(|i| i as f64).collect());
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]);
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_identity_with_center_delta_kernel() {
        let x = Tensor::from_vec(&[1, 4, 5], (0..20).map(|i| i as f64 * 0.5).collect());
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0; // center tap
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_is_linear() {
        let mut rng = crate::rng::Rng::new(9, crate::rng::Stream::WeightInit);
        let rand = |rng: &mut crate::rng::Rng, n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
        };
        let x = Tensor::from_vec(&[2, 6, 6], rand(&mut rng, 72));
        let y = Tensor::from_vec(&[2, 6, 6], rand(&mut rng, 72));
        let w = Tensor::from_vec(&[3, 2, 3, 3], rand(&mut rng, 54));
        let b = Tensor::zeros(&[3]);
        let (a, bb) = (2.5, -1.25);
        let lhs = conv2d(&x.scale(a).add(&y.scale(bb)), &w, &b, 1, 1).unwrap();
        let rhs = conv2d(&x, &w, &b, 1, 1)
            .unwrap()
            .scale(a)
            .add(&conv2d(&y, &w, &b, 1, 1).unwrap().scale(bb));
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            assert!((l - r).abs() < 1e-9);
        }
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let x = Tensor::<f64>::zeros(&[1, 2, 2]);
        let w = Tensor::<f64>::zeros(&[1, 1, 5, 5]);
        let b = Tensor::<f64>::zeros(&[1]);
        assert!(conv2d(&x, &w, &b, 1, 0).is_err());
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::from_vec(&[2], vec![-1.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
    }

    #[test]
    fn maxpool_constant_plane_halves_extent() {
        let x = Tensor::filled(&[1, 6, 6], 3.5);
        let (y, _) = maxpool2(&x);
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn maxpool_odd_extent_replicates_edge() {
        let x = Tensor::from_vec(&[1, 3, 3], (0..9).map(|i| i as f64).collect());
        let (y, _) = maxpool2(&x);
        assert_eq!(y.shape(), &[1, 2, 2]);
        // windows: {0,1,3,4}, {2,2,5,5}, {6,7,6,7}, {8,8,8,8}
        assert_eq!(y.data(), &[4.0, 5.0, 7.0, 8.0]);
    }

    #[test]
    fn maxpool_tie_routes_to_first_row_major() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![7.0, 7.0, 7.0, 7.0]);
        let (_, arg) = maxpool2(&x);
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn upsample_constant_is_exact() {
        let x = Tensor::filled(&[1, 3, 3], 2.25);
        for f in [2, 4, 8] {
            let y = bilinear_upsample(&x, f);
            assert_eq!(y.shape(), &[1, 3 * f, 3 * f]);
            assert!(y.data().iter().all(|&v| v == 2.25));
        }
    }

    #[test]
    fn upsample_checkerboard_hand_values() {
        // 2x2 checkerboard [[1,0],[0,1]] upsampled x2: interior computed by
        // hand from align-corners-false bilinear taps.
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0f64, 0.0, 0.0, 1.0]);
        let y = bilinear_upsample(&x, 2);
        assert_eq!(y.shape(), &[1, 4, 4]);
        // row 0: src row -0.25 clamps to row 0 -> values [1, 0.75, 0.25, 0]
        let expect_row0 = [1.0, 0.75, 0.25, 0.0];
        for (c, &e) in expect_row0.iter().enumerate() {
            assert!((y.data()[c] - e).abs() < 1e-12, "col {c}");
        }
        // center (1,1): mix of rows 0/1 at fr=0.25 and cols 0/1 at fc=0.25:
        // top=0.75, bottom=0.25 -> 0.625
        assert!((y.data()[4 + 1] - 0.625).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_log_c() {
        let logits = Tensor::<f64>::zeros(&[3, 12]);
        let (loss, _) = cross_entropy(&logits, &[0, 5, 11]).unwrap();
        assert!((loss - (12.0f64).ln()).abs() < 1e-9, "loss {loss}");
        assert!((loss - 2.4849).abs() < 1e-3);
    }

    #[test]
    fn cross_entropy_confident_correct_goes_to_zero() {
        let mut logits = Tensor::<f64>::zeros(&[1, 4]);
        logits.set2(0, 2, 50.0);
        let (loss, _) = cross_entropy(&logits, &[2]).unwrap();
        assert!(loss < 1e-9, "loss {loss}");
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let logits = Tensor::<f64>::zeros(&[1, 4]);
        assert!(matches!(
            cross_entropy(&logits, &[4]),
            Err(TensorError::LabelOutOfRange { label: 4, classes: 4 })
        ));
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        // fresh state, zero gradient: no motion
        let mut p = vec![1.0f64, -2.0];
        let g = vec![0.0, 0.0];
        let mut m = vec![0.0, 0.0];
        let mut v = vec![0.0, 0.0];
        adam_step(&mut p, &g, &mut m, &mut v, 1, 1e-3, 0.9, 0.999, 1e-8);
        assert_eq!(p, vec![1.0, -2.0]);
        // accumulated moments decay by their betas under zero gradient
        let mut m = vec![0.5f64, -0.5];
        let mut v = vec![0.25f64, 0.25];
        adam_step(&mut p, &g, &mut m, &mut v, 2, 1e-3, 0.9, 0.999, 1e-8);
        assert_eq!(m, vec![0.45, -0.45]);
        assert!((v[0] - 0.249750).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = vec![0.0f64, 0.0];
        let g = vec![3.0, -0.2];
        let mut m = vec![0.0; 2];
        let mut v = vec![0.0; 2];
        let lr = 1e-2;
        adam_step(&mut p, &g, &mut m, &mut v, 1, lr, 0.9, 0.999, 1e-12);
        assert!((p[0] + lr).abs() < 1e-8, "p0 {}", p[0]);
        assert!((p[1] - lr).abs() < 1e-8, "p1 {}", p[1]);
    }

    #[test]
    fn adam_two_steps_match_hand_unroll() {
        // single parameter, constant gradient g=2, lr=0.1
        let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
        let lr = 0.1;
        let g = 2.0;
        let mut p = vec![1.0f64];
        let mut m = vec![0.0];
        let mut v = vec![0.0];
        adam_step(&mut p, &[g], &mut m, &mut v, 1, lr, b1, b2, eps);
        adam_step(&mut p, &[g], &mut m, &mut v, 2, lr, b1, b2, eps);

        // hand unroll
        let mut hm = 0.0f64;
        let mut hv = 0.0f64;
        let mut hp = 1.0f64;
        for t in 1..=2u32 {
            hm = b1 * hm + (1.0 - b1) * g;
            hv = b2 * hv + (1.0 - b2) * g * g;
            let mhat = hm / (1.0 - b1.powi(t as i32));
            let vhat = hv / (1.0 - b2.powi(t as i32));
            hp -= lr * mhat / (vhat.sqrt() + eps);
        }
        assert!((p[0] - hp).abs() < 1e-12, "{} vs {hp}", p[0]);
    }

    #[test]
    fn mm_variants_agree_with_reference() {
        let mut rng = crate::rng::Rng::new(21, crate::rng::Stream::WeightInit);
        let (m, k, n) = (5, 7, 4);
        let a: Vec<f64> = (0..m * k).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut c_ref = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c_ref[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        let mut c = vec![0.0; m * n];
        mm(m, k, n, &a, &b, &mut c);
        for (x, y) in c.iter().zip(&c_ref) {
            assert!((x - y).abs() < 1e-12);
        }
        // nt: c2 = a . bt^T where bt = b^T (n x k)
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c2 = vec![0.0; m * n];
        mm_nt(m, k, n, &a, &bt, &mut c2);
        for (x, y) in c2.iter().zip(&c_ref) {
            assert!((x - y).abs() < 1e-12);
        }
        // tn: c3 = at^T . b where at = a^T (k x m) -> treat dims (m=k rows)
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut c3 = vec![0.0; m * n];
        mm_tn(k, m, n, &at, &b, &mut c3);
        for (x, y) in c3.iter().zip(&c_ref) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
