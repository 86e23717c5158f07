//! Layer wrappers: parameters, forward caches, explicit backward passes.
//!
//! Spatial layers take a leading batch dimension (`[B, C, H, W]`) so a whole
//! set of patches or images moves through in one call.

use super::ops;
use super::{Module, Parameterized, Scalar, Tensor};
use crate::rng::Rng;

/// Uniform init in +-sqrt(6 / (fan_in + fan_out)).
pub fn init_uniform<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.uniform(-bound, bound)))
        .collect();
    Tensor::from_vec(shape, data)
}

// ---------------------------------------------------------------------------

/// Fully connected layer: y = x . W^T + b, x is [B, in].
#[derive(Clone)]
pub struct Linear<T> {
    pub w: Tensor<T>, // [out, in]
    pub b: Tensor<T>, // [out]
    pub gw: Tensor<T>,
    pub gb: Tensor<T>,
    cache_x: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Linear {
            w: init_uniform(&[outputs, inputs], inputs, outputs, rng),
            b: Tensor::zeros(&[outputs]),
            gw: Tensor::zeros(&[outputs, inputs]),
            gb: Tensor::zeros(&[outputs]),
            cache_x: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.w.shape()[0]
    }
}

impl<T: Scalar> Parameterized<T> for Linear<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, &mut Tensor<T>)) {
        f("w", &mut self.w, &mut self.gw);
        f("b", &mut self.b, &mut self.gb);
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.shape().len(), 2, "linear expects [batch, features]");
        let (bsz, nin) = (x.shape()[0], x.shape()[1]);
        assert_eq!(nin, self.in_features(), "linear input width");
        let nout = self.out_features();
        let mut y = Tensor::zeros(&[bsz, nout]);
        ops::mm_nt(bsz, nin, nout, x.data(), self.w.data(), y.data_mut());
        for r in 0..bsz {
            let row = &mut y.data_mut()[r * nout..(r + 1) * nout];
            for (v, &bv) in row.iter_mut().zip(self.b.data()) {
                *v += bv;
            }
        }
        self.cache_x = Some(x.clone());
        y
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.cache_x.take().expect("backward before forward");
        let (bsz, nin) = (x.shape()[0], x.shape()[1]);
        let nout = self.out_features();
        assert_eq!(dy.shape(), &[bsz, nout]);
        // dW += dy^T . x ; db += column sums of dy ; dx = dy . W
        ops::mm_tn(bsz, nout, nin, dy.data(), x.data(), self.gw.data_mut());
        for r in 0..bsz {
            let row = &dy.data()[r * nout..(r + 1) * nout];
            for (g, &v) in self.gb.data_mut().iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dx = Tensor::zeros(&[bsz, nin]);
        ops::mm(bsz, nout, nin, dy.data(), self.w.data(), dx.data_mut());
        dx
    }
}

// ---------------------------------------------------------------------------

/// 2-D convolution over [B, Cin, H, W], stride/pad as configured.
///
/// Stride-1 forward/backward run through im2col and dense matmuls; other
/// strides use the direct loops.
#[derive(Clone)]
pub struct Conv2d<T> {
    pub w: Tensor<T>, // [cout, cin, k, k]
    pub b: Tensor<T>,
    pub gw: Tensor<T>,
    pub gb: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
    /// Skip the input-gradient computation (first layer of a network).
    pub needs_input_grad: bool,
    cache_x: Option<Tensor<T>>,
    cache_shape: Option<Vec<usize>>,
    spare_cols: Option<Vec<T>>,
    spare_row: Option<Vec<T>>,
    spare_dcols: Option<Vec<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut Rng) -> Self {
        let fan_in = cin * k * k;
        let fan_out = cout * k * k;
        Conv2d {
            w: init_uniform(&[cout, cin, k, k], fan_in, fan_out, rng),
            b: Tensor::zeros(&[cout]),
            gw: Tensor::zeros(&[cout, cin, k, k]),
            gb: Tensor::zeros(&[cout]),
            stride,
            pad,
            needs_input_grad: true,
            cache_x: None,
            cache_shape: None,
            spare_cols: None,
            spare_row: None,
            spare_dcols: None,
        }
    }

    fn out_shape(&self, x: &Tensor<T>) -> [usize; 4] {
        let (cout, k) = (self.w.shape()[0], self.w.shape()[2]);
        let ho = ops::conv_out_extent(x.shape()[2], k, self.stride, self.pad).expect("conv extent");
        let wo = ops::conv_out_extent(x.shape()[3], k, self.stride, self.pad).expect("conv extent");
        [x.shape()[0], cout, ho, wo]
    }
}

impl<T: Scalar> Parameterized<T> for Conv2d<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, &mut Tensor<T>)) {
        f("w", &mut self.w, &mut self.gw);
        f("b", &mut self.b, &mut self.gb);
    }
}

/// Working-set budget for one im2col chunk, in scalars.
const COLS_BUDGET: usize = 128 * 1024;

impl<T: Scalar> Conv2d<T> {
    /// Samples per im2col chunk so the column matrix stays cache-sized.
    fn chunk_len(&self, cin: usize, k: usize, ho: usize, wo: usize) -> usize {
        (COLS_BUDGET / (cin * k * k * ho * wo)).max(1)
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.shape().len(), 4, "conv2d layer expects [B, C, H, W]");
        let [bsz, cout, ho, wo] = self.out_shape(x);
        let (cin, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
        assert_eq!(cin, self.w.shape()[1]);
        let (kh, kw) = (self.w.shape()[2], self.w.shape()[3]);
        let mut y = Tensor::zeros(&[bsz, cout, ho, wo]);
        if self.stride == 1 && kh == kw {
            let k = kh;
            let chunk = self.chunk_len(cin, k, ho, wo);
            let mut cols = self.spare_cols.take().unwrap_or_default();
            let mut y_r = self.spare_row.take().unwrap_or_default();
            let mut s0 = 0;
            while s0 < bsz {
                let s1 = (s0 + chunk).min(bsz);
                let b = s1 - s0;
                let n = b * ho * wo;
                ops::im2col_into(
                    &x.data()[s0 * cin * h * w..s1 * cin * h * w],
                    b,
                    cin,
                    h,
                    w,
                    k,
                    self.pad,
                    &mut cols,
                );
                y_r.clear();
                y_r.resize(cout * n, T::zero());
                ops::mm(cout, cin * k * k, n, self.w.data(), &cols, &mut y_r);
                for co in 0..cout {
                    let bias = self.b.data()[co];
                    let src = &y_r[co * n..(co + 1) * n];
                    for s in s0..s1 {
                        let dst = &mut y.data_mut()
                            [(s * cout + co) * ho * wo..(s * cout + co + 1) * ho * wo];
                        let seg = &src[(s - s0) * ho * wo..(s - s0 + 1) * ho * wo];
                        for (d, &v) in dst.iter_mut().zip(seg) {
                            *d = v + bias;
                        }
                    }
                }
                s0 = s1;
            }
            self.spare_cols = Some(cols);
            self.spare_row = Some(y_r);
            // backward recomputes im2col per chunk from the input
            self.cache_x = Some(x.clone());
        } else {
            let in_stride = cin * h * w;
            let out_stride = cout * ho * wo;
            for s in 0..bsz {
                ops::conv2d_raw(
                    &x.data()[s * in_stride..(s + 1) * in_stride],
                    cin,
                    h,
                    w,
                    self.w.data(),
                    cout,
                    kh,
                    kw,
                    self.b.data(),
                    self.stride,
                    self.pad,
                    &mut y.data_mut()[s * out_stride..(s + 1) * out_stride],
                    ho,
                    wo,
                );
            }
            self.cache_x = Some(x.clone());
        }
        self.cache_shape = Some(x.shape().to_vec());
        y
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let in_shape = self.cache_shape.take().expect("backward before forward");
        let (bsz, cin, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
        let (cout, kh, kw) = (self.w.shape()[0], self.w.shape()[2], self.w.shape()[3]);
        let (ho, wo) = (dy.shape()[2], dy.shape()[3]);
        let mut dx = Tensor::zeros(&in_shape);
        let x = self.cache_x.take().expect("backward before forward");
        if self.stride == 1 && kh == kw {
            let k = kh;
            let chunk = self.chunk_len(cin, k, ho, wo);
            let mut cols = self.spare_cols.take().unwrap_or_default();
            let mut dy_r = self.spare_row.take().unwrap_or_default();
            let mut dcols = self.spare_dcols.take().unwrap_or_default();
            let mut s0 = 0;
            while s0 < bsz {
                let s1 = (s0 + chunk).min(bsz);
                let b = s1 - s0;
                let n = b * ho * wo;
                ops::im2col_into(
                    &x.data()[s0 * cin * h * w..s1 * cin * h * w],
                    b,
                    cin,
                    h,
                    w,
                    k,
                    self.pad,
                    &mut cols,
                );
                dy_r.clear();
                dy_r.resize(cout * n, T::zero());
                for co in 0..cout {
                    let dst = &mut dy_r[co * n..(co + 1) * n];
                    for s in s0..s1 {
                        let src = &dy.data()
                            [(s * cout + co) * ho * wo..(s * cout + co + 1) * ho * wo];
                        dst[(s - s0) * ho * wo..(s - s0 + 1) * ho * wo].copy_from_slice(src);
                    }
                    self.gb.data_mut()[co] += dst.iter().copied().sum::<T>();
                }
                ops::mm_nt(cout, n, cin * k * k, &dy_r, &cols, self.gw.data_mut());
                if self.needs_input_grad {
                    dcols.clear();
                    dcols.resize(cin * k * k * n, T::zero());
                    ops::mm_tn(cout, cin * k * k, n, self.w.data(), &dy_r, &mut dcols);
                    ops::col2im(
                        &dcols,
                        b,
                        cin,
                        h,
                        w,
                        k,
                        self.pad,
                        &mut dx.data_mut()[s0 * cin * h * w..s1 * cin * h * w],
                    );
                }
                s0 = s1;
            }
            self.spare_cols = Some(cols);
            self.spare_row = Some(dy_r);
            self.spare_dcols = Some(dcols);
        } else {
            let in_stride = cin * h * w;
            let out_stride = cout * ho * wo;
            for s in 0..bsz {
                ops::conv2d_backward_raw(
                    &x.data()[s * in_stride..(s + 1) * in_stride],
                    cin,
                    h,
                    w,
                    self.w.data(),
                    cout,
                    kh,
                    kw,
                    &dy.data()[s * out_stride..(s + 1) * out_stride],
                    ho,
                    wo,
                    self.stride,
                    self.pad,
                    &mut dx.data_mut()[s * in_stride..(s + 1) * in_stride],
                    self.gw.data_mut(),
                    self.gb.data_mut(),
                );
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------

#[derive(Clone)]
pub struct Relu<T> {
    mask: Vec<u64>,
    len: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Relu {
            mask: Vec::new(),
            len: 0,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T: Scalar> Default for Relu<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Parameterized<T> for Relu<T> {
    fn visit_params(&mut self, _f: &mut dyn FnMut(&str, &mut Tensor<T>, &mut Tensor<T>)) {}
}

impl<T: Scalar> Module<T> for Relu<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let n = x.len();
        self.len = n;
        self.mask.clear();
        self.mask.resize(n.div_ceil(64), 0);
        let mut y = x.clone();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            if *v > T::zero() {
                self.mask[i / 64] |= 1 << (i % 64);
            } else {
                *v = T::zero();
            }
        }
        y
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        assert_eq!(dy.len(), self.len, "backward before forward");
        let mut dx = dy.clone();
        for (i, v) in dx.data_mut().iter_mut().enumerate() {
            if self.mask[i / 64] & (1 << (i % 64)) == 0 {
                *v = T::zero();
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------

/// 2x2 stride-2 max pooling over [B, C, H, W].
#[derive(Clone)]
pub struct MaxPool2<T> {
    cache: Option<(Vec<usize>, Vec<usize>)>, // (input shape, argmax)
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> MaxPool2<T> {
    pub fn new() -> Self {
        MaxPool2 {
            cache: None,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T: Scalar> Default for MaxPool2<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Parameterized<T> for MaxPool2<T> {
    fn visit_params(&mut self, _f: &mut dyn FnMut(&str, &mut Tensor<T>, &mut Tensor<T>)) {}
}

impl<T: Scalar> Module<T> for MaxPool2<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.shape().len(), 4);
        let (bsz, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
        let mut y = Tensor::zeros(&[bsz, c, ho, wo]);
        let mut argmax = vec![0usize; bsz * c * ho * wo];
        let xd = x.data();
        let yd = y.data_mut();
        for plane in 0..bsz * c {
            let base = plane * h * w;
            let obase = plane * ho * wo;
            for oh in 0..ho {
                let r0 = 2 * oh;
                let r1 = (2 * oh + 1).min(h - 1);
                for ow in 0..wo {
                    let c0 = 2 * ow;
                    let c1 = (2 * ow + 1).min(w - 1);
                    let mut best_idx = base + r0 * w + c0;
                    let mut best = xd[best_idx];
                    for idx in [base + r0 * w + c1, base + r1 * w + c0, base + r1 * w + c1] {
                        if xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                    yd[obase + oh * wo + ow] = best;
                    argmax[obase + oh * wo + ow] = best_idx;
                }
            }
        }
        self.cache = Some((x.shape().to_vec(), argmax));
        y
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let (in_shape, argmax) = self.cache.take().expect("backward before forward");
        let mut dx = Tensor::zeros(&in_shape);
        for (o, &src) in argmax.iter().enumerate() {
            dx.data_mut()[src] += dy.data()[o];
        }
        dx
    }
}

// ---------------------------------------------------------------------------

/// Fixed bilinear upsampling over [B, C, H, W].
#[derive(Clone)]
pub struct BilinearUpsample<T> {
    pub factor: usize,
    cache_shape: Option<Vec<usize>>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> BilinearUpsample<T> {
    pub fn new(factor: usize) -> Self {
        BilinearUpsample {
            factor,
            cache_shape: None,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T: Scalar> Parameterized<T> for BilinearUpsample<T> {
    fn visit_params(&mut self, _f: &mut dyn FnMut(&str, &mut Tensor<T>, &mut Tensor<T>)) {}
}

impl<T: Scalar> Module<T> for BilinearUpsample<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.shape().len(), 4);
        let (bsz, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let f = self.factor;
        let mut y = Tensor::zeros(&[bsz, c, h * f, w * f]);
        let in_stride = c * h * w;
        let out_stride = c * h * f * w * f;
        for s in 0..bsz {
            let sub = Tensor::from_vec(
                &[c, h, w],
                x.data()[s * in_stride..(s + 1) * in_stride].to_vec(),
            );
            let ys = ops::bilinear_upsample(&sub, f);
            y.data_mut()[s * out_stride..(s + 1) * out_stride].copy_from_slice(ys.data());
        }
        self.cache_shape = Some(x.shape().to_vec());
        y
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let in_shape = self.cache_shape.take().expect("backward before forward");
        let (bsz, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
        let f = self.factor;
        let mut dx = Tensor::zeros(&in_shape);
        let in_stride = c * h * w;
        let out_stride = c * h * f * w * f;
        for s in 0..bsz {
            let sub = Tensor::from_vec(
                &[c, h * f, w * f],
                dy.data()[s * out_stride..(s + 1) * out_stride].to_vec(),
            );
            let dxs = ops::bilinear_upsample_backward(&[c, h, w], f, &sub);
            dx.data_mut()[s * in_stride..(s + 1) * in_stride].copy_from_slice(dxs.data());
        }
        dx
    }
}

// ---------------------------------------------------------------------------

/// Learned per-feature layer normalization over [tokens, d].
#[derive(Clone)]
pub struct LayerNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub ggamma: Tensor<T>,
    pub gbeta: Tensor<T>,
    pub eps: T,
    cache: Option<ops::LayerNormCache<T>>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gamma: Tensor::filled(&[d], T::one()),
            beta: Tensor::zeros(&[d]),
            ggamma: Tensor::zeros(&[d]),
            gbeta: Tensor::zeros(&[d]),
            eps: T::from_f64(1e-5),
            cache: None,
        }
    }
}

impl<T: Scalar> Parameterized<T> for LayerNorm<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, &mut Tensor<T>)) {
        f("gamma", &mut self.gamma, &mut self.ggamma);
        f("beta", &mut self.beta, &mut self.gbeta);
    }
}

impl<T: Scalar> Module<T> for LayerNorm<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let (y, cache) = ops::layernorm(x, &self.gamma, &self.beta, self.eps);
        self.cache = Some(cache);
        y
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.take().expect("backward before forward");
        let (dx, dgamma, dbeta) = ops::layernorm_backward(&cache, &self.gamma, dy);
        self.ggamma.add_assign(&dgamma);
        self.gbeta.add_assign(&dbeta);
        dx
    }
}

// ---------------------------------------------------------------------------

/// Softmax along a fixed axis.
#[derive(Clone)]
pub struct Softmax<T> {
    pub axis: usize,
    cache_y: Option<Tensor<T>>,
}

impl<T: Scalar> Softmax<T> {
    pub fn new(axis: usize) -> Self {
        Softmax {
            axis,
            cache_y: None,
        }
    }
}

impl<T: Scalar> Parameterized<T> for Softmax<T> {
    fn visit_params(&mut self, _f: &mut dyn FnMut(&str, &mut Tensor<T>, &mut Tensor<T>)) {}
}

impl<T: Scalar> Module<T> for Softmax<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = ops::softmax(x, self.axis);
        self.cache_y = Some(y.clone());
        y
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let y = self.cache_y.take().expect("backward before forward");
        ops::softmax_backward(&y, dy, self.axis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn linear_matches_manual() {
        let mut rng = Rng::new(1, Stream::WeightInit);
        let mut lin = Linear::<f64>::new(3, 2, &mut rng);
        lin.w = Tensor::from_vec(&[2, 3], vec![1.0, 0., 0., 0., 2., 0.]);
        lin.b = Tensor::from_vec(&[2], vec![0.5, -0.5]);
        let x = Tensor::from_vec(&[1, 3], vec![3.0, 4.0, 5.0]);
        let y = lin.forward(&x);
        assert_eq!(y.data(), &[3.5, 7.5]);
    }

    #[test]
    fn init_respects_fan_bound() {
        let mut rng = Rng::new(2, Stream::WeightInit);
        let t: Tensor<f64> = init_uniform(&[100, 100], 100, 100, &mut rng);
        let bound = (6.0 / 200.0f64).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        // not degenerate
        assert!(t.data().iter().any(|v| v.abs() > bound * 0.5));
    }

    #[test]
    fn maxpool_layer_batched_matches_op() {
        let x = Tensor::from_vec(&[2, 1, 2, 2], vec![1.0, 2., 3., 4., 8., 7., 6., 5.]);
        let mut pool = MaxPool2::new();
        let y = pool.forward(&x);
        assert_eq!(y.shape(), &[2, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0, 8.0]);
        let dy = Tensor::from_vec(&[2, 1, 1, 1], vec![1.0, 1.0]);
        let dx = pool.backward(&dy);
        assert_eq!(dx.data(), &[0., 0., 0., 1., 1., 0., 0., 0.]);
    }
}
