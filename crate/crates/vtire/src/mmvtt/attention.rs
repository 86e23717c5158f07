//! Multi-head self/cross attention over the concatenated modality tokens.
//!
//! With tokens from several modalities stacked into one matrix, the
//! diagonal blocks of each head's attention matrix attend within a modality
//! and the off-diagonal blocks across modalities; nothing in the math
//! distinguishes the two. Scores are scaled by 1/sqrt(d) with d the full
//! feature dimension (not the per-head width). Pre-norm residual layout:
//! `x + attn(LN(x))` then `y + ffn(LN(y))`, ReLU feedforward.

use crate::rng::Rng;
use crate::tensor::layers::{LayerNorm, Linear, Relu};
use crate::tensor::{ops, Module, Parameterized, Scalar, Tensor};

#[derive(Clone)]
pub struct AttentionBlock<T: Scalar> {
    pub d: usize,
    pub heads: usize,
    ln1: LayerNorm<T>,
    wq: Linear<T>,
    wk: Linear<T>,
    wv: Linear<T>,
    wo: Linear<T>,
    ln2: LayerNorm<T>,
    ff1: Linear<T>,
    relu: Relu<T>,
    ff2: Linear<T>,
    cache: Option<Cache<T>>,
    /// Row-convention attention probabilities per head from the last
    /// forward pass (rows are queries).
    last_probs: Vec<Tensor<T>>,
    /// Per-head values from the last forward pass.
    last_values: Vec<Tensor<T>>,
    /// Per-head attention outputs (pre output-projection).
    last_attended: Vec<Tensor<T>>,
}

#[derive(Clone)]
struct Cache<T> {
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    concat: Tensor<T>,
}

impl<T: Scalar> AttentionBlock<T> {
    pub fn new(d: usize, heads: usize, hidden: usize, rng: &mut Rng) -> Self {
        assert!(heads >= 1 && d % heads == 0, "d must divide into heads");
        AttentionBlock {
            d,
            heads,
            ln1: LayerNorm::new(d),
            wq: Linear::new(d, d, rng),
            wk: Linear::new(d, d, rng),
            wv: Linear::new(d, d, rng),
            wo: Linear::new(d, d, rng),
            ln2: LayerNorm::new(d),
            ff1: Linear::new(d, hidden, rng),
            relu: Relu::new(),
            ff2: Linear::new(hidden, d, rng),
            cache: None,
            last_probs: Vec::new(),
            last_values: Vec::new(),
            last_attended: Vec::new(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    /// Attention matrices of the last forward in the K^T Q column
    /// convention: element (k_row, q_col), every column sums to 1.
    pub fn attention_matrices(&self) -> Vec<Tensor<T>> {
        self.last_probs.iter().map(|p| p.transpose2()).collect()
    }

    /// Per-head (values, attended) of the last forward, both [tokens, dh].
    pub fn head_values_and_attended(&self) -> (Vec<Tensor<T>>, Vec<Tensor<T>>) {
        (self.last_values.clone(), self.last_attended.clone())
    }

    fn head_cols<'a>(&self, m: &'a Tensor<T>, h: usize) -> Vec<T> {
        let t = m.shape()[0];
        let dh = self.head_dim();
        let mut out = Vec::with_capacity(t * dh);
        for r in 0..t {
            let row = &m.data()[r * self.d..(r + 1) * self.d];
            out.extend_from_slice(&row[h * dh..(h + 1) * dh]);
        }
        out
    }
}

impl<T: Scalar> Parameterized<T> for AttentionBlock<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, &mut Tensor<T>)) {
        self.ln1.visit_params(&mut |n, p, g| f(&format!("ln1.{n}"), p, g));
        self.wq.visit_params(&mut |n, p, g| f(&format!("wq.{n}"), p, g));
        self.wk.visit_params(&mut |n, p, g| f(&format!("wk.{n}"), p, g));
        self.wv.visit_params(&mut |n, p, g| f(&format!("wv.{n}"), p, g));
        self.wo.visit_params(&mut |n, p, g| f(&format!("wo.{n}"), p, g));
        self.ln2.visit_params(&mut |n, p, g| f(&format!("ln2.{n}"), p, g));
        self.ff1.visit_params(&mut |n, p, g| f(&format!("ff1.{n}"), p, g));
        self.ff2.visit_params(&mut |n, p, g| f(&format!("ff2.{n}"), p, g));
    }
}

impl<T: Scalar> Module<T> for AttentionBlock<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.shape().len(), 2);
        assert_eq!(x.shape()[1], self.d);
        let t = x.shape()[0];
        let dh = self.head_dim();
        let scale = T::from_f64(1.0 / (self.d as f64).sqrt());

        let normed = self.ln1.forward(x);
        let q = self.wq.forward(&normed);
        let k = self.wk.forward(&normed);
        let v = self.wv.forward(&normed);

        self.last_probs.clear();
        self.last_values.clear();
        self.last_attended.clear();
        let mut concat = Tensor::zeros(&[t, self.d]);
        for h in 0..self.heads {
            let qh = Tensor::from_vec(&[t, dh], self.head_cols(&q, h));
            let kh = Tensor::from_vec(&[t, dh], self.head_cols(&k, h));
            let vh = Tensor::from_vec(&[t, dh], self.head_cols(&v, h));
            // scores[q_row, k_col] = q . k / sqrt(d)
            let mut scores = Tensor::zeros(&[t, t]);
            ops::mm_nt(t, dh, t, qh.data(), kh.data(), scores.data_mut());
            let scores = scores.scale(scale);
            let probs = ops::softmax(&scores, 1);
            let mut attended = Tensor::zeros(&[t, dh]);
            ops::mm(t, t, dh, probs.data(), vh.data(), attended.data_mut());
            for r in 0..t {
                let src = &attended.data()[r * dh..(r + 1) * dh];
                concat.data_mut()[r * self.d + h * dh..r * self.d + (h + 1) * dh]
                    .copy_from_slice(src);
            }
            self.last_probs.push(probs);
            self.last_values.push(vh);
            self.last_attended.push(attended);
        }
        let projected = self.wo.forward(&concat);
        let after_attn = x.add(&projected);

        let normed2 = self.ln2.forward(&after_attn);
        let ff = self.ff1.forward(&normed2);
        let ff = self.relu.forward(&ff);
        let ff = self.ff2.forward(&ff);
        let out = after_attn.add(&ff);

        self.cache = Some(Cache { q, k, v, concat });
        out
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.take().expect("backward before forward");
        let t = dy.shape()[0];
        let dh = self.head_dim();
        let scale = T::from_f64(1.0 / (self.d as f64).sqrt());

        // ffn residual
        let dff = self.ff2.backward(dy);
        let dff = self.relu.backward(&dff);
        let dnormed2 = self.ff1.backward(&dff);
        let dafter_attn = dy.add(&self.ln2.backward(&dnormed2));

        // attention residual
        let dconcat = self.wo.backward(&dafter_attn);
        let mut dq = Tensor::zeros(&[t, self.d]);
        let mut dk = Tensor::zeros(&[t, self.d]);
        let mut dv = Tensor::zeros(&[t, self.d]);
        for h in 0..self.heads {
            let probs = &self.last_probs[h];
            let vh = &self.last_values[h];
            let qh = Tensor::from_vec(&[t, dh], self.head_cols(&cache.q, h));
            let kh = Tensor::from_vec(&[t, dh], self.head_cols(&cache.k, h));
            let mut dattended = Tensor::zeros(&[t, dh]);
            for r in 0..t {
                dattended.data_mut()[r * dh..(r + 1) * dh].copy_from_slice(
                    &dconcat.data()[r * self.d + h * dh..r * self.d + (h + 1) * dh],
                );
            }
            // dP = dA . V^T ; dV = P^T . dA
            let mut dprobs = Tensor::zeros(&[t, t]);
            ops::mm_nt(t, dh, t, dattended.data(), vh.data(), dprobs.data_mut());
            let mut dvh = Tensor::zeros(&[t, dh]);
            ops::mm_tn(t, t, dh, probs.data(), dattended.data(), dvh.data_mut());
            // through the row softmax
            let dscores = ops::softmax_backward(probs, &dprobs, 1).scale(scale);
            // dQ = dS . K ; dK = dS^T . Q
            let mut dqh = Tensor::zeros(&[t, dh]);
            ops::mm(t, t, dh, dscores.data(), kh.data(), dqh.data_mut());
            let mut dkh = Tensor::zeros(&[t, dh]);
            ops::mm_tn(t, t, dh, dscores.data(), qh.data(), dkh.data_mut());
            for r in 0..t {
                dq.data_mut()[r * self.d + h * dh..r * self.d + (h + 1) * dh]
                    .copy_from_slice(&dqh.data()[r * dh..(r + 1) * dh]);
                dk.data_mut()[r * self.d + h * dh..r * self.d + (h + 1) * dh]
                    .copy_from_slice(&dkh.data()[r * dh..(r + 1) * dh]);
                dv.data_mut()[r * self.d + h * dh..r * self.d + (h + 1) * dh]
                    .copy_from_slice(&dvh.data()[r * dh..(r + 1) * dh]);
            }
        }
        let mut dnormed = self.wq.backward(&dq);
        dnormed.add_assign(&self.wk.backward(&dk));
        dnormed.add_assign(&self.wv.backward(&dv));
        let dx_ln = self.ln1.backward(&dnormed);
        dafter_attn.add(&dx_ln)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use crate::tensor::gradcheck;

    fn ident_block(d: usize) -> AttentionBlock<f64> {
        // identity q/k/v, zero ffn: isolates the raw attention math
        let mut rng = Rng::new(0, Stream::WeightInit);
        let mut b = AttentionBlock::<f64>::new(d, 1, 4, &mut rng);
        let eye = {
            let mut t = Tensor::zeros(&[d, d]);
            for i in 0..d {
                t.set2(i, i, 1.0);
            }
            t
        };
        b.wq.w = eye.clone();
        b.wk.w = eye.clone();
        b.wv.w = eye.clone();
        b.wq.b.fill(0.0);
        b.wk.b.fill(0.0);
        b.wv.b.fill(0.0);
        b
    }

    #[test]
    fn single_token_attention_returns_value_exactly() {
        let mut rng = Rng::new(1, Stream::WeightInit);
        let mut block = AttentionBlock::<f64>::new(8, 4, 16, &mut rng);
        let x = Tensor::from_vec(&[1, 8], (0..8).map(|i| 0.3 * i as f64 - 1.0).collect());
        let _ = block.forward(&x);
        let (values, attended) = block.head_values_and_attended();
        for h in 0..4 {
            assert_eq!(values[h], attended[h], "head {h}: A must equal V for one token");
        }
        for p in block.attention_matrices() {
            assert_eq!(p.data(), &[1.0]);
        }
    }

    #[test]
    fn two_token_attention_matches_hand_computed_values() {
        // identity weights, d=2, one head, orthonormal unit tokens:
        // scores = I/sqrt(2); each softmax pair is
        // [e^s, 1] / (e^s + 1) with s = 1/sqrt(2)
        let mut block = ident_block(2);
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let _ = block.forward(&x);
        // layernorm first: rows of x normalize to [1, -1] and [-1, 1],
        // so compute the expectation from the normed rows instead
        let n = ops::layernorm(
            &x,
            &Tensor::filled(&[2], 1.0),
            &Tensor::zeros(&[2]),
            1e-5,
        )
        .0;
        let s = 1.0 / (2.0f64).sqrt();
        let dot = |a: usize, b: usize| {
            (0..2).map(|c| n.at2(a, c) * n.at2(b, c)).sum::<f64>() * s
        };
        let probs = block.attention_matrices().remove(0);
        for qcol in 0..2 {
            let raw: Vec<f64> = (0..2).map(|krow| (dot(qcol, krow)).exp()).collect();
            let z: f64 = raw.iter().sum();
            for krow in 0..2 {
                let expect = raw[krow] / z;
                let got = probs.at2(krow, qcol);
                assert!(
                    (got - expect).abs() < 1e-12,
                    "P[{krow},{qcol}] {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn attention_columns_sum_to_one() {
        let mut rng = Rng::new(2, Stream::WeightInit);
        let mut block = AttentionBlock::<f64>::new(16, 4, 32, &mut rng);
        let x = Tensor::from_vec(
            &[6, 16],
            (0..96).map(|i| ((i * 37) % 17) as f64 * 0.21 - 1.5).collect(),
        );
        let _ = block.forward(&x);
        for (h, p) in block.attention_matrices().iter().enumerate() {
            for col in 0..6 {
                let s: f64 = (0..6).map(|row| p.at2(row, col)).sum();
                assert!((s - 1.0).abs() < 1e-6, "head {h} col {col} sums to {s}");
            }
        }
    }

    #[test]
    fn permuting_tokens_permutes_outputs() {
        let mut rng = Rng::new(3, Stream::WeightInit);
        let mut block = AttentionBlock::<f64>::new(8, 2, 16, &mut rng);
        let x = Tensor::from_vec(
            &[3, 8],
            (0..24).map(|i| (i as f64 * 0.13).sin()).collect(),
        );
        let y = block.forward(&x);
        // swap tokens 0 and 2
        let mut xp = x.clone();
        for c in 0..8 {
            let a = x.at2(0, c);
            xp.set2(0, c, x.at2(2, c));
            xp.set2(2, c, a);
        }
        let yp = block.forward(&xp);
        for c in 0..8 {
            assert!((y.at2(0, c) - yp.at2(2, c)).abs() < 1e-12);
            assert!((y.at2(2, c) - yp.at2(0, c)).abs() < 1e-12);
            assert!((y.at2(1, c) - yp.at2(1, c)).abs() < 1e-12);
        }
    }

    #[test]
    fn block_gradients_check_out() {
        let mut rng = Rng::new(4, Stream::WeightInit);
        let mut block = AttentionBlock::<f64>::new(8, 4, 16, &mut rng);
        let mut xr = Rng::new(5, Stream::WeightInit);
        let x = Tensor::from_vec(&[6, 8], (0..48).map(|_| xr.uniform(-1.0, 1.0)).collect());
        let report = gradcheck::check_module(&mut block, &x, 1e-5, 1e-4, 800, 6);
        assert!(report.pass, "max_rel_err {}", report.max_rel_err);
    }
}
