//! The multimodal visuotactile fusion classifier.
//!
//! Tokens from every modality are concatenated, a learned positional
//! embedding is added, one or more attention blocks mix them (self- and
//! cross-modality in one matrix), and an MLP head classifies the
//! concatenation of all fused tokens.

pub mod attention;
mod train;

pub use attention::AttentionBlock;
pub use train::{evaluate, train, DataError, EpochStats, EvalOutcome, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::modality::{encode_fragments, EncoderSet, ModalityMode, SampleFragments};
use crate::rng::{Rng, Stream};
use crate::tensor::layers::{Linear, Relu};
use crate::tensor::{ops, Module, Parameterized, Scalar, Tensor};

/// Hyperparameters of the fusion model and its training loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Feature dimension per token.
    pub d: usize,
    /// Attention heads.
    pub heads: usize,
    /// Attention block count.
    pub blocks: usize,
    /// Hidden width of the classification MLP (also the FFN width).
    pub hidden: usize,
    pub classes: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub split_ratio: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            d: 64,
            heads: 4,
            blocks: 1,
            hidden: 128,
            classes: 12,
            lr: 1e-3,
            batch: 32,
            epochs: 80,
            seed: 0,
            split_ratio: 0.7,
        }
    }
}

impl FusionConfig {
    /// Hyperparameters as reported for the original hardware experiments:
    /// wide features, small step. Desk-scale runs use `default()`.
    pub fn paper_preset() -> Self {
        FusionConfig {
            d: 384,
            lr: 2e-5,
            ..FusionConfig::default()
        }
    }

    pub fn validate(&self) {
        assert!(self.d % self.heads == 0, "d must be divisible by heads");
        assert!(self.blocks >= 1, "at least one attention block");
        assert!(self.classes >= 2, "at least two classes");
        assert!(self.split_ratio > 0.0 && self.split_ratio < 1.0);
    }
}

/// Concatenated token features with modality boundaries.
pub struct TokenMatrix<T> {
    /// [total_tokens, d]
    pub features: Tensor<T>,
    /// Token count per modality, in mode order.
    pub boundaries: Vec<usize>,
}

/// Encoder output for a whole batch: one `[B*K_m, d]` matrix per modality.
pub struct BatchFeatures<T> {
    pub features: Vec<Tensor<T>>,
    pub tokens_per_modality: Vec<usize>,
    pub batch: usize,
}

/// Stack per-modality features and add the positional embedding.
/// The embedding table must cover every token slot.
pub fn concat_and_embed<T: Scalar>(
    features: &[Tensor<T>],
    pos: &Tensor<T>,
) -> Result<TokenMatrix<T>, String> {
    let d = features[0].shape()[1];
    let total: usize = features.iter().map(|f| f.shape()[0]).sum();
    if pos.shape()[0] < total || pos.shape()[1] != d {
        return Err(format!(
            "positional table {:?} cannot cover {total} tokens of width {d}",
            pos.shape()
        ));
    }
    let mut out = Tensor::zeros(&[total, d]);
    let mut row = 0;
    let mut boundaries = Vec::with_capacity(features.len());
    for f in features {
        assert_eq!(f.shape()[1], d, "modality feature width");
        let k = f.shape()[0];
        out.data_mut()[row * d..(row + k) * d].copy_from_slice(f.data());
        boundaries.push(k);
        row += k;
    }
    for (o, p) in out.data_mut().iter_mut().zip(pos.data()) {
        *o += *p;
    }
    Ok(TokenMatrix { features: out, boundaries })
}

/// The fusion model: per-modality encoders, positional embedding,
/// attention blocks, MLP classification head over all tokens concatenated.
#[derive(Clone)]
pub struct Mmvtt<T: Scalar> {
    pub mode: ModalityMode,
    pub config: FusionConfig,
    pub encoders: EncoderSet<T>,
    pub pos: Tensor<T>,
    pub gpos: Tensor<T>,
    pub blocks: Vec<AttentionBlock<T>>,
    pub head_hidden: Linear<T>,
    head_relu: Relu<T>,
    pub head_out: Linear<T>,
    token_count: usize,
}

impl<T: Scalar> Mmvtt<T> {
    /// `token_count` is the total token budget of the mode (sum of per-
    /// modality fragment counts); the positional table is sized to it.
    pub fn new(mode: ModalityMode, token_count: usize, config: FusionConfig) -> Self {
        config.validate();
        let mut rng = Rng::new(config.seed, Stream::WeightInit);
        let mut encoders = EncoderSet::new(mode, config.d, &mut rng);
        for i in 0..mode.modalities().len() {
            encoders.encoder_mut(i).skip_input_grad();
        }
        let blocks = (0..config.blocks)
            .map(|_| AttentionBlock::new(config.d, config.heads, config.hidden, &mut rng))
            .collect();
        let head_hidden = Linear::new(token_count * config.d, config.hidden, &mut rng);
        // zero-initialized output layer: untrained models predict the
        // uniform distribution (epoch-0 loss is exactly ln C)
        let mut head_out = Linear::new(config.hidden, config.classes, &mut rng);
        head_out.w.fill(T::zero());
        head_out.b.fill(T::zero());
        Mmvtt {
            mode,
            encoders,
            pos: Tensor::zeros(&[token_count, config.d]),
            gpos: Tensor::zeros(&[token_count, config.d]),
            blocks,
            head_hidden,
            head_relu: Relu::new(),
            head_out,
            token_count,
            config,
        }
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    /// Run every modality encoder once over a whole batch of samples.
    /// Fragment counts must be uniform across the batch (same mode and
    /// geometry). Returns per-modality feature matrices `[B*K_m, d]`.
    pub fn encode_batch(&mut self, frags: &[&SampleFragments<T>]) -> BatchFeatures<T> {
        assert!(!frags.is_empty());
        let modalities = frags[0].fragments.len();
        let mut features = Vec::with_capacity(modalities);
        let mut tokens_per_modality = Vec::with_capacity(modalities);
        for m in 0..modalities {
            let km = frags[0].fragments[m].shape()[0];
            let width = frags[0].fragments[m].shape()[1];
            let mut stacked = Tensor::zeros(&[frags.len() * km, width]);
            for (s, f) in frags.iter().enumerate() {
                assert_eq!(f.fragments[m].shape(), &[km, width], "uniform fragment counts");
                stacked.data_mut()[s * km * width..(s + 1) * km * width]
                    .copy_from_slice(f.fragments[m].data());
            }
            features.push(self.encoders.encoder_mut(m).forward(&stacked));
            tokens_per_modality.push(km);
        }
        BatchFeatures {
            features,
            tokens_per_modality,
            batch: frags.len(),
        }
    }

    /// Push one sample of a [`BatchFeatures`] through embedding, attention
    /// and the head. Caches are per sample: backward must follow before the
    /// next sample's forward.
    pub fn fuse_forward(&mut self, batch: &BatchFeatures<T>, idx: usize) -> Tensor<T> {
        let d = self.config.d;
        assert!(idx < batch.batch);
        let total: usize = batch.tokens_per_modality.iter().sum();
        assert_eq!(total, self.token_count, "token layout mismatch");
        let mut tokens = Tensor::zeros(&[total, d]);
        let mut row = 0;
        for (m, &km) in batch.tokens_per_modality.iter().enumerate() {
            let src = &batch.features[m].data()[idx * km * d..(idx + 1) * km * d];
            tokens.data_mut()[row * d..(row + km) * d].copy_from_slice(src);
            row += km;
        }
        for (t, p) in tokens.data_mut().iter_mut().zip(self.pos.data()) {
            *t += *p;
        }
        let mut f = tokens;
        for block in &mut self.blocks {
            f = block.forward(&f);
        }
        let fused = f.reshape(&[1, self.token_count * d]);
        let h = self.head_hidden.forward(&fused);
        let h = self.head_relu.forward(&h);
        self.head_out.forward(&h)
    }

    /// Backward of [`fuse_forward`]: accumulates fusion-parameter gradients
    /// and returns the per-modality feature gradients `[K_m, d]`.
    pub fn fuse_backward(
        &mut self,
        tokens_per_modality: &[usize],
        dlogits: &Tensor<T>,
    ) -> Vec<Tensor<T>> {
        let d = self.config.d;
        let g = self.head_out.backward(dlogits);
        let g = self.head_relu.backward(&g);
        let g = self.head_hidden.backward(&g);
        let mut g = g.reshape(&[self.token_count, d]);
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g);
        }
        self.gpos.add_assign(&g);
        let mut out = Vec::with_capacity(tokens_per_modality.len());
        let mut row = 0;
        for &km in tokens_per_modality {
            out.push(Tensor::from_vec(
                &[km, d],
                g.data()[row * d..(row + km) * d].to_vec(),
            ));
            row += km;
        }
        out
    }

    /// Backward of [`encode_batch`] from accumulated feature gradients.
    pub fn encode_backward(&mut self, dfeatures: &[Tensor<T>]) {
        for (m, df) in dfeatures.iter().enumerate() {
            let _ = self.encoders.encoder_mut(m).backward(df);
        }
    }

    /// Forward one sample's fragments to logits [1, classes].
    pub fn forward_sample(&mut self, frags: &SampleFragments<T>) -> Tensor<T> {
        assert_eq!(
            frags.token_count(),
            self.token_count,
            "sample token count does not match the model"
        );
        let bundle = encode_fragments(frags, &mut self.encoders);
        let tokens =
            concat_and_embed(&bundle.features, &self.pos).expect("positional table covers tokens");
        let mut f = tokens.features;
        for block in &mut self.blocks {
            f = block.forward(&f);
        }
        let fused = f.reshape(&[1, self.token_count * self.config.d]);
        let h = self.head_hidden.forward(&fused);
        let h = self.head_relu.forward(&h);
        self.head_out.forward(&h)
    }

    /// Backward from dlogits; accumulates gradients for every parameter.
    pub fn backward_sample(&mut self, frags: &SampleFragments<T>, dlogits: &Tensor<T>) {
        let kms: Vec<usize> = frags.fragments.iter().map(|f| f.shape()[0]).collect();
        let dfeatures = self.fuse_backward(&kms, dlogits);
        self.encode_backward(&dfeatures);
    }

    /// True for parameters trained by the fusion stage (everything except
    /// the modality encoders).
    pub fn is_fusion_param(name: &str) -> bool {
        !name.starts_with("enc_")
    }

    /// Class probabilities for one sample.
    pub fn classify(&mut self, frags: &SampleFragments<T>) -> Tensor<T> {
        let logits = self.forward_sample(frags);
        ops::softmax(&logits, 1)
    }

    /// Argmax with ties broken toward the lowest class index.
    pub fn predict(&mut self, frags: &SampleFragments<T>) -> usize {
        let probs = self.classify(frags);
        argmax_row(&probs, 0)
    }
}

pub fn argmax_row<T: Scalar>(m: &Tensor<T>, row: usize) -> usize {
    let c = m.shape()[1];
    let mut best = 0;
    let mut best_v = m.at2(row, 0);
    for j in 1..c {
        let v = m.at2(row, j);
        if v > best_v {
            best_v = v;
            best = j;
        }
    }
    best
}

impl<T: Scalar> Parameterized<T> for Mmvtt<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, &mut Tensor<T>)) {
        self.encoders.visit_params(f);
        f("pos", &mut self.pos, &mut self.gpos);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit_params(&mut |n, p, g| f(&format!("block{i}.{n}"), p, g));
        }
        self.head_hidden
            .visit_params(&mut |n, p, g| f(&format!("head_hidden.{n}"), p, g));
        self.head_out
            .visit_params(&mut |n, p, g| f(&format!("head_out.{n}"), p, g));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modality::ModalityKind;

    fn tiny_frags(tokens: usize) -> SampleFragments<f64> {
        let mut rng = Rng::new(9, Stream::WeightInit);
        let frag = Tensor::from_vec(
            &[tokens, 256],
            (0..tokens * 256).map(|_| rng.uniform(0.0, 1.0)).collect(),
        );
        SampleFragments {
            kinds: vec![ModalityKind::Tactile],
            fragments: vec![frag],
        }
    }

    fn tiny_config(classes: usize) -> FusionConfig {
        FusionConfig {
            d: 8,
            heads: 4,
            blocks: 1,
            hidden: 16,
            classes,
            ..FusionConfig::default()
        }
    }

    #[test]
    fn concat_preserves_token_count_and_blocks() {
        let a = Tensor::<f64>::filled(&[3, 4], 1.0);
        let b = Tensor::<f64>::filled(&[2, 4], 2.0);
        let pos = Tensor::<f64>::zeros(&[5, 4]);
        let tm = concat_and_embed(&[a, b], &pos).unwrap();
        assert_eq!(tm.features.shape(), &[5, 4]);
        assert_eq!(tm.boundaries, vec![3, 2]);
        assert_eq!(tm.features.at2(0, 0), 1.0);
        assert_eq!(tm.features.at2(4, 3), 2.0);
    }

    #[test]
    fn zero_embedding_table_leaves_concat_unchanged() {
        let a = Tensor::<f64>::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let pos = Tensor::<f64>::zeros(&[4, 3]);
        let tm = concat_and_embed(std::slice::from_ref(&a), &pos).unwrap();
        assert_eq!(tm.features.data(), a.data());
    }

    #[test]
    fn nonzero_embedding_is_added() {
        let a = Tensor::<f64>::zeros(&[2, 2]);
        let pos = Tensor::<f64>::from_vec(&[2, 2], vec![1., 2., 3., 4.]);
        let tm = concat_and_embed(&[a], &pos).unwrap();
        assert_eq!(tm.features.data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn token_overflow_is_a_config_error() {
        let a = Tensor::<f64>::zeros(&[5, 2]);
        let pos = Tensor::<f64>::zeros(&[4, 2]);
        assert!(concat_and_embed(&[a], &pos).is_err());
    }

    #[test]
    fn probabilities_sum_to_one_and_shift_invariant_argmax() {
        let mut model = Mmvtt::<f64>::new(ModalityMode::To, 2, tiny_config(5));
        let frags = tiny_frags(2);
        let probs = model.classify(&frags);
        let s: f64 = probs.data().iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        let logits = model.forward_sample(&frags);
        let shifted = logits.map(|v| v + 7.5);
        assert_eq!(argmax_row(&logits, 0), argmax_row(&shifted, 0));
    }

    #[test]
    fn zero_head_weights_give_uniform_probabilities() {
        let mut model = Mmvtt::<f64>::new(ModalityMode::To, 2, tiny_config(4));
        model.head_out.w.fill(0.0);
        model.head_out.b.fill(0.0);
        let probs = model.classify(&tiny_frags(2));
        for &p in probs.data() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_tie_breaks_low_index() {
        let m = Tensor::<f64>::from_vec(&[1, 4], vec![0.3, 0.3, 0.2, 0.2]);
        assert_eq!(argmax_row(&m, 0), 0);
    }

    #[test]
    fn full_model_gradcheck_tiny_dims() {
        // d=8, 6 tokens, 4 heads: loss = cross entropy on a fixed label
        let mut model = Mmvtt::<f64>::new(ModalityMode::To, 6, tiny_config(3));
        let frags = tiny_frags(6);
        crate::tensor::zero_grads(&mut model);
        let logits = model.forward_sample(&frags);
        let (_, probs) = ops::cross_entropy(&logits, &[1]).unwrap();
        let dlogits = ops::cross_entropy_backward(&probs, &[1]);
        model.backward_sample(&frags, &dlogits);
        let report = crate::tensor::gradcheck::check_loss(
            &mut model,
            |m| {
                let logits = m.forward_sample(&frags);
                ops::cross_entropy(&logits, &[1]).unwrap().0
            },
            1e-5,
            1e-4,
            600,
            31,
        );
        assert!(report.pass, "max_rel_err {}", report.max_rel_err);
    }

    #[test]
    fn clone_preserves_params_and_behavior() {
        let mut model = Mmvtt::<f64>::new(ModalityMode::To, 3, tiny_config(4));
        let frags = tiny_frags(3);
        let a = model.forward_sample(&frags);
        let mut copy = model.clone();
        let b = copy.forward_sample(&frags);
        assert_eq!(a, b);
    }
}
