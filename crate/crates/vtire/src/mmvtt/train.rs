//! Training and evaluation loops for the fusion classifier.
//!
//! Deterministic for a given `(config, seed)`: the split, the shuffles, the
//! weight init and the gradient reduction order are all fixed. Per-sample
//! forward/backward may fan out to workers; gradients are always merged in
//! sample index order, so the worker count never changes the numbers.

use thiserror::Error;

use super::{argmax_row, FusionConfig, Mmvtt};
use crate::datasets::stratified_split;
use crate::modality::{sample_fragments, ModalityError, ModalityMode, SampleFragments};
use crate::par;
use crate::rng::{Rng, Stream};
use crate::synthgen::FrameSample;
use crate::tensor::adam::Adam;
use crate::tensor::{ops, zero_grads, Parameterized, Scalar, Tensor};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("need at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("class {0} has no samples on one side of the split")]
    EmptyClassAfterSplit(usize),
    #[error("label {0} out of range for {1} classes")]
    BadLabel(usize, usize),
    #[error(transparent)]
    Modality(#[from] ModalityError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_acc: f64,
}

pub struct TrainOutcome<T: Scalar> {
    pub model: Mmvtt<T>,
    pub history: Vec<EpochStats>,
    pub confusion: Vec<Vec<usize>>,
    pub acc_max: f64,
    pub acc_last10_mean: f64,
    pub train_ids: Vec<usize>,
    pub eval_ids: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
}

/// Train on a labeled sample set with a seeded stratified split.
pub fn train<T: Scalar>(
    samples: &[FrameSample],
    labels: &[usize],
    mode: ModalityMode,
    config: &FusionConfig,
    workers: usize,
) -> Result<TrainOutcome<T>, DataError> {
    assert_eq!(samples.len(), labels.len());
    config.validate();
    for &l in labels {
        if l >= config.classes {
            return Err(DataError::BadLabel(l, config.classes));
        }
    }
    let distinct = {
        let mut seen = vec![false; config.classes];
        labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(DataError::TooFewClasses(distinct));
    }
    let (train_ids, eval_ids) = stratified_split(labels, config.split_ratio, config.seed);
    for class in 0..config.classes {
        let has = |ids: &[usize]| ids.iter().any(|&i| labels[i] == class);
        if labels.iter().any(|&l| l == class) && (!has(&train_ids) || !has(&eval_ids)) {
            return Err(DataError::EmptyClassAfterSplit(class));
        }
    }

    // fragments are fixed per sample; compute them once
    let fragments: Vec<SampleFragments<T>> = {
        let res: Result<Vec<_>, ModalityError> = samples
            .iter()
            .map(|s| sample_fragments::<T>(s, mode))
            .collect();
        res?
    };
    let token_count = fragments[0].token_count();
    let mut model = Mmvtt::<T>::new(mode, token_count, config.clone());
    let mut opt = Adam::new(T::from_f64(config.lr));

    let mut history = Vec::with_capacity(config.epochs + 1);
    let eval_frags: Vec<&SampleFragments<T>> = eval_ids.iter().map(|&i| &fragments[i]).collect();
    let eval_labels: Vec<usize> = eval_ids.iter().map(|&i| labels[i]).collect();

    // epoch 0: state before any update
    let pre_loss = mean_loss(&mut model, &train_ids, &fragments, labels, workers);
    let pre_eval = eval_internal(&mut model, &eval_frags, &eval_labels, config.classes, workers);
    history.push(EpochStats {
        epoch: 0,
        train_loss: pre_loss,
        eval_acc: pre_eval.accuracy,
    });

    let mut confusion = pre_eval.confusion;
    for epoch in 1..=config.epochs {
        let mut order = train_ids.clone();
        Rng::new(config.seed, Stream::Shuffle)
            .derive(epoch as u64)
            .shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch) {
            zero_grads(&mut model);
            loss_sum += batch_accumulate(&mut model, batch, &fragments, labels, workers);
            opt.step(&mut model);
        }
        let train_loss = loss_sum / train_ids.len() as f64;
        let eval = eval_internal(&mut model, &eval_frags, &eval_labels, config.classes, workers);
        history.push(EpochStats {
            epoch,
            train_loss,
            eval_acc: eval.accuracy,
        });
        confusion = eval.confusion;
    }

    let accs: Vec<f64> = history[1..].iter().map(|h| h.eval_acc).collect();
    let acc_max = accs.iter().copied().fold(history[0].eval_acc, f64::max);
    let tail = accs.len().min(10);
    let acc_last10_mean = if tail == 0 {
        history[0].eval_acc
    } else {
        accs[accs.len() - tail..].iter().sum::<f64>() / tail as f64
    };
    Ok(TrainOutcome {
        model,
        history,
        confusion,
        acc_max,
        acc_last10_mean,
        train_ids,
        eval_ids,
    })
}

/// One training batch in two stages: all modality encoders run once over
/// the stacked batch; attention and head run per sample. Per-sample fusion
/// gradients are merged in sample index order and per-sample feature
/// gradients land in disjoint rows, so the sequential and fanned-out paths
/// produce bit-identical sums.
fn batch_accumulate<T: Scalar>(
    model: &mut Mmvtt<T>,
    batch: &[usize],
    fragments: &[SampleFragments<T>],
    labels: &[usize],
    workers: usize,
) -> f64 {
    let inv_b = T::from_f64(1.0 / batch.len() as f64);
    let d = model.config.d;
    let frag_refs: Vec<&SampleFragments<T>> = batch.iter().map(|&i| &fragments[i]).collect();
    let feats = model.encode_batch(&frag_refs);
    let kms = feats.tokens_per_modality.clone();
    let mut dfeatures: Vec<Tensor<T>> = feats
        .features
        .iter()
        .map(|f| Tensor::zeros(f.shape()))
        .collect();

    // per-sample fusion gradients, merged in index order
    let mut fusion_acc: Vec<Tensor<T>> = Vec::new();
    model.visit_params(&mut |n, _, g| {
        if Mmvtt::<T>::is_fusion_param(n) {
            fusion_acc.push(Tensor::zeros(g.shape()));
        }
    });
    let mut loss_sum = 0.0;
    let scatter = |dfeatures: &mut [Tensor<T>], sample: usize, dfs: &[Tensor<T>]| {
        for (m, df) in dfs.iter().enumerate() {
            let km = df.shape()[0];
            dfeatures[m].data_mut()[sample * km * d..(sample + 1) * km * d]
                .copy_from_slice(df.data());
        }
    };
    if workers <= 1 {
        for (s, &idx) in batch.iter().enumerate() {
            zero_fusion_grads(model);
            let logits = model.fuse_forward(&feats, s);
            let (loss, probs) = ops::cross_entropy(&logits, &[labels[idx]]).expect("valid label");
            loss_sum += loss.as_f64();
            let dlogits = ops::cross_entropy_backward(&probs, &[labels[idx]]).scale(inv_b);
            let dfs = model.fuse_backward(&kms, &dlogits);
            scatter(&mut dfeatures, s, &dfs);
            let mut slot = 0;
            model.visit_params(&mut |n, _, g| {
                if Mmvtt::<T>::is_fusion_param(n) {
                    fusion_acc[slot].add_assign(g);
                    slot += 1;
                }
            });
        }
    } else {
        let base = &*model;
        let results: Vec<(f64, Vec<Tensor<T>>, Vec<Tensor<T>>)> =
            par::map_indexed(batch.len(), workers, |s| {
                let idx = batch[s];
                let mut replica = base.clone();
                zero_fusion_grads(&mut replica);
                let logits = replica.fuse_forward(&feats, s);
                let (loss, probs) =
                    ops::cross_entropy(&logits, &[labels[idx]]).expect("valid label");
                let dlogits = ops::cross_entropy_backward(&probs, &[labels[idx]]).scale(inv_b);
                let dfs = replica.fuse_backward(&kms, &dlogits);
                let mut grads = Vec::new();
                replica.visit_params(&mut |n, _, g| {
                    if Mmvtt::<T>::is_fusion_param(n) {
                        grads.push(g.clone());
                    }
                });
                (loss.as_f64(), grads, dfs)
            });
        for (s, (loss, grads, dfs)) in results.iter().enumerate() {
            loss_sum += loss;
            scatter(&mut dfeatures, s, dfs);
            for (acc, g) in fusion_acc.iter_mut().zip(grads) {
                acc.add_assign(g);
            }
        }
    }
    let mut slot = 0;
    model.visit_params(&mut |n, _, g| {
        if Mmvtt::<T>::is_fusion_param(n) {
            *g = fusion_acc[slot].clone();
            slot += 1;
        }
    });
    model.encode_backward(&dfeatures);
    loss_sum
}

fn zero_fusion_grads<T: Scalar>(model: &mut Mmvtt<T>) {
    model.visit_params(&mut |n, _, g| {
        if Mmvtt::<T>::is_fusion_param(n) {
            g.fill(T::zero());
        }
    });
}

/// Forward-only pass in encoder-batched chunks.
const FORWARD_CHUNK: usize = 64;

fn mean_loss<T: Scalar>(
    model: &mut Mmvtt<T>,
    ids: &[usize],
    fragments: &[SampleFragments<T>],
    labels: &[usize],
    workers: usize,
) -> f64 {
    let mut sum = 0.0;
    for chunk in ids.chunks(FORWARD_CHUNK) {
        let refs: Vec<&SampleFragments<T>> = chunk.iter().map(|&i| &fragments[i]).collect();
        let feats = model.encode_batch(&refs);
        if workers <= 1 {
            for (s, &idx) in chunk.iter().enumerate() {
                let logits = model.fuse_forward(&feats, s);
                sum += ops::cross_entropy(&logits, &[labels[idx]])
                    .expect("valid label")
                    .0
                    .as_f64();
            }
        } else {
            let base = &*model;
            let losses = par::map_indexed(chunk.len(), workers, |s| {
                let mut replica = base.clone();
                let logits = replica.fuse_forward(&feats, s);
                ops::cross_entropy(&logits, &[labels[chunk[s]]])
                    .expect("valid label")
                    .0
                    .as_f64()
            });
            sum += losses.iter().sum::<f64>();
        }
    }
    sum / ids.len() as f64
}

/// Evaluate a model over samples: accuracy and the confusion matrix
/// (rows = true class, columns = predicted class).
pub fn evaluate<T: Scalar>(
    model: &mut Mmvtt<T>,
    samples: &[FrameSample],
    labels: &[usize],
    workers: usize,
) -> Result<EvalOutcome, DataError> {
    let classes = model.config.classes;
    for &l in labels {
        if l >= classes {
            return Err(DataError::BadLabel(l, classes));
        }
    }
    let frags: Result<Vec<_>, ModalityError> = samples
        .iter()
        .map(|s| sample_fragments::<T>(s, model.mode))
        .collect();
    let frags = frags?;
    let refs: Vec<&SampleFragments<T>> = frags.iter().collect();
    Ok(eval_internal(model, &refs, labels, classes, workers))
}

fn eval_internal<T: Scalar>(
    model: &mut Mmvtt<T>,
    frags: &[&SampleFragments<T>],
    labels: &[usize],
    classes: usize,
    workers: usize,
) -> EvalOutcome {
    let mut predictions: Vec<usize> = Vec::with_capacity(frags.len());
    for chunk in frags.chunks(FORWARD_CHUNK) {
        let feats = model.encode_batch(chunk);
        if workers <= 1 {
            for s in 0..chunk.len() {
                let logits = model.fuse_forward(&feats, s);
                predictions.push(argmax_row(&logits, 0));
            }
        } else {
            let base = &*model;
            predictions.extend(par::map_indexed(chunk.len(), workers, |s| {
                let mut replica = base.clone();
                argmax_row(&replica.fuse_forward(&feats, s), 0)
            }));
        }
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut hits = 0;
    for (&pred, &truth) in predictions.iter().zip(labels) {
        confusion[truth][pred] += 1;
        if pred == truth {
            hits += 1;
        }
    }
    EvalOutcome {
        accuracy: hits as f64 / labels.len().max(1) as f64,
        confusion,
    }
}

/// Predict one sample's class with an existing model.
pub fn predict_sample<T: Scalar>(
    model: &mut Mmvtt<T>,
    sample: &FrameSample,
) -> Result<usize, DataError> {
    let frags = sample_fragments::<T>(sample, model.mode)?;
    Ok(argmax_row(&model.classify(&frags), 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Image;
    use crate::synthgen::DamageLabel;

    /// Constant-intensity tactile frames: class 0 dark, class 1 bright.
    fn brightness_dataset(n_per_class: usize) -> (Vec<FrameSample>, Vec<usize>) {
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for class in 0..2usize {
            for i in 0..n_per_class {
                let level = if class == 0 { 30 } else { 200 };
                let img = Image::new(88, 88, level);
                samples.push(FrameSample {
                    raw_frame: Image::new(128, 128, 0),
                    tactile_crop: img,
                    visual_crop: Image::new(32, 128, 0),
                    external_image: None,
                    terrain_label: class,
                    damage_label: DamageLabel::Normal,
                    contact_mask: None,
                    seed: (class * 1000 + i) as u64,
                });
                labels.push(class);
            }
        }
        (samples, labels)
    }

    fn sanity_config() -> FusionConfig {
        FusionConfig {
            d: 8,
            heads: 4,
            blocks: 1,
            hidden: 16,
            classes: 2,
            lr: 1e-2,
            batch: 8,
            epochs: 10,
            seed: 3,
            split_ratio: 0.7,
        }
    }

    #[test]
    fn linearly_separable_brightness_reaches_full_accuracy() {
        let (samples, labels) = brightness_dataset(20);
        let out = train::<f64>(&samples, &labels, ModalityMode::To, &sanity_config(), 1).unwrap();
        assert_eq!(out.history.len(), 11);
        // loss before learning is ~ ln 2
        let ln2 = (2.0f64).ln();
        assert!(
            (out.history[0].train_loss - ln2).abs() < 0.1,
            "epoch-0 loss {}",
            out.history[0].train_loss
        );
        assert_eq!(out.acc_max, 1.0, "history {:?}", out.history);
        // perfect predictor: identity-structured confusion matrix
        for (r, row) in out.confusion.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if r == c {
                    assert!(v > 0);
                } else {
                    assert_eq!(v, 0);
                }
            }
        }
    }

    #[test]
    fn fixed_seed_reproduces_bit_identical_history() {
        let (samples, labels) = brightness_dataset(8);
        let mut cfg = sanity_config();
        cfg.epochs = 3;
        let a = train::<f64>(&samples, &labels, ModalityMode::To, &cfg, 1).unwrap();
        let b = train::<f64>(&samples, &labels, ModalityMode::To, &cfg, 1).unwrap();
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn worker_count_does_not_change_history() {
        let (samples, labels) = brightness_dataset(6);
        let mut cfg = sanity_config();
        cfg.epochs = 2;
        let a = train::<f64>(&samples, &labels, ModalityMode::To, &cfg, 1).unwrap();
        let b = train::<f64>(&samples, &labels, ModalityMode::To, &cfg, 3).unwrap();
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn single_class_is_rejected() {
        let (samples, labels) = brightness_dataset(5);
        let only_zero: Vec<usize> = labels.iter().map(|_| 0).collect();
        assert!(matches!(
            train::<f64>(&samples, &only_zero, ModalityMode::To, &sanity_config(), 1),
            Err(DataError::TooFewClasses(1))
        ));
    }

    #[test]
    fn accuracy_equals_mean_recall_for_balanced_classes() {
        let (samples, labels) = brightness_dataset(10);
        let out = train::<f64>(&samples, &labels, ModalityMode::To, &sanity_config(), 1).unwrap();
        let recall = |c: usize| {
            let row = &out.confusion[c];
            row[c] as f64 / row.iter().sum::<usize>() as f64
        };
        let mean_recall = (recall(0) + recall(1)) / 2.0;
        let acc = out.history.last().unwrap().eval_acc;
        assert!((acc - mean_recall).abs() < 1e-12);
    }
}
