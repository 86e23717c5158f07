//! FCN-style per-pixel segmentation of contact objects and ground cracks.
//!
//! Three conv/pool encoder stages, a 1x1 class conv, fixed bilinear
//! upsampling back to the input size, and a skip connection from stage 2.
//! Crack mode masks everything outside the tactile disk out of the loss and
//! the metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Image;
use crate::rng::{Rng, Stream};
use crate::synthgen::FrameGeometry;
use crate::tensor::layers::{BilinearUpsample, Conv2d, MaxPool2, Relu};
use crate::tensor::{ops, zero_grads, Module, Parameterized, Scalar, Tensor};

#[derive(Debug, Error)]
pub enum SegError {
    #[error("image {0}x{1} and mask {2}x{3} are misaligned")]
    Misaligned(usize, usize, usize, usize),
    #[error("input extent {0} is not divisible by 8 after pooling")]
    BadExtent(usize),
    #[error("dataset is empty")]
    Empty,
}

/// Binary segmentation network; channel 0 = background, channel 1 = contact.
#[derive(Clone)]
pub struct SegModel<T: Scalar> {
    conv1: Conv2d<T>,
    relu1: Relu<T>,
    pool1: MaxPool2<T>,
    conv2: Conv2d<T>,
    relu2: Relu<T>,
    pool2: MaxPool2<T>,
    conv3: Conv2d<T>,
    relu3: Relu<T>,
    pool3: MaxPool2<T>,
    classify: Conv2d<T>,
    skip: Conv2d<T>,
    up2: BilinearUpsample<T>,
    up4: BilinearUpsample<T>,
}

impl<T: Scalar> SegModel<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = Rng::new(seed, Stream::WeightInit);
        let mut conv1 = Conv2d::new(1, 8, 3, 1, 1, &mut rng);
        conv1.needs_input_grad = false;
        SegModel {
            conv1,
            relu1: Relu::new(),
            pool1: MaxPool2::new(),
            conv2: Conv2d::new(8, 16, 3, 1, 1, &mut rng),
            relu2: Relu::new(),
            pool2: MaxPool2::new(),
            conv3: Conv2d::new(16, 32, 3, 1, 1, &mut rng),
            relu3: Relu::new(),
            pool3: MaxPool2::new(),
            classify: Conv2d::new(32, 2, 1, 1, 0, &mut rng),
            skip: Conv2d::new(16, 2, 1, 1, 0, &mut rng),
            up2: BilinearUpsample::new(2),
            up4: BilinearUpsample::new(4),
        }
    }

    /// Logits [1, 2, H, W] for an input [1, 1, H, W]; H and W must divide by 8.
    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let (h, w) = (x.shape()[2], x.shape()[3]);
        assert!(h % 8 == 0 && w % 8 == 0, "extent must divide by 8");
        let s1 = self.pool1.forward(&self.relu1.forward(&self.conv1.forward(x)));
        let s2 = self.pool2.forward(&self.relu2.forward(&self.conv2.forward(&s1)));
        let s3 = self.pool3.forward(&self.relu3.forward(&self.conv3.forward(&s2)));
        let deep = self.classify.forward(&s3);
        let deep_up = self.up2.forward(&deep);
        let lateral = self.skip.forward(&s2);
        let merged = deep_up.add(&lateral);
        self.up4.forward(&merged)
    }

    /// Backward from dlogits [1, 2, H, W].
    pub fn backward(&mut self, dlogits: &Tensor<T>) {
        let dmerged = self.up4.backward(dlogits);
        let dlateral = self.skip.backward(&dmerged);
        let ddeep = self.classify.backward(&self.up2.backward(&dmerged));
        let g = self.pool3.backward(&ddeep);
        let g = self.relu3.backward(&g);
        let mut g = self.conv3.backward(&g);
        g.add_assign(&dlateral);
        let g = self.pool2.backward(&g);
        let g = self.relu2.backward(&g);
        let g = self.conv2.backward(&g);
        let g = self.pool1.backward(&g);
        let g = self.relu1.backward(&g);
        let _ = self.conv1.backward(&g);
    }

    /// Per-pixel probabilities [2, H, W].
    pub fn probabilities(&mut self, image: &Image) -> Tensor<T> {
        let x = image_to_tensor::<T>(image);
        let logits = self.forward(&x);
        let (h, w) = (logits.shape()[2], logits.shape()[3]);
        let probs = ops::softmax(&logits, 1);
        probs.reshape(&[2, h, w])
    }

    /// Binary contact mask (255 where the contact probability wins).
    pub fn predict_mask(&mut self, image: &Image) -> Image {
        let probs = self.probabilities(image);
        let (h, w) = (probs.shape()[1], probs.shape()[2]);
        let mut mask = Image::new(image.w, image.h, 0);
        for y in 0..image.h.min(h) {
            for x in 0..image.w.min(w) {
                let bg = probs.data()[y * w + x];
                let fg = probs.data()[h * w + y * w + x];
                if fg > bg {
                    mask.set(x, y, 255);
                }
            }
        }
        mask
    }
}

impl<T: Scalar> Parameterized<T> for SegModel<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, &mut Tensor<T>)) {
        self.conv1.visit_params(&mut |n, p, g| f(&format!("conv1.{n}"), p, g));
        self.conv2.visit_params(&mut |n, p, g| f(&format!("conv2.{n}"), p, g));
        self.conv3.visit_params(&mut |n, p, g| f(&format!("conv3.{n}"), p, g));
        self.classify.visit_params(&mut |n, p, g| f(&format!("classify.{n}"), p, g));
        self.skip.visit_params(&mut |n, p, g| f(&format!("skip.{n}"), p, g));
    }
}

/// Pad an image to a multiple of 8 (replication) and scale to [0, 1].
pub fn image_to_tensor<T: Scalar>(image: &Image) -> Tensor<T> {
    let padded = crate::modality::pad_to_patch(image, 8);
    let scale = T::from_f64(1.0 / 255.0);
    let data = padded.px.iter().map(|&p| T::from_f64(p as f64) * scale).collect();
    Tensor::from_vec(&[1, 1, padded.h, padded.w], data)
}

/// Segmentation task flavor; crack mode restricts loss and metrics to the
/// tactile disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegTask {
    Object,
    Crack,
}

impl SegTask {
    pub fn name(self) -> &'static str {
        match self {
            SegTask::Object => "object",
            SegTask::Crack => "crack",
        }
    }

    pub fn parse(s: &str) -> Option<SegTask> {
        match s.to_ascii_lowercase().as_str() {
            "object" => Some(SegTask::Object),
            "crack" => Some(SegTask::Crack),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegConfig {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub split_ratio: f64,
}

impl Default for SegConfig {
    fn default() -> Self {
        SegConfig {
            lr: 1e-3,
            epochs: 60,
            seed: 0,
            split_ratio: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegEpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub pixel_acc: f64,
    pub iou: f64,
}

pub struct SegOutcome<T: Scalar> {
    pub model: SegModel<T>,
    pub history: Vec<SegEpochStats>,
    pub train_ids: Vec<usize>,
    pub eval_ids: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub pixel_acc: f64,
    pub iou: f64,
}

/// Pixel accuracy and IoU over the valid region.
/// IoU of two empty masks is 1.0 (empty-vs-empty is a correct prediction).
pub fn seg_metrics(pred: &Image, truth: &Image, valid: Option<&Image>) -> SegMetrics {
    assert_eq!((pred.w, pred.h), (truth.w, truth.h), "mask shapes differ");
    let mut hits = 0usize;
    let mut total = 0usize;
    let mut inter = 0usize;
    let mut union = 0usize;
    for i in 0..pred.px.len() {
        if let Some(v) = valid {
            if v.px[i] < 128 {
                continue;
            }
        }
        let p = pred.px[i] > 127;
        let t = truth.px[i] > 127;
        total += 1;
        if p == t {
            hits += 1;
        }
        if p && t {
            inter += 1;
        }
        if p || t {
            union += 1;
        }
    }
    SegMetrics {
        pixel_acc: if total == 0 { 1.0 } else { hits as f64 / total as f64 },
        iou: if union == 0 { 1.0 } else { inter as f64 / union as f64 },
    }
}

/// Per-pixel cross-entropy over the valid region.
/// Returns (loss, dlogits) ready for the backward pass.
fn masked_pixel_loss<T: Scalar>(
    logits: &Tensor<T>,
    truth: &Image,
    valid: Option<&Image>,
) -> (f64, Tensor<T>) {
    let (h, w) = (logits.shape()[2], logits.shape()[3]);
    let plane = h * w;
    let mut dlogits = Tensor::zeros(logits.shape());
    let mut loss = 0.0f64;
    let mut count = 0usize;
    for y in 0..truth.h {
        for x in 0..truth.w {
            if let Some(v) = valid {
                if v.get(x, y) < 128 {
                    continue;
                }
            }
            count += 1;
        }
    }
    if count == 0 {
        return (0.0, dlogits);
    }
    let inv = 1.0 / count as f64;
    for y in 0..truth.h {
        for x in 0..truth.w {
            if let Some(v) = valid {
                if v.get(x, y) < 128 {
                    continue;
                }
            }
            let idx = y * w + x;
            let (l0, l1) = (
                logits.data()[idx].as_f64(),
                logits.data()[plane + idx].as_f64(),
            );
            let m = l0.max(l1);
            let z = (l0 - m).exp() + (l1 - m).exp();
            let label = usize::from(truth.get(x, y) > 127);
            let p = [(l0 - m).exp() / z, (l1 - m).exp() / z];
            loss -= p[label].max(1e-300).ln() * inv;
            dlogits.data_mut()[idx] =
                T::from_f64((p[0] - if label == 0 { 1.0 } else { 0.0 }) * inv);
            dlogits.data_mut()[plane + idx] =
                T::from_f64((p[1] - if label == 1 { 1.0 } else { 0.0 }) * inv);
        }
    }
    (loss, dlogits)
}

/// Train the segmenter. `images` and `masks` must align; crack mode excludes
/// pixels outside the tactile disk from loss and metrics.
pub fn train_seg<T: Scalar>(
    images: &[Image],
    masks: &[Image],
    config: &SegConfig,
    task: SegTask,
    geometry: &FrameGeometry,
) -> Result<SegOutcome<T>, SegError> {
    if images.len() < 2 {
        return Err(SegError::Empty);
    }
    for (i, m) in images.iter().zip(masks) {
        if (i.w, i.h) != (m.w, m.h) {
            return Err(SegError::Misaligned(i.w, i.h, m.w, m.h));
        }
    }
    let valid = match task {
        SegTask::Object => None,
        SegTask::Crack => Some(geometry.disk_mask()),
    };
    let (train_ids, eval_ids) = {
        let mut ids: Vec<usize> = (0..images.len()).collect();
        Rng::new(config.seed, Stream::Split).shuffle(&mut ids);
        let n_train = ((images.len() as f64) * config.split_ratio).floor() as usize;
        let (a, b) = ids.split_at(n_train.clamp(1, images.len() - 1));
        (a.to_vec(), b.to_vec())
    };

    let mut model = SegModel::<T>::new(config.seed);
    let mut opt = crate::tensor::adam::Adam::new(T::from_f64(config.lr));
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut order = train_ids.clone();
        Rng::new(config.seed, Stream::Shuffle).derive(epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        for &idx in &order {
            zero_grads(&mut model);
            let x = image_to_tensor::<T>(&images[idx]);
            let logits = model.forward(&x);
            let (loss, dlogits) = masked_pixel_loss(&logits, &masks[idx], valid.as_ref());
            loss_sum += loss;
            model.backward(&dlogits);
            opt.step(&mut model);
        }
        let mut acc_sum = 0.0;
        let mut iou_sum = 0.0;
        for &idx in &eval_ids {
            let pred = model.predict_mask(&images[idx]);
            let m = seg_metrics(&pred, &masks[idx], valid.as_ref());
            acc_sum += m.pixel_acc;
            iou_sum += m.iou;
        }
        history.push(SegEpochStats {
            epoch,
            loss: loss_sum / order.len() as f64,
            pixel_acc: acc_sum / eval_ids.len().max(1) as f64,
            iou: iou_sum / eval_ids.len().max(1) as f64,
        });
    }
    Ok(SegOutcome {
        model,
        history,
        train_ids,
        eval_ids,
    })
}

/// One frame's search verdict.
#[derive(Debug, Clone)]
pub struct Detection {
    pub fired: bool,
    pub contact_px: usize,
    pub mask: Image,
}

/// A detection fires when the predicted contact area reaches `threshold_px`.
pub fn search_objects<T: Scalar>(
    frames: &[Image],
    model: &mut SegModel<T>,
    threshold_px: usize,
) -> Vec<Detection> {
    frames
        .iter()
        .map(|f| {
            let mask = model.predict_mask(f);
            let contact_px = mask.px.iter().filter(|&&p| p > 127).count();
            Detection {
                fired: contact_px >= threshold_px,
                contact_px,
                mask,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    /// (width_mm, detected_count, trials)
    pub per_width: Vec<(f64, usize, usize)>,
    pub smallest_detected_mm: Option<f64>,
}

/// Needle-resolution probe: render needles of descending widths and report
/// the smallest width the crack model still finds. Scanning stops at the
/// first undetected width, which makes the result monotone by construction.
pub fn probe_resolution<T: Scalar>(
    model: &mut SegModel<T>,
    widths_mm: &[f64],
    geometry: &FrameGeometry,
    trials: usize,
    min_hits: usize,
    iou_floor: f64,
) -> ProbeReport {
    assert!(
        widths_mm.windows(2).all(|w| w[0] > w[1]),
        "widths must be strictly descending"
    );
    let disk = geometry.disk_mask();
    let mut per_width = Vec::new();
    let mut smallest = None;
    for &width in widths_mm {
        let mut hits = 0;
        for t in 0..trials {
            let seed = 7_000 + t as u64;
            let pts = crate::synthgen::needle_polyline(geometry, seed);
            let spec = crate::synthgen::CrackSpec {
                width_mm: width,
                wobble: 0.0,
                ..crate::synthgen::CrackSpec::new(geometry.mm_per_px)
            };
            let (img, truth) =
                crate::synthgen::render_crack_like(&pts, &spec, geometry, seed).expect("render");
            let pred = model.predict_mask(&img);
            let m = seg_metrics(&pred, &truth, Some(&disk));
            if m.iou >= iou_floor {
                hits += 1;
            }
        }
        per_width.push((width, hits, trials));
        if hits >= min_hits {
            smallest = Some(width);
        } else {
            break;
        }
    }
    ProbeReport {
        per_width,
        smallest_detected_mm: smallest,
    }
}
