//! From raw frames to per-modality token features.
//!
//! A raw frame splits into the tactile disk crop and the visual panel crop
//! by calibrated geometry. Each modality image is min-max normalized,
//! fragmented into 16x16 patches, pushed through that modality's own small
//! conv encoder (shared weights across fragments, separate weights per
//! modality) and layer-normalized per fragment vector.

use std::fmt;

use thiserror::Error;

use crate::raster::Image;
use crate::rng::Rng;
use crate::synthgen::{FrameGeometry, FrameSample};
use crate::tensor::layers::{Conv2d, LayerNorm, Linear, MaxPool2, Relu};
use crate::tensor::{Module, Parameterized, Scalar, Tensor};

pub const PATCH: usize = 16;

#[derive(Debug, Error)]
pub enum ModalityError {
    #[error("frame is {got}, geometry wants {want}")]
    FrameMismatch { got: String, want: String },
    #[error("mode {0} needs an external image but the sample has none")]
    MissingExternal(&'static str),
    #[error("unknown modality mode '{0}' (expected TO, VO, RVT, SVT, EVO, EVT or EVVT)")]
    UnknownMode(String),
}

/// Which input stream a token belongs to. Determines the encoder used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModalityKind {
    External,
    Visual,
    Tactile,
    Raw,
}

impl ModalityKind {
    pub fn name(self) -> &'static str {
        match self {
            ModalityKind::External => "external",
            ModalityKind::Visual => "visual",
            ModalityKind::Tactile => "tactile",
            ModalityKind::Raw => "raw",
        }
    }
}

/// The ablation modes. The modality list and its order are fixed per mode;
/// checkpoints depend on that ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModalityMode {
    To,
    Vo,
    Rvt,
    Svt,
    Evo,
    Evt,
    Evvt,
}

impl ModalityMode {
    pub const ALL: [ModalityMode; 7] = [
        ModalityMode::To,
        ModalityMode::Vo,
        ModalityMode::Rvt,
        ModalityMode::Svt,
        ModalityMode::Evo,
        ModalityMode::Evt,
        ModalityMode::Evvt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModalityMode::To => "TO",
            ModalityMode::Vo => "VO",
            ModalityMode::Rvt => "RVT",
            ModalityMode::Svt => "SVT",
            ModalityMode::Evo => "EVO",
            ModalityMode::Evt => "EVT",
            ModalityMode::Evvt => "EVVT",
        }
    }

    pub fn parse(s: &str) -> Result<ModalityMode, ModalityError> {
        match s.to_ascii_uppercase().as_str() {
            "TO" => Ok(ModalityMode::To),
            "VO" => Ok(ModalityMode::Vo),
            "RVT" => Ok(ModalityMode::Rvt),
            "SVT" => Ok(ModalityMode::Svt),
            "EVO" => Ok(ModalityMode::Evo),
            "EVT" => Ok(ModalityMode::Evt),
            "EVVT" => Ok(ModalityMode::Evvt),
            other => Err(ModalityError::UnknownMode(other.to_string())),
        }
    }

    /// Modality list in its fixed order.
    pub fn modalities(self) -> &'static [ModalityKind] {
        match self {
            ModalityMode::To => &[ModalityKind::Tactile],
            ModalityMode::Vo => &[ModalityKind::Visual],
            ModalityMode::Rvt => &[ModalityKind::Raw],
            ModalityMode::Svt => &[ModalityKind::Tactile, ModalityKind::Visual],
            ModalityMode::Evo => &[ModalityKind::External],
            ModalityMode::Evt => &[ModalityKind::External, ModalityKind::Tactile],
            ModalityMode::Evvt => &[
                ModalityKind::External,
                ModalityKind::Visual,
                ModalityKind::Tactile,
            ],
        }
    }

    pub fn needs_external(self) -> bool {
        self.modalities().contains(&ModalityKind::External)
    }
}

impl fmt::Display for ModalityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Split a raw frame into `(tactile_crop, visual_crop)`.
///
/// The tactile crop is the disk bounding square with outside-disk pixels
/// zeroed; the visual crop is the two side panels concatenated left-right.
/// Exact inverse of composing on those regions.
pub fn segment_regions(
    raw_frame: &Image,
    geometry: &FrameGeometry,
) -> Result<(Image, Image), ModalityError> {
    if (raw_frame.w, raw_frame.h) != (geometry.frame, geometry.frame) {
        return Err(ModalityError::FrameMismatch {
            got: format!("{}x{}", raw_frame.w, raw_frame.h),
            want: format!("{}x{}", geometry.frame, geometry.frame),
        });
    }
    let crop = geometry.crop_rect();
    let mut tactile = raw_frame.crop(crop.x, crop.y, crop.w, crop.h);
    for y in 0..crop.h {
        for x in 0..crop.w {
            if !geometry.in_disk_crop(x, y) {
                tactile.set(x, y, 0);
            }
        }
    }
    let p0 = geometry.panels[0];
    let p1 = geometry.panels[1];
    let left = raw_frame.crop(p0.x, p0.y, p0.w, p0.h);
    let right = raw_frame.crop(p1.x, p1.y, p1.w, p1.h);
    let mut visual = Image::new(p0.w + p1.w, p0.h.max(p1.h), 0);
    visual.paste(&left, 0, 0);
    visual.paste(&right, p0.w, 0);
    Ok((tactile, visual))
}

/// Replication-pad to a multiple of `patch` on each axis.
pub fn pad_to_patch(image: &Image, patch: usize) -> Image {
    let wp = image.w.div_ceil(patch) * patch;
    let hp = image.h.div_ceil(patch) * patch;
    if (wp, hp) == (image.w, image.h) {
        return image.clone();
    }
    let mut out = Image::new(wp, hp, 0);
    for y in 0..hp {
        for x in 0..wp {
            out.set(x, y, image.get(x.min(image.w - 1), y.min(image.h - 1)));
        }
    }
    out
}

/// Non-overlapping row-major patches: `[K, patch*patch]` with K =
/// (H/patch)*(W/patch) after replication padding. Values are the raw
/// intensities (normalization is a separate step).
pub fn patchify<T: Scalar>(image: &Image, patch: usize) -> Tensor<T> {
    let padded = pad_to_patch(image, patch);
    let (pw, ph) = (padded.w / patch, padded.h / patch);
    let k = pw * ph;
    let mut out = Tensor::zeros(&[k, patch * patch]);
    for py in 0..ph {
        for px in 0..pw {
            let ki = py * pw + px;
            for dy in 0..patch {
                for dx in 0..patch {
                    let v = padded.get(px * patch + dx, py * patch + dy);
                    out.data_mut()[ki * patch * patch + dy * patch + dx] = T::from_f64(v as f64);
                }
            }
        }
    }
    out
}

/// Reassemble patches into the padded image; inverse of [`patchify`].
pub fn unpatchify(fragments: &Tensor<f64>, patch: usize, w: usize, h: usize) -> Image {
    let (pw, ph) = (w / patch, h / patch);
    assert_eq!(fragments.shape()[0], pw * ph);
    let mut img = Image::new(w, h, 0);
    for py in 0..ph {
        for px in 0..pw {
            let ki = py * pw + px;
            for dy in 0..patch {
                for dx in 0..patch {
                    let v = fragments.data()[ki * patch * patch + dy * patch + dx];
                    img.set(
                        px * patch + dx,
                        py * patch + dy,
                        v.round().clamp(0.0, 255.0) as u8,
                    );
                }
            }
        }
    }
    img
}

/// Min-max normalize an image to [0, 1] and patchify it.
/// A constant image keeps its absolute level (`v/255`) so that uniformly
/// bright and uniformly dark inputs stay distinguishable.
pub fn normalized_fragments<T: Scalar>(image: &Image, patch: usize) -> Tensor<T> {
    let (lo, hi) = image
        .px
        .iter()
        .fold((255u8, 0u8), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    let mut frags = patchify::<T>(image, patch);
    if hi > lo {
        let lo = T::from_f64(lo as f64);
        let inv = T::one() / (T::from_f64(hi as f64) - lo);
        for v in frags.data_mut().iter_mut() {
            *v = (*v - lo) * inv;
        }
    } else {
        frags.fill(T::from_f64(lo as f64 / 255.0));
    }
    frags
}

/// Conv encoder for one modality: two conv/relu/pool stages then a linear
/// projection to the feature width, layer-normalized per fragment.
#[derive(Clone)]
pub struct ModalityEncoder<T: Scalar> {
    conv1: Conv2d<T>,
    relu1: Relu<T>,
    pool1: MaxPool2<T>,
    conv2: Conv2d<T>,
    relu2: Relu<T>,
    pool2: MaxPool2<T>,
    fc: Linear<T>,
    norm: LayerNorm<T>,
    d: usize,
}

impl<T: Scalar> ModalityEncoder<T> {
    pub fn new(d: usize, rng: &mut Rng) -> Self {
        let fc_in = 16 * (PATCH / 4) * (PATCH / 4);
        ModalityEncoder {
            conv1: Conv2d::new(1, 8, 3, 1, 1, rng),
            relu1: Relu::new(),
            pool1: MaxPool2::new(),
            conv2: Conv2d::new(8, 16, 3, 1, 1, rng),
            relu2: Relu::new(),
            pool2: MaxPool2::new(),
            fc: Linear::new(fc_in, d, rng),
            norm: LayerNorm::new(d),
            d,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.d
    }

    /// Fragments are leaves during training: skip their gradient.
    pub fn skip_input_grad(&mut self) {
        self.conv1.needs_input_grad = false;
    }
}

impl<T: Scalar> Parameterized<T> for ModalityEncoder<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, &mut Tensor<T>)) {
        self.conv1.visit_params(&mut |n, p, g| f(&format!("conv1.{n}"), p, g));
        self.conv2.visit_params(&mut |n, p, g| f(&format!("conv2.{n}"), p, g));
        self.fc.visit_params(&mut |n, p, g| f(&format!("fc.{n}"), p, g));
        self.norm.visit_params(&mut |n, p, g| f(&format!("norm.{n}"), p, g));
    }
}

impl<T: Scalar> Module<T> for ModalityEncoder<T> {
    /// fragments [K, PATCH*PATCH] -> features [K, d]
    fn forward(&mut self, fragments: &Tensor<T>) -> Tensor<T> {
        let k = fragments.shape()[0];
        assert_eq!(fragments.shape()[1], PATCH * PATCH, "fragment size");
        let x = fragments.clone().reshape(&[k, 1, PATCH, PATCH]);
        let x = self.conv1.forward(&x);
        let x = self.relu1.forward(&x);
        let x = self.pool1.forward(&x);
        let x = self.conv2.forward(&x);
        let x = self.relu2.forward(&x);
        let x = self.pool2.forward(&x);
        let x = x.reshape(&[k, self.fc.in_features()]);
        let x = self.fc.forward(&x);
        self.norm.forward(&x)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let k = grad.shape()[0];
        let g = self.norm.backward(grad);
        let g = self.fc.backward(&g);
        let g = g.reshape(&[k, 16, PATCH / 4, PATCH / 4]);
        let g = self.pool2.backward(&g);
        let g = self.relu2.backward(&g);
        let g = self.conv2.backward(&g);
        let g = self.pool1.backward(&g);
        let g = self.relu1.backward(&g);
        let g = self.conv1.backward(&g);
        g.reshape(&[k, PATCH * PATCH])
    }
}

/// One encoder per modality of a mode, in the mode's fixed order.
#[derive(Clone)]
pub struct EncoderSet<T: Scalar> {
    pub mode: ModalityMode,
    pub d: usize,
    encoders: Vec<ModalityEncoder<T>>,
}

impl<T: Scalar> EncoderSet<T> {
    pub fn new(mode: ModalityMode, d: usize, rng: &mut Rng) -> Self {
        let encoders = mode
            .modalities()
            .iter()
            .map(|_| ModalityEncoder::new(d, rng))
            .collect();
        EncoderSet { mode, d, encoders }
    }

    pub fn encoder_mut(&mut self, index: usize) -> &mut ModalityEncoder<T> {
        &mut self.encoders[index]
    }
}

impl<T: Scalar> Parameterized<T> for EncoderSet<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, &mut Tensor<T>)) {
        let kinds = self.mode.modalities();
        for (i, enc) in self.encoders.iter_mut().enumerate() {
            let prefix = kinds[i].name();
            enc.visit_params(&mut |n, p, g| f(&format!("enc_{prefix}.{n}"), p, g));
        }
    }
}

/// Per-modality fragment inputs for one sample, in mode order.
#[derive(Debug, Clone)]
pub struct SampleFragments<T> {
    pub kinds: Vec<ModalityKind>,
    pub fragments: Vec<Tensor<T>>,
}

impl<T: Scalar> SampleFragments<T> {
    pub fn token_count(&self) -> usize {
        self.fragments.iter().map(|f| f.shape()[0]).sum()
    }
}

/// Extract and normalize the fragment matrices a mode consumes.
pub fn sample_fragments<T: Scalar>(
    sample: &FrameSample,
    mode: ModalityMode,
) -> Result<SampleFragments<T>, ModalityError> {
    let kinds = mode.modalities().to_vec();
    let mut fragments = Vec::with_capacity(kinds.len());
    for kind in &kinds {
        let image = match kind {
            ModalityKind::Tactile => &sample.tactile_crop,
            ModalityKind::Visual => &sample.visual_crop,
            ModalityKind::Raw => &sample.raw_frame,
            ModalityKind::External => sample
                .external_image
                .as_ref()
                .ok_or(ModalityError::MissingExternal(mode.name()))?,
        };
        fragments.push(normalized_fragments::<T>(image, PATCH));
    }
    Ok(SampleFragments { kinds, fragments })
}

/// Post-encoder feature matrices of one sample, one `[K_i, d]` per modality.
pub struct ModalityBundle<T> {
    pub kinds: Vec<ModalityKind>,
    pub features: Vec<Tensor<T>>,
}

impl<T: Scalar> ModalityBundle<T> {
    pub fn token_count(&self) -> usize {
        self.features.iter().map(|f| f.shape()[0]).sum()
    }

    pub fn modality_count(&self) -> usize {
        self.features.len()
    }
}

/// Run every modality of a sample through its encoder.
pub fn build_bundle<T: Scalar>(
    sample: &FrameSample,
    mode: ModalityMode,
    encoders: &mut EncoderSet<T>,
) -> Result<ModalityBundle<T>, ModalityError> {
    assert_eq!(encoders.mode, mode, "encoder set was built for another mode");
    let frags = sample_fragments::<T>(sample, mode)?;
    Ok(encode_fragments(&frags, encoders))
}

/// Encoder pass over precomputed fragments (the training-loop fast path).
pub fn encode_fragments<T: Scalar>(
    frags: &SampleFragments<T>,
    encoders: &mut EncoderSet<T>,
) -> ModalityBundle<T> {
    let features = frags
        .fragments
        .iter()
        .enumerate()
        .map(|(i, f)| encoders.encoder_mut(i).forward(f))
        .collect();
    ModalityBundle {
        kinds: frags.kinds.clone(),
        features,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use crate::synthgen::{gen_terrain_sample, TerrainSampleConfig};

    fn sample_with_external() -> (FrameGeometry, FrameSample) {
        let g = FrameGeometry::default();
        let cfg = TerrainSampleConfig {
            external: Some(crate::synthgen::ExternalCondition::Sunny),
            ..TerrainSampleConfig::default()
        };
        let s = gen_terrain_sample(&g, 3, &cfg, 99).unwrap();
        (g, s)
    }

    #[test]
    fn segment_regions_roundtrip_and_dims() {
        let (g, s) = sample_with_external();
        let (tactile, visual) = segment_regions(&s.raw_frame, &g).unwrap();
        assert_eq!((tactile.w, tactile.h), (88, 88));
        assert_eq!((visual.w, visual.h), (32, 128));
        assert_eq!(tactile, s.tactile_crop);
        assert_eq!(visual, s.visual_crop);
    }

    #[test]
    fn segment_rejects_wrong_frame() {
        let g = FrameGeometry::default();
        let img = Image::new(64, 64, 0);
        assert!(segment_regions(&img, &g).is_err());
    }

    #[test]
    fn empty_frame_gives_background_crops() {
        let g = FrameGeometry::default();
        let frame = Image::new(g.frame, g.frame, 0);
        let (tactile, visual) = segment_regions(&frame, &g).unwrap();
        assert!(tactile.px.iter().all(|&p| p == 0));
        assert!(visual.px.iter().all(|&p| p == 0));
    }

    #[test]
    fn patchify_counts() {
        assert_eq!(patchify::<f64>(&Image::new(64, 64, 7), PATCH).shape(), &[16, 256]);
        assert_eq!(patchify::<f64>(&Image::new(128, 128, 7), PATCH).shape(), &[64, 256]);
        // 88x88 pads to 96x96 -> 36 patches
        assert_eq!(patchify::<f64>(&Image::new(88, 88, 7), PATCH).shape(), &[36, 256]);
    }

    #[test]
    fn patchify_roundtrip_on_padded_image() {
        let mut img = Image::new(48, 32, 0);
        for (i, p) in img.px.iter_mut().enumerate() {
            *p = (i * 11 % 256) as u8;
        }
        let frags = patchify::<f64>(&img, PATCH);
        let back = unpatchify(&frags, PATCH, 48, 32);
        assert_eq!(img, back);
    }

    #[test]
    fn normalization_maps_to_unit_interval() {
        let (_, s) = sample_with_external();
        let frags = normalized_fragments::<f64>(&s.tactile_crop, PATCH);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in frags.data() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert!(lo.abs() < 1e-12, "lo {lo}");
        assert!((hi - 1.0).abs() < 1e-12, "hi {hi}");
    }

    #[test]
    fn encoder_output_shape_and_row_norm() {
        let mut rng = Rng::new(0, Stream::WeightInit);
        let mut enc = ModalityEncoder::<f64>::new(64, &mut rng);
        let (_, s) = sample_with_external();
        let frags = normalized_fragments::<f64>(&s.tactile_crop, PATCH);
        let feats = enc.forward(&frags);
        assert_eq!(feats.shape(), &[36, 64]);
        // fresh LayerNorm has gamma=1, beta=0: per-row mean ~ 0
        for r in 0..36 {
            let mean: f64 = (0..64).map(|c| feats.at2(r, c)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-6, "row {r} mean {mean}");
        }
    }

    #[test]
    fn identical_fragments_give_identical_rows() {
        let mut rng = Rng::new(1, Stream::WeightInit);
        let mut enc = ModalityEncoder::<f64>::new(32, &mut rng);
        let one: Vec<f64> = (0..256).map(|i| (i as f64) / 255.0).collect();
        let mut two = one.clone();
        two.extend(one.clone());
        let frags = Tensor::from_vec(&[2, 256], two);
        let feats = enc.forward(&frags);
        for c in 0..32 {
            assert_eq!(feats.at2(0, c), feats.at2(1, c));
        }
    }

    #[test]
    fn bundle_shapes_per_mode() {
        let (_, s) = sample_with_external();
        let mut rng = Rng::new(2, Stream::WeightInit);
        for (mode, want_m, want_tokens) in [
            (ModalityMode::To, 1, 36),
            (ModalityMode::Vo, 1, 16),
            (ModalityMode::Rvt, 1, 64),
            (ModalityMode::Svt, 2, 52),
            (ModalityMode::Evo, 1, 16),
            (ModalityMode::Evt, 2, 52),
            (ModalityMode::Evvt, 3, 68),
        ] {
            let mut encs = EncoderSet::<f32>::new(mode, 16, &mut rng);
            let bundle = build_bundle(&s, mode, &mut encs).unwrap();
            assert_eq!(bundle.modality_count(), want_m, "{mode}");
            assert_eq!(bundle.token_count(), want_tokens, "{mode}");
        }
    }

    #[test]
    fn missing_external_is_a_data_error() {
        let g = FrameGeometry::default();
        let s = gen_terrain_sample(&g, 0, &TerrainSampleConfig::default(), 5).unwrap();
        let mut rng = Rng::new(3, Stream::WeightInit);
        let mut encs = EncoderSet::<f32>::new(ModalityMode::Evt, 16, &mut rng);
        assert!(matches!(
            build_bundle(&s, ModalityMode::Evt, &mut encs),
            Err(ModalityError::MissingExternal(_))
        ));
    }

    #[test]
    fn to_features_equal_tactile_rows_of_svt() {
        let (_, s) = sample_with_external();
        // same weights: build SVT set, then reuse its tactile encoder for TO
        let mut rng = Rng::new(4, Stream::WeightInit);
        let mut svt = EncoderSet::<f64>::new(ModalityMode::Svt, 24, &mut rng);
        let svt_bundle = build_bundle(&s, ModalityMode::Svt, &mut svt).unwrap();
        let frags = normalized_fragments::<f64>(&s.tactile_crop, PATCH);
        let to_feats = svt.encoder_mut(0).forward(&frags);
        assert_eq!(&to_feats, &svt_bundle.features[0]);
    }

    #[test]
    fn encoder_gradients_check_out() {
        let mut rng = Rng::new(5, Stream::WeightInit);
        let mut enc = ModalityEncoder::<f64>::new(8, &mut rng);
        let mut frng = Rng::new(6, Stream::WeightInit);
        let frags = Tensor::from_vec(
            &[2, 256],
            (0..512).map(|_| frng.uniform(0.0, 1.0)).collect(),
        );
        let report = crate::tensor::gradcheck::check_module(&mut enc, &frags, 1e-5, 1e-4, 400, 77);
        assert!(report.pass, "max_rel_err {}", report.max_rel_err);
    }

    #[test]
    fn mode_parse_rejects_junk() {
        assert!(ModalityMode::parse("TVO").is_err());
        assert_eq!(ModalityMode::parse("svt").unwrap(), ModalityMode::Svt);
    }
}
