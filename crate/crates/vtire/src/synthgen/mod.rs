//! Procedural synthetic visuotactile data.
//!
//! Stands in for the physical tire: terrain heightfields press into a
//! simulated sensing skin ([`render_tactile`]), side panels show the ground
//! next to the contact patch ([`render_visual`]), and a wide external camera
//! view comes from the same terrain ([`gen_external`]). Object imprints,
//! ground cracks and tire damage states are generated with exact ground-truth
//! masks. Every output is a pure function of `(config, seed)`.

mod damage;
mod objects;
mod render;
mod terrain;

pub use damage::{gen_damage, DamageConfig, DamageState};
pub use objects::{
    gen_crack, gen_object_imprint, mask_components_and_holes, needle_polyline, render_crack_like,
    CrackSpec, ObjectKind,
};
pub use render::{
    compose_raw_frame, gen_external, render_tactile, render_tactile_depth, render_visual,
    ExternalCondition,
};
pub use terrain::{gen_terrain, terrain_class_names, TerrainCatalog, TerrainView, TERRAIN_CLASSES};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Field, Image};
use crate::rng::{Rng, Stream};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("terrain class {0} out of range (0..{1})")]
    ClassOutOfRange(usize, usize),
    #[error("geometry mismatch: {0}")]
    Geometry(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    pub fn overlaps(&self, o: &Rect) -> bool {
        self.x < o.x + o.w && o.x < self.x + self.w && self.y < o.y + o.h && o.y < self.y + self.h
    }
}

/// Layout of one raw frame: central tactile disk, two visual side panels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameGeometry {
    /// Frame edge length in pixels (square).
    pub frame: usize,
    pub disk_cx: f64,
    pub disk_cy: f64,
    pub disk_r: f64,
    pub panels: [Rect; 2],
    /// Physical scale of the tactile/visual frame.
    pub mm_per_px: f64,
    /// External camera image edge length in pixels (square).
    pub external_size: usize,
    /// External camera scale; wider than the in-tire view.
    pub external_mm_per_px: f64,
    /// Rest height of the sensing skin above the terrain datum (mm):
    /// terrain points above `href_mm - load_offset` make contact.
    pub href_mm: f64,
    /// Intensity model of the tactile rendering: base + slope * penetration.
    pub base_intensity: f64,
    pub intensity_per_mm: f64,
    /// Gaussian sensor noise sigma in intensity levels.
    pub sensor_noise: f64,
    /// Depth image quantization (mm per 8-bit level).
    pub depth_mm_per_level: f64,
}

impl Default for FrameGeometry {
    fn default() -> Self {
        FrameGeometry {
            frame: 128,
            disk_cx: 64.0,
            disk_cy: 64.0,
            disk_r: 44.0,
            panels: [
                Rect { x: 2, y: 0, w: 16, h: 128 },
                Rect { x: 110, y: 0, w: 16, h: 128 },
            ],
            mm_per_px: 0.1,
            external_size: 64,
            external_mm_per_px: 0.4,
            href_mm: 2.0,
            base_intensity: 40.0,
            intensity_per_mm: 140.0,
            sensor_noise: 2.0,
            depth_mm_per_level: 0.01,
        }
    }
}

impl FrameGeometry {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.mm_per_px <= 0.0 || self.external_mm_per_px <= 0.0 {
            return Err(SynthError::InvalidGeometry("mm_per_px must be > 0".into()));
        }
        let crop = self.crop_rect();
        if crop.x + crop.w > self.frame || crop.y + crop.h > self.frame {
            return Err(SynthError::InvalidGeometry(
                "tactile disk exceeds the frame".into(),
            ));
        }
        for p in &self.panels {
            if p.x + p.w > self.frame || p.y + p.h > self.frame {
                return Err(SynthError::InvalidGeometry("panel exceeds the frame".into()));
            }
            if p.overlaps(&crop) {
                return Err(SynthError::InvalidGeometry(
                    "panel overlaps the tactile region".into(),
                ));
            }
        }
        if self.panels[0].overlaps(&self.panels[1]) {
            return Err(SynthError::InvalidGeometry("panels overlap".into()));
        }
        Ok(())
    }

    /// Bounding square of the tactile disk.
    pub fn crop_rect(&self) -> Rect {
        let x0 = (self.disk_cx - self.disk_r).floor() as usize;
        let y0 = (self.disk_cy - self.disk_r).floor() as usize;
        let size = (2.0 * self.disk_r).ceil() as usize;
        Rect { x: x0, y: y0, w: size, h: size }
    }

    /// Disk membership test for a pixel of the full frame (center sampling).
    pub fn in_disk_frame(&self, x: usize, y: usize) -> bool {
        let dx = x as f64 + 0.5 - self.disk_cx;
        let dy = y as f64 + 0.5 - self.disk_cy;
        dx * dx + dy * dy <= self.disk_r * self.disk_r
    }

    /// Disk membership for a pixel of the tactile crop.
    pub fn in_disk_crop(&self, x: usize, y: usize) -> bool {
        let crop = self.crop_rect();
        self.in_disk_frame(crop.x + x, crop.y + y)
    }

    /// Binary mask of the disk at crop resolution (255 inside).
    pub fn disk_mask(&self) -> Image {
        let crop = self.crop_rect();
        let mut m = Image::new(crop.w, crop.h, 0);
        for y in 0..crop.h {
            for x in 0..crop.w {
                if self.in_disk_crop(x, y) {
                    m.set(x, y, 255);
                }
            }
        }
        m
    }
}

/// Tire damage states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DamageLabel {
    Normal,
    Crack,
    Wear,
    Puncture,
}

impl DamageLabel {
    pub const ALL: [DamageLabel; 4] = [
        DamageLabel::Normal,
        DamageLabel::Crack,
        DamageLabel::Wear,
        DamageLabel::Puncture,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DamageLabel::Normal => "normal",
            DamageLabel::Crack => "crack",
            DamageLabel::Wear => "wear",
            DamageLabel::Puncture => "puncture",
        }
    }
}

/// One synthetic observation.
#[derive(Debug, Clone)]
pub struct FrameSample {
    pub raw_frame: Image,
    pub tactile_crop: Image,
    pub visual_crop: Image,
    pub external_image: Option<Image>,
    pub terrain_label: usize,
    pub damage_label: DamageLabel,
    pub contact_mask: Option<Image>,
    pub seed: u64,
}

/// Environmental corruption applied to one or more modalities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorruptionSpec {
    None,
    SaltPepper { density: f64 },
    Smoke { blur_sigma: f64, haze_alpha: f64 },
    Dark { gain: f64 },
}

impl CorruptionSpec {
    pub fn validate(&self) -> bool {
        match *self {
            CorruptionSpec::None => true,
            CorruptionSpec::SaltPepper { density } => (0.0..=1.0).contains(&density),
            CorruptionSpec::Smoke { blur_sigma, haze_alpha } => {
                blur_sigma >= 0.0 && (0.0..=1.0).contains(&haze_alpha)
            }
            CorruptionSpec::Dark { gain } => gain > 0.0 && gain <= 1.0,
        }
    }
}

/// Apply a corruption; `CorruptionSpec::None` is the identity.
pub fn apply_corruption(image: &Image, spec: CorruptionSpec, seed: u64) -> Image {
    assert!(spec.validate(), "invalid corruption spec {spec:?}");
    match spec {
        CorruptionSpec::None => image.clone(),
        CorruptionSpec::SaltPepper { density } => {
            let mut rng = Rng::new(seed, Stream::Corruption);
            let mut out = image.clone();
            for p in out.px.iter_mut() {
                if rng.next_f64() < density {
                    *p = if rng.next_f64() < 0.5 { 0 } else { 255 };
                }
            }
            out
        }
        CorruptionSpec::Smoke { blur_sigma, haze_alpha } => {
            let blurred = image.to_field().gaussian_blur(blur_sigma as f32);
            let a = haze_alpha as f32;
            let mut out = Image::new(image.w, image.h, 0);
            for (i, &v) in blurred.v.iter().enumerate() {
                let mixed = v * (1.0 - a) + 200.0 * a;
                out.px[i] = mixed.round().clamp(0.0, 255.0) as u8;
            }
            out
        }
        CorruptionSpec::Dark { gain } => {
            let mut out = image.clone();
            for p in out.px.iter_mut() {
                *p = ((*p as f64) * gain).round().clamp(0.0, 255.0) as u8;
            }
            out
        }
    }
}

/// How one terrain frame sample is generated.
#[derive(Debug, Clone)]
pub struct TerrainSampleConfig {
    pub load_offset_range: (f64, f64),
    /// Corruption applied to the visual panels (mud on the transparent ring).
    pub visual_corruption: CorruptionSpec,
    /// External camera condition; `None` skips the external image.
    pub external: Option<ExternalCondition>,
}

impl Default for TerrainSampleConfig {
    fn default() -> Self {
        TerrainSampleConfig {
            load_offset_range: (0.5, 1.2),
            visual_corruption: CorruptionSpec::None,
            external: None,
        }
    }
}

/// Generate one complete terrain observation: tactile imprint, visual
/// panels (optionally corrupted), raw frame, optional external view.
pub fn gen_terrain_sample(
    geometry: &FrameGeometry,
    class_id: usize,
    config: &TerrainSampleConfig,
    seed: u64,
) -> Result<FrameSample, SynthError> {
    let crop = geometry.crop_rect();
    // tactile patch, panel strip and external view are different spots of
    // the same terrain: independent draws of one class
    let (heights, _) = gen_terrain(
        class_id,
        TerrainView { w: crop.w, h: crop.h, mm_per_px: geometry.mm_per_px },
        seed,
    )?;
    let (_, albedo_frame) = gen_terrain(
        class_id,
        TerrainView { w: geometry.frame, h: geometry.frame, mm_per_px: geometry.mm_per_px },
        crate::rng::mix64(seed ^ 0x0F1),
    )?;
    let mut rng = Rng::new(seed, Stream::LoadOffset);
    let load_offset = rng.uniform(config.load_offset_range.0, config.load_offset_range.1);
    let tactile = render_tactile(&heights, geometry, load_offset, seed);
    let mut panels = Vec::with_capacity(2);
    for (i, rect) in geometry.panels.iter().enumerate() {
        let p = render_visual(&albedo_frame, geometry, *rect, crate::rng::mix64(seed ^ (i as u64 + 1)));
        panels.push(apply_corruption(
            &p,
            config.visual_corruption,
            crate::rng::mix64(seed ^ (0xC0 + i as u64)),
        ));
    }
    let raw_frame = compose_raw_frame(&tactile, [&panels[0], &panels[1]], geometry)?;
    let external_image = match config.external {
        None => None,
        Some(cond) => {
            let (_, albedo_ext) = gen_terrain(
                class_id,
                TerrainView {
                    w: geometry.external_size,
                    h: geometry.external_size,
                    mm_per_px: geometry.external_mm_per_px,
                },
                crate::rng::mix64(seed ^ 0x0E2),
            )?;
            Some(gen_external(&albedo_ext, cond, crate::rng::mix64(seed ^ 0x0E3)))
        }
    };
    let visual_crop = {
        let mut v = Image::new(panels[0].w + panels[1].w, panels[0].h, 0);
        v.paste(&panels[0], 0, 0);
        v.paste(&panels[1], panels[0].w, 0);
        v
    };
    Ok(FrameSample {
        raw_frame,
        tactile_crop: tactile,
        visual_crop,
        external_image,
        terrain_label: class_id,
        damage_label: DamageLabel::Normal,
        contact_mask: None,
        seed,
    })
}

/// Quantize a depth field (mm) to an 8-bit image per the geometry's scale.
pub fn depth_to_image(depth: &Field, geometry: &FrameGeometry) -> Image {
    let scale = 1.0 / geometry.depth_mm_per_level as f32;
    Image {
        w: depth.w,
        h: depth.h,
        px: depth
            .v
            .iter()
            .map(|&d| (d * scale).round().clamp(0.0, 255.0) as u8)
            .collect(),
    }
}
