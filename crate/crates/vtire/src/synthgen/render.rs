//! Rendering of tactile imprints, visual panels and external views.

use serde::{Deserialize, Serialize};

use super::{apply_corruption, CorruptionSpec, FrameGeometry, Rect, SynthError};
use crate::raster::{Field, Image};
use crate::rng::{Rng, Stream};

/// Membrane indentation model: terrain points above `href - load_offset`
/// press into the sensing skin; pixel intensity rises with penetration.
/// Output is sized like the heightfield (the tactile crop) and zero outside
/// the disk.
pub fn render_tactile(
    heightfield: &Field,
    geometry: &FrameGeometry,
    load_offset_mm: f64,
    seed: u64,
) -> Image {
    render_tactile_depth(heightfield, geometry, load_offset_mm, seed).0
}

/// As [`render_tactile`], also returning the penetration field in mm
/// (the depth-camera view of the skin deformation).
pub fn render_tactile_depth(
    heightfield: &Field,
    geometry: &FrameGeometry,
    load_offset_mm: f64,
    seed: u64,
) -> (Image, Field) {
    assert!(load_offset_mm >= 0.0, "load_offset must be >= 0");
    let crop = geometry.crop_rect();
    assert_eq!(
        (heightfield.w, heightfield.h),
        (crop.w, crop.h),
        "heightfield must match the tactile crop"
    );
    let mut rng = Rng::new(seed, Stream::TactileNoise);
    let contact_level = (geometry.href_mm - load_offset_mm) as f32;
    let mut img = Image::new(crop.w, crop.h, 0);
    let mut depth = Field::new(crop.w, crop.h, 0.0);
    for y in 0..crop.h {
        for x in 0..crop.w {
            if !geometry.in_disk_crop(x, y) {
                continue;
            }
            let pen = (heightfield.get(x, y) - contact_level).max(0.0);
            depth.set(x, y, pen);
            let noise = geometry.sensor_noise * rng.gaussian();
            let v = geometry.base_intensity + geometry.intensity_per_mm * pen as f64 + noise;
            img.set(x, y, v.round().clamp(0.0, 255.0) as u8);
        }
    }
    (img, depth)
}

/// Sample the terrain albedo under one visual panel: fixed blur (sigma 1 px),
/// lens vignette toward the frame border, mild sensor noise.
pub fn render_visual(albedo: &Image, geometry: &FrameGeometry, panel: Rect, seed: u64) -> Image {
    assert_eq!(
        (albedo.w, albedo.h),
        (geometry.frame, geometry.frame),
        "albedo must be frame-sized"
    );
    let blurred = albedo.to_field().gaussian_blur(1.0);
    let mut rng = Rng::new(seed, Stream::VisualRender);
    let mut out = Image::new(panel.w, panel.h, 0);
    let (cx, cy) = (geometry.frame as f64 / 2.0, geometry.frame as f64 / 2.0);
    let r_max = (cx * cx + cy * cy).sqrt();
    for y in 0..panel.h {
        for x in 0..panel.w {
            let (fx, fy) = (panel.x + x, panel.y + y);
            let r = (((fx as f64 + 0.5) - cx).powi(2) + ((fy as f64 + 0.5) - cy).powi(2)).sqrt();
            let vignette = 1.0 - 0.25 * (r / r_max).powi(2);
            let v = blurred.get(fx, fy) as f64 * vignette
                + 0.75 * geometry.sensor_noise * rng.gaussian();
            out.set(x, y, v.round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Scene conditions for the external camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExternalCondition {
    Sunny,
    Smoke,
    Dark,
}

impl ExternalCondition {
    pub const ALL: [ExternalCondition; 3] = [
        ExternalCondition::Sunny,
        ExternalCondition::Smoke,
        ExternalCondition::Dark,
    ];

    pub fn corruption(self) -> CorruptionSpec {
        match self {
            ExternalCondition::Sunny => CorruptionSpec::None,
            ExternalCondition::Smoke => CorruptionSpec::Smoke { blur_sigma: 3.0, haze_alpha: 0.6 },
            ExternalCondition::Dark => CorruptionSpec::Dark { gain: 0.15 },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExternalCondition::Sunny => "sunny",
            ExternalCondition::Smoke => "smoke",
            ExternalCondition::Dark => "dark",
        }
    }
}

/// Wide-view albedo rendering (no imprint) under a scene condition.
pub fn gen_external(albedo_ext: &Image, condition: ExternalCondition, seed: u64) -> Image {
    apply_corruption(albedo_ext, condition.corruption(), seed)
}

/// Paint the tactile crop and the two visual panels into a dark frame.
/// Exact inverse of region cropping; regions never overlap.
pub fn compose_raw_frame(
    tactile: &Image,
    panels: [&Image; 2],
    geometry: &FrameGeometry,
) -> Result<Image, SynthError> {
    let crop = geometry.crop_rect();
    if (tactile.w, tactile.h) != (crop.w, crop.h) {
        return Err(SynthError::Geometry(format!(
            "tactile crop {}x{} does not match geometry {}x{}",
            tactile.w, tactile.h, crop.w, crop.h
        )));
    }
    for (i, p) in panels.iter().enumerate() {
        let r = geometry.panels[i];
        if (p.w, p.h) != (r.w, r.h) {
            return Err(SynthError::Geometry(format!(
                "panel {i} is {}x{}, geometry wants {}x{}",
                p.w, p.h, r.w, r.h
            )));
        }
    }
    let mut frame = Image::new(geometry.frame, geometry.frame, 0);
    frame.paste(tactile, crop.x, crop.y);
    for (i, p) in panels.iter().enumerate() {
        frame.paste(p, geometry.panels[i].x, geometry.panels[i].y);
    }
    Ok(frame)
}
