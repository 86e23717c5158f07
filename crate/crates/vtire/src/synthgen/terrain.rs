//! Procedural terrain heightfields and albedo textures.
//!
//! Twelve classes from five families (rubber track, painted road, brick,
//! lawn, gravel variants). Parameters live in a versioned catalog shipped
//! with the crate (`assets/terrain_classes_v1.json`) so datasets can be
//! regenerated bit-exactly. Heights are in mm; every class peaks at the
//! sensing-skin datum (2.0 mm) so light loads already leave an imprint.

use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::raster::{Field, Image};
use crate::rng::{mix64, Rng, Stream};

pub const TERRAIN_CLASSES: usize = 12;

/// Peak terrain height (mm); matches `FrameGeometry::href_mm`.
const PEAK_MM: f32 = 2.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TerrainCatalog {
    pub version: u32,
    #[serde(default)]
    pub comment: String,
    pub classes: Vec<TerrainClassSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TerrainClassSpec {
    pub name: String,
    pub family: Family,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    Stripes {
        pitch_mm: f64,
        ridge_frac: f64,
        angle_deg: f64,
        albedo_base: u8,
        albedo_ridge: u8,
    },
    Painted {
        blob_r_mm: f64,
        blobs_per_cm2: f64,
        albedo_base: u8,
        albedo_blob: u8,
    },
    Brick {
        pitch_x_mm: f64,
        pitch_y_mm: f64,
        groove_mm: f64,
        albedo_base: u8,
        albedo_var: u8,
    },
    Lawn {
        blades_per_cm2: f64,
        blade_len_mm: f64,
        blade_width_mm: f64,
        angle_deg: f64,
        angle_spread_deg: f64,
        albedo_base: u8,
        albedo_blade: u8,
    },
    Gravel {
        r_min_mm: f64,
        r_max_mm: f64,
        coverage: f64,
        albedo_stone: u8,
        albedo_gap: u8,
        albedo_jitter: u8,
    },
}

impl TerrainCatalog {
    /// The catalog shipped with this crate.
    pub fn builtin() -> &'static TerrainCatalog {
        use std::sync::OnceLock;
        static CATALOG: OnceLock<TerrainCatalog> = OnceLock::new();
        CATALOG.get_or_init(|| {
            serde_json::from_str(include_str!("../../assets/terrain_classes_v1.json"))
                .expect("embedded terrain catalog parses")
        })
    }
}

pub fn terrain_class_names() -> Vec<String> {
    TerrainCatalog::builtin()
        .classes
        .iter()
        .map(|c| c.name.clone())
        .collect()
}

/// Generation viewport: pixel extent and physical scale.
#[derive(Debug, Clone, Copy)]
pub struct TerrainView {
    pub w: usize,
    pub h: usize,
    pub mm_per_px: f64,
}

/// Generate the heightfield (mm) and albedo texture for one terrain class.
pub fn gen_terrain(
    class_id: usize,
    view: TerrainView,
    seed: u64,
) -> Result<(Field, Image), SynthError> {
    gen_terrain_with(TerrainCatalog::builtin(), class_id, view, seed)
}

pub fn gen_terrain_with(
    catalog: &TerrainCatalog,
    class_id: usize,
    view: TerrainView,
    seed: u64,
) -> Result<(Field, Image), SynthError> {
    let spec = catalog
        .classes
        .get(class_id)
        .ok_or(SynthError::ClassOutOfRange(class_id, catalog.classes.len()))?;
    let mut rng = Rng::new(seed, Stream::Terrain).derive(class_id as u64);
    let (mut height, mut albedo) = match &spec.family {
        Family::Stripes { pitch_mm, ridge_frac, angle_deg, albedo_base, albedo_ridge } => stripes(
            view, &mut rng, *pitch_mm, *ridge_frac, *angle_deg, *albedo_base, *albedo_ridge,
        ),
        Family::Painted { blob_r_mm, blobs_per_cm2, albedo_base, albedo_blob } => {
            painted(view, &mut rng, *blob_r_mm, *blobs_per_cm2, *albedo_base, *albedo_blob)
        }
        Family::Brick { pitch_x_mm, pitch_y_mm, groove_mm, albedo_base, albedo_var } => brick(
            view, &mut rng, seed, *pitch_x_mm, *pitch_y_mm, *groove_mm, *albedo_base, *albedo_var,
        ),
        Family::Lawn {
            blades_per_cm2,
            blade_len_mm,
            blade_width_mm,
            angle_deg,
            angle_spread_deg,
            albedo_base,
            albedo_blade,
        } => lawn(
            view,
            &mut rng,
            *blades_per_cm2,
            *blade_len_mm,
            *blade_width_mm,
            *angle_deg,
            *angle_spread_deg,
            *albedo_base,
            *albedo_blade,
        ),
        Family::Gravel { r_min_mm, r_max_mm, coverage, albedo_stone, albedo_gap, albedo_jitter } => {
            gravel(
                view, &mut rng, *r_min_mm, *r_max_mm, *coverage, *albedo_stone, *albedo_gap,
                *albedo_jitter,
            )
        }
    };
    // mild height and albedo grain shared by all classes
    for v in height.v.iter_mut() {
        *v = (*v + rng.uniform(-0.015, 0.015) as f32).clamp(0.0, PEAK_MM);
    }
    for p in albedo.px.iter_mut() {
        let n = rng.uniform(-6.0, 6.0);
        *p = (*p as f64 + n).round().clamp(0.0, 255.0) as u8;
    }
    Ok((height, albedo))
}

#[allow(clippy::too_many_arguments)]
fn stripes(
    view: TerrainView,
    rng: &mut Rng,
    pitch_mm: f64,
    ridge_frac: f64,
    angle_deg: f64,
    albedo_base: u8,
    albedo_ridge: u8,
) -> (Field, Image) {
    let mut height = Field::new(view.w, view.h, 0.9);
    let mut albedo = Image::new(view.w, view.h, albedo_base);
    let phase = rng.uniform(0.0, pitch_mm);
    let theta = angle_deg.to_radians();
    let (c, s) = (theta.cos(), theta.sin());
    for y in 0..view.h {
        for x in 0..view.w {
            let u = ((x as f64 + 0.5) * c + (y as f64 + 0.5) * s) * view.mm_per_px + phase;
            let t = u.rem_euclid(pitch_mm) / pitch_mm;
            if t < ridge_frac {
                // rounded ridge profile
                let rel = t / ridge_frac; // 0..1 across the ridge
                let bump = (std::f64::consts::PI * rel).sin();
                height.set(x, y, 0.9 + (PEAK_MM - 0.9) * bump as f32);
                albedo.set(x, y, albedo_ridge);
            }
        }
    }
    (height, albedo)
}

fn painted(
    view: TerrainView,
    rng: &mut Rng,
    blob_r_mm: f64,
    blobs_per_cm2: f64,
    albedo_base: u8,
    albedo_blob: u8,
) -> (Field, Image) {
    // paint is tactilely flat: a full plateau at the contact datum
    let mut height = Field::new(view.w, view.h, PEAK_MM - 0.05);
    let mut albedo = Image::new(view.w, view.h, albedo_base);
    for v in height.v.iter_mut() {
        *v += rng.uniform(0.0, 0.05) as f32;
    }
    let area_cm2 = (view.w as f64 * view.mm_per_px) * (view.h as f64 * view.mm_per_px) / 100.0;
    let n = (blobs_per_cm2 * area_cm2).round() as usize;
    let r_px = blob_r_mm / view.mm_per_px;
    for _ in 0..n {
        let cx = rng.uniform(0.0, view.w as f64);
        let cy = rng.uniform(0.0, view.h as f64);
        let r = r_px * rng.uniform(0.6, 1.4);
        stamp_disk(&mut albedo, cx, cy, r, albedo_blob);
    }
    (height, albedo)
}

#[allow(clippy::too_many_arguments)]
fn brick(
    view: TerrainView,
    rng: &mut Rng,
    seed: u64,
    pitch_x_mm: f64,
    pitch_y_mm: f64,
    groove_mm: f64,
    albedo_base: u8,
    albedo_var: u8,
) -> (Field, Image) {
    let mut height = Field::new(view.w, view.h, PEAK_MM);
    let mut albedo = Image::new(view.w, view.h, albedo_base);
    let (ox, oy) = (rng.uniform(0.0, pitch_x_mm), rng.uniform(0.0, pitch_y_mm));
    for y in 0..view.h {
        for x in 0..view.w {
            let u = (x as f64 + 0.5) * view.mm_per_px + ox;
            let v = (y as f64 + 0.5) * view.mm_per_px + oy;
            let (fu, fv) = (u.rem_euclid(pitch_x_mm), v.rem_euclid(pitch_y_mm));
            if fu < groove_mm || fv < groove_mm {
                height.set(x, y, 0.7);
                albedo.set(x, y, albedo_base.saturating_sub(35));
            } else {
                // per-brick shade
                let (ix, iy) = ((u / pitch_x_mm).floor() as i64, (v / pitch_y_mm).floor() as i64);
                let hash = mix64(seed ^ mix64(ix as u64 ^ (iy as u64).rotate_left(32)));
                let shade = (hash % (2 * albedo_var as u64 + 1)) as i64 - albedo_var as i64;
                albedo.set(x, y, (albedo_base as i64 + shade).clamp(0, 255) as u8);
            }
        }
    }
    (height, albedo)
}

#[allow(clippy::too_many_arguments)]
fn lawn(
    view: TerrainView,
    rng: &mut Rng,
    blades_per_cm2: f64,
    blade_len_mm: f64,
    blade_width_mm: f64,
    angle_deg: f64,
    angle_spread_deg: f64,
    albedo_base: u8,
    albedo_blade: u8,
) -> (Field, Image) {
    let mut height = Field::new(view.w, view.h, 0.45);
    let mut albedo = Image::new(view.w, view.h, albedo_base);
    let area_cm2 = (view.w as f64 * view.mm_per_px) * (view.h as f64 * view.mm_per_px) / 100.0;
    let n = (blades_per_cm2 * area_cm2).round() as usize;
    let len_px = blade_len_mm / view.mm_per_px;
    let w_px = blade_width_mm / view.mm_per_px;
    for _ in 0..n {
        let cx = rng.uniform(0.0, view.w as f64);
        let cy = rng.uniform(0.0, view.h as f64);
        let ang = (angle_deg + angle_spread_deg * rng.gaussian()).to_radians();
        let l = len_px * rng.uniform(0.7, 1.3);
        let (dx, dy) = (ang.cos() * l / 2.0, ang.sin() * l / 2.0);
        let peak = PEAK_MM * rng.uniform(0.85, 1.0) as f32;
        stamp_capsule(&mut height, &mut albedo, cx - dx, cy - dy, cx + dx, cy + dy, w_px, peak, albedo_blade);
    }
    (height, albedo)
}

#[allow(clippy::too_many_arguments)]
fn gravel(
    view: TerrainView,
    rng: &mut Rng,
    r_min_mm: f64,
    r_max_mm: f64,
    coverage: f64,
    albedo_stone: u8,
    albedo_gap: u8,
    albedo_jitter: u8,
) -> (Field, Image) {
    let mut height = Field::new(view.w, view.h, 0.3);
    let mut albedo = Image::new(view.w, view.h, albedo_gap);
    // dart throwing toward a target covered-area fraction
    let r_min = r_min_mm / view.mm_per_px;
    let r_max = r_max_mm / view.mm_per_px;
    let target_area = coverage * (view.w * view.h) as f64;
    let mut placed: Vec<(f64, f64, f64)> = Vec::new();
    let mut covered = 0.0;
    let mut attempts = 0usize;
    let max_attempts = 40 * (target_area / (std::f64::consts::PI * r_min * r_min)) as usize;
    while covered < target_area && attempts < max_attempts {
        attempts += 1;
        let r = rng.uniform(r_min, r_max);
        let cx = rng.uniform(-r, view.w as f64 + r);
        let cy = rng.uniform(-r, view.h as f64 + r);
        let ok = placed
            .iter()
            .all(|&(px, py, pr)| (px - cx).powi(2) + (py - cy).powi(2) > (0.85 * (pr + r)).powi(2));
        if !ok {
            continue;
        }
        let shade = rng.uniform(-(albedo_jitter as f64), albedo_jitter as f64);
        placed.push((cx, cy, r));
        covered += std::f64::consts::PI * r * r;
        stamp_stone(&mut height, &mut albedo, cx, cy, r, albedo_stone, shade);
    }
    (height, albedo)
}

fn stamp_disk(albedo: &mut Image, cx: f64, cy: f64, r: f64, value: u8) {
    let (x0, x1) = disk_bounds(cx, r, albedo.w);
    let (y0, y1) = disk_bounds(cy, r, albedo.h);
    for y in y0..y1 {
        for x in x0..x1 {
            let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
            if d2 <= r * r {
                albedo.set(x, y, value);
            }
        }
    }
}

fn stamp_stone(height: &mut Field, albedo: &mut Image, cx: f64, cy: f64, r: f64, base: u8, shade: f64) {
    let (x0, x1) = disk_bounds(cx, r, height.w);
    let (y0, y1) = disk_bounds(cy, r, height.h);
    for y in y0..y1 {
        for x in x0..x1 {
            let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
            if d2 <= r * r {
                let cap = (1.0 - d2 / (r * r)).sqrt();
                let h = 0.3 + (PEAK_MM - 0.3) * cap as f32;
                if h > height.get(x, y) {
                    height.set(x, y, h);
                }
                let v = base as f64 + shade + 25.0 * cap;
                albedo.set(x, y, v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn stamp_capsule(
    height: &mut Field,
    albedo: &mut Image,
    ax: f64,
    ay: f64,
    bx: f64,
    by: f64,
    width_px: f64,
    peak: f32,
    albedo_blade: u8,
) {
    let half = width_px / 2.0;
    let x0 = (ax.min(bx) - half - 1.0).floor().max(0.0) as usize;
    let x1 = ((ax.max(bx) + half + 1.0).ceil() as usize).min(height.w);
    let y0 = (ay.min(by) - half - 1.0).floor().max(0.0) as usize;
    let y1 = ((ay.max(by) + half + 1.0).ceil() as usize).min(height.h);
    for y in y0..y1 {
        for x in x0..x1 {
            let d = dist_to_segment(x as f64 + 0.5, y as f64 + 0.5, ax, ay, bx, by);
            // anti-aliased coverage of the stroke
            let cov = (half - d + 0.5).clamp(0.0, 1.0);
            if cov > 0.0 {
                let h = peak * cov as f32;
                if h > height.get(x, y) {
                    height.set(x, y, h);
                }
                let old = albedo.get(x, y) as f64;
                let v = old + (albedo_blade as f64 - old) * cov;
                albedo.set(x, y, v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
}

fn disk_bounds(c: f64, r: f64, extent: usize) -> (usize, usize) {
    let lo = (c - r - 1.0).floor().max(0.0) as usize;
    let hi = ((c + r + 1.0).ceil() as usize).min(extent);
    (lo.min(extent), hi)
}

pub(crate) fn dist_to_segment(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (vx, vy) = (bx - ax, by - ay);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - ax) * vx + (py - ay) * vy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (ax + t * vx, ay + t * vy);
    ((px - qx).powi(2) + (py - qy).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view() -> TerrainView {
        TerrainView { w: 88, h: 88, mm_per_px: 0.1 }
    }

    #[test]
    fn catalog_has_twelve_classes() {
        let cat = TerrainCatalog::builtin();
        assert_eq!(cat.version, 1);
        assert_eq!(cat.classes.len(), TERRAIN_CLASSES);
        let mut names: Vec<_> = cat.classes.iter().map(|c| c.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), TERRAIN_CLASSES, "class names must be unique");
    }

    #[test]
    fn generation_is_deterministic() {
        for class in 0..TERRAIN_CLASSES {
            let (h1, a1) = gen_terrain(class, view(), 77).unwrap();
            let (h2, a2) = gen_terrain(class, view(), 77).unwrap();
            assert_eq!(h1, h2, "height class {class}");
            assert_eq!(a1, a2, "albedo class {class}");
        }
    }

    #[test]
    fn different_seeds_differ() {
        let (h1, _) = gen_terrain(8, view(), 1).unwrap();
        let (h2, _) = gen_terrain(8, view(), 2).unwrap();
        assert_ne!(h1, h2);
    }

    #[test]
    fn invalid_class_is_rejected() {
        assert!(matches!(
            gen_terrain(TERRAIN_CLASSES, view(), 1),
            Err(SynthError::ClassOutOfRange(_, _))
        ));
    }

    #[test]
    fn brick_grooves_form_grid_at_configured_pitch() {
        // class 4 is brick_road: pitch 3.2 mm x 1.6 mm at 0.1 mm/px
        let (h, _) = gen_terrain(4, view(), 5).unwrap();
        // columns whose mean height is clearly below plateau are groove columns
        let mut groove_cols = Vec::new();
        for x in 0..h.w {
            let mean: f32 = (0..h.h).map(|y| h.get(x, y)).sum::<f32>() / h.h as f32;
            if mean < 1.7 {
                groove_cols.push(x);
            }
        }
        assert!(!groove_cols.is_empty(), "no groove columns found");
        // consecutive groove bands must repeat with the configured 32 px pitch
        let mut band_starts = vec![groove_cols[0]];
        for w in groove_cols.windows(2) {
            if w[1] != w[0] + 1 {
                band_starts.push(w[1]);
            }
        }
        for pair in band_starts.windows(2) {
            let gap = pair[1] - pair[0];
            assert!((gap as i64 - 32).abs() <= 1, "pitch {gap} px, want 32");
        }
    }

    #[test]
    fn heights_stay_in_range() {
        for class in 0..TERRAIN_CLASSES {
            let (h, _) = gen_terrain(class, view(), 3).unwrap();
            assert!(h.v.iter().all(|&v| (0.0..=2.0).contains(&v)), "class {class}");
            assert!(h.max() > 1.8, "class {class} never reaches the datum");
        }
    }
}
