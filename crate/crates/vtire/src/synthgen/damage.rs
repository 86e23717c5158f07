//! Tire damage states rendered as persistent texture anomalies.
//!
//! Damage lives on the sensing skin itself, so it shows regardless of what
//! the tire is pressing on: cracks are dark polylines, wear is low-frequency
//! blotchy attenuation, punctures are small bright dots with a halo.

use super::objects::CrackSpec;
use super::{apply_corruption, render_tactile, CorruptionSpec, DamageLabel, FrameGeometry};
use crate::raster::{Field, Image};
use crate::rng::{mix64, Rng, Stream};

pub use super::DamageLabel as DamageState;

#[derive(Debug, Clone)]
pub struct DamageConfig {
    /// Contact load of the surrounding frame; 0 gives a plain base image.
    pub load_offset_mm: f64,
    /// Salt-and-pepper density applied after the damage texture.
    pub salt_pepper: f64,
}

impl Default for DamageConfig {
    fn default() -> Self {
        DamageConfig {
            load_offset_mm: 0.6,
            salt_pepper: 0.03,
        }
    }
}

/// Render one damage state over a uniform contact field.
/// Returns (image, label).
pub fn gen_damage(
    state: DamageState,
    config: &DamageConfig,
    geometry: &FrameGeometry,
    seed: u64,
) -> (Image, DamageLabel) {
    let mut rng = Rng::new(seed, Stream::Damage);
    let crop = geometry.crop_rect();
    let hf = Field::new(crop.w, crop.h, geometry.href_mm as f32 - 0.02);
    let mut img = render_tactile(&hf, geometry, config.load_offset_mm, seed);
    match state {
        DamageLabel::Normal => {}
        DamageLabel::Crack => {
            // laceration: a dark polyline present independent of contact
            let spec = CrackSpec {
                width_mm: rng.uniform(0.25, 0.6),
                wobble: 0.45,
                load_offset_mm: config.load_offset_mm,
                contrast: rng.uniform(90.0, 130.0),
            };
            let pts = damage_polyline(geometry, &mut rng);
            darken_polyline(&mut img, geometry, &pts, &spec);
        }
        DamageLabel::Wear => {
            let blotch = blotch_field(crop.w, crop.h, mix64(seed ^ 0xD1), 5.0);
            for y in 0..crop.h {
                for x in 0..crop.w {
                    if !geometry.in_disk_crop(x, y) {
                        continue;
                    }
                    let atten = 1.0 - 0.45 * blotch.get(x, y);
                    let v = img.get(x, y) as f32 * atten;
                    img.set(x, y, v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        DamageLabel::Puncture => {
            let r = rng.uniform(2.0, 4.0);
            let margin = geometry.disk_r * 0.55;
            let cx = crop.w as f64 / 2.0 + rng.uniform(-margin, margin);
            let cy = crop.h as f64 / 2.0 + rng.uniform(-margin, margin);
            // bright dot with a soft halo
            for y in 0..crop.h {
                for x in 0..crop.w {
                    if !geometry.in_disk_crop(x, y) {
                        continue;
                    }
                    let d = (((x as f64 + 0.5) - cx).powi(2) + ((y as f64 + 0.5) - cy).powi(2))
                        .sqrt();
                    let boost = if d <= r {
                        85.0
                    } else if d <= 3.0 * r {
                        85.0 * (1.0 - (d - r) / (2.0 * r)) * 0.5
                    } else {
                        0.0
                    };
                    if boost > 0.0 {
                        let v = img.get(x, y) as f64 + boost;
                        img.set(x, y, v.round().clamp(0.0, 255.0) as u8);
                    }
                }
            }
        }
    }
    if config.salt_pepper > 0.0 {
        let corrupted = apply_corruption(
            &img,
            CorruptionSpec::SaltPepper { density: config.salt_pepper },
            mix64(seed ^ 0x5A17),
        );
        // keep the outside-disk region clean
        for y in 0..crop.h {
            for x in 0..crop.w {
                if geometry.in_disk_crop(x, y) {
                    img.set(x, y, corrupted.get(x, y));
                }
            }
        }
    }
    (img, state)
}

fn damage_polyline(geometry: &FrameGeometry, rng: &mut Rng) -> Vec<(f64, f64)> {
    let crop = geometry.crop_rect();
    let c = crop.w as f64 / 2.0;
    let start = rng.uniform(0.0, std::f64::consts::TAU);
    let mut x = c + geometry.disk_r * 0.7 * start.cos();
    let mut y = c + geometry.disk_r * 0.7 * start.sin();
    let mut heading = start + std::f64::consts::PI + rng.uniform(-0.4, 0.4);
    let mut pts = vec![(x, y)];
    for _ in 0..16 {
        heading += rng.uniform(-0.45, 0.45);
        x += 6.0 * heading.cos();
        y += 6.0 * heading.sin();
        pts.push((x, y));
        if ((x - c).powi(2) + (y - c).powi(2)).sqrt() > geometry.disk_r * 0.85 {
            break;
        }
    }
    pts
}

fn darken_polyline(img: &mut Image, geometry: &FrameGeometry, pts: &[(f64, f64)], spec: &CrackSpec) {
    let w_px = spec.width_mm / geometry.mm_per_px;
    for y in 0..img.h {
        for x in 0..img.w {
            if !geometry.in_disk_crop(x, y) {
                continue;
            }
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut d = f64::INFINITY;
            for seg in pts.windows(2) {
                d = d.min(super::terrain::dist_to_segment(
                    px, py, seg[0].0, seg[0].1, seg[1].0, seg[1].1,
                ));
            }
            let cov = (w_px / 2.0 - d + 0.5).clamp(0.0, 1.0);
            if cov > 0.0 {
                let v = img.get(x, y) as f64 - spec.contrast * cov;
                img.set(x, y, v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
}

/// Smooth blotch field in [0, 1]: blurred white noise, renormalized.
fn blotch_field(w: usize, h: usize, seed: u64, sigma: f32) -> Field {
    let mut rng = Rng::new(seed, Stream::Damage);
    let mut f = Field::new(w, h, 0.0);
    for v in f.v.iter_mut() {
        *v = rng.next_f64() as f32;
    }
    let mut b = f.gaussian_blur(sigma);
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for &v in &b.v {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = (hi - lo).max(1e-6);
    for v in b.v.iter_mut() {
        *v = (*v - lo) / span;
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> FrameGeometry {
        let mut g = FrameGeometry::default();
        g.sensor_noise = 0.0;
        g
    }

    #[test]
    fn normal_zero_load_is_plain_base() {
        let g = geom();
        let cfg = DamageConfig { load_offset_mm: 0.0, salt_pepper: 0.0 };
        let (img, label) = gen_damage(DamageState::Normal, &cfg, &g, 5);
        assert_eq!(label, DamageLabel::Normal);
        for y in 0..img.h {
            for x in 0..img.w {
                if g.in_disk_crop(x, y) {
                    assert_eq!(img.get(x, y), g.base_intensity as u8);
                }
            }
        }
    }

    #[test]
    fn puncture_dot_diameter_in_range() {
        let g = geom();
        let cfg = DamageConfig { load_offset_mm: 0.6, salt_pepper: 0.0 };
        for seed in 0..8u64 {
            let (img, _) = gen_damage(DamageState::Puncture, &cfg, &g, seed);
            let (base, _) = gen_damage(DamageState::Normal, &cfg, &g, seed);
            // the bright core is >= 60 levels above the surrounding field
            let core: Vec<(usize, usize)> = (0..img.h)
                .flat_map(|y| (0..img.w).map(move |x| (x, y)))
                .filter(|&(x, y)| {
                    img.get(x, y) as i32 - base.get(x, y) as i32 >= 60
                })
                .collect();
            assert!(!core.is_empty(), "seed {seed}: no puncture core");
            let xs: Vec<usize> = core.iter().map(|&(x, _)| x).collect();
            let ys: Vec<usize> = core.iter().map(|&(_, y)| y).collect();
            let dx = xs.iter().max().unwrap() - xs.iter().min().unwrap() + 1;
            let dy = ys.iter().max().unwrap() - ys.iter().min().unwrap() + 1;
            // configured radius range 2..4 px -> diameter 4..8 px (+1 aa)
            assert!((3..=9).contains(&dx), "seed {seed}: dx {dx}");
            assert!((3..=9).contains(&dy), "seed {seed}: dy {dy}");
        }
    }

    #[test]
    fn wear_raises_highpass_variance_over_normal() {
        let g = geom();
        let cfg = DamageConfig { load_offset_mm: 0.6, salt_pepper: 0.0 };
        let highpass_var = |img: &Image| -> f64 {
            // residual vs a smoothing blur, measured well inside the disk so
            // the rim transition does not dominate
            let f = img.to_field();
            let b = f.gaussian_blur(2.0);
            let c = img.w as f64 / 2.0;
            let r_inner = g.disk_r - 10.0;
            let mut sum = 0.0;
            let mut n = 0.0;
            for y in 0..img.h {
                for x in 0..img.w {
                    let d = ((x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2)).sqrt();
                    if d <= r_inner {
                        let r = (f.get(x, y) - b.get(x, y)) as f64;
                        sum += r * r;
                        n += 1.0;
                    }
                }
            }
            sum / n
        };
        let mut wear_vals = Vec::new();
        let mut normal_vals = Vec::new();
        for seed in 0..50u64 {
            let (w_img, _) = gen_damage(DamageState::Wear, &cfg, &g, seed);
            let (n_img, _) = gen_damage(DamageState::Normal, &cfg, &g, seed + 1000);
            wear_vals.push(highpass_var(&w_img));
            normal_vals.push(highpass_var(&n_img));
        }
        // threshold at the midpoint of the two means must separate the
        // distributions almost perfectly
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let thresh = 0.5 * (mean(&wear_vals) + mean(&normal_vals));
        let errors = wear_vals.iter().filter(|&&v| v <= thresh).count()
            + normal_vals.iter().filter(|&&v| v > thresh).count();
        assert!(errors <= 5, "{errors} of 100 misclassified by the statistic");
    }

    #[test]
    fn damage_is_deterministic() {
        let g = geom();
        let cfg = DamageConfig::default();
        for state in DamageLabel::ALL {
            let (a, _) = gen_damage(state, &cfg, &g, 77);
            let (b, _) = gen_damage(state, &cfg, &g, 77);
            assert_eq!(a, b, "{}", state.name());
        }
    }
}
