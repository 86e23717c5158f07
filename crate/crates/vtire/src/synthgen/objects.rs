//! Parametric object silhouettes and ground cracks with exact masks.
//!
//! Shapes are signed-distance functions rasterized with one-pixel
//! anti-aliased coverage; the mask and the rendered imprint come from the
//! same coverage field, so labels carry no annotation noise.

use super::terrain::dist_to_segment;
use super::{render_tactile, FrameGeometry};
use crate::raster::{Field, Image};
use crate::rng::{Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectKind {
    Rope,
    Lens,
    Nut,
    Screw,
    Usb,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 5] = [
        ObjectKind::Rope,
        ObjectKind::Lens,
        ObjectKind::Nut,
        ObjectKind::Screw,
        ObjectKind::Usb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Rope => "rope",
            ObjectKind::Lens => "lens",
            ObjectKind::Nut => "nut",
            ObjectKind::Screw => "screw",
            ObjectKind::Usb => "usb",
        }
    }
}

/// Render one object pressed into the sensing skin.
/// Returns (image, mask), both crop-sized; the mask is clipped to the disk.
pub fn gen_object_imprint(
    kind: ObjectKind,
    geometry: &FrameGeometry,
    seed: u64,
) -> (Image, Image) {
    let crop = geometry.crop_rect();
    let mut rng = Rng::new(seed, Stream::Object);
    // keep the object comfortably inside the disk
    let margin = geometry.disk_r * 0.45;
    let cx = crop.w as f64 / 2.0 + rng.uniform(-margin, margin);
    let cy = crop.h as f64 / 2.0 + rng.uniform(-margin, margin);
    let rot = rng.uniform(0.0, std::f64::consts::TAU);
    let cov = match kind {
        ObjectKind::Rope => rope_coverage(crop.w, crop.h, &mut rng),
        ObjectKind::Lens => {
            let r_out = rng.uniform(8.0, 14.0);
            annulus_coverage(crop.w, crop.h, cx, cy, r_out, r_out * 0.62)
        }
        ObjectKind::Nut => {
            let r = rng.uniform(9.0, 13.0);
            nut_coverage(crop.w, crop.h, cx, cy, r, rot)
        }
        ObjectKind::Screw => screw_coverage(crop.w, crop.h, cx, cy, rot, &mut rng),
        ObjectKind::Usb => usb_coverage(crop.w, crop.h, cx, cy, rot),
    };
    render_coverage(&cov, geometry, seed)
}

/// Rasterize a coverage field as an imprint plus its binary mask.
fn render_coverage(cov: &Field, geometry: &FrameGeometry, seed: u64) -> (Image, Image) {
    let crop = geometry.crop_rect();
    // object sits proud of the terrain datum: full coverage reaches 0.4 mm
    // above it so a modest load images the whole silhouette
    let mut hf = Field::new(crop.w, crop.h, 0.2);
    for (h, &c) in hf.v.iter_mut().zip(&cov.v) {
        *h += c * (geometry.href_mm as f32 + 0.4 - 0.2);
    }
    let img = render_tactile(&hf, geometry, 0.7, seed);
    let mut mask = Image::new(crop.w, crop.h, 0);
    for y in 0..crop.h {
        for x in 0..crop.w {
            if cov.get(x, y) >= 0.5 && geometry.in_disk_crop(x, y) {
                mask.set(x, y, 255);
            }
        }
    }
    (img, mask)
}

// ---------------------------------------------------------------------------
// coverage builders
// ---------------------------------------------------------------------------

fn coverage_from_sdf(w: usize, h: usize, sdf: impl Fn(f64, f64) -> f64) -> Field {
    let mut f = Field::new(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let d = sdf(x as f64 + 0.5, y as f64 + 0.5);
            f.set(x, y, ((0.5 - d).clamp(0.0, 1.0)) as f32);
        }
    }
    f
}

pub fn annulus_coverage(w: usize, h: usize, cx: f64, cy: f64, r_out: f64, r_in: f64) -> Field {
    coverage_from_sdf(w, h, |x, y| {
        let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
        // ring band: inside the outer circle and outside the inner one
        (d - r_out).max(r_in - d)
    })
}

pub fn nut_coverage(w: usize, h: usize, cx: f64, cy: f64, r: f64, rot: f64) -> Field {
    let hole = r * 0.45;
    coverage_from_sdf(w, h, |x, y| {
        let (px, py) = rotate(x - cx, y - cy, -rot);
        let hexa = sd_hexagon(px, py, r);
        let d = (px * px + py * py).sqrt();
        hexa.max(hole - d)
    })
}

fn screw_coverage(w: usize, h: usize, cx: f64, cy: f64, rot: f64, rng: &mut Rng) -> Field {
    let shaft_len = rng.uniform(22.0, 30.0);
    let shaft_w = rng.uniform(2.0, 3.0);
    let head_r = rng.uniform(5.5, 7.5);
    coverage_from_sdf(w, h, |x, y| {
        let (px, py) = rotate(x - cx, y - cy, -rot);
        let shaft = dist_to_segment(px, py, -shaft_len / 2.0, 0.0, shaft_len / 2.0, 0.0) - shaft_w;
        let head = ((px + shaft_len / 2.0).powi(2) + py * py).sqrt() - head_r;
        shaft.min(head)
    })
}

fn usb_coverage(w: usize, h: usize, cx: f64, cy: f64, rot: f64) -> Field {
    coverage_from_sdf(w, h, |x, y| {
        let (px, py) = rotate(x - cx, y - cy, -rot);
        let body = sd_round_rect(px + 5.0, py, 11.0, 7.0, 2.5);
        let tongue = sd_round_rect(px - 12.0, py, 6.0, 4.5, 1.0);
        body.min(tongue)
    })
}

fn rope_coverage(w: usize, h: usize, rng: &mut Rng) -> Field {
    // smooth random-walk stroke across the middle of the crop
    let mut pts = Vec::new();
    let mut x = w as f64 * 0.30 + rng.uniform(-6.0, 6.0);
    let mut y = h as f64 * 0.5 + rng.uniform(-14.0, 14.0);
    let mut heading = rng.uniform(-0.5, 0.5);
    pts.push((x, y));
    for _ in 0..7 {
        heading += rng.uniform(-0.55, 0.55);
        x += 9.0 * heading.cos();
        y += 9.0 * heading.sin();
        pts.push((x, y));
    }
    let width = rng.uniform(3.2, 4.5);
    coverage_from_sdf(w, h, |px, py| {
        let mut d = f64::INFINITY;
        for seg in pts.windows(2) {
            d = d.min(dist_to_segment(px, py, seg[0].0, seg[0].1, seg[1].0, seg[1].1));
        }
        d - width / 2.0
    })
}

fn rotate(x: f64, y: f64, a: f64) -> (f64, f64) {
    let (c, s) = (a.cos(), a.sin());
    (x * c - y * s, x * s + y * c)
}

/// Signed distance to a regular hexagon of circumradius `r` (flat-top).
fn sd_hexagon(x: f64, y: f64, r: f64) -> f64 {
    let r = r * 0.866025404; // circumradius -> inradius
    let (kx, ky, kz) = (-0.866025404, 0.5, 0.577350269);
    let (mut px, mut py) = (x.abs(), y.abs());
    let dk = 2.0 * (kx * px + ky * py).min(0.0);
    px -= dk * kx;
    py -= dk * ky;
    px -= px.clamp(-kz * r, kz * r);
    py -= r;
    (px * px + py * py).sqrt() * py.signum()
}

/// Signed distance to a rounded rectangle with half-extents (bx, by).
fn sd_round_rect(x: f64, y: f64, bx: f64, by: f64, rad: f64) -> f64 {
    let qx = x.abs() - bx + rad;
    let qy = y.abs() - by + rad;
    let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
    outside + qx.max(qy).min(0.0) - rad
}

// ---------------------------------------------------------------------------
// cracks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CrackSpec {
    /// Stroke width in mm; sub-pixel widths render as partial intensity.
    pub width_mm: f64,
    /// Heading jitter per step (radians); 0 gives a straight needle.
    pub wobble: f64,
    /// Contact load around the crack.
    pub load_offset_mm: f64,
    /// Intensity drop at full crack coverage.
    pub contrast: f64,
}

impl CrackSpec {
    pub fn new(width_mm: f64) -> Self {
        CrackSpec {
            width_mm,
            wobble: 0.35,
            load_offset_mm: 0.8,
            contrast: 110.0,
        }
    }
}

/// A crack is the absence of contact inside a contact field: a dark
/// anti-aliased polyline over a uniformly pressed region.
/// Returns (image, mask, polyline).
pub fn gen_crack(
    spec: &CrackSpec,
    geometry: &FrameGeometry,
    seed: u64,
) -> (Image, Image, Vec<(f64, f64)>) {
    assert!(
        spec.width_mm >= geometry.mm_per_px,
        "crack width below one pixel pitch"
    );
    let mut rng = Rng::new(seed, Stream::Crack);
    let crop = geometry.crop_rect();
    let pts = walk_polyline(geometry, spec.wobble, &mut rng);
    render_crack_like(&pts, spec, geometry, seed)
        .map(|(img, mask)| (img, mask, pts))
        .expect("crack rendering")
}

/// Straight needle pressed across the disk; used by the resolution probe.
pub fn needle_polyline(geometry: &FrameGeometry, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = Rng::new(seed, Stream::Crack);
    let c = geometry.crop_rect().w as f64 / 2.0;
    let ang = rng.uniform(0.0, std::f64::consts::PI);
    let jx = rng.uniform(-8.0, 8.0);
    let jy = rng.uniform(-8.0, 8.0);
    let l = geometry.disk_r * 0.8;
    vec![
        (c + jx - l * ang.cos(), c + jy - l * ang.sin()),
        (c + jx + l * ang.cos(), c + jy + l * ang.sin()),
    ]
}

/// Render a polyline as negative imprint. Used for both cracks and needles.
pub fn render_crack_like(
    pts: &[(f64, f64)],
    spec: &CrackSpec,
    geometry: &FrameGeometry,
    seed: u64,
) -> Option<(Image, Image)> {
    let crop = geometry.crop_rect();
    let w_px = spec.width_mm / geometry.mm_per_px;
    let mut cov = Field::new(crop.w, crop.h, 0.0);
    for y in 0..crop.h {
        for x in 0..crop.w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut d = f64::INFINITY;
            for seg in pts.windows(2) {
                d = d.min(dist_to_segment(px, py, seg[0].0, seg[0].1, seg[1].0, seg[1].1));
            }
            // anti-aliased coverage; sub-pixel widths never saturate
            let c = (w_px / 2.0 - d + 0.5).clamp(0.0, 1.0).min(w_px);
            cov.set(x, y, c as f32);
        }
    }
    // uniform contact field, then carve the crack out of it
    let hf = Field::new(crop.w, crop.h, geometry.href_mm as f32 - 0.02);
    let mut img = render_tactile(&hf, geometry, spec.load_offset_mm, seed);
    let mut mask = Image::new(crop.w, crop.h, 0);
    for y in 0..crop.h {
        for x in 0..crop.w {
            if !geometry.in_disk_crop(x, y) {
                continue;
            }
            let c = cov.get(x, y) as f64;
            if c > 0.0 {
                let v = img.get(x, y) as f64 - spec.contrast * c;
                img.set(x, y, v.round().clamp(0.0, 255.0) as u8);
            }
            if c >= 0.5 {
                mask.set(x, y, 255);
            }
        }
    }
    Some((img, mask))
}

fn walk_polyline(geometry: &FrameGeometry, wobble: f64, rng: &mut Rng) -> Vec<(f64, f64)> {
    let crop = geometry.crop_rect();
    let c = crop.w as f64 / 2.0;
    // start near the disk edge, head across the center
    let start_ang = rng.uniform(0.0, std::f64::consts::TAU);
    let r0 = geometry.disk_r * 0.85;
    let mut x = c + r0 * start_ang.cos();
    let mut y = c + r0 * start_ang.sin();
    let mut heading = start_ang + std::f64::consts::PI + rng.uniform(-0.3, 0.3);
    let mut pts = vec![(x, y)];
    for _ in 0..24 {
        heading += rng.uniform(-wobble, wobble);
        x += 6.0 * heading.cos();
        y += 6.0 * heading.sin();
        pts.push((x, y));
        let d = ((x - c).powi(2) + (y - c).powi(2)).sqrt();
        if d > geometry.disk_r * 0.92 {
            break;
        }
    }
    pts
}

/// Connected components of set pixels and of enclosed background
/// (Euler number = components - holes). 4-connectivity.
pub fn mask_components_and_holes(mask: &Image) -> (usize, usize) {
    let label_fg = label_components(mask, true);
    let label_bg = label_components(mask, false);
    // background components touching the border are not holes
    let mut border: std::collections::HashSet<u32> = std::collections::HashSet::new();
    for x in 0..mask.w {
        border.insert(label_bg[x]);
        border.insert(label_bg[(mask.h - 1) * mask.w + x]);
    }
    for y in 0..mask.h {
        border.insert(label_bg[y * mask.w]);
        border.insert(label_bg[y * mask.w + mask.w - 1]);
    }
    let fg = label_fg.iter().copied().filter(|&l| l > 0).max().unwrap_or(0) as usize;
    let bg = label_bg.iter().copied().filter(|&l| l > 0).max().unwrap_or(0) as usize;
    let holes = (1..=bg as u32).filter(|l| !border.contains(l)).count();
    (fg, holes)
}

fn label_components(mask: &Image, foreground: bool) -> Vec<u32> {
    let is_set = |i: usize| (mask.px[i] > 127) == foreground;
    let mut labels = vec![0u32; mask.px.len()];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..mask.px.len() {
        if labels[start] != 0 || !is_set(start) {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % mask.w, i / mask.w);
            let mut push = |j: usize| {
                if labels[j] == 0 && is_set(j) {
                    labels[j] = next;
                    stack.push(j);
                }
            };
            if x > 0 {
                push(i - 1);
            }
            if x + 1 < mask.w {
                push(i + 1);
            }
            if y > 0 {
                push(i - mask.w);
            }
            if y + 1 < mask.h {
                push(i + mask.w);
            }
        }
    }
    labels
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
    fn objects_are_deterministic() {
        let g = geom();
        for kind in ObjectKind::ALL {
            let (i1, m1) = gen_object_imprint(kind, &g, 33);
            let (i2, m2) = gen_object_imprint(kind, &g, 33);
            assert_eq!(i1, i2, "{}", kind.name());
            assert_eq!(m1, m2, "{}", kind.name());
        }
    }

    #[test]
    fn nut_mask_has_one_hole() {
        let g = geom();
        for seed in [1u64, 7, 19] {
            let (_, mask) = gen_object_imprint(ObjectKind::Nut, &g, seed);
            let (components, holes) = mask_components_and_holes(&mask);
            assert_eq!(components, 1, "seed {seed}");
            assert_eq!(holes, 1, "seed {seed}: Euler number must be 0");
        }
    }

    #[test]
    fn lens_annulus_area_matches_analytic() {
        let (r_out, r_in) = (10.0, 6.2);
        let cov = annulus_coverage(88, 88, 44.0, 44.0, r_out, r_in);
        let count = cov.v.iter().filter(|&&c| c >= 0.5).count() as f64;
        let analytic = std::f64::consts::PI * (r_out * r_out - r_in * r_in);
        let rel = (count - analytic).abs() / analytic;
        assert!(rel < 0.03, "area {count} vs analytic {analytic:.1}");
    }

    #[test]
    fn masks_stay_inside_disk() {
        let g = geom();
        for kind in ObjectKind::ALL {
            for seed in 0..5u64 {
                let (_, mask) = gen_object_imprint(kind, &g, seed);
                for y in 0..mask.h {
                    for x in 0..mask.w {
                        if mask.get(x, y) > 0 {
                            assert!(g.in_disk_crop(x, y), "{} seed {seed}", kind.name());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn crack_width_scales_with_mm() {
        let g = geom();
        // 0.5 mm at 0.1 mm/px must give a ~5 px stroke
        let spec = CrackSpec { wobble: 0.0, ..CrackSpec::new(0.5) };
        let (_, mask, pts) = gen_crack(&spec, &g, 3);
        let area: f64 = mask.px.iter().filter(|&&p| p > 0).count() as f64;
        let len: f64 = pts
            .windows(2)
            .map(|s| ((s[1].0 - s[0].0).powi(2) + (s[1].1 - s[0].1).powi(2)).sqrt())
            .sum();
        let width = area / len;
        assert!((width - 5.0).abs() <= 1.0, "measured width {width}");
    }

    #[test]
    fn crack_skeleton_length_tracks_polyline() {
        let g = geom();
        let spec = CrackSpec { wobble: 0.25, ..CrackSpec::new(0.5) };
        let (_, mask, pts) = gen_crack(&spec, &g, 11);
        let skeleton = zhang_suen(&mask);
        let skel_len = path_length(&skeleton);
        let poly_len: f64 = pts
            .windows(2)
            .map(|s| ((s[1].0 - s[0].0).powi(2) + (s[1].1 - s[0].1).powi(2)).sqrt())
            .sum();
        let rel = (skel_len - poly_len).abs() / poly_len;
        assert!(rel < 0.10, "skeleton {skel_len:.1} vs polyline {poly_len:.1}");
    }

    #[test]
    fn subpixel_crack_renders_partial_intensity() {
        let g = geom();
        let wide = CrackSpec { wobble: 0.0, ..CrackSpec::new(0.5) };
        let thin = CrackSpec { wobble: 0.0, ..CrackSpec::new(0.1) };
        let (img_w, _, _) = gen_crack(&wide, &g, 5);
        let (img_t, _, _) = gen_crack(&thin, &g, 5);
        let darkest = |img: &Image| {
            img.px
                .iter()
                .zip(0..)
                .filter(|&(_, i)| g.in_disk_crop(i % img.w, i / img.w))
                .map(|(&p, _)| p)
                .min()
                .unwrap()
        };
        // thin cracks only partially darken a pixel
        assert!(darkest(&img_t) > darkest(&img_w), "{} vs {}", darkest(&img_t), darkest(&img_w));
    }

    // Zhang-Suen morphological thinning; returns the skeleton mask.
    fn zhang_suen(mask: &Image) -> Image {
        let mut m: Vec<bool> = mask.px.iter().map(|&p| p > 127).collect();
        let (w, h) = (mask.w, mask.h);
        let idx = |x: usize, y: usize| y * w + x;
        loop {
            let mut changed = false;
            for phase in 0..2 {
                let mut kill = Vec::new();
                for y in 1..h - 1 {
                    for x in 1..w - 1 {
                        if !m[idx(x, y)] {
                            continue;
                        }
                        let p = [
                            m[idx(x, y - 1)],
                            m[idx(x + 1, y - 1)],
                            m[idx(x + 1, y)],
                            m[idx(x + 1, y + 1)],
                            m[idx(x, y + 1)],
                            m[idx(x - 1, y + 1)],
                            m[idx(x - 1, y)],
                            m[idx(x - 1, y - 1)],
                        ];
                        let b: usize = p.iter().filter(|&&v| v).count();
                        if !(2..=6).contains(&b) {
                            continue;
                        }
                        let a = (0..8)
                            .filter(|&i| !p[i] && p[(i + 1) % 8])
                            .count();
                        if a != 1 {
                            continue;
                        }
                        let (c1, c2) = if phase == 0 {
                            (p[0] && p[2] && p[4], p[2] && p[4] && p[6])
                        } else {
                            (p[0] && p[2] && p[6], p[0] && p[4] && p[6])
                        };
                        if !c1 && !c2 {
                            kill.push(idx(x, y));
                        }
                    }
                }
                if !kill.is_empty() {
                    changed = true;
                }
                for k in kill {
                    m[k] = false;
                }
            }
            if !changed {
                break;
            }
        }
        Image {
            w,
            h,
            px: m.iter().map(|&v| if v { 255 } else { 0 }).collect(),
        }
    }

    // Approximate path length: straight neighbors 1, diagonal sqrt(2).
    fn path_length(skel: &Image) -> f64 {
        let mut len = 0.0;
        for y in 0..skel.h {
            for x in 0..skel.w {
                if skel.get(x, y) < 128 {
                    continue;
                }
                if x + 1 < skel.w && skel.get(x + 1, y) > 127 {
                    len += 1.0;
                }
                if y + 1 < skel.h && skel.get(x, y + 1) > 127 {
                    len += 1.0;
                }
                // diagonal links only when no orthogonal pixel already
                // bridges the pair (avoids double counting L-corners)
                if x + 1 < skel.w
                    && y + 1 < skel.h
                    && skel.get(x + 1, y + 1) > 127
                    && skel.get(x + 1, y) <= 127
                    && skel.get(x, y + 1) <= 127
                {
                    len += std::f64::consts::SQRT_2;
                }
                if x > 0
                    && y + 1 < skel.h
                    && skel.get(x - 1, y + 1) > 127
                    && skel.get(x - 1, y) <= 127
                    && skel.get(x, y + 1) <= 127
                {
                    len += std::f64::consts::SQRT_2;
                }
            }
        }
        len
    }
}
