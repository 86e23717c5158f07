//! 8-bit grayscale images and f32 scalar fields.
//!
//! All synthetic data is grayscale; fields carry physical quantities
//! (heights in mm, depths in mm) before quantization to image intensities.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("png error on {path}: {message}")]
    Png { path: String, message: String },
    #[error("expected 8-bit grayscale, got {0}")]
    NotGray8(String),
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub w: usize,
    pub h: usize,
    pub px: Vec<u8>,
}

impl Image {
    pub fn new(w: usize, h: usize, fill: u8) -> Self {
        Image {
            w,
            h,
            px: vec![fill; w * h],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.px[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.px[y * self.w + x] = v;
    }

    pub fn mean(&self) -> f64 {
        self.px.iter().map(|&v| v as f64).sum::<f64>() / self.px.len() as f64
    }

    /// Copy a rectangle out of this image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Image {
        assert!(x0 + w <= self.w && y0 + h <= self.h, "crop out of bounds");
        let mut out = Image::new(w, h, 0);
        for r in 0..h {
            let src = (y0 + r) * self.w + x0;
            out.px[r * w..(r + 1) * w].copy_from_slice(&self.px[src..src + w]);
        }
        out
    }

    /// Paste `src` with its top-left corner at (x0, y0).
    pub fn paste(&mut self, src: &Image, x0: usize, y0: usize) {
        assert!(x0 + src.w <= self.w && y0 + src.h <= self.h, "paste out of bounds");
        for r in 0..src.h {
            let dst = (y0 + r) * self.w + x0;
            self.px[dst..dst + src.w].copy_from_slice(&src.px[r * src.w..(r + 1) * src.w]);
        }
    }

    pub fn to_field(&self) -> Field {
        Field {
            w: self.w,
            h: self.h,
            v: self.px.iter().map(|&p| p as f32).collect(),
        }
    }

    pub fn save_png<P: AsRef<Path>>(&self, path: P) -> Result<(), RasterError> {
        let img = image::GrayImage::from_raw(self.w as u32, self.h as u32, self.px.clone())
            .expect("image buffer size");
        img.save_with_format(path.as_ref(), image::ImageFormat::Png)
            .map_err(|e| RasterError::Png {
                path: path.as_ref().display().to_string(),
                message: e.to_string(),
            })
    }

    pub fn load_png<P: AsRef<Path>>(path: P) -> Result<Image, RasterError> {
        let dynimg = image::open(path.as_ref()).map_err(|e| RasterError::Png {
            path: path.as_ref().display().to_string(),
            message: e.to_string(),
        })?;
        match dynimg {
            image::DynamicImage::ImageLuma8(g) => Ok(Image {
                w: g.width() as usize,
                h: g.height() as usize,
                px: g.into_raw(),
            }),
            other => Err(RasterError::NotGray8(format!("{:?}", other.color()))),
        }
    }
}

/// Scalar field (height in mm, depth in mm, coverage in [0,1], ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub w: usize,
    pub h: usize,
    pub v: Vec<f32>,
}

impl Field {
    pub fn new(w: usize, h: usize, fill: f32) -> Self {
        Field {
            w,
            h,
            v: vec![fill; w * h],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.v[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, val: f32) {
        self.v[y * self.w + x] = val;
    }

    pub fn max(&self) -> f32 {
        self.v.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Quantize to u8 with clamping.
    pub fn to_image(&self) -> Image {
        Image {
            w: self.w,
            h: self.h,
            px: self
                .v
                .iter()
                .map(|&x| x.round().clamp(0.0, 255.0) as u8)
                .collect(),
        }
    }

    /// Separable Gaussian blur; `sigma` in pixels, radius 4 sigma.
    pub fn gaussian_blur(&self, sigma: f32) -> Field {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (4.0 * sigma).ceil() as i64;
        let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
        let s2 = 2.0 * (sigma as f64) * (sigma as f64);
        for i in -radius..=radius {
            kernel.push((-((i * i) as f64) / s2).exp());
        }
        let norm: f64 = kernel.iter().sum();
        let kernel: Vec<f32> = kernel.iter().map(|&k| (k / norm) as f32).collect();

        let (w, h) = (self.w as i64, self.h as i64);
        let mut tmp = Field::new(self.w, self.h, 0.0);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for (ki, &kv) in kernel.iter().enumerate() {
                    let sx = (x + ki as i64 - radius).clamp(0, w - 1);
                    acc += kv * self.v[(y * w + sx) as usize];
                }
                tmp.v[(y * w + x) as usize] = acc;
            }
        }
        let mut out = Field::new(self.w, self.h, 0.0);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for (ki, &kv) in kernel.iter().enumerate() {
                    let sy = (y + ki as i64 - radius).clamp(0, h - 1);
                    acc += kv * tmp.v[(sy * w + x) as usize];
                }
                out.v[(y * w + x) as usize] = acc;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_paste_roundtrip() {
        let mut img = Image::new(10, 8, 0);
        for (i, p) in img.px.iter_mut().enumerate() {
            *p = (i % 251) as u8;
        }
        let crop = img.crop(3, 2, 4, 5);
        let mut img2 = img.clone();
        img2.paste(&crop, 3, 2);
        assert_eq!(img, img2);
    }

    #[test]
    fn blur_preserves_constant() {
        let f = Field::new(16, 16, 7.25);
        let b = f.gaussian_blur(1.5);
        for &v in &b.v {
            assert!((v - 7.25).abs() < 1e-4);
        }
    }

    #[test]
    fn blurred_step_matches_erf_profile() {
        // step edge at x = 32 in a 64-wide field, blur sigma 2:
        // profile(x) ~ Phi((x + 0.5 - 32) / sigma)
        let (w, h) = (64usize, 8usize);
        let mut f = Field::new(w, h, 0.0);
        for y in 0..h {
            for x in 32..w {
                f.set(x, y, 1.0);
            }
        }
        let sigma = 2.0f32;
        let b = f.gaussian_blur(sigma);
        let phi = |z: f64| 0.5 * (1.0 + erf(z / 2.0f64.sqrt()));
        for x in 8..56 {
            let expect = phi((x as f64 + 0.5 - 32.0) / sigma as f64);
            let got = b.get(x, 4) as f64;
            assert!(
                (got - expect).abs() < 0.02,
                "x={x}: got {got}, expect {expect}"
            );
        }
    }

    // Abramowitz-Stegun 7.1.26 rational approximation, |err| < 1.5e-7.
    fn erf(x: f64) -> f64 {
        let sign = if x < 0.0 { -1.0 } else { 1.0 };
        let x = x.abs();
        let t = 1.0 / (1.0 + 0.3275911 * x);
        let y = 1.0
            - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
                + 0.254829592)
                * t
                * (-x * x).exp();
        sign * y
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut img = Image::new(9, 7, 0);
        for (i, p) in img.px.iter_mut().enumerate() {
            *p = (i * 37 % 256) as u8;
        }
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(img, back);
    }
}
