//! Float RGB images, boolean masks, bilinear sampling, and PNG I/O.
//!
//! All processing happens on f64 channels in [0, 1]; 8-bit quantization
//! (round half to even) only happens when a PNG is written.

use crate::error::{Error, Result};
use std::path::Path;

/// RGB image with interleaved f64 channels, row-major, origin top-left.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRgb {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    /// True when the continuous pixel position lies inside the image domain.
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }

    /// Bilinear sample at a continuous pixel position.
    ///
    /// Pixel (i, j) has its value at center (i + 0.5, j + 0.5); samples are
    /// clamped to the edge outside the center grid.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let (x0, y0, fx, fy) = self.cell(x, y);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let p00 = self.get(x0, y0);
        let p10 = self.get(x1, y0);
        let p01 = self.get(x0, y1);
        let p11 = self.get(x1, y1);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] * (1.0 - fx) + p10[c] * fx;
            let bot = p01[c] * (1.0 - fx) + p11[c] * fx;
            out[c] = top * (1.0 - fy) + bot * fy;
        }
        out
    }

    /// Spatial derivative of the bilinear interpolant at (x, y).
    ///
    /// Returns (d/dx, d/dy) per channel. This is the exact derivative of
    /// `sample_bilinear` in the interior of each interpolation cell, which
    /// keeps analytic Jacobians consistent with the sampled residual.
    pub fn sample_gradient(&self, x: f64, y: f64) -> ([f64; 3], [f64; 3]) {
        let (x0, y0, fx, fy) = self.cell(x, y);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let p00 = self.get(x0, y0);
        let p10 = self.get(x1, y0);
        let p01 = self.get(x0, y1);
        let p11 = self.get(x1, y1);
        let mut gx = [0.0; 3];
        let mut gy = [0.0; 3];
        // Clamped cells are constant along the clamped axis.
        let (sx, sy) = self.clamp_state(x, y);
        for c in 0..3 {
            gx[c] = if sx {
                0.0
            } else {
                (p10[c] - p00[c]) * (1.0 - fy) + (p11[c] - p01[c]) * fy
            };
            gy[c] = if sy {
                0.0
            } else {
                (p01[c] - p00[c]) * (1.0 - fx) + (p11[c] - p10[c]) * fx
            };
        }
        (gx, gy)
    }

    fn cell(&self, x: f64, y: f64) -> (usize, usize, f64, f64) {
        let gx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let gy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = (gx.floor() as usize).min(self.width - 1);
        let y0 = (gy.floor() as usize).min(self.height - 1);
        (x0, y0, gx - x0 as f64, gy - y0 as f64)
    }

    fn clamp_state(&self, x: f64, y: f64) -> (bool, bool) {
        let gx = x - 0.5;
        let gy = y - 0.5;
        (
            gx <= 0.0 || gx >= (self.width - 1) as f64,
            gy <= 0.0 || gy >= (self.height - 1) as f64,
        )
    }

    /// Bilinear resample to a new size over the full image extent.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> ImageRgb {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        ImageRgb::from_fn(width, height, |x, y| {
            self.sample_bilinear((x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy)
        })
    }

    /// Luma conversion used by the SSIM metric.
    pub fn to_gray(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.width * self.height];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            out[i] = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        }
        out
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let p = self.get(x, y);
                let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8;
                buf.put_pixel(x as u32, y as u32, image::Rgb([q(p[0]), q(p[1]), q(p[2])]));
            }
        }
        buf.save(path.as_ref())
            .map_err(|e| Error::format(format!("png write {}: {e}", path.as_ref().display())))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())
            .map_err(|e| Error::format(format!("png read {}: {e}", path.as_ref().display())))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Self::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let p = img.get_pixel(x as u32, y as u32);
                out.set(
                    x,
                    y,
                    [
                        p[0] as f64 / 255.0,
                        p[1] as f64 / 255.0,
                        p[2] as f64 / 255.0,
                    ],
                );
            }
        }
        Ok(out)
    }
}

/// Per-pixel boolean region mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskImage {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Set difference: pixels in `self` that are not in `other`.
    pub fn difference(&self, other: &MaskImage) -> MaskImage {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a && !b)
            .collect();
        MaskImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bilinear_hits_pixel_centers_exactly() {
        let img = ImageRgb::from_fn(4, 4, |x, y| [(x + 4 * y) as f64 / 16.0, 0.0, 1.0]);
        for y in 0..4 {
            for x in 0..4 {
                let s = img.sample_bilinear(x as f64 + 0.5, y as f64 + 0.5);
                assert_eq!(s, img.get(x, y));
            }
        }
    }

    #[test]
    fn bilinear_halfway_between_zero_and_one_is_half() {
        let mut img = ImageRgb::new(4, 1);
        img.set(1, 0, [0.0, 0.0, 0.0]);
        img.set(2, 0, [1.0, 1.0, 1.0]);
        let s = img.sample_bilinear(2.0, 0.5);
        assert_relative_eq!(s[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences_inside_cell() {
        let img = ImageRgb::from_fn(8, 8, |x, y| {
            [
                ((x * 13 + y * 7) % 11) as f64 / 11.0,
                (x as f64) / 8.0,
                (y as f64) / 8.0,
            ]
        });
        let h = 1e-7;
        for &(x, y) in &[(1.3, 2.7), (4.9, 5.2), (6.1, 1.4)] {
            let (gx, gy) = img.sample_gradient(x, y);
            for c in 0..3 {
                let fx = (img.sample_bilinear(x + h, y)[c] - img.sample_bilinear(x - h, y)[c])
                    / (2.0 * h);
                let fy = (img.sample_bilinear(x, y + h)[c] - img.sample_bilinear(x, y - h)[c])
                    / (2.0 * h);
                assert_relative_eq!(gx[c], fx, epsilon = 1e-6);
                assert_relative_eq!(gy[c], fy, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn png_round_trip_quantizes_half_to_even() {
        let dir = std::env::temp_dir().join("faceveil_img_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.png");
        let img = ImageRgb::from_fn(5, 3, |x, y| [x as f64 / 4.0, y as f64 / 2.0, 0.25]);
        img.save_png(&path).unwrap();
        let back = ImageRgb::load_png(&path).unwrap();
        for y in 0..3 {
            for x in 0..5 {
                for c in 0..3 {
                    let q = (img.get(x, y)[c] * 255.0).round_ties_even() / 255.0;
                    assert_relative_eq!(back.get(x, y)[c], q, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn mask_difference() {
        let mut a = MaskImage::new(3, 1);
        let mut b = MaskImage::new(3, 1);
        a.set(0, 0, true);
        a.set(1, 0, true);
        b.set(1, 0, true);
        let d = a.difference(&b);
        assert!(d.get(0, 0) && !d.get(1, 0) && !d.get(2, 0));
    }
}
