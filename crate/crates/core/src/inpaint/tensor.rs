//! Minimal CHW float tensor used by the inpainting networks.

use crate::image::{ImageRgb, MaskImage};

/// Channel-major (c, h, w) tensor of f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.h + y) * self.w + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    /// Stack channels of `a` then `b`.
    pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!((a.h, a.w), (b.h, b.w));
        let mut data = Vec::with_capacity((a.c + b.c) * a.h * a.w);
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor {
            c: a.c + b.c,
            h: a.h,
            w: a.w,
            data,
        }
    }

    pub fn from_image(img: &ImageRgb) -> Tensor {
        let (w, h) = (img.width(), img.height());
        let mut t = Tensor::zeros(3, h, w);
        for y in 0..h {
            for x in 0..w {
                let p = img.get(x, y);
                for (c, &v) in p.iter().enumerate() {
                    *t.at_mut(c, y, x) = v;
                }
            }
        }
        t
    }

    pub fn to_image(&self) -> ImageRgb {
        assert_eq!(self.c, 3);
        ImageRgb::from_fn(self.w, self.h, |x, y| {
            [self.at(0, y, x), self.at(1, y, x), self.at(2, y, x)]
        })
    }

    pub fn from_mask(mask: &MaskImage) -> Tensor {
        let (w, h) = (mask.width(), mask.height());
        let mut t = Tensor::zeros(1, h, w);
        for y in 0..h {
            for x in 0..w {
                *t.at_mut(0, y, x) = if mask.get(x, y) { 1.0 } else { 0.0 };
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_stacks_channels() {
        let mut a = Tensor::zeros(1, 2, 2);
        let mut b = Tensor::zeros(2, 2, 2);
        *a.at_mut(0, 0, 0) = 1.0;
        *b.at_mut(1, 1, 1) = 2.0;
        let c = Tensor::concat(&a, &b);
        assert_eq!(c.c, 3);
        assert_eq!(c.at(0, 0, 0), 1.0);
        assert_eq!(c.at(2, 1, 1), 2.0);
    }

    #[test]
    fn image_round_trip() {
        let img = ImageRgb::from_fn(3, 2, |x, y| [x as f64, y as f64, 0.5]);
        let t = Tensor::from_image(&img);
        assert_eq!(t.to_image(), img);
    }
}
