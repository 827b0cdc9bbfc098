//! Region obfuscation (Gaussian blur, blackout), head/hair masks from
//! annotations, and the fixed-size crop normalization protocol.

use crate::error::{Error, Result};
use crate::image::{ImageRgb, MaskImage};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Output side length of the crop normalization.
pub const CROP_SIZE: usize = 256;
/// Head height in the normalized crop: a quarter of the output side.
pub const CROP_HEAD_HEIGHT: f64 = CROP_SIZE as f64 / 4.0;
/// Column the scaled head-box center maps to.
pub const CROP_HEAD_CX: f64 = CROP_SIZE as f64 / 2.0;
/// Row the scaled head-box top maps to (second row band of a 3x4 grid).
pub const CROP_HEAD_TOP: f64 = CROP_SIZE as f64 / 4.0;

/// Annotated head bounding box in source pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadAnnotation {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl HeadAnnotation {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::invalid("head box must have positive extent"));
        }
        Ok(Self { x, y, w, h })
    }
}

/// Rectangular head mask: a pixel is inside when its center falls in the box,
/// clipped to the image.
pub fn head_mask_from_bbox(annotation: &HeadAnnotation, size: (usize, usize)) -> MaskImage {
    let (w, h) = size;
    let mut mask = MaskImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let cx = x as f64 + 0.5;
            let cy = y as f64 + 0.5;
            if cx >= annotation.x
                && cx < annotation.x + annotation.w
                && cy >= annotation.y
                && cy < annotation.y + annotation.h
            {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Hair region: head minus face.
pub fn hair_mask(head: &MaskImage, face: &MaskImage) -> MaskImage {
    head.difference(face)
}

/// Normalized 1-D Gaussian kernel with radius ceil(3 sigma).
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k = Vec::with_capacity(2 * radius + 1);
    for i in 0..=2 * radius {
        let d = i as f64 - radius as f64;
        k.push((-d * d / (2.0 * sigma * sigma)).exp());
    }
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    k
}

/// Symmetric (half-sample) reflection of an index into [0, n).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -1 - i;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Separable full-image Gaussian blur with reflect padding.
pub fn gaussian_blur(image: &ImageRgb, sigma: f64) -> Result<ImageRgb> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::invalid(format!(
            "blur sigma must be positive, got {sigma}"
        )));
    }
    let k = gaussian_kernel(sigma);
    let radius = k.len() / 2;
    let (w, h) = (image.width(), image.height());
    // Horizontal pass.
    let mut tmp = ImageRgb::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (i, &kv) in k.iter().enumerate() {
                let sx = reflect(x as isize + i as isize - radius as isize, w);
                let p = image.get(sx, y);
                for c in 0..3 {
                    acc[c] += kv * p[c];
                }
            }
            tmp.set(x, y, acc);
        }
    }
    // Vertical pass.
    let mut out = ImageRgb::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (i, &kv) in k.iter().enumerate() {
                let sy = reflect(y as isize + i as isize - radius as isize, h);
                let p = tmp.get(x, sy);
                for c in 0..3 {
                    acc[c] += kv * p[c];
                }
            }
            out.set(x, y, acc);
        }
    }
    Ok(out)
}

/// Blur the whole image, then composite it back only where the mask is true.
/// Pixels outside the mask are bit-identical to the input.
pub fn gaussian_blur_region(image: &ImageRgb, mask: &MaskImage, sigma: f64) -> Result<ImageRgb> {
    if image.width() != mask.width() || image.height() != mask.height() {
        return Err(Error::invalid("mask size does not match image"));
    }
    let blurred = gaussian_blur(image, sigma)?;
    let mut out = image.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            if mask.get(x, y) {
                out.set(x, y, blurred.get(x, y));
            }
        }
    }
    Ok(out)
}

/// Zero out the masked pixels; others unchanged.
pub fn blackout_region(image: &ImageRgb, mask: &MaskImage) -> Result<ImageRgb> {
    if image.width() != mask.width() || image.height() != mask.height() {
        return Err(Error::invalid("mask size does not match image"));
    }
    let mut out = image.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            if mask.get(x, y) {
                out.set(x, y, [0.0; 3]);
            }
        }
    }
    Ok(out)
}

/// Obfuscation mode for a region: leave it, blur it, or black it out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObfuscationMode {
    Original,
    Blur,
    Black,
}

impl std::str::FromStr for ObfuscationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Self::Original),
            "blur" => Ok(Self::Blur),
            "black" => Ok(Self::Black),
            other => Err(Error::invalid(format!(
                "unknown mode '{other}', expected original|blur|black"
            ))),
        }
    }
}

impl std::fmt::Display for ObfuscationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Original => "original",
            Self::Blur => "blur",
            Self::Black => "black",
        })
    }
}

/// Apply one obfuscation mode to a region. Blur sigma defaults to
/// [`default_blur_sigma`] of the region when not given.
pub fn obfuscate_region(
    image: &ImageRgb,
    mask: &MaskImage,
    mode: ObfuscationMode,
    sigma: Option<f64>,
) -> Result<ImageRgb> {
    match mode {
        ObfuscationMode::Original => Ok(image.clone()),
        ObfuscationMode::Blur => {
            if mask.count() == 0 {
                return Ok(image.clone());
            }
            let s = sigma.unwrap_or_else(|| default_blur_sigma(mask));
            gaussian_blur_region(image, mask, s)
        }
        ObfuscationMode::Black => blackout_region(image, mask),
    }
}

/// Default obfuscation blur: an eighth of the target region's larger side.
pub fn default_blur_sigma(region: &MaskImage) -> f64 {
    let mut min_x = usize::MAX;
    let mut min_y = usize::MAX;
    let mut max_x = 0usize;
    let mut max_y = 0usize;
    let mut any = false;
    for y in 0..region.height() {
        for x in 0..region.width() {
            if region.get(x, y) {
                any = true;
                min_x = min_x.min(x);
                min_y = min_y.min(y);
                max_x = max_x.max(x);
                max_y = max_y.max(y);
            }
        }
    }
    if !any {
        return 1.0;
    }
    ((max_x - min_x + 1).max(max_y - min_y + 1) as f64 / 8.0).max(0.5)
}

/// Scale and position an image so the annotated head lands in the top-middle
/// block of the fixed 256x256 crop: head height becomes 64 px, the head-box
/// center maps to column 128, the head-box top to row 64. Regions outside
/// the source are zero-padded. Returns the head box in crop coordinates.
pub fn normalize_crop(
    image: &ImageRgb,
    annotation: &HeadAnnotation,
) -> Result<(ImageRgb, HeadAnnotation)> {
    if annotation.h.is_nan() || annotation.h <= 0.0 {
        return Err(Error::invalid("head height must be positive"));
    }
    let scale = CROP_HEAD_HEIGHT / annotation.h;
    // dest = scale * src - offset
    let off_x = scale * (annotation.x + annotation.w / 2.0) - CROP_HEAD_CX;
    let off_y = scale * annotation.y - CROP_HEAD_TOP;
    let mut out = ImageRgb::new(CROP_SIZE, CROP_SIZE);
    for oy in 0..CROP_SIZE {
        for ox in 0..CROP_SIZE {
            let sx = (ox as f64 + 0.5 + off_x) / scale;
            let sy = (oy as f64 + 0.5 + off_y) / scale;
            if image.contains(sx, sy) {
                out.set(ox, oy, image.sample_bilinear(sx, sy));
            }
        }
    }
    let transformed = HeadAnnotation {
        x: scale * annotation.x - off_x,
        y: scale * annotation.y - off_y,
        w: scale * annotation.w,
        h: CROP_HEAD_HEIGHT,
    };
    Ok((out, transformed))
}

/// Map a source-pixel position into crop coordinates of [`normalize_crop`].
pub fn crop_transform_point(annotation: &HeadAnnotation, x: f64, y: f64) -> (f64, f64) {
    let scale = CROP_HEAD_HEIGHT / annotation.h;
    let off_x = scale * (annotation.x + annotation.w / 2.0) - CROP_HEAD_CX;
    let off_y = scale * annotation.y - CROP_HEAD_TOP;
    (scale * x - off_x, scale * y - off_y)
}

/// One line of an annotation file: "filename x y w h".
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationRecord {
    pub filename: String,
    pub bbox: HeadAnnotation,
}

/// Parse an annotation file (one record per line, whitespace separated).
pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 5 {
            return Err(Error::format(format!(
                "annotation line {} must be 'filename x y w h'",
                lineno + 1
            )));
        }
        let nums: Vec<f64> = parts[1..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::format(format!("bad number on line {}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        out.push(AnnotationRecord {
            filename: parts[0].to_string(),
            bbox: HeadAnnotation::new(nums[0], nums[1], nums[2], nums[3])?,
        });
    }
    Ok(out)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    parse_annotations(&std::fs::read_to_string(path)?)
}

/// Landmark file: 66 lines of "x y" pixel coordinates, origin top-left.
pub fn parse_landmarks(text: &str) -> Result<Vec<nalgebra::Vector2<f64>>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(Error::format(format!(
                "landmark line {} must be 'x y'",
                lineno + 1
            )));
        }
        let x = parts[0]
            .parse::<f64>()
            .map_err(|_| Error::format(format!("bad x on line {}", lineno + 1)))?;
        let y = parts[1]
            .parse::<f64>()
            .map_err(|_| Error::format(format!("bad y on line {}", lineno + 1)))?;
        out.push(nalgebra::Vector2::new(x, y));
    }
    if out.len() != crate::model::LANDMARK_COUNT {
        return Err(Error::format(format!(
            "landmark file must have {} entries, got {}",
            crate::model::LANDMARK_COUNT,
            out.len()
        )));
    }
    Ok(out)
}

pub fn load_landmarks(path: impl AsRef<Path>) -> Result<Vec<nalgebra::Vector2<f64>>> {
    parse_landmarks(&std::fs::read_to_string(path)?)
}

pub fn save_landmarks(path: impl AsRef<Path>, landmarks: &[nalgebra::Vector2<f64>]) -> Result<()> {
    let mut text = String::new();
    for l in landmarks {
        text.push_str(&format!("{} {}\n", l.x, l.y));
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn noisy_image(w: usize, h: usize, seed: u64) -> ImageRgb {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        ImageRgb::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()])
    }

    #[test]
    fn bbox_mask_counts_exact_pixels() {
        let ann = HeadAnnotation::new(10.0, 10.0, 5.0, 5.0).unwrap();
        let mask = head_mask_from_bbox(&ann, (32, 32));
        assert_eq!(mask.count(), 25);
        // Full-image box.
        let full = head_mask_from_bbox(
            &HeadAnnotation::new(0.0, 0.0, 32.0, 32.0).unwrap(),
            (32, 32),
        );
        assert_eq!(full.count(), 32 * 32);
        // Half outside: clipped.
        let half = head_mask_from_bbox(
            &HeadAnnotation::new(-5.0, 0.0, 10.0, 4.0).unwrap(),
            (32, 32),
        );
        assert_eq!(half.count(), 5 * 4);
    }

    #[test]
    fn hair_is_head_minus_face() {
        let head = head_mask_from_bbox(&HeadAnnotation::new(0.0, 0.0, 8.0, 8.0).unwrap(), (16, 16));
        let face = head_mask_from_bbox(&HeadAnnotation::new(2.0, 2.0, 4.0, 4.0).unwrap(), (16, 16));
        let hair = hair_mask(&head, &face);
        assert_eq!(hair.count(), 64 - 16);
        // Disjoint face leaves the head untouched.
        let far = head_mask_from_bbox(
            &HeadAnnotation::new(12.0, 12.0, 2.0, 2.0).unwrap(),
            (16, 16),
        );
        assert_eq!(hair_mask(&head, &far).count(), 64);
        // Hair and face never overlap.
        for y in 0..16 {
            for x in 0..16 {
                assert!(!(hair.get(x, y) && face.get(x, y)));
            }
        }
        // Face covering the head leaves nothing.
        assert_eq!(hair_mask(&face, &head).count(), 0);
    }

    #[test]
    fn blur_with_empty_mask_is_identity() {
        let img = noisy_image(24, 24, 1);
        let out = gaussian_blur_region(&img, &MaskImage::new(24, 24), 2.0).unwrap();
        assert_eq!(img, out);
    }

    #[test]
    fn blur_keeps_constant_images_fixed() {
        let img = ImageRgb::from_fn(20, 20, |_, _| [0.3, 0.6, 0.9]);
        let out = gaussian_blur(&img, 3.0).unwrap();
        for y in 0..20 {
            for x in 0..20 {
                for c in 0..3 {
                    assert_relative_eq!(out.get(x, y)[c], img.get(x, y)[c], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn impulse_response_matches_kernel_outer_product() {
        let sigma = 1.3;
        let k = gaussian_kernel(sigma);
        let radius = k.len() / 2;
        let n = 4 * radius + 9;
        let mut img = ImageRgb::new(n, n);
        let c = n / 2;
        img.set(c, c, [1.0, 0.0, 0.0]);
        let out = gaussian_blur(&img, sigma).unwrap();
        for dy in -(radius as isize)..=radius as isize {
            for dx in -(radius as isize)..=radius as isize {
                let expect =
                    k[(dx + radius as isize) as usize] * k[(dy + radius as isize) as usize];
                let got = out.get((c as isize + dx) as usize, (c as isize + dy) as usize)[0];
                assert_relative_eq!(got, expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn blur_rejects_nonpositive_sigma() {
        let img = noisy_image(8, 8, 2);
        assert!(gaussian_blur(&img, 0.0).is_err());
        assert!(gaussian_blur(&img, -1.0).is_err());
    }

    #[test]
    fn unmasked_pixels_are_bit_identical_after_blur() {
        let img = noisy_image(32, 32, 3);
        let mask = head_mask_from_bbox(
            &HeadAnnotation::new(8.0, 8.0, 10.0, 10.0).unwrap(),
            (32, 32),
        );
        let out = gaussian_blur_region(&img, &mask, 1.5).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                if !mask.get(x, y) {
                    assert_eq!(out.get(x, y), img.get(x, y));
                }
            }
        }
    }

    #[test]
    fn blackout_zeroes_only_the_mask() {
        let img = noisy_image(16, 16, 4);
        let mask = head_mask_from_bbox(&HeadAnnotation::new(4.0, 4.0, 6.0, 3.0).unwrap(), (16, 16));
        let out = blackout_region(&img, &mask).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                if mask.get(x, y) {
                    assert_eq!(out.get(x, y), [0.0; 3]);
                } else {
                    assert_eq!(out.get(x, y), img.get(x, y));
                }
            }
        }
        let all = blackout_region(&img, &MaskImage::filled(16, 16, true)).unwrap();
        assert!(all.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn blur_interior_commutes_with_mask_restriction() {
        // Inside the mask, at least a kernel radius from its boundary, the
        // region blur equals the full blur exactly.
        let img = noisy_image(48, 48, 5);
        let sigma = 1.0f64;
        let radius = (3.0 * sigma).ceil() as usize;
        let mask = head_mask_from_bbox(
            &HeadAnnotation::new(10.0, 10.0, 20.0, 20.0).unwrap(),
            (48, 48),
        );
        let full = gaussian_blur(&img, sigma).unwrap();
        let masked = gaussian_blur_region(&img, &mask, sigma).unwrap();
        for y in (10 + radius)..(30 - radius) {
            for x in (10 + radius)..(30 - radius) {
                assert_eq!(masked.get(x, y), full.get(x, y));
            }
        }
    }

    #[test]
    fn crop_scales_head_to_64px() {
        let img = noisy_image(300, 280, 6);
        let ann = HeadAnnotation::new(80.0, 40.0, 96.0, 128.0).unwrap();
        let (crop, t) = normalize_crop(&img, &ann).unwrap();
        assert_eq!((crop.width(), crop.height()), (CROP_SIZE, CROP_SIZE));
        // Head height 128 -> scale 0.5.
        assert_relative_eq!(t.h, 64.0, epsilon = 1e-12);
        assert_relative_eq!(t.w, 48.0, epsilon = 1e-12);
        assert_relative_eq!(t.y, 64.0, epsilon = 1e-12);
        assert_relative_eq!(t.x + t.w / 2.0, 128.0, epsilon = 1e-12);
    }

    #[test]
    fn crop_geometry_holds_over_random_boxes() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let img = noisy_image(220, 180, 8);
        for _ in 0..50 {
            let ann = HeadAnnotation::new(
                rng.gen_range(-20.0..180.0),
                rng.gen_range(-20.0..140.0),
                rng.gen_range(8.0..140.0),
                rng.gen_range(8.0..140.0),
            )
            .unwrap();
            let (_, t) = normalize_crop(&img, &ann).unwrap();
            assert!(
                (t.h - 64.0).abs() <= 1.0,
                "head height {} not 64 +/- 1",
                t.h
            );
            assert_relative_eq!(t.y, 64.0, epsilon = 1e-9);
            assert_relative_eq!(t.x + t.w / 2.0, 128.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn crop_is_idempotent_once_normalized() {
        let img = noisy_image(300, 300, 9);
        let ann = HeadAnnotation::new(60.0, 30.0, 100.0, 100.0).unwrap();
        let (crop1, t1) = normalize_crop(&img, &ann).unwrap();
        let (crop2, t2) = normalize_crop(&crop1, &t1).unwrap();
        // Scale 1, zero offsets: bitwise equal output.
        assert_eq!(crop1, crop2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn crop_point_transform_matches_image_mapping() {
        let ann = HeadAnnotation::new(50.0, 20.0, 60.0, 80.0).unwrap();
        let (cx, cy) = crop_transform_point(&ann, 50.0 + 30.0, 20.0);
        assert_relative_eq!(cx, 128.0, epsilon = 1e-12);
        assert_relative_eq!(cy, 64.0, epsilon = 1e-12);
    }

    #[test]
    fn annotation_and_landmark_parsers() {
        let ann = parse_annotations("a.png 1 2 3 4\n# comment\nb.png 5.5 6 7 8\n").unwrap();
        assert_eq!(ann.len(), 2);
        assert_eq!(ann[1].filename, "b.png");
        assert_relative_eq!(ann[1].bbox.x, 5.5);
        assert!(parse_annotations("bad line\n").is_err());
        assert!(parse_annotations("a.png 1 2 0 4\n").is_err());

        let mut text = String::new();
        for i in 0..66 {
            text.push_str(&format!("{} {}\n", i, i * 2));
        }
        let lm = parse_landmarks(&text).unwrap();
        assert_eq!(lm.len(), 66);
        assert_relative_eq!(lm[65].y, 130.0);
        assert!(parse_landmarks("1 2\n3 4\n").is_err());
    }
}
