//! Image-quality metrics (SSIM, head-masked SSIM) and a parameter-space
//! proxy recognizer for trend-level obfuscation checks.

use crate::error::{Error, Result};
use crate::identity::{extract_identity, IdentityVector};
use crate::image::{ImageRgb, MaskImage};
use crate::model::SemanticParams;

/// Standard SSIM constants over a unit dynamic range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

fn gaussian_window(params: &SsimParams) -> Vec<f64> {
    let n = params.window;
    let half = (n - 1) as f64 / 2.0;
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        let d = i as f64 - half;
        w.push((-d * d / (2.0 * params.sigma * params.sigma)).exp());
    }
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

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

/// Separable Gaussian filter over a grayscale plane with reflect padding.
fn filter_plane(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = kernel.len() / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                let sx = reflect(x as isize + i as isize - radius as isize, w);
                acc += kv * plane[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                let sy = reflect(y as isize + i as isize - radius as isize, h);
                acc += kv * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Per-pixel SSIM map between two images (grayscale conversion inside).
pub fn ssim_map(a: &ImageRgb, b: &ImageRgb, params: &SsimParams) -> Result<Vec<f64>> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::invalid("ssim inputs must have equal dimensions"));
    }
    let (w, h) = (a.width(), a.height());
    let ga = a.to_gray();
    let gb = b.to_gray();
    let kernel = gaussian_window(params);
    let mu_a = filter_plane(&ga, w, h, &kernel);
    let mu_b = filter_plane(&gb, w, h, &kernel);
    let aa: Vec<f64> = ga.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = gb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = ga.iter().zip(&gb).map(|(x, y)| x * y).collect();
    let e_aa = filter_plane(&aa, w, h, &kernel);
    let e_bb = filter_plane(&bb, w, h, &kernel);
    let e_ab = filter_plane(&ab, w, h, &kernel);

    let c1 = (params.k1 * params.dynamic_range).powi(2);
    let c2 = (params.k2 * params.dynamic_range).powi(2);
    let mut map = vec![0.0; w * h];
    for i in 0..w * h {
        let var_a = e_aa[i] - mu_a[i] * mu_a[i];
        let var_b = e_bb[i] - mu_b[i] * mu_b[i];
        let cov = e_ab[i] - mu_a[i] * mu_b[i];
        map[i] = ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2))
            / ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2));
    }
    Ok(map)
}

/// Mean structural similarity between two images.
pub fn ssim(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    let map = ssim_map(a, b, &SsimParams::default())?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

/// Mean of the SSIM map restricted to mask-true pixels.
pub fn mask_ssim(a: &ImageRgb, b: &ImageRgb, mask: &MaskImage) -> Result<f64> {
    if mask.width() != a.width() || mask.height() != a.height() {
        return Err(Error::invalid("mask size does not match images"));
    }
    let count = mask.count();
    if count == 0 {
        return Err(Error::invalid("mask-ssim over an empty mask"));
    }
    let map = ssim_map(a, b, &SsimParams::default())?;
    let mut total = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if mask.get(x, y) {
                total += map[y * a.width() + x];
            }
        }
    }
    Ok(total / count as f64)
}

/// Nearest-centroid identity classifier over enrolled identity vectors.
#[derive(Clone, Debug, Default)]
pub struct ProxyRecognizer {
    labels: Vec<String>,
    centroids: Vec<IdentityVector>,
}

impl ProxyRecognizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enroll(&mut self, label: impl Into<String>, centroid: IdentityVector) {
        self.labels.push(label.into());
        self.centroids.push(centroid);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Label of the enrolled centroid nearest to the parameters' identity
    /// vector; ties break toward the earliest enrollment.
    pub fn recognize(&self, params: &SemanticParams) -> Result<&str> {
        self.recognize_vector(&extract_identity(params))
    }

    pub fn recognize_vector(&self, query: &IdentityVector) -> Result<&str> {
        if self.is_empty() {
            return Err(Error::invalid("no identities enrolled"));
        }
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.centroids.iter().enumerate() {
            let d = query.distance(c);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        Ok(&self.labels[best])
    }
}
