//! Paste-back compositing and the adversarial / head-masked L1 losses.

use super::tensor::Tensor;
use crate::image::MaskImage;

const PROB_EPS: f64 = 1e-12;

/// Binary cross-entropy of a probability against a {0, 1} target.
pub fn bce(p: f64, target: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Composite: generator output inside the head mask, conditioning image
/// elsewhere (bit-exact). Losses evaluated on the composite can only feed
/// gradient back through the head region.
pub fn paste_head(raw: &Tensor, conditioning: &Tensor, mask: &MaskImage) -> Tensor {
    assert_eq!((raw.h, raw.w), (conditioning.h, conditioning.w));
    assert_eq!((mask.width(), mask.height()), (raw.w, raw.h));
    let mut out = conditioning.clone();
    for c in 0..raw.c {
        for y in 0..raw.h {
            for x in 0..raw.w {
                if mask.get(x, y) {
                    *out.at_mut(c, y, x) = raw.at(c, y, x);
                }
            }
        }
    }
    out
}

/// Gradient of the composite with respect to the raw generator output:
/// the upstream gradient inside the mask, zero outside.
pub fn paste_head_backward(grad_composite: &Tensor, mask: &MaskImage) -> Tensor {
    let mut grad = Tensor::zeros(grad_composite.c, grad_composite.h, grad_composite.w);
    for c in 0..grad.c {
        for y in 0..grad.h {
            for x in 0..grad.w {
                if mask.get(x, y) {
                    *grad.at_mut(c, y, x) = grad_composite.at(c, y, x);
                }
            }
        }
    }
    grad
}

/// Mean absolute difference over masked pixels and channels:
/// `sum_masked |a - b| / (3 * |mask|)`.
pub fn masked_l1_mean(a: &Tensor, b: &Tensor, mask: &MaskImage) -> f64 {
    let count = mask.count();
    if count == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for c in 0..a.c {
        for y in 0..a.h {
            for x in 0..a.w {
                if mask.get(x, y) {
                    total += (a.at(c, y, x) - b.at(c, y, x)).abs();
                }
            }
        }
    }
    total / (a.c as f64 * count as f64)
}

/// Gradient of [`masked_l1_mean`] with respect to `a`.
pub fn masked_l1_backward(a: &Tensor, b: &Tensor, mask: &MaskImage) -> Tensor {
    let count = mask.count();
    let mut grad = Tensor::zeros(a.c, a.h, a.w);
    if count == 0 {
        return grad;
    }
    let scale = 1.0 / (a.c as f64 * count as f64);
    for c in 0..a.c {
        for y in 0..a.h {
            for x in 0..a.w {
                if mask.get(x, y) {
                    let d = a.at(c, y, x) - b.at(c, y, x);
                    *grad.at_mut(c, y, x) = scale * d.signum();
                }
            }
        }
    }
    grad
}

/// Generator loss: fool-the-discriminator BCE plus the weighted head-masked
/// L1 between the composite and the original image.
pub fn loss_g(
    d_out_on_fake: f64,
    composite: &Tensor,
    original: &Tensor,
    mask: &MaskImage,
    lambda: f64,
) -> f64 {
    bce(d_out_on_fake, 1.0) + lambda * masked_l1_mean(composite, original, mask)
}

/// Discriminator loss: real scored as 1, fake as 0.
pub fn loss_d(d_out_real: f64, d_out_fake: f64) -> f64 {
    bce(d_out_real, 1.0) + bce(d_out_fake, 0.0)
}
