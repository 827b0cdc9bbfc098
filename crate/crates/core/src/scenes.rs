//! Synthetic scene corpus: identity-colored heads rendered over procedural
//! backgrounds, with annotations, landmarks, and ground-truth parameters.
//! Used for fitting fixtures, inpainter training tuples, and pipeline runs
//! without real photographs.

use crate::error::Result;
use crate::identity::{extract_identity, IdentityVector};
use crate::image::ImageRgb;
use crate::imageops::{hair_mask, head_mask_from_bbox, HeadAnnotation, ObfuscationMode};
use crate::inpaint::{Tensor, TrainItem};
use crate::model::{
    landmark_positions, Camera, FaceModel, SemanticParams, ALPHA_DIM, BETA_DIM, DELTA_DIM,
};
use crate::render;
use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// A composed synthetic photograph with its ground truth.
#[derive(Clone, Debug)]
pub struct Scene {
    pub image: ImageRgb,
    pub head_box: HeadAnnotation,
    pub landmarks: Vec<Vector2<f64>>,
    pub truth: SemanticParams,
    pub camera: Camera,
}

/// Identity coefficients drawn at a fraction of each mode's deviation.
pub fn random_identity_params(
    model: &FaceModel,
    rng: &mut ChaCha12Rng,
    spread: f64,
) -> SemanticParams {
    let mut p = SemanticParams::frontal(0.6);
    for i in 0..ALPHA_DIM {
        p.alpha[i] = rng.gen_range(-spread..spread) * model.sigma_shape()[i];
    }
    for i in 0..BETA_DIM {
        p.beta[i] = rng.gen_range(-spread..spread) * model.sigma_reflect()[i];
    }
    p
}

/// Deterministic identity-correlated hair color, kept inside [0.08, 0.92].
pub fn hair_color_for(identity: &IdentityVector) -> [f64; 3] {
    let mut proj = ChaCha12Rng::seed_from_u64(0x4a1b);
    let mut out = [0.0; 3];
    for channel in out.iter_mut() {
        let mut acc = 0.0;
        for v in &identity.0 {
            acc += v * proj.gen_range(-1.0..1.0);
        }
        *channel = 0.5 + 0.42 * (6.0 * acc).tanh();
    }
    out
}

fn paint_background(size: (usize, usize), rng: &mut ChaCha12Rng) -> ImageRgb {
    let (w, h) = size;
    let a: [f64; 3] = [
        rng.gen_range(0.2..0.8),
        rng.gen_range(0.2..0.8),
        rng.gen_range(0.2..0.8),
    ];
    let b: [f64; 3] = [
        rng.gen_range(0.2..0.8),
        rng.gen_range(0.2..0.8),
        rng.gen_range(0.2..0.8),
    ];
    let freq = rng.gen_range(2.0..5.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    ImageRgb::from_fn(w, h, |x, y| {
        let t = y as f64 / h as f64;
        let s = 0.06 * ((x as f64 / w as f64 * freq * std::f64::consts::TAU) + phase).sin();
        let mut px = [0.0; 3];
        for c in 0..3 {
            px[c] = (a[c] * (1.0 - t) + b[c] * t + s).clamp(0.0, 1.0);
        }
        px
    })
}

fn fill_ellipse(image: &mut ImageRgb, cx: f64, cy: f64, rx: f64, ry: f64, color: [f64; 3]) {
    let (w, h) = (image.width(), image.height());
    for y in 0..h {
        for x in 0..w {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            if dx * dx + dy * dy <= 1.0 {
                image.set(x, y, color);
            }
        }
    }
}

/// Compose a scene at the given size: background, torso, identity-colored
/// hair ellipse, and the rendered face, with the head box around the hair.
pub fn compose_scene(
    model: &FaceModel,
    identity: &SemanticParams,
    size: (usize, usize),
    rng: &mut ChaCha12Rng,
) -> Result<Scene> {
    let (w, h) = size;
    let camera = Camera::default_for(w, h);
    let mut truth = identity.clone();
    // Mild expression and pose variation around a frontal view.
    for i in 0..DELTA_DIM {
        truth.delta[i] = rng.gen_range(-0.3..0.3) * model.sigma_expr()[i];
    }
    truth.phi[3] = rng.gen_range(-0.10..0.10);
    truth.phi[4] = rng.gen_range(-0.12..0.12);
    truth.phi[5] = rng.gen_range(-0.08..0.08);
    // Depth so the face spans roughly 36-46% of the image height.
    let face_height = 0.26;
    let target_px = h as f64 * rng.gen_range(0.36..0.46);
    let z = camera.focal * face_height / target_px;
    truth.phi[2] = z;
    truth.phi[0] = rng.gen_range(-0.06..0.06) * z * w as f64 / camera.focal;
    truth.phi[1] = (rng.gen_range(-0.05..0.02) - 0.08) * z * h as f64 / camera.focal;
    // Lighting: neutral white with a directional tint.
    truth.gamma[1] = rng.gen_range(-0.5..0.1);
    truth.gamma[3] = rng.gen_range(-0.3..0.3);
    truth.gamma[10] = truth.gamma[1] * 0.9;
    truth.gamma[12] = truth.gamma[3] * 0.9;
    truth.gamma[19] = truth.gamma[1] * 0.8;
    truth.gamma[21] = truth.gamma[3] * 0.8;

    let mesh = model.decode(&truth, &camera)?;
    let mut min = Vector2::new(f64::INFINITY, f64::INFINITY);
    let mut max = Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for u in &mesh.projections {
        min.x = min.x.min(u.x);
        min.y = min.y.min(u.y);
        max.x = max.x.max(u.x);
        max.y = max.y.max(u.y);
    }
    let center = (min + max) / 2.0;
    let half = (max - min) / 2.0;

    let mut image = paint_background(size, rng);
    // Torso block under the head.
    let torso: [f64; 3] = [
        rng.gen_range(0.1..0.9),
        rng.gen_range(0.1..0.9),
        rng.gen_range(0.1..0.9),
    ];
    let torso_top = (center.y + half.y * 0.9).max(0.0);
    for y in torso_top as usize..h {
        let spread = half.x * (1.6 + 1.2 * (y as f64 - torso_top) / h as f64);
        for x in 0..w {
            if (x as f64 + 0.5 - center.x).abs() < spread {
                image.set(x, y, torso);
            }
        }
    }
    // Hair ellipse carries identity information around the face.
    let hair = hair_color_for(&extract_identity(&truth));
    let (rx, ry) = (half.x * 1.45, half.y * 1.35);
    fill_ellipse(&mut image, center.x, center.y - half.y * 0.12, rx, ry, hair);
    // Rendered face on top.
    let raster = render::rasterize(&mesh, model, size);
    for y in 0..h {
        for x in 0..w {
            if raster.coverage.get(x, y) {
                image.set(x, y, raster.color.get(x, y));
            }
        }
    }

    let head_x = center.x - rx - 2.0;
    let head_y = center.y - half.y * 0.12 - ry - 2.0;
    let head_box = HeadAnnotation::new(head_x, head_y, 2.0 * (rx + 2.0), 2.0 * (ry + 2.0))?;
    let landmarks = landmark_positions(&mesh, model);
    Ok(Scene {
        image,
        head_box,
        landmarks,
        truth,
        camera,
    })
}

/// Training tuples at the generator resolution: original scene, conditioning
/// with face/hair obfuscated, the truth render, and the head mask.
pub fn make_train_items(
    model: &FaceModel,
    count: usize,
    resolution: usize,
    seed: u64,
    face_mode: ObfuscationMode,
    hair_mode: ObfuscationMode,
) -> Result<Vec<TrainItem>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(count);
    for _ in 0..count {
        let identity = random_identity_params(model, &mut rng, 0.7);
        let scene = compose_scene(model, &identity, (resolution, resolution), &mut rng)?;
        let mesh = model.decode(&scene.truth, &scene.camera)?;
        let raster = render::rasterize(&mesh, model, (resolution, resolution));
        let face = raster.coverage.clone();
        let head = head_mask_from_bbox(&scene.head_box, (resolution, resolution));
        let hair = hair_mask(&head, &face);
        let obfuscated = crate::imageops::obfuscate_region(&scene.image, &face, face_mode, None)?;
        let obfuscated = crate::imageops::obfuscate_region(&obfuscated, &hair, hair_mode, None)?;
        // Conditioning render: the face layer alone over black.
        let mut rendered = ImageRgb::new(resolution, resolution);
        for y in 0..resolution {
            for x in 0..resolution {
                if face.get(x, y) {
                    rendered.set(x, y, raster.color.get(x, y));
                }
            }
        }
        items.push(TrainItem {
            obfuscated: Tensor::from_image(&obfuscated),
            rendered: Tensor::from_image(&rendered),
            original: Tensor::from_image(&scene.image),
            head_mask: head,
        });
    }
    Ok(items)
}
