//! Interactive browser demo over the faceveil core: a face explorer with
//! identity / expression / pose / lighting sliders, identity replacement
//! against a clustered population, and an obfuscation preview.
//!
//! Build with `wasm-pack build crates/demo --target web`; `static/index.html`
//! loads the generated module. All state lives in [`FaceLab`]; renders come
//! back as RGBA byte buffers for a canvas `ImageData`. The logic itself is
//! target-independent (see the `ops` methods), so it is testable natively.

use faceveil::error::{Error, Result};
use faceveil::identity::{cluster_identities, extract_identity, replace_identity, ClusterSet};
use faceveil::image::ImageRgb;
use faceveil::imageops::{hair_mask, head_mask_from_bbox, obfuscate_region, ObfuscationMode};
use faceveil::model::{synth_model, Camera, FaceModel, SemanticParams, DELTA_DIM};
use faceveil::render::rasterize;
use faceveil::scenes::{compose_scene, random_identity_params};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use wasm_bindgen::prelude::*;

const POPULATION: usize = 90;

fn rgba_bytes(image: &ImageRgb) -> Vec<u8> {
    let mut out = Vec::with_capacity(image.width() * image.height() * 4);
    for y in 0..image.height() {
        for x in 0..image.width() {
            let p = image.get(x, y);
            for v in p {
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            out.push(255);
        }
    }
    out
}

/// Demo state: a synthetic face model, a clustered identity population, and
/// the slider-controlled current face.
#[wasm_bindgen]
pub struct FaceLab {
    model: FaceModel,
    clusters: ClusterSet,
    current: SemanticParams,
    seed: u64,
}

/// Target-independent operations; the wasm surface delegates here.
impl FaceLab {
    pub fn create(seed: u64, vertices: usize) -> Result<FaceLab> {
        let model = synth_model(seed, vertices.max(200))?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x51ce);
        let population: Vec<_> = (0..POPULATION)
            .map(|_| extract_identity(&random_identity_params(&model, &mut rng, 0.8)))
            .collect();
        let clusters = cluster_identities(&population, 15, seed)?;
        let current = SemanticParams::frontal(0.55);
        Ok(FaceLab {
            model,
            clusters,
            current,
            seed,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn face_rgba(
        &mut self,
        width: usize,
        height: usize,
        identity_a: f64,
        identity_b: f64,
        identity_c: f64,
        expression: f64,
        yaw: f64,
        pitch: f64,
        light_x: f64,
        light_y: f64,
    ) -> Result<Vec<u8>> {
        let mut p = SemanticParams::frontal(0.55);
        p.alpha[0] = identity_a * self.model.sigma_shape()[0];
        p.alpha[1] = identity_b * self.model.sigma_shape()[1];
        p.beta[1] = identity_c * self.model.sigma_reflect()[1];
        p.beta[4] = -identity_c * 0.6 * self.model.sigma_reflect()[4];
        for i in 0..DELTA_DIM.min(6) {
            p.delta[i] =
                expression * [1.0, -0.7, 0.5, -0.4, 0.3, -0.2][i] * self.model.sigma_expr()[i];
        }
        p.phi[4] = yaw;
        p.phi[3] = pitch;
        // Band-1 lighting tilt on top of neutral white.
        for ch in 0..3 {
            p.gamma[9 * ch + 3] = light_x;
            p.gamma[9 * ch + 1] = light_y;
        }
        self.current = p;
        let camera = Camera::default_for(width, height);
        let mesh = self.model.decode(&self.current, &camera)?;
        let raster = rasterize(&mesh, &self.model, (width, height));
        Ok(rgba_bytes(&raster.color))
    }

    pub fn replacement_rgba(&self, width: usize, height: usize, rank: usize) -> Result<Vec<u8>> {
        let replacement = self.clusters.select_replacer(&self.current, rank)?;
        let replaced = replace_identity(&self.current, &replacement);
        let camera = Camera::default_for(width, height);
        let mut canvas = ImageRgb::new(2 * width, height);
        for (slot, params) in [(0usize, &self.current), (1, &replaced)] {
            let mesh = self.model.decode(params, &camera)?;
            let raster = rasterize(&mesh, &self.model, (width, height));
            for y in 0..height {
                for x in 0..width {
                    canvas.set(slot * width + x, y, raster.color.get(x, y));
                }
            }
        }
        Ok(rgba_bytes(&canvas))
    }

    pub fn obfuscation_rgba(
        &self,
        size: usize,
        face_mode: &str,
        hair_mode: &str,
        replacer_rank: usize,
        scene_seed: u64,
    ) -> Result<Vec<u8>> {
        let face_mode: ObfuscationMode = face_mode.parse()?;
        let hair_mode: ObfuscationMode = hair_mode.parse()?;
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed ^ (scene_seed << 8));
        let identity = random_identity_params(&self.model, &mut rng, 0.7);
        let scene = compose_scene(&self.model, &identity, (size, size), &mut rng)?;
        let mesh = self.model.decode(&scene.truth, &scene.camera)?;
        let raster = rasterize(&mesh, &self.model, (size, size));
        let face_region = raster.coverage.clone();
        let head = head_mask_from_bbox(&scene.head_box, (size, size));
        let hair = hair_mask(&head, &face_region);

        let obfuscated = obfuscate_region(&scene.image, &face_region, face_mode, None)?;
        let obfuscated = obfuscate_region(&obfuscated, &hair, hair_mode, None)?;

        // Stage-I overlay with a replaced identity at the requested rank
        // (rank 0 keeps the scene's own identity).
        let replaced = if replacer_rank == 0 {
            scene.truth.clone()
        } else {
            let replacement = self.clusters.select_replacer(&scene.truth, replacer_rank)?;
            replace_identity(&scene.truth, &replacement)
        };
        let replaced_mesh = self.model.decode(&replaced, &scene.camera)?;
        let replaced_raster = rasterize(&replaced_mesh, &self.model, (size, size));
        let mut overlay = obfuscated.clone();
        for y in 0..size {
            for x in 0..size {
                if replaced_raster.coverage.get(x, y) {
                    overlay.set(x, y, replaced_raster.color.get(x, y));
                }
            }
        }

        let mut canvas = ImageRgb::new(3 * size, size);
        for (slot, img) in [(0usize, &scene.image), (1, &obfuscated), (2, &overlay)] {
            for y in 0..size {
                for x in 0..size {
                    canvas.set(slot * size + x, y, img.get(x, y));
                }
            }
        }
        Ok(rgba_bytes(&canvas))
    }

    pub fn rank_distances(&self) -> Result<Vec<f64>> {
        let query = extract_identity(&self.current);
        let mut out = Vec::with_capacity(self.clusters.centroids.len());
        for rank in 1..=self.clusters.centroids.len() {
            let r = self.clusters.select_replacer(&self.current, rank)?;
            out.push(r.distance(&query));
        }
        Ok(out)
    }
}

fn to_js(e: Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Browser surface; thin delegation with JsValue errors.
#[wasm_bindgen]
impl FaceLab {
    /// Build the model and cluster a synthetic population (takes a moment).
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, vertices: u32) -> std::result::Result<FaceLab, JsValue> {
        Self::create(seed as u64, vertices as usize).map_err(to_js)
    }

    /// Redraw the current face; sliders map to the leading identity and
    /// expression modes and to pose / lighting.
    #[allow(clippy::too_many_arguments)]
    pub fn render_face(
        &mut self,
        width: u32,
        height: u32,
        identity_a: f64,
        identity_b: f64,
        identity_c: f64,
        expression: f64,
        yaw: f64,
        pitch: f64,
        light_x: f64,
        light_y: f64,
    ) -> std::result::Result<Vec<u8>, JsValue> {
        self.face_rgba(
            width as usize,
            height as usize,
            identity_a,
            identity_b,
            identity_c,
            expression,
            yaw,
            pitch,
            light_x,
            light_y,
        )
        .map_err(to_js)
    }

    /// Side-by-side render: current face left, rank-k replacement right.
    pub fn render_replacement(
        &self,
        width: u32,
        height: u32,
        rank: u32,
    ) -> std::result::Result<Vec<u8>, JsValue> {
        self.replacement_rgba(width as usize, height as usize, rank as usize)
            .map_err(to_js)
    }

    /// Scene / obfuscated / overlay triptych.
    pub fn render_obfuscation(
        &self,
        size: u32,
        face_mode: &str,
        hair_mode: &str,
        replacer_rank: u32,
        scene_seed: u32,
    ) -> std::result::Result<Vec<u8>, JsValue> {
        self.obfuscation_rgba(
            size as usize,
            face_mode,
            hair_mode,
            replacer_rank as usize,
            scene_seed as u64,
        )
        .map_err(to_js)
    }

    /// Distances from the current face to each replacer rank, for the UI.
    pub fn replacer_distances(&self) -> std::result::Result<Vec<f64>, JsValue> {
        self.rank_distances().map_err(to_js)
    }
}
