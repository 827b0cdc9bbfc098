//! Analysis-by-synthesis fitting: landmark, photometric, and statistical
//! regularization energies, their stacked residual / analytic Jacobian form,
//! and the damped Gauss-Newton minimizers.

mod jacobian;
mod solver;

pub use solver::{fit_full, refine_pose_expression, FitReport, REFINE_ITERATIONS};

use crate::error::{Error, Result};
use crate::image::ImageRgb;
use crate::model::{
    landmark_positions, Camera, FaceModel, SemanticParams, ALPHA_DIM, ALPHA_OFF, BETA_DIM,
    BETA_OFF, DELTA_DIM, DELTA_OFF, LANDMARK_COUNT, PARAM_DIM, PHI_DIM, PHI_OFF,
};
use crate::render;
use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

/// Energy term weights. `w_e` and `w_r` scale the expression and reflectance
/// blocks inside the regularizer; `w_photo` and `w_reg` scale whole terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyWeights {
    pub w_photo: f64,
    pub w_reg: f64,
    pub w_e: f64,
    pub w_r: f64,
}

impl EnergyWeights {
    pub const DEFAULT_W_REG: f64 = 2.5e-3;
    pub const DEFAULT_W_E: f64 = 0.8;
    pub const DEFAULT_W_R: f64 = 1.7e-3;

    /// Defaults with the photometric weight normalized against the visible
    /// vertex count so landmark and photometric magnitudes stay comparable.
    pub fn defaults_for(visible_count: usize) -> Self {
        let w_photo = 1.92 * LANDMARK_COUNT as f64 / (visible_count.max(1) as f64);
        Self {
            w_photo,
            w_reg: Self::DEFAULT_W_REG,
            w_e: Self::DEFAULT_W_E,
            w_r: Self::DEFAULT_W_R,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_photo", self.w_photo),
            ("w_reg", self.w_reg),
            ("w_e", self.w_e),
            ("w_r", self.w_r),
        ] {
            if v.is_nan() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Mask over the 257 parameter dimensions selecting what the solver updates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActiveSet {
    mask: Vec<bool>,
}

impl ActiveSet {
    pub fn all() -> Self {
        Self {
            mask: vec![true; PARAM_DIM],
        }
    }

    pub fn none() -> Self {
        Self {
            mask: vec![false; PARAM_DIM],
        }
    }

    /// Pose and expression only (the refinement mask).
    pub fn pose_expression() -> Self {
        let mut s = Self::none();
        s.set_block(PHI_OFF, PHI_DIM, true);
        s.set_block(DELTA_OFF, DELTA_DIM, true);
        s
    }

    /// Pose only.
    pub fn pose() -> Self {
        let mut s = Self::none();
        s.set_block(PHI_OFF, PHI_DIM, true);
        s
    }

    pub fn set_block(&mut self, offset: usize, len: usize, value: bool) {
        for i in offset..offset + len {
            self.mask[i] = value;
        }
    }

    pub fn is_active(&self, dim: usize) -> bool {
        self.mask[dim]
    }

    /// Indices of active dimensions, ascending.
    pub fn indices(&self) -> Vec<usize> {
        (0..PARAM_DIM).filter(|&i| self.mask[i]).collect()
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// One fitting task: model, camera, target image, landmarks, weights, and the
/// set of parameters being optimized.
pub struct FitProblem<'a> {
    pub model: &'a FaceModel,
    pub camera: Camera,
    pub image: ImageRgb,
    pub landmarks: Vec<Vector2<f64>>,
    pub weights: EnergyWeights,
    pub active: ActiveSet,
}

impl<'a> FitProblem<'a> {
    pub fn new(
        model: &'a FaceModel,
        camera: Camera,
        image: ImageRgb,
        landmarks: Vec<Vector2<f64>>,
        weights: EnergyWeights,
    ) -> Result<Self> {
        if landmarks.len() != LANDMARK_COUNT {
            return Err(Error::invalid(format!(
                "expected {LANDMARK_COUNT} landmarks, got {}",
                landmarks.len()
            )));
        }
        if image.width() != camera.width || image.height() != camera.height {
            return Err(Error::invalid("image size does not match camera"));
        }
        for l in &landmarks {
            if !image.contains(l.x, l.y) {
                return Err(Error::invalid(format!(
                    "landmark ({}, {}) outside image",
                    l.x, l.y
                )));
            }
        }
        weights.validate()?;
        Ok(Self {
            model,
            camera,
            image,
            landmarks,
            weights,
            active: ActiveSet::all(),
        })
    }

    /// Defaults with `w_photo` normalized by the visibility of `reference`
    /// (usually the initialization pose).
    pub fn with_default_weights(
        model: &'a FaceModel,
        camera: Camera,
        image: ImageRgb,
        landmarks: Vec<Vector2<f64>>,
        reference: &SemanticParams,
    ) -> Result<Self> {
        let mesh = model.decode(reference, &camera)?;
        let visible = render::visibility(&mesh, model).len();
        Self::new(
            model,
            camera,
            image,
            landmarks,
            EnergyWeights::defaults_for(visible),
        )
    }
}

/// Landmark alignment energy: sum of squared pixel distances between target
/// landmarks and the projections of the landmark vertices.
pub fn e_land(params: &SemanticParams, problem: &FitProblem) -> Result<f64> {
    let mesh = problem.model.decode(params, &problem.camera)?;
    let projected = landmark_positions(&mesh, problem.model);
    Ok(projected
        .iter()
        .zip(&problem.landmarks)
        .map(|(u, l)| (u - l).norm_squared())
        .sum())
}

/// Photometric energy over the visible vertex set: squared distance between
/// the bilinearly sampled image and the shaded vertex color. Vertices
/// projecting outside the image are dropped from the sum.
pub fn e_photo(params: &SemanticParams, problem: &FitProblem, visible: &[usize]) -> Result<f64> {
    let mesh = problem.model.decode(params, &problem.camera)?;
    Ok(e_photo_mesh(&mesh, problem, visible))
}

fn e_photo_mesh(mesh: &crate::model::DecodedMesh, problem: &FitProblem, visible: &[usize]) -> f64 {
    let mut total = 0.0;
    for &i in visible {
        let u = mesh.projections[i];
        if !problem.image.contains(u.x, u.y) {
            continue;
        }
        let sampled = problem.image.sample_bilinear(u.x, u.y);
        let c = mesh.colors[i];
        for ch in 0..3 {
            let d = sampled[ch] - c[ch];
            total += d * d;
        }
    }
    total
}

/// Tikhonov-style statistical regularizer in squared form:
/// `sum(a_i^2/s_i^2) + w_e * sum(d_i^2/s_i^2) + w_r * sum(b_i^2/s_i^2)`.
pub fn e_reg(params: &SemanticParams, model: &FaceModel, weights: &EnergyWeights) -> f64 {
    let term = |coef: &DVector<f64>, sigma: &DVector<f64>| -> f64 {
        coef.iter()
            .zip(sigma.iter())
            .map(|(c, s)| (c / s) * (c / s))
            .sum()
    };
    term(&params.alpha, model.sigma_shape())
        + weights.w_e * term(&params.delta, model.sigma_expr())
        + weights.w_r * term(&params.beta, model.sigma_reflect())
}

/// Full energy: `e_land + w_photo * e_photo + w_reg * e_reg`, with the
/// visibility set recomputed at `params`.
pub fn e_loss(params: &SemanticParams, problem: &FitProblem) -> Result<f64> {
    let mesh = problem.model.decode(params, &problem.camera)?;
    let visible = render::visibility(&mesh, problem.model);
    let land: f64 = landmark_positions(&mesh, problem.model)
        .iter()
        .zip(&problem.landmarks)
        .map(|(u, l)| (u - l).norm_squared())
        .sum();
    let photo = e_photo_mesh(&mesh, problem, &visible);
    let reg = e_reg(params, problem.model, &problem.weights);
    Ok(land + problem.weights.w_photo * photo + problem.weights.w_reg * reg)
}

/// The residual stack and analytic Jacobian at `params`.
///
/// Row layout: 132 landmark rows, 3 rows per kept visible vertex
/// (sqrt(w_photo)-weighted), then 224 regularizer rows. The Jacobian has one
/// column per active dimension, ordered by ascending dimension index;
/// `||r||^2` reproduces [`e_loss`] at the same parameters.
pub fn residuals_and_jacobian(
    params: &SemanticParams,
    problem: &FitProblem,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let structure = ResidualStructure::at(params, problem)?;
    jacobian::evaluate(params, problem, &structure, true).map(|(r, j)| (r, j.unwrap()))
}

/// Residual vector alone (no Jacobian) under a frozen structure; used by the
/// finite-difference oracles so the row layout cannot change between probes.
pub fn residuals_with_structure(
    params: &SemanticParams,
    problem: &FitProblem,
    structure: &ResidualStructure,
) -> Result<DVector<f64>> {
    jacobian::evaluate(params, problem, structure, false).map(|(r, _)| r)
}

/// Jacobian under a caller-frozen structure.
pub fn jacobian_with_structure(
    params: &SemanticParams,
    problem: &FitProblem,
    structure: &ResidualStructure,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    jacobian::evaluate(params, problem, structure, true).map(|(r, j)| (r, j.unwrap()))
}

/// Frozen row layout of the residual stack: which vertices contribute
/// photometric rows.
#[derive(Clone, Debug)]
pub struct ResidualStructure {
    /// Visible vertices that also project inside the image at the reference
    /// parameters, ascending.
    pub photo_vertices: Vec<usize>,
}

impl ResidualStructure {
    pub fn at(params: &SemanticParams, problem: &FitProblem) -> Result<Self> {
        let mesh = problem.model.decode(params, &problem.camera)?;
        let visible = render::visibility(&mesh, problem.model);
        let photo_vertices = visible
            .into_iter()
            .filter(|&i| {
                let u = mesh.projections[i];
                problem.image.contains(u.x, u.y)
            })
            .collect();
        Ok(Self { photo_vertices })
    }

    pub fn row_count(&self) -> usize {
        2 * LANDMARK_COUNT + 3 * self.photo_vertices.len() + ALPHA_DIM + DELTA_DIM + BETA_DIM
    }
}

pub(crate) fn reg_row_scales(model: &FaceModel, weights: &EnergyWeights) -> Vec<(usize, f64)> {
    // (parameter dim, residual scale) for the 224 regularizer rows, in the
    // energy's block order: alpha, delta, beta.
    let sw = weights.w_reg.sqrt();
    let mut rows = Vec::with_capacity(ALPHA_DIM + DELTA_DIM + BETA_DIM);
    for i in 0..ALPHA_DIM {
        rows.push((ALPHA_OFF + i, sw / model.sigma_shape()[i]));
    }
    let we = weights.w_e.sqrt();
    for i in 0..DELTA_DIM {
        rows.push((DELTA_OFF + i, sw * we / model.sigma_expr()[i]));
    }
    let wr = weights.w_r.sqrt();
    for i in 0..BETA_DIM {
        rows.push((BETA_OFF + i, sw * wr / model.sigma_reflect()[i]));
    }
    rows
}

/// Heuristic pose initialization from landmarks: depth from the spread ratio
/// between model-space landmark extent and pixel extent, translation from the
/// landmark centroid, angles zero.
pub fn init_pose_from_landmarks(
    model: &FaceModel,
    landmarks: &[Vector2<f64>],
    camera: &Camera,
) -> SemanticParams {
    let mean = model.mean_shape();
    let idx = model.landmark_indices();
    let mut min_m = Vector2::new(f64::INFINITY, f64::INFINITY);
    let mut max_m = Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &i in idx {
        min_m.x = min_m.x.min(mean[3 * i]);
        max_m.x = max_m.x.max(mean[3 * i]);
        min_m.y = min_m.y.min(mean[3 * i + 1]);
        max_m.y = max_m.y.max(mean[3 * i + 1]);
    }
    let mut min_p = Vector2::new(f64::INFINITY, f64::INFINITY);
    let mut max_p = Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut centroid = Vector2::zeros();
    for l in landmarks {
        min_p.x = min_p.x.min(l.x);
        max_p.x = max_p.x.max(l.x);
        min_p.y = min_p.y.min(l.y);
        max_p.y = max_p.y.max(l.y);
        centroid += l;
    }
    centroid /= landmarks.len() as f64;
    let mut centroid_m = Vector2::zeros();
    let mut mean_depth = 0.0;
    for &i in idx {
        centroid_m.x += mean[3 * i];
        centroid_m.y += mean[3 * i + 1];
        mean_depth += mean[3 * i + 2];
    }
    centroid_m /= idx.len() as f64;
    mean_depth /= idx.len() as f64;
    let extent_m = (max_m - min_m).norm().max(1e-6);
    let extent_p = (max_p - min_p).norm().max(1e-6);
    // Depth of the landmark plane, shifted back to the model origin.
    let z = (camera.focal * extent_m / extent_p - mean_depth).max(10.0 * crate::model::Z_NEAR);
    let z_lm = z + mean_depth;
    let mut p = SemanticParams::frontal(z);
    p.phi[0] = (centroid.x - camera.cx) * z_lm / camera.focal - centroid_m.x;
    p.phi[1] = (centroid.y - camera.cy) * z_lm / camera.focal - centroid_m.y;
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::synth_model;
    use approx::assert_relative_eq;

    fn problem_with_flat_image(model: &FaceModel) -> FitProblem<'_> {
        let camera = Camera::default_for(96, 96);
        let image = ImageRgb::from_fn(96, 96, |x, y| {
            [
                0.2 + 0.5 * x as f64 / 96.0,
                0.3 + 0.4 * y as f64 / 96.0,
                0.5,
            ]
        });
        let params = SemanticParams::frontal(0.55);
        let mesh = model.decode(&params, &camera).unwrap();
        let landmarks = landmark_positions(&mesh, model);
        FitProblem::new(
            model,
            camera,
            image,
            landmarks,
            EnergyWeights::defaults_for(200),
        )
        .unwrap()
    }

    #[test]
    fn e_land_zero_at_exact_landmarks() {
        let model = synth_model(42, 300).unwrap();
        let problem = problem_with_flat_image(&model);
        let v = e_land(&SemanticParams::frontal(0.55), &problem).unwrap();
        assert_relative_eq!(v, 0.0, epsilon = 1e-18);
    }

    #[test]
    fn e_land_single_offset_of_3_4_gives_25() {
        let model = synth_model(42, 300).unwrap();
        let mut problem = problem_with_flat_image(&model);
        problem.landmarks[5].x += 3.0;
        problem.landmarks[5].y += 4.0;
        let v = e_land(&SemanticParams::frontal(0.55), &problem).unwrap();
        assert_relative_eq!(v, 25.0, epsilon = 1e-9);
    }

    #[test]
    fn e_land_quadruples_when_offsets_double() {
        let model = synth_model(42, 300).unwrap();
        let base = problem_with_flat_image(&model);
        let params = SemanticParams::frontal(0.55);
        let mut once = problem_with_flat_image(&model);
        let mut twice = problem_with_flat_image(&model);
        for i in 0..LANDMARK_COUNT {
            let off = Vector2::new((i as f64 * 0.37).sin(), (i as f64 * 0.71).cos());
            once.landmarks[i] = base.landmarks[i] + off;
            twice.landmarks[i] = base.landmarks[i] + off * 2.0;
        }
        let e1 = e_land(&params, &once).unwrap();
        let e2 = e_land(&params, &twice).unwrap();
        assert_relative_eq!(e2, 4.0 * e1, max_relative = 1e-12);
    }

    #[test]
    fn e_reg_zero_at_mean_and_normalized_at_one_sigma() {
        let model = synth_model(42, 300).unwrap();
        let w = EnergyWeights::defaults_for(100);
        let mut p = SemanticParams::zeros();
        assert_eq!(e_reg(&p, &model, &w), 0.0);
        p.alpha[0] = model.sigma_shape()[0];
        assert_relative_eq!(e_reg(&p, &model, &w), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn e_reg_w_r_scales_only_beta_block() {
        let model = synth_model(42, 300).unwrap();
        let mut w = EnergyWeights::defaults_for(100);
        let mut p = SemanticParams::zeros();
        p.alpha[2] = 0.01;
        p.beta[3] = 0.02;
        p.delta[1] = 0.005;
        let base = e_reg(&p, &model, &w);
        let beta_part = w.w_r * (p.beta[3] / model.sigma_reflect()[3]).powi(2);
        w.w_r *= 2.0;
        let doubled = e_reg(&p, &model, &w);
        assert_relative_eq!(doubled - base, beta_part, max_relative = 1e-12);
    }

    #[test]
    fn e_photo_zero_when_image_matches_colors_exactly() {
        // Constant vertex colors against a constant image: every sampled
        // value equals the vertex color, so the energy is exactly zero.
        let model = synth_model(7, 400).unwrap();
        let camera = Camera::default_for(96, 96);
        let params = SemanticParams::frontal(0.55);
        let mesh0 = model.decode(&params, &camera).unwrap();
        let landmarks = landmark_positions(&mesh0, &model);
        let image = ImageRgb::from_fn(96, 96, |_, _| [0.4, 0.25, 0.7]);
        let problem = FitProblem::new(
            &model,
            camera,
            image,
            landmarks,
            EnergyWeights::defaults_for(100),
        )
        .unwrap();
        let mut mesh = mesh0;
        for c in mesh.colors.iter_mut() {
            *c = nalgebra::Vector3::new(0.4, 0.25, 0.7);
        }
        let visible = crate::render::visibility(&mesh, &model);
        assert!(!visible.is_empty());
        let v = super::e_photo_mesh(&mesh, &problem, &visible);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn e_photo_small_on_interior_of_own_render() {
        // Against its own raster, interior vertices differ only by resampling.
        let model = synth_model(7, 400).unwrap();
        let camera = Camera::default_for(96, 96);
        let params = SemanticParams::frontal(0.55);
        let mesh = model.decode(&params, &camera).unwrap();
        let raster = crate::render::rasterize(&mesh, &model, (96, 96));
        let landmarks = landmark_positions(&mesh, &model);
        let coverage = raster.coverage.clone();
        let problem = FitProblem::new(
            &model,
            camera,
            raster.color,
            landmarks,
            EnergyWeights::defaults_for(100),
        )
        .unwrap();
        let interior: Vec<usize> = crate::render::visibility(&mesh, &model)
            .into_iter()
            .filter(|&i| {
                // Strongly camera-facing and fully inside coverage.
                let u = mesh.projections[i];
                let (x, y) = (u.x as isize, u.y as isize);
                mesh.normals[i].z < -0.45
                    && (x - 1..=x + 1).all(|xx| {
                        (y - 1..=y + 1).all(|yy| {
                            xx >= 0
                                && yy >= 0
                                && (xx as usize) < 96
                                && (yy as usize) < 96
                                && coverage.get(xx as usize, yy as usize)
                        })
                    })
            })
            .collect();
        assert!(
            interior.len() > 30,
            "need interior vertices, got {}",
            interior.len()
        );
        let v = super::e_photo_mesh(&mesh, &problem, &interior);
        let rms = (v / (3.0 * interior.len() as f64)).sqrt();
        assert!(rms < 0.02, "interior resampling rms {rms}");
    }

    #[test]
    fn e_photo_counts_single_channel_unit_difference() {
        let model = synth_model(42, 300).unwrap();
        let camera = Camera::default_for(96, 96);
        // Black image, single visible vertex with unit red color.
        let image = ImageRgb::new(96, 96);
        let params = SemanticParams::frontal(0.55);
        let mesh0 = model.decode(&params, &camera).unwrap();
        let landmarks = landmark_positions(&mesh0, &model);
        let problem = FitProblem::new(
            &model,
            camera,
            image,
            landmarks,
            EnergyWeights::defaults_for(100),
        )
        .unwrap();
        // Hand-built single-vertex sum: residual (1,0,0) -> energy 1.
        let mut mesh = mesh0;
        mesh.colors[3] = nalgebra::Vector3::new(1.0, 0.0, 0.0);
        let visible = vec![3usize];
        let v = super::e_photo_mesh(&mesh, &problem, &visible);
        assert_relative_eq!(v, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn e_photo_bilinear_half_pixel_oracle() {
        let model = synth_model(42, 300).unwrap();
        let camera = Camera::default_for(96, 96);
        let mut image = ImageRgb::new(96, 96);
        image.set(10, 10, [0.0; 3]);
        image.set(11, 10, [1.0, 1.0, 1.0]);
        let params = SemanticParams::frontal(0.55);
        let mesh0 = model.decode(&params, &camera).unwrap();
        let landmarks = landmark_positions(&mesh0, &model);
        let problem = FitProblem::new(
            &model,
            camera,
            image,
            landmarks,
            EnergyWeights::defaults_for(100),
        )
        .unwrap();
        let mut mesh = mesh0;
        // Exactly halfway between the centers of pixels (10,10) and (11,10).
        mesh.projections[0] = Vector2::new(11.0, 10.5);
        mesh.colors[0] = nalgebra::Vector3::new(0.25, 0.0, 0.5);
        let v = super::e_photo_mesh(&mesh, &problem, &[0]);
        // Sampled value is 0.5 per channel; residual (0.25, 0.5, 0.0).
        assert_relative_eq!(v, 0.25 * 0.25 + 0.5 * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn e_loss_decomposes_into_terms() {
        let model = synth_model(42, 350).unwrap();
        let problem = problem_with_flat_image(&model);
        let mut params = SemanticParams::frontal(0.55);
        params.alpha[0] = 0.01;
        params.delta[2] = -0.02;
        let mesh = model.decode(&params, &problem.camera).unwrap();
        let visible = crate::render::visibility(&mesh, &model);
        let total = e_loss(&params, &problem).unwrap();
        let parts = e_land(&params, &problem).unwrap()
            + problem.weights.w_photo * e_photo(&params, &problem, &visible).unwrap()
            + problem.weights.w_reg * e_reg(&params, &model, &problem.weights);
        assert_relative_eq!(total, parts, max_relative = 1e-12);
        assert!(total >= problem.weights.w_reg * e_reg(&params, &model, &problem.weights));
    }

    #[test]
    fn energy_invariant_to_consistent_vertex_permutation() {
        use nalgebra::{DMatrix, DVector};
        let model = synth_model(42, 120).unwrap();
        let n = model.vertex_count();
        // Deterministic permutation: reverse order.
        let perm: Vec<usize> = (0..n).rev().collect();
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let permute_rows = |m: &DVector<f64>| {
            let mut out = DVector::zeros(3 * n);
            for new in 0..n {
                for a in 0..3 {
                    out[3 * new + a] = m[3 * perm[new] + a];
                }
            }
            out
        };
        let permute_basis = |b: &DMatrix<f64>| {
            let mut out = DMatrix::zeros(3 * n, b.ncols());
            for new in 0..n {
                for a in 0..3 {
                    for c in 0..b.ncols() {
                        out[(3 * new + a, c)] = b[(3 * perm[new] + a, c)];
                    }
                }
            }
            out
        };
        let triangles: Vec<[usize; 3]> = model
            .triangles()
            .iter()
            .map(|t| [inv[t[0]], inv[t[1]], inv[t[2]]])
            .collect();
        let landmarks_idx: Vec<usize> =
            model.landmark_indices().iter().map(|&i| inv[i]).collect();
        let permuted = FaceModel::from_parts(
            permute_rows(model.mean_shape()),
            permute_rows(model.mean_albedo()),
            permute_basis(model.shape_basis()),
            permute_basis(model.reflect_basis()),
            permute_basis(model.expr_basis()),
            model.sigma_shape().clone(),
            model.sigma_reflect().clone(),
            model.sigma_expr().clone(),
            triangles,
            landmarks_idx,
        )
        .unwrap();

        let camera = Camera::default_for(96, 96);
        let image = ImageRgb::from_fn(96, 96, |x, y| {
            [0.3 + 0.4 * x as f64 / 96.0, 0.5, 0.2 + 0.5 * y as f64 / 96.0]
        });
        let mut params = SemanticParams::frontal(0.55);
        params.alpha[0] = 0.01;
        params.delta[1] = -0.015;
        params.beta[2] = 0.02;
        let mesh = model.decode(&params, &camera).unwrap();
        let landmarks = landmark_positions(&mesh, &model);
        let p1 = FitProblem::new(
            &model,
            camera,
            image.clone(),
            landmarks.clone(),
            EnergyWeights::defaults_for(80),
        )
        .unwrap();
        let p2 =
            FitProblem::new(&permuted, camera, image, landmarks, EnergyWeights::defaults_for(80))
                .unwrap();
        let e1 = e_loss(&params, &p1).unwrap();
        let e2 = e_loss(&params, &p2).unwrap();
        assert_relative_eq!(e1, e2, max_relative = 1e-12);
    }

    #[test]
    fn init_pose_lands_face_near_landmarks() {
        let model = synth_model(19, 400).unwrap();
        let camera = Camera::default_for(128, 128);
        let mut truth = SemanticParams::frontal(0.62);
        truth.phi[0] = 0.03;
        truth.phi[1] = -0.02;
        let mesh = model.decode(&truth, &camera).unwrap();
        let landmarks = landmark_positions(&mesh, &model);
        let init = init_pose_from_landmarks(&model, &landmarks, &camera);
        assert!((init.phi[2] - truth.phi[2]).abs() < 0.2);
        assert!((init.phi[0] - truth.phi[0]).abs() < 0.03);
        assert!((init.phi[1] - truth.phi[1]).abs() < 0.03);
    }
}
