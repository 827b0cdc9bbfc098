//! Levenberg-damped Gauss-Newton minimization of the fitting energy.

use super::{e_loss, jacobian_with_structure, ActiveSet, FitProblem, ResidualStructure};
use crate::error::Result;
use crate::model::SemanticParams;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Default iteration count for pose/expression refinement.
pub const REFINE_ITERATIONS: usize = 10;

const MAX_DAMPING_RETRIES: usize = 8;
const DAMPING_INIT: f64 = 1e-4;
const DAMPING_GROW: f64 = 10.0;
const DAMPING_SHRINK: f64 = 3.0;
const DAMPING_MIN: f64 = 1e-12;
const STEP_TOL: f64 = 1e-12;
const ENERGY_REL_TOL: f64 = 1e-12;

/// Outcome of a fit: final parameters and the accepted-energy trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub params: SemanticParams,
    /// Energy before the first iteration and after each iteration,
    /// accepted or not (rejected iterations repeat the previous value).
    pub energies: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimize the full energy over the problem's active dimensions.
///
/// Each iteration solves the damped normal equations
/// `(J^T J + lambda * D) step = -J^T r` and accepts the step only if the
/// energy strictly decreases; otherwise the damping is multiplied by 10 and
/// the solve retried (up to 8 times). The reported energy sequence is
/// non-increasing across accepted iterations.
pub fn fit_full(problem: &FitProblem, init: &SemanticParams, iters: usize) -> Result<FitReport> {
    solve(problem, init, iters)
}

/// Pose/expression-only refinement of `E_land + w_reg * E_reg`.
///
/// Alpha, beta, and gamma are bit-identical before and after; only phi and
/// delta move. Runs [`REFINE_ITERATIONS`] iterations by default.
pub fn refine_pose_expression(
    problem: &FitProblem,
    init: &SemanticParams,
    iters: Option<usize>,
) -> Result<FitReport> {
    let mut refined = FitProblem {
        model: problem.model,
        camera: problem.camera,
        image: problem.image.clone(),
        landmarks: problem.landmarks.clone(),
        weights: problem.weights,
        active: ActiveSet::pose_expression(),
    };
    refined.weights.w_photo = 0.0;
    solve(&refined, init, iters.unwrap_or(REFINE_ITERATIONS))
}

fn solve(problem: &FitProblem, init: &SemanticParams, iters: usize) -> Result<FitReport> {
    let active = problem.active.indices();
    let mut params = init.clone();
    let mut energy = e_loss(&params, problem)?;
    let mut energies = vec![energy];
    let mut damping = DAMPING_INIT;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..iters {
        iterations += 1;
        let structure = ResidualStructure::at(&params, problem)?;
        let (r, jac) = jacobian_with_structure(&params, problem, &structure)?;
        let h = jtj(&jac);
        let g = jac.transpose() * &r;

        if g.norm() < 1e-14 {
            converged = true;
            energies.push(energy);
            break;
        }

        let mut accepted = false;
        let mut stalled = false;
        for _ in 0..=MAX_DAMPING_RETRIES {
            let mut damped = h.clone();
            for d in 0..damped.nrows() {
                let scale = h[(d, d)].max(1e-12);
                damped[(d, d)] += damping * scale;
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    damping *= DAMPING_GROW;
                    continue;
                }
            };
            let trial = apply_step(&params, &active, &step);
            let trial_params = match trial {
                Ok(p) => p,
                Err(_) => {
                    // Degenerate trial pose; treat like an energy increase.
                    damping *= DAMPING_GROW;
                    continue;
                }
            };
            match e_loss(&trial_params, problem) {
                Ok(trial_energy) if trial_energy < energy => {
                    let step_norm = step.norm();
                    let rel_drop = (energy - trial_energy) / energy.max(1e-300);
                    params = trial_params;
                    energy = trial_energy;
                    damping = (damping / DAMPING_SHRINK).max(DAMPING_MIN);
                    accepted = true;
                    if step_norm < STEP_TOL || rel_drop < ENERGY_REL_TOL {
                        converged = true;
                    }
                    break;
                }
                _ => {
                    damping *= DAMPING_GROW;
                }
            }
        }
        energies.push(energy);
        if !accepted {
            // No descent direction at maximum damping: either at a stationary
            // point (converged) or genuinely stuck.
            stalled = true;
            converged = g.norm() < 1e-6;
        }
        if stalled || converged {
            break;
        }
    }

    Ok(FitReport {
        params,
        energies,
        iterations,
        converged,
    })
}

/// J^T J through a strided dgemm on the column-major Jacobian.
fn jtj(jac: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = jac.shape();
    let mut out = DMatrix::zeros(cols, cols);
    if rows == 0 || cols == 0 {
        return out;
    }
    unsafe {
        matrixmultiply::dgemm(
            cols,
            rows,
            cols,
            1.0,
            jac.as_slice().as_ptr(),
            rows as isize, // J^T row stride: walk columns of J
            1,
            jac.as_slice().as_ptr(),
            1,
            rows as isize,
            0.0,
            out.as_mut_slice().as_mut_ptr(),
            1,
            cols as isize,
        );
    }
    out
}

fn apply_step(
    params: &SemanticParams,
    active: &[usize],
    step: &DVector<f64>,
) -> Result<SemanticParams> {
    let mut v = params.to_vector();
    for (c, &dim) in active.iter().enumerate() {
        v[dim] += step[c];
    }
    SemanticParams::from_vector(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{EnergyWeights, FitProblem};
    use crate::image::ImageRgb;
    use crate::model::{landmark_positions, synth_model, Camera, SemanticParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn landmark_only_problem<'a>(
        model: &'a crate::model::FaceModel,
        truth: &SemanticParams,
    ) -> FitProblem<'a> {
        let camera = Camera::default_for(96, 96);
        let mesh = model.decode(truth, &camera).unwrap();
        let landmarks = landmark_positions(&mesh, model);
        let mut weights = EnergyWeights::defaults_for(100);
        weights.w_photo = 0.0;
        weights.w_reg = 0.0;
        FitProblem::new(model, camera, ImageRgb::new(96, 96), landmarks, weights).unwrap()
    }

    #[test]
    fn fixed_point_leaves_params_unchanged() {
        let model = synth_model(42, 300).unwrap();
        let truth = SemanticParams::frontal(0.55);
        let problem = landmark_only_problem(&model, &truth);
        let report = fit_full(&problem, &truth, 5).unwrap();
        assert_eq!(report.params, truth, "zero-gradient init must not move");
        assert!(report.converged);
    }

    #[test]
    fn accepted_energy_trace_is_non_increasing() {
        let model = synth_model(13, 350).unwrap();
        let camera = Camera::default_for(96, 96);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut truth = SemanticParams::frontal(0.55);
        for i in 0..crate::model::ALPHA_DIM {
            truth.alpha[i] = rng.gen_range(-0.4..0.4) * model.sigma_shape()[i];
        }
        let mesh = model.decode(&truth, &camera).unwrap();
        let raster = crate::render::rasterize(&mesh, &model, (96, 96));
        let landmarks = landmark_positions(&mesh, &model);
        let problem = FitProblem::with_default_weights(
            &model,
            camera,
            raster.color,
            landmarks,
            &SemanticParams::frontal(0.55),
        )
        .unwrap();
        let mut init = SemanticParams::frontal(0.55);
        init.phi[3] = 0.05;
        init.phi[4] = -0.04;
        let report = fit_full(&problem, &init, 20).unwrap();
        for w in report.energies.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12,
                "energy increased: {} -> {}",
                w[0],
                w[1]
            );
        }
        assert_eq!(report.energies.len(), report.iterations + 1);
    }

    #[test]
    fn pose_perturbation_recovers_landmarks() {
        let model = synth_model(77, 400).unwrap();
        let truth = {
            let mut p = SemanticParams::frontal(0.58);
            p.phi[3] = 0.06;
            p.phi[5] = -0.05;
            p
        };
        let problem = landmark_only_problem(&model, &truth);
        let mut init = truth.clone();
        init.phi[3] += 0.05;
        init.phi[4] -= 0.06;
        init.phi[2] += 0.03;
        let report = fit_full(&problem, &init, 30).unwrap();
        let mesh = model.decode(&report.params, &problem.camera).unwrap();
        let lm = landmark_positions(&mesh, &model);
        let rmse = (lm
            .iter()
            .zip(&problem.landmarks)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            / lm.len() as f64)
            .sqrt();
        assert!(rmse < 0.1, "landmark rmse {rmse}");
    }

    #[test]
    fn refine_touches_only_pose_and_expression() {
        let model = synth_model(55, 320).unwrap();
        let camera = Camera::default_for(96, 96);
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut truth = SemanticParams::frontal(0.55);
        for i in 0..crate::model::DELTA_DIM {
            truth.delta[i] = rng.gen_range(-0.3..0.3) * model.sigma_expr()[i];
        }
        truth.phi[3] = 0.08;
        let mesh = model.decode(&truth, &camera).unwrap();
        let landmarks = landmark_positions(&mesh, &model);
        let problem = FitProblem::with_default_weights(
            &model,
            camera,
            ImageRgb::new(96, 96),
            landmarks,
            &truth,
        )
        .unwrap();
        let mut init = SemanticParams::frontal(0.55);
        init.alpha[7] = 0.012;
        init.beta[11] = -0.02;
        init.gamma[4] = 0.3;
        init.phi[3] = 0.02;
        let report = refine_pose_expression(&problem, &init, None).unwrap();
        // Inactive blocks are bit-identical.
        assert_eq!(report.params.alpha, init.alpha);
        assert_eq!(report.params.beta, init.beta);
        assert_eq!(report.params.gamma, init.gamma);
        assert_ne!(report.params.phi, init.phi);
        assert_eq!(REFINE_ITERATIONS, 10);
        assert!(report.iterations <= 10);
        for w in report.energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn refine_recovers_pose_noise_under_1px() {
        let model = synth_model(91, 400).unwrap();
        let camera = Camera::default_for(96, 96);
        let mut rng = ChaCha12Rng::seed_from_u64(44);
        let mut truth = SemanticParams::frontal(0.56);
        for i in 0..crate::model::DELTA_DIM {
            truth.delta[i] = rng.gen_range(-0.3..0.3) * model.sigma_expr()[i];
        }
        let mesh = model.decode(&truth, &camera).unwrap();
        let landmarks = landmark_positions(&mesh, &model);
        let problem = FitProblem::with_default_weights(
            &model,
            camera,
            ImageRgb::new(96, 96),
            landmarks,
            &truth,
        )
        .unwrap();
        let mut init = truth.clone();
        for k in 3..6 {
            init.phi[k] += rng.gen_range(-1.0..1.0) * 5.0_f64.to_radians();
        }
        let report = refine_pose_expression(&problem, &init, None).unwrap();
        let mesh = model.decode(&report.params, &camera).unwrap();
        let lm = landmark_positions(&mesh, &model);
        let rmse = (lm
            .iter()
            .zip(&problem.landmarks)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            / lm.len() as f64)
            .sqrt();
        assert!(rmse < 1.0, "refined landmark rmse {rmse}");
    }
}
