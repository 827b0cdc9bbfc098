//! Stacked residual vector and its analytic Jacobian.
//!
//! The photometric chain runs through bilinear image sampling, perspective
//! projection, the rigid pose, spherical-harmonics shading, and the
//! area-weighted vertex normals (whose derivative couples each vertex to its
//! one-ring through the cross products of the incident triangles).

use super::{reg_row_scales, FitProblem, ResidualStructure};
use crate::error::Result;
use crate::model::sh;
use crate::model::{
    euler_rotation_derivatives, SemanticParams, ALPHA_DIM, ALPHA_OFF, BETA_DIM, BETA_OFF,
    DELTA_DIM, DELTA_OFF, GAMMA_OFF, LANDMARK_COUNT, PARAM_DIM, PHI_OFF,
};
use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};

#[inline]
fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Evaluate residuals (always) and the Jacobian over active dimensions (when
/// `want_jacobian`), with the photometric row set frozen by `structure`.
pub(super) fn evaluate(
    params: &SemanticParams,
    problem: &FitProblem,
    structure: &ResidualStructure,
    want_jacobian: bool,
) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
    let model = problem.model;
    let (mesh, scratch) = model.decode_with_scratch(params, &problem.camera)?;
    let n_photo = structure.photo_vertices.len();
    let n_rows = structure.row_count();
    let sqrt_wp = problem.weights.w_photo.sqrt();
    let reg_rows = reg_row_scales(model, &problem.weights);
    let pvec = params.to_vector();

    let mut r = DVector::zeros(n_rows);

    // Landmark rows.
    for (k, &vi) in model.landmark_indices().iter().enumerate() {
        let d = mesh.projections[vi] - problem.landmarks[k];
        r[2 * k] = d.x;
        r[2 * k + 1] = d.y;
    }
    // Photometric rows (clamped sampling keeps frozen rows defined under
    // finite-difference probes that drift past the border).
    let photo_off = 2 * LANDMARK_COUNT;
    for (j, &vi) in structure.photo_vertices.iter().enumerate() {
        let u = mesh.projections[vi];
        let sampled = problem.image.sample_bilinear(u.x, u.y);
        for ch in 0..3 {
            r[photo_off + 3 * j + ch] = sqrt_wp * (sampled[ch] - mesh.colors[vi][ch]);
        }
    }
    // Regularizer rows.
    let reg_off = photo_off + 3 * n_photo;
    for (row, (dim, scale)) in reg_rows.iter().enumerate() {
        r[reg_off + row] = scale * pvec[*dim];
    }

    if !want_jacobian {
        return Ok((r, None));
    }

    let active = problem.active.indices();
    let mut col_of = vec![usize::MAX; PARAM_DIM];
    for (c, &dim) in active.iter().enumerate() {
        col_of[dim] = c;
    }
    let mut jac = DMatrix::zeros(n_rows, active.len());

    let rot = scratch.rotation;
    let rot_d = euler_rotation_derivatives(&params.angles());
    let shape_basis = model.shape_basis();
    let expr_basis = model.expr_basis();
    let reflect_basis = model.reflect_basis();

    let alpha_active: Vec<usize> = (0..ALPHA_DIM)
        .filter(|&k| col_of[ALPHA_OFF + k] != usize::MAX)
        .collect();
    let delta_active: Vec<usize> = (0..DELTA_DIM)
        .filter(|&k| col_of[DELTA_OFF + k] != usize::MAX)
        .collect();
    let beta_active: Vec<usize> = (0..BETA_DIM)
        .filter(|&k| col_of[BETA_OFF + k] != usize::MAX)
        .collect();
    let phi_active: Vec<usize> = (0..6)
        .filter(|&k| col_of[PHI_OFF + k] != usize::MAX)
        .collect();
    let gamma_active: Vec<usize> = (0..27)
        .filter(|&k| col_of[GAMMA_OFF + k] != usize::MAX)
        .collect();
    let geometry_active = !alpha_active.is_empty() || !delta_active.is_empty();

    // d(raw normal)/d(ring positions): per vertex, the list of
    // (neighbor, 3x3 block) from every incident triangle's cross product.
    // Only vertices with photometric rows need the normal chain.
    let mut need_normal = vec![false; model.vertex_count()];
    if geometry_active || !phi_active.is_empty() {
        for &vi in &structure.photo_vertices {
            need_normal[vi] = true;
        }
    }
    let mut normal_blocks: Vec<Vec<(usize, Matrix3<f64>)>> = vec![Vec::new(); model.vertex_count()];
    if geometry_active {
        for tri in model.triangles() {
            let [a, b, c] = *tri;
            if !(need_normal[a] || need_normal[b] || need_normal[c]) {
                continue;
            }
            let (sa, sb, sc) = (
                scratch.shape_model[a],
                scratch.shape_model[b],
                scratch.shape_model[c],
            );
            let d_a = skew(&(sc - sb));
            let d_b = -skew(&(sc - sa));
            let d_c = skew(&(sb - sa));
            for &vi in &[a, b, c] {
                if need_normal[vi] {
                    normal_blocks[vi].push((a, d_a));
                    normal_blocks[vi].push((b, d_b));
                    normal_blocks[vi].push((c, d_c));
                }
            }
        }
    }

    // Landmark rows: projection chain only.
    for (k, &vi) in model.landmark_indices().iter().enumerate() {
        let v = mesh.positions[vi];
        let proj = projection_jacobian(&v, problem.camera.focal);
        let row_x = 2 * k;
        // alpha / delta: dv = R * basis rows.
        let geo_blocks: [(&[usize], &nalgebra::DMatrix<f64>, usize); 2] = [
            (&alpha_active, shape_basis, ALPHA_OFF),
            (&delta_active, expr_basis, DELTA_OFF),
        ];
        for &(list, basis, off) in &geo_blocks {
            for &kdim in list.iter() {
                let bcol = Vector3::new(
                    basis[(3 * vi, kdim)],
                    basis[(3 * vi + 1, kdim)],
                    basis[(3 * vi + 2, kdim)],
                );
                let dv = rot * bcol;
                let du = proj_apply(&proj, &dv);
                let col = col_of[off + kdim];
                jac[(row_x, col)] = du.x;
                jac[(row_x + 1, col)] = du.y;
            }
        }
        for &k_phi in &phi_active {
            let dv = if k_phi < 3 {
                let mut e = Vector3::zeros();
                e[k_phi] = 1.0;
                e
            } else {
                rot_d[k_phi - 3] * scratch.shape_model[vi]
            };
            let du = proj_apply(&proj, &dv);
            let col = col_of[PHI_OFF + k_phi];
            jac[(row_x, col)] = du.x;
            jac[(row_x + 1, col)] = du.y;
        }
    }

    // Photometric rows.
    for (j, &vi) in structure.photo_vertices.iter().enumerate() {
        let row0 = photo_off + 3 * j;
        let v = mesh.positions[vi];
        let u = mesh.projections[vi];
        let proj = projection_jacobian(&v, problem.camera.focal);
        let (gx, gy) = problem.image.sample_gradient(u.x, u.y);

        // Normal frame: n = R * m, m = raw / |raw|.
        let raw = scratch.raw_normal_model[vi];
        let raw_len = raw.norm().max(f64::MIN_POSITIVE);
        let m = raw / raw_len;
        let m_proj = (Matrix3::identity() - m * m.transpose()) / raw_len;
        let n = mesh.normals[vi];
        let basis = sh::sh_basis(&n);
        let basis_grad = sh::sh_basis_gradient(&n);
        let albedo = scratch.albedo[vi];
        // Irradiance per channel and its gradient with respect to n.
        let mut irr = [0.0; 3];
        let mut irr_grad = [Vector3::zeros(); 3];
        for ch in 0..3 {
            for b in 0..sh::SH_COUNT {
                let g = params.gamma[9 * ch + b];
                irr[ch] += g * basis[b];
                irr_grad[ch] += basis_grad[b] * g;
            }
        }

        // Geometry blocks: alpha and delta.
        let geo_blocks: [(&[usize], &nalgebra::DMatrix<f64>, usize); 2] = [
            (&alpha_active, shape_basis, ALPHA_OFF),
            (&delta_active, expr_basis, DELTA_OFF),
        ];
        for &(list, basis_mat, off) in &geo_blocks {
            if list.is_empty() {
                continue;
            }
            // d(raw)/d(coef k) = sum over ring blocks A_iw * B[w rows, k].
            // Accumulate the 3 x K product once per vertex.
            let mut draw = vec![Vector3::zeros(); list.len()];
            for (w, a_mat) in &normal_blocks[vi] {
                for (c_idx, &kdim) in list.iter().enumerate() {
                    let bcol = Vector3::new(
                        basis_mat[(3 * w, kdim)],
                        basis_mat[(3 * w + 1, kdim)],
                        basis_mat[(3 * w + 2, kdim)],
                    );
                    draw[c_idx] += a_mat * bcol;
                }
            }
            for (c_idx, &kdim) in list.iter().enumerate() {
                let bcol = Vector3::new(
                    basis_mat[(3 * vi, kdim)],
                    basis_mat[(3 * vi + 1, kdim)],
                    basis_mat[(3 * vi + 2, kdim)],
                );
                let dv = rot * bcol;
                let du = proj_apply(&proj, &dv);
                let dn = rot * (m_proj * draw[c_idx]);
                let col = col_of[off + kdim];
                for ch in 0..3 {
                    let dsample = gx[ch] * du.x + gy[ch] * du.y;
                    let dcolor = albedo[ch] * irr_grad[ch].dot(&dn);
                    jac[(row0 + ch, col)] = sqrt_wp * (dsample - dcolor);
                }
            }
        }

        // Pose block.
        for &k_phi in &phi_active {
            let (dv, dn) = if k_phi < 3 {
                let mut e = Vector3::zeros();
                e[k_phi] = 1.0;
                (e, Vector3::zeros())
            } else {
                (
                    rot_d[k_phi - 3] * scratch.shape_model[vi],
                    rot_d[k_phi - 3] * m,
                )
            };
            let du = proj_apply(&proj, &dv);
            let col = col_of[PHI_OFF + k_phi];
            for ch in 0..3 {
                let dsample = gx[ch] * du.x + gy[ch] * du.y;
                let dcolor = albedo[ch] * irr_grad[ch].dot(&dn);
                jac[(row0 + ch, col)] = sqrt_wp * (dsample - dcolor);
            }
        }

        // Reflectance block: color is linear in albedo.
        for &k_beta in &beta_active {
            let col = col_of[BETA_OFF + k_beta];
            for ch in 0..3 {
                let da = reflect_basis[(3 * vi + ch, k_beta)];
                jac[(row0 + ch, col)] = sqrt_wp * (-da * irr[ch]);
            }
        }

        // Lighting block: channel-diagonal in gamma.
        for &k_gamma in &gamma_active {
            let ch = k_gamma / sh::SH_COUNT;
            let b = k_gamma % sh::SH_COUNT;
            let col = col_of[GAMMA_OFF + k_gamma];
            jac[(row0 + ch, col)] = sqrt_wp * (-albedo[ch] * basis[b]);
        }
    }

    // Regularizer rows are diagonal in the coefficient blocks.
    for (row, (dim, scale)) in reg_rows.iter().enumerate() {
        if col_of[*dim] != usize::MAX {
            jac[(reg_off + row, col_of[*dim])] = *scale;
        }
    }

    Ok((r, Some(jac)))
}

/// 2x3 derivative of the pinhole projection at camera-space position v,
/// stored as (row_x, row_y).
#[inline]
fn projection_jacobian(v: &Vector3<f64>, focal: f64) -> [Vector3<f64>; 2] {
    let inv_z = 1.0 / v.z;
    [
        Vector3::new(focal * inv_z, 0.0, -focal * v.x * inv_z * inv_z),
        Vector3::new(0.0, focal * inv_z, -focal * v.y * inv_z * inv_z),
    ]
}

#[inline]
fn proj_apply(proj: &[Vector3<f64>; 2], dv: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(proj[0].dot(dv), proj[1].dot(dv))
}
