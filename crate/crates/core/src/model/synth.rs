//! Deterministic synthetic face model generator.
//!
//! Produces a deformed-ellipsoid head mesh with face-like landmark layout,
//! skin-toned albedo, and orthonormal low-frequency deformation bases. Used
//! wherever a scan-derived model is unavailable.

use super::{FaceModel, ALPHA_DIM, BETA_DIM, DELTA_DIM, LANDMARK_COUNT};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::f64::consts::PI;

/// Half-axes of the base head ellipsoid, model units.
const RADII: [f64; 3] = [0.085, 0.115, 0.095];

/// Build a synthetic face model with exactly `vertex_count` vertices.
///
/// Deterministic: the same (seed, vertex_count) yields a bitwise-identical
/// model. Basis columns are orthonormalized, sigma vectors are strictly
/// decreasing, and 66 landmark vertices are placed on the front hemisphere.
pub fn synth_model(seed: u64, vertex_count: usize) -> Result<FaceModel> {
    if vertex_count < LANDMARK_COUNT {
        return Err(Error::invalid(format!(
            "vertex_count must be at least {LANDMARK_COUNT}, got {vertex_count}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let layout = sphere_layout(vertex_count);
    let bumps = seeded_bumps(&mut rng);

    // Mean shape: ellipsoid scaled by a smooth radial field.
    let n = vertex_count;
    let mut mean_shape = DVector::zeros(3 * n);
    for (i, sph) in layout.angles.iter().enumerate() {
        let d = direction(sph.0, sph.1);
        let g = radial_scale(sph.0, sph.1, &bumps);
        mean_shape[3 * i] = RADII[0] * d.x * g;
        mean_shape[3 * i + 1] = RADII[1] * d.y * g;
        mean_shape[3 * i + 2] = RADII[2] * d.z * g;
    }

    let triangles = triangulate(&layout, &mean_shape);

    // Albedo: skin base plus lip / brow / eye lobes and a seeded tint field.
    let tint: [[f64; 2]; 3] =
        std::array::from_fn(|_| [rng.gen_range(-0.03..0.03), rng.gen_range(-0.03..0.03)]);
    let mut mean_albedo = DVector::zeros(3 * n);
    for (i, sph) in layout.angles.iter().enumerate() {
        let (theta, phi) = *sph;
        let lips = lobe(theta, phi, 0.70 * PI, 0.0, 0.10);
        let brow_l = lobe(theta, phi, 0.42 * PI, -0.35, 0.09);
        let brow_r = lobe(theta, phi, 0.42 * PI, 0.35, 0.09);
        let eye_l = lobe(theta, phi, 0.47 * PI, -0.32, 0.07);
        let eye_r = lobe(theta, phi, 0.47 * PI, 0.32, 0.07);
        let base = [0.78, 0.60, 0.50];
        let lip_gain = [0.10, -0.12, -0.10];
        let dark = brow_l + brow_r + 0.7 * (eye_l + eye_r);
        for c in 0..3 {
            let smooth = tint[c][0] * (2.0 * theta).cos() + tint[c][1] * (3.0 * phi).sin();
            let v = base[c] + lip_gain[c] * lips - 0.22 * dark * base[c] + smooth;
            mean_albedo[3 * i + c] = v.clamp(0.05, 0.95);
        }
    }

    // Low-frequency scalar field library shared by all bases.
    let fields = field_matrix(&layout.angles);

    let shape_basis = random_basis(&fields, ALPHA_DIM, &mut rng)?;
    let reflect_basis = random_basis(&fields, BETA_DIM, &mut rng)?;
    let expr_basis = random_basis(&fields, DELTA_DIM, &mut rng)?;

    let sigma_shape = decreasing_sigma(ALPHA_DIM, 0.050);
    let sigma_reflect = decreasing_sigma(BETA_DIM, 0.080);
    let sigma_expr = decreasing_sigma(DELTA_DIM, 0.040);

    let landmark_indices = pick_landmarks(&layout.angles)?;

    FaceModel::from_parts(
        mean_shape,
        mean_albedo,
        shape_basis,
        reflect_basis,
        expr_basis,
        sigma_shape,
        sigma_reflect,
        sigma_expr,
        triangles,
        landmark_indices,
    )
}

/// Spherical direction for polar angle theta (0 = top of head) and azimuth
/// phi (0 = face front). Model space: x right, y down, z away from camera,
/// so the face front points toward -z and appears upright under the
/// y-down image convention.
fn direction(theta: f64, phi: f64) -> Vector3<f64> {
    Vector3::new(
        theta.sin() * phi.sin(),
        -theta.cos(),
        -theta.sin() * phi.cos(),
    )
}

struct SphereLayout {
    /// (theta, phi) per vertex; poles first and last.
    angles: Vec<(f64, f64)>,
    /// Vertex index ranges of each latitude ring.
    rings: Vec<Vec<usize>>,
}

fn sphere_layout(n: usize) -> SphereLayout {
    let interior = n - 2;
    let mut ring_count = ((interior as f64 * 0.5).sqrt().round() as usize).max(3);
    while ring_count * 3 > interior {
        ring_count -= 1;
    }
    let ring_count = ring_count.max(1);

    // Distribute interior vertices over rings proportionally to sin(theta).
    let thetas: Vec<f64> = (0..ring_count)
        .map(|k| PI * (k + 1) as f64 / (ring_count + 1) as f64)
        .collect();
    let weights: Vec<f64> = thetas.iter().map(|t| t.sin()).collect();
    let total_w: f64 = weights.iter().sum();
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|w| (((w / total_w) * interior as f64).floor() as usize).max(3))
        .collect();
    // Correct rounding drift deterministically, one vertex at a time.
    let mut assigned: usize = counts.iter().sum();
    while assigned < interior {
        let k = (0..ring_count)
            .max_by(|&a, &b| {
                let ra = weights[a] / counts[a] as f64;
                let rb = weights[b] / counts[b] as f64;
                ra.partial_cmp(&rb).unwrap().then(b.cmp(&a))
            })
            .unwrap();
        counts[k] += 1;
        assigned += 1;
    }
    while assigned > interior {
        let k = (0..ring_count)
            .filter(|&k| counts[k] > 3)
            .max_by(|&a, &b| {
                let ra = counts[a] as f64 / weights[a];
                let rb = counts[b] as f64 / weights[b];
                ra.partial_cmp(&rb).unwrap().then(b.cmp(&a))
            })
            .expect("ring budget always allows 3 vertices per ring");
        counts[k] -= 1;
        assigned -= 1;
    }

    let mut angles = vec![(0.0, 0.0)];
    let mut rings = Vec::with_capacity(ring_count);
    for k in 0..ring_count {
        let twist = k as f64 * 0.37;
        let m = counts[k];
        let mut ring = Vec::with_capacity(m);
        for j in 0..m {
            // Keep azimuths in (-pi, pi] with the front (phi = 0) covered.
            let raw = twist + 2.0 * PI * j as f64 / m as f64;
            let phi = (raw + PI).rem_euclid(2.0 * PI) - PI;
            ring.push(angles.len());
            angles.push((thetas[k], phi));
        }
        // Ring vertices sorted by azimuth for stitching.
        ring.sort_by(|&a, &b| angles[a].1.partial_cmp(&angles[b].1).unwrap());
        rings.push(ring);
    }
    angles.push((PI, 0.0));
    SphereLayout { angles, rings }
}

/// Stitch pole fans and adjacent rings into a closed triangle mesh, then fix
/// the winding so geometric normals point outward (the mesh is star-shaped).
fn triangulate(layout: &SphereLayout, shape: &DVector<f64>) -> Vec<[usize; 3]> {
    let mut tris: Vec<[usize; 3]> = Vec::new();
    let top = 0usize;
    let bottom = layout.angles.len() - 1;
    let first = &layout.rings[0];
    for j in 0..first.len() {
        tris.push([top, first[j], first[(j + 1) % first.len()]]);
    }
    for pair in layout.rings.windows(2) {
        stitch(&pair[0], &pair[1], &layout.angles, &mut tris);
    }
    let last = layout.rings.last().unwrap();
    for j in 0..last.len() {
        tris.push([bottom, last[j], last[(j + 1) % last.len()]]);
    }

    let at = |i: usize| Vector3::new(shape[3 * i], shape[3 * i + 1], shape[3 * i + 2]);
    let centroid: Vector3<f64> =
        (0..layout.angles.len()).map(at).sum::<Vector3<f64>>() / layout.angles.len() as f64;
    for tri in &mut tris {
        let (a, b, c) = (at(tri[0]), at(tri[1]), at(tri[2]));
        let outward = (a + b + c) / 3.0 - centroid;
        if (b - a).cross(&(c - a)).dot(&outward) < 0.0 {
            tri.swap(1, 2);
        }
    }
    tris
}

/// Zipper triangulation between two azimuth-sorted rings.
fn stitch(ring_a: &[usize], ring_b: &[usize], angles: &[(f64, f64)], tris: &mut Vec<[usize; 3]>) {
    let (na, nb) = (ring_a.len(), ring_b.len());
    let ang = |ring: &[usize], i: usize| -> f64 {
        angles[ring[i % ring.len()]].1 + 2.0 * PI * (i / ring.len()) as f64
    };
    let (mut i, mut j) = (0usize, 0usize);
    while i < na || j < nb {
        let next_a = if i < na {
            ang(ring_a, i + 1)
        } else {
            f64::INFINITY
        };
        let next_b = if j < nb {
            ang(ring_b, j + 1)
        } else {
            f64::INFINITY
        };
        if next_a <= next_b {
            tris.push([ring_a[i % na], ring_b[j % nb], ring_a[(i + 1) % na]]);
            i += 1;
        } else {
            tris.push([ring_a[i % na], ring_b[(j + 1) % nb], ring_b[j % nb]]);
            j += 1;
        }
    }
}

struct Bumps {
    harmonics: Vec<(f64, f64, f64, f64, f64)>,
}

fn seeded_bumps(rng: &mut ChaCha12Rng) -> Bumps {
    let harmonics = (0..8)
        .map(|_| {
            (
                rng.gen_range(-0.015..0.015),
                rng.gen_range(1.0..4.0f64).round(),
                rng.gen_range(1.0..4.0f64).round(),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    Bumps { harmonics }
}

/// Smooth angular Gaussian lobe centered at (theta0, phi0).
fn lobe(theta: f64, phi: f64, theta0: f64, phi0: f64, width: f64) -> f64 {
    let d = direction(theta, phi)
        .dot(&direction(theta0, phi0))
        .clamp(-1.0, 1.0);
    let arc = d.acos();
    (-(arc * arc) / (2.0 * width * width)).exp()
}

fn radial_scale(theta: f64, phi: f64, bumps: &Bumps) -> f64 {
    let mut g = 1.0;
    // Crafted facial features: nose, brow ridge, chin, cheeks, eye sockets.
    g += 0.16 * lobe(theta, phi, 0.56 * PI, 0.0, 0.14);
    g += 0.05 * lobe(theta, phi, 0.42 * PI, 0.0, 0.35);
    g += 0.06 * lobe(theta, phi, 0.82 * PI, 0.0, 0.22);
    g += 0.04 * lobe(theta, phi, 0.60 * PI, -0.50, 0.28);
    g += 0.04 * lobe(theta, phi, 0.60 * PI, 0.50, 0.28);
    g -= 0.05 * lobe(theta, phi, 0.47 * PI, -0.32, 0.10);
    g -= 0.05 * lobe(theta, phi, 0.47 * PI, 0.32, 0.10);
    for &(amp, m, k, p, q) in &bumps.harmonics {
        g += amp * (m * theta + p).cos() * (k * phi + q).cos();
    }
    g
}

/// N x L matrix of low-frequency scalar fields evaluated per vertex.
fn field_matrix(angles: &[(f64, f64)]) -> DMatrix<f64> {
    let mut cols: Vec<Box<dyn Fn(f64, f64) -> f64>> = Vec::new();
    for m in 0..4u32 {
        for k in 0..4u32 {
            let (mf, kf) = (m as f64, k as f64);
            cols.push(Box::new(move |t, p| (mf * t).cos() * (kf * p).cos()));
            cols.push(Box::new(move |t, p| {
                (mf * t).cos() * ((kf + 1.0) * p).sin()
            }));
            cols.push(Box::new(move |t, p| {
                ((mf + 1.0) * t).sin() * (kf * p).cos()
            }));
        }
    }
    let mut f = DMatrix::zeros(angles.len(), cols.len());
    for (i, &(t, p)) in angles.iter().enumerate() {
        for (l, g) in cols.iter().enumerate() {
            f[(i, l)] = g(t, p);
        }
    }
    f
}

/// Random smooth 3N x k basis, orthonormalized by modified Gram-Schmidt with
/// one re-orthogonalization pass.
fn random_basis(fields: &DMatrix<f64>, k: usize, rng: &mut ChaCha12Rng) -> Result<DMatrix<f64>> {
    let n = fields.nrows();
    let l = fields.ncols();
    let mut basis = DMatrix::zeros(3 * n, k);
    for col in 0..k {
        // Per-axis random mix of the field library.
        let mut weights = DMatrix::zeros(l, 3);
        for a in 0..3 {
            for f in 0..l {
                weights[(f, a)] = rng.gen_range(-1.0..1.0);
            }
        }
        let mixed = fields * &weights; // N x 3
        for i in 0..n {
            for a in 0..3 {
                basis[(3 * i + a, col)] = mixed[(i, a)];
            }
        }
    }
    for _pass in 0..2 {
        for col in 0..k {
            for prev in 0..col {
                let dot = basis.column(col).dot(&basis.column(prev));
                let prev_col = basis.column(prev).into_owned();
                let mut c = basis.column_mut(col);
                c.axpy(-dot, &prev_col, 1.0);
            }
            let norm = basis.column(col).norm();
            if norm < 1e-10 {
                return Err(Error::invalid("degenerate basis column during synthesis"));
            }
            basis.column_mut(col).scale_mut(1.0 / norm);
        }
    }
    Ok(basis)
}

fn decreasing_sigma(k: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(k, |i, _| scale * (-2.5 * i as f64 / (k - 1) as f64).exp())
}

/// 66 front-hemisphere landmark targets: 17 jaw, 2x5 brows, 9 nose,
/// 2x6 eyes, 18 mouth.
fn landmark_targets() -> Vec<(f64, f64)> {
    let mut t = Vec::with_capacity(LANDMARK_COUNT);
    for j in 0..17 {
        let s = (j as f64 - 8.0) / 8.0;
        t.push((0.80 * PI - 0.22 * PI * s.abs(), 1.05 * s));
    }
    for side in [-1.0, 1.0] {
        for j in 0..5 {
            t.push((0.42 * PI, side * (0.18 + 0.09 * j as f64)));
        }
    }
    for j in 0..4 {
        t.push((0.46 * PI + 0.04 * PI * j as f64, 0.0));
    }
    for j in 0..5 {
        t.push((0.62 * PI, -0.12 + 0.06 * j as f64));
    }
    for side in [-1.0, 1.0] {
        for j in 0..6 {
            let a = 2.0 * PI * j as f64 / 6.0;
            t.push((
                0.47 * PI + 0.035 * PI * a.sin(),
                side * 0.32 + 0.10 * a.cos(),
            ));
        }
    }
    for j in 0..12 {
        let a = 2.0 * PI * j as f64 / 12.0;
        t.push((0.70 * PI + 0.045 * PI * a.sin(), 0.26 * a.cos()));
    }
    for j in 0..6 {
        let a = 2.0 * PI * j as f64 / 6.0;
        t.push((0.70 * PI + 0.02 * PI * a.sin(), 0.13 * a.cos()));
    }
    t
}

fn pick_landmarks(angles: &[(f64, f64)]) -> Result<Vec<usize>> {
    let mut used = vec![false; angles.len()];
    let mut out = Vec::with_capacity(LANDMARK_COUNT);
    for (t_theta, t_phi) in landmark_targets() {
        let target = direction(t_theta, t_phi);
        let mut best = None;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, &(theta, phi)) in angles.iter().enumerate() {
            if used[i] {
                continue;
            }
            let dot = direction(theta, phi).dot(&target);
            if dot > best_dot {
                best_dot = dot;
                best = Some(i);
            }
        }
        let idx = best.ok_or_else(|| Error::invalid("not enough vertices for landmarks"))?;
        used[idx] = true;
        out.push(idx);
    }
    Ok(out)
}
