//! Real spherical harmonics, first three bands, and per-vertex shading.
//!
//! Basis ordering: band 0 (DC), band 1 scaled (ny, nz, nx), then the five
//! standard band-2 functions. Nine coefficients per RGB channel give the
//! 27-dimensional lighting vector.

use crate::error::{Error, Result};
use nalgebra::Vector3;

pub const SH_COUNT: usize = 9;

/// 1 / (2 sqrt(pi))
pub const SH_DC: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: f64 = 1.092_548_430_592_079_2;
const C2_0: f64 = 0.315_391_565_252_520_05;
const C2_2: f64 = 0.546_274_215_296_039_6;

/// Evaluate the nine basis functions at a unit direction.
pub fn sh_basis(n: &Vector3<f64>) -> [f64; SH_COUNT] {
    let (x, y, z) = (n.x, n.y, n.z);
    [
        SH_DC,
        C1 * y,
        C1 * z,
        C1 * x,
        C2 * x * y,
        C2 * y * z,
        C2_0 * (3.0 * z * z - 1.0),
        C2 * x * z,
        C2_2 * (x * x - y * y),
    ]
}

/// Gradient of each basis function with respect to the direction.
pub fn sh_basis_gradient(n: &Vector3<f64>) -> [Vector3<f64>; SH_COUNT] {
    let (x, y, z) = (n.x, n.y, n.z);
    [
        Vector3::zeros(),
        Vector3::new(0.0, C1, 0.0),
        Vector3::new(0.0, 0.0, C1),
        Vector3::new(C1, 0.0, 0.0),
        Vector3::new(C2 * y, C2 * x, 0.0),
        Vector3::new(0.0, C2 * z, C2 * y),
        Vector3::new(0.0, 0.0, 6.0 * C2_0 * z),
        Vector3::new(C2 * z, 0.0, C2 * x),
        Vector3::new(2.0 * C2_2 * x, -2.0 * C2_2 * y, 0.0),
    ]
}

/// Irradiance of one channel: dot of the channel's 9 coefficients with the basis.
#[inline]
pub fn channel_irradiance(gamma: &[f64], channel: usize, basis: &[f64; SH_COUNT]) -> f64 {
    let g = &gamma[channel * SH_COUNT..(channel + 1) * SH_COUNT];
    g.iter().zip(basis).map(|(a, b)| a * b).sum()
}

/// Shade per-vertex albedo under a 27-coefficient lighting vector.
///
/// `colors[i][ch] = albedo[i][ch] * sum_b gamma[9*ch + b] * Y_b(n_i)`.
/// Output is intentionally unclamped; the rasterizer clamps at render time.
pub fn shade_vertices(
    albedo: &[Vector3<f64>],
    normals: &[Vector3<f64>],
    gamma: &[f64],
) -> Result<Vec<Vector3<f64>>> {
    if gamma.len() != 3 * SH_COUNT {
        return Err(Error::invalid(format!(
            "gamma must have 27 entries, got {}",
            gamma.len()
        )));
    }
    if albedo.len() != normals.len() {
        return Err(Error::invalid("albedo/normal count mismatch"));
    }
    let mut colors = Vec::with_capacity(albedo.len());
    for (a, n) in albedo.iter().zip(normals) {
        let len = n.norm();
        if (len - 1.0).abs() > 1e-3 {
            return Err(Error::invalid(format!("non-unit normal (|n| = {len})")));
        }
        let basis = sh_basis(n);
        colors.push(Vector3::new(
            a.x * channel_irradiance(gamma, 0, &basis),
            a.y * channel_irradiance(gamma, 1, &basis),
            a.z * channel_irradiance(gamma, 2, &basis),
        ));
    }
    Ok(colors)
}
