//! Face model persistence in the FM3D tensor container.

use super::{FaceModel, ALPHA_DIM, BETA_DIM, DELTA_DIM};
use crate::container::Container;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::path::Path;

impl FaceModel {
    /// Write the model as named tensors (see [`crate::container`]).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let n = self.vertex_count();
        let mut c = Container::new();
        c.put_f64("mean_shape", vec![n, 3], self.mean_shape().as_slice());
        c.put_f64("mean_albedo", vec![n, 3], self.mean_albedo().as_slice());
        c.put_f64(
            "shape_basis",
            vec![3 * n, ALPHA_DIM],
            &row_major(self.shape_basis()),
        );
        c.put_f64(
            "reflect_basis",
            vec![3 * n, BETA_DIM],
            &row_major(self.reflect_basis()),
        );
        c.put_f64(
            "expr_basis",
            vec![3 * n, DELTA_DIM],
            &row_major(self.expr_basis()),
        );
        c.put_f64(
            "sigma_shape",
            vec![ALPHA_DIM],
            self.sigma_shape().as_slice(),
        );
        c.put_f64(
            "sigma_reflect",
            vec![BETA_DIM],
            self.sigma_reflect().as_slice(),
        );
        c.put_f64("sigma_expr", vec![DELTA_DIM], self.sigma_expr().as_slice());
        let tris: Vec<i64> = self
            .triangles()
            .iter()
            .flat_map(|t| t.iter().map(|&v| v as i64))
            .collect();
        c.put_i64("triangles", vec![self.triangles().len(), 3], &tris);
        let lms: Vec<i64> = self.landmark_indices().iter().map(|&v| v as i64).collect();
        c.put_i64("landmark_indices", vec![lms.len()], &lms);
        c.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c = Container::load(path)?;
        let (ms_dims, mean_shape) = c.f64_tensor("mean_shape")?;
        if ms_dims.len() != 2 || ms_dims[1] != 3 {
            return Err(Error::format("mean_shape must be N x 3"));
        }
        let n = ms_dims[0];
        let (ma_dims, mean_albedo) = c.f64_tensor("mean_albedo")?;
        expect_dims("mean_albedo", &ma_dims, &[n, 3])?;

        let shape_basis = read_matrix(&c, "shape_basis", 3 * n, ALPHA_DIM)?;
        let reflect_basis = read_matrix(&c, "reflect_basis", 3 * n, BETA_DIM)?;
        let expr_basis = read_matrix(&c, "expr_basis", 3 * n, DELTA_DIM)?;

        let sigma_shape = read_vector(&c, "sigma_shape", ALPHA_DIM)?;
        let sigma_reflect = read_vector(&c, "sigma_reflect", BETA_DIM)?;
        let sigma_expr = read_vector(&c, "sigma_expr", DELTA_DIM)?;

        let (tri_dims, tri_flat) = c.i64_tensor("triangles")?;
        if tri_dims.len() != 2 || tri_dims[1] != 3 {
            return Err(Error::format("triangles must be T x 3"));
        }
        let triangles: Vec<[usize; 3]> = tri_flat
            .chunks_exact(3)
            .map(|t| {
                if t.iter().any(|&v| v < 0) {
                    Err(Error::format("negative triangle index"))
                } else {
                    Ok([t[0] as usize, t[1] as usize, t[2] as usize])
                }
            })
            .collect::<Result<_>>()?;

        let (_, lm_flat) = c.i64_tensor("landmark_indices")?;
        let landmark_indices: Vec<usize> = lm_flat
            .iter()
            .map(|&v| {
                if v < 0 {
                    Err(Error::format("negative landmark index"))
                } else {
                    Ok(v as usize)
                }
            })
            .collect::<Result<_>>()?;

        let mut model = FaceModel::from_parts(
            DVector::from_vec(mean_shape),
            DVector::from_vec(mean_albedo),
            shape_basis,
            reflect_basis,
            expr_basis,
            DVector::from_vec(sigma_shape),
            DVector::from_vec(sigma_reflect),
            DVector::from_vec(sigma_expr),
            triangles,
            landmark_indices,
        )
        .map_err(|e| Error::format(e.to_string()))?;
        model.normalize_basis_columns()?;
        Ok(model)
    }

    /// Unit-norm invariant on basis columns, enforced at load.
    fn normalize_basis_columns(&mut self) -> Result<()> {
        for basis in [
            &mut self.shape_basis,
            &mut self.reflect_basis,
            &mut self.expr_basis,
        ] {
            for c in 0..basis.ncols() {
                let norm = basis.column(c).norm();
                if norm < 1e-12 {
                    return Err(Error::format(format!("zero basis column {c}")));
                }
                if (norm - 1.0).abs() > 1e-12 {
                    basis.column_mut(c).scale_mut(1.0 / norm);
                }
            }
        }
        Ok(())
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

fn read_matrix(c: &Container, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let (dims, data) = c.f64_tensor(name)?;
    expect_dims(name, &dims, &[rows, cols])?;
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

fn read_vector(c: &Container, name: &str, len: usize) -> Result<Vec<f64>> {
    let (dims, data) = c.f64_tensor(name)?;
    expect_dims(name, &dims, &[len])?;
    Ok(data)
}

fn expect_dims(name: &str, got: &[usize], want: &[usize]) -> Result<()> {
    if got != want {
        return Err(Error::format(format!(
            "tensor '{name}' has dims {got:?}, expected {want:?}"
        )));
    }
    Ok(())
}
