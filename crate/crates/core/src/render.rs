//! Software rasterizer: z-buffered triangle fill with perspective-correct
//! color interpolation, per-vertex visibility, and the face coverage mask.

use crate::error::Result;
use crate::image::{ImageRgb, MaskImage};
use crate::model::{Camera, DecodedMesh, FaceModel, SemanticParams};
use nalgebra::Vector2;

/// Relative depth tolerance when testing a vertex against the z-buffer.
pub const VISIBILITY_DEPTH_TOL: f64 = 1e-3;

/// Raster output: color, coverage, and camera-space depth per pixel.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: ImageRgb,
    pub coverage: MaskImage,
    /// Camera z per covered pixel, +inf elsewhere.
    pub depth: Vec<f64>,
}

impl RenderOutput {
    pub fn depth_at(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.coverage.width() + x]
    }
}

/// Signed doubled area of a screen triangle (y grows downward). Front-facing
/// triangles of an outward-wound mesh have negative area.
#[inline]
fn signed_area2(a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

#[inline]
fn edge(p: &Vector2<f64>, from: &Vector2<f64>, to: &Vector2<f64>) -> f64 {
    (p.x - from.x) * (to.y - from.y) - (p.y - from.y) * (to.x - from.x)
}

/// Top-left fill rule for pixels exactly on an edge, in y-down coordinates.
#[inline]
fn tie_accepts(from: &Vector2<f64>, to: &Vector2<f64>) -> bool {
    let dy = to.y - from.y;
    let dx = to.x - from.x;
    dy > 0.0 || (dy == 0.0 && dx < 0.0)
}

/// Z-buffered rasterization of the decoded mesh.
///
/// Pixels are sampled at their centers (x + 0.5, y + 0.5); back-facing
/// triangles are culled; colors are interpolated perspective-correctly and
/// clamped to [0, 1]. Coverage is exactly the set of pixels with finite depth.
pub fn rasterize(mesh: &DecodedMesh, model: &FaceModel, size: (usize, usize)) -> RenderOutput {
    let (width, height) = size;
    let mut color = ImageRgb::new(width, height);
    let mut coverage = MaskImage::new(width, height);
    let mut depth = vec![f64::INFINITY; width * height];

    for tri in model.triangles() {
        let [ia, ib, ic] = *tri;
        let (pa, pb, pc) = (
            &mesh.projections[ia],
            &mesh.projections[ib],
            &mesh.projections[ic],
        );
        let area2 = signed_area2(pa, pb, pc);
        if area2 >= 0.0 {
            continue; // back-facing or degenerate
        }
        let min_x = pa.x.min(pb.x).min(pc.x).floor().max(0.0) as usize;
        let max_x = (pa.x.max(pb.x).max(pc.x).ceil() as isize).clamp(0, width as isize) as usize;
        let min_y = pa.y.min(pb.y).min(pc.y).floor().max(0.0) as usize;
        let max_y = (pa.y.max(pb.y).max(pc.y).ceil() as isize).clamp(0, height as isize) as usize;
        if min_x >= width || min_y >= height {
            continue;
        }

        let inv_z = [
            1.0 / mesh.positions[ia].z,
            1.0 / mesh.positions[ib].z,
            1.0 / mesh.positions[ic].z,
        ];
        let cols = [&mesh.colors[ia], &mesh.colors[ib], &mesh.colors[ic]];

        for py in min_y..max_y.min(height) {
            for px in min_x..max_x.min(width) {
                let p = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
                // For front-facing winding each edge function is positive
                // inside; ties resolved by the top-left rule.
                let w_c = edge(&p, pa, pb);
                let w_a = edge(&p, pb, pc);
                let w_b = edge(&p, pc, pa);
                let inside = (w_a > 0.0 || (w_a == 0.0 && tie_accepts(pb, pc)))
                    && (w_b > 0.0 || (w_b == 0.0 && tie_accepts(pc, pa)))
                    && (w_c > 0.0 || (w_c == 0.0 && tie_accepts(pa, pb)));
                if !inside {
                    continue;
                }
                let inv_area = 1.0 / (-area2);
                let la = w_a * inv_area;
                let lb = w_b * inv_area;
                let lc = w_c * inv_area;
                // Linear interpolation of 1/z is exact for a planar triangle.
                let zinv = la * inv_z[0] + lb * inv_z[1] + lc * inv_z[2];
                let z = 1.0 / zinv;
                let idx = py * width + px;
                if z < depth[idx] {
                    depth[idx] = z;
                    let (ka, kb, kc) = (la * inv_z[0] * z, lb * inv_z[1] * z, lc * inv_z[2] * z);
                    let mut rgb = [0.0; 3];
                    for ch in 0..3 {
                        rgb[ch] = (ka * cols[0][ch] + kb * cols[1][ch] + kc * cols[2][ch])
                            .clamp(0.0, 1.0);
                    }
                    color.set(px, py, rgb);
                    coverage.set(px, py, true);
                }
            }
        }
    }

    RenderOutput {
        color,
        coverage,
        depth,
    }
}

/// Vertices visible under the mesh's own occlusion.
///
/// A vertex is visible when it belongs to at least one front-facing triangle
/// and no front-facing triangle intersects the view ray through its
/// projection at a depth more than `VISIBILITY_DEPTH_TOL * z` nearer than the
/// vertex. Depth along the ray is evaluated exactly from screen barycentrics,
/// so silhouette vertices whose pixel centers fall outside every triangle are
/// handled correctly.
pub fn visibility(mesh: &DecodedMesh, model: &FaceModel) -> Vec<usize> {
    let n = mesh.positions.len();
    let mut front = vec![false; n];
    struct FrontTri {
        p: [Vector2<f64>; 3],
        inv_z: [f64; 3],
        area2: f64,
        bbox: [f64; 4],
    }
    let mut fronts = Vec::new();
    for tri in model.triangles() {
        let [a, b, c] = *tri;
        let (pa, pb, pc) = (
            mesh.projections[a],
            mesh.projections[b],
            mesh.projections[c],
        );
        let area2 = signed_area2(&pa, &pb, &pc);
        if area2 >= 0.0 {
            continue;
        }
        front[a] = true;
        front[b] = true;
        front[c] = true;
        fronts.push(FrontTri {
            p: [pa, pb, pc],
            inv_z: [
                1.0 / mesh.positions[a].z,
                1.0 / mesh.positions[b].z,
                1.0 / mesh.positions[c].z,
            ],
            area2,
            bbox: [
                pa.x.min(pb.x).min(pc.x),
                pa.y.min(pb.y).min(pc.y),
                pa.x.max(pb.x).max(pc.x),
                pa.y.max(pb.y).max(pc.y),
            ],
        });
    }

    let mut visible = Vec::new();
    for (i, &is_front) in front.iter().enumerate() {
        if !is_front {
            continue;
        }
        let u = mesh.projections[i];
        let z = mesh.positions[i].z;
        let mut ray_depth = f64::INFINITY;
        for t in &fronts {
            if u.x < t.bbox[0] || u.y < t.bbox[1] || u.x > t.bbox[2] || u.y > t.bbox[3] {
                continue;
            }
            // Inclusive point-in-triangle with relative slack so a vertex
            // counts as lying on its own triangles despite roundoff.
            let eps = 1e-9 * (-t.area2);
            let w_c = edge(&u, &t.p[0], &t.p[1]);
            let w_a = edge(&u, &t.p[1], &t.p[2]);
            let w_b = edge(&u, &t.p[2], &t.p[0]);
            if w_a < -eps || w_b < -eps || w_c < -eps {
                continue;
            }
            let inv_area = 1.0 / (-t.area2);
            let zinv = (w_a * t.inv_z[0] + w_b * t.inv_z[1] + w_c * t.inv_z[2]) * inv_area;
            if zinv > 0.0 {
                ray_depth = ray_depth.min(1.0 / zinv);
            }
        }
        if z - ray_depth <= VISIBILITY_DEPTH_TOL * z {
            visible.push(i);
        }
    }
    visible
}

/// Coverage mask of the face fitted to the original image; this region is
/// what gets blurred or blacked out for obfuscation.
pub fn face_mask(
    original_fit: &SemanticParams,
    model: &FaceModel,
    camera: &Camera,
    size: (usize, usize),
) -> Result<MaskImage> {
    let mesh = model.decode(original_fit, camera)?;
    Ok(rasterize(&mesh, model, size).coverage)
}
