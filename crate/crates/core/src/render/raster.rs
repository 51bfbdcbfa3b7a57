//! Z-buffered triangle rasterization with perspective-correct barycentrics.
//!
//! Triangles are clipped against the plane `z = NEAR_CLIP` in camera space,
//! projected, and sampled at pixel centres (integer coordinates). No back-face
//! culling. Each covered pixel records the triangle, its camera depth and the
//! perspective-correct barycentric weights of the triangle's three vertices.

use nalgebra::{Point3, Vector3};

use crate::camera::CameraView;
use crate::ingest::{ClassId, Mesh, IGNORE};

use super::Grid;

pub const NEAR_CLIP: f64 = 1e-2;
pub const NO_TRIANGLE: u32 = u32::MAX;

/// Twice the signed screen area below which a triangle is degenerate.
const MIN_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MeshRaster {
    pub depth: Grid<f64>,
    pub triangle: Grid<u32>,
    pub bary: Grid<[f64; 3]>,
}

/// A clipped polygon vertex: camera-space position and barycentric weights
/// relative to the source triangle.
#[derive(Debug, Clone, Copy)]
struct ClipVertex {
    p: Point3<f64>,
    w: [f64; 3],
}

fn lerp(a: &ClipVertex, b: &ClipVertex, t: f64) -> ClipVertex {
    ClipVertex {
        p: a.p + (b.p - a.p) * t,
        w: [a.w[0] + (b.w[0] - a.w[0]) * t, a.w[1] + (b.w[1] - a.w[1]) * t, a.w[2] + (b.w[2] - a.w[2]) * t],
    }
}

/// Sutherland-Hodgman against `z >= NEAR_CLIP`.
fn clip_near(tri: [ClipVertex; 3]) -> Vec<ClipVertex> {
    if tri.iter().all(|v| v.p.z >= NEAR_CLIP) {
        return tri.to_vec();
    }
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let (a, b) = (&tri[i], &tri[(i + 1) % 3]);
        let (ina, inb) = (a.p.z >= NEAR_CLIP, b.p.z >= NEAR_CLIP);
        if ina {
            out.push(*a);
        }
        if ina != inb {
            let t = (NEAR_CLIP - a.p.z) / (b.p.z - a.p.z);
            out.push(lerp(a, b, t));
        }
    }
    out
}

#[inline]
fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

pub fn rasterize_mesh(mesh: &Mesh, view: &CameraView) -> MeshRaster {
    let (w, h) = (view.intrinsics.width as usize, view.intrinsics.height as usize);
    let mut out = MeshRaster {
        depth: Grid::new(w, h, f64::INFINITY),
        triangle: Grid::new(w, h, NO_TRIANGLE),
        bary: Grid::new(w, h, [0.0; 3]),
    };
    let cam: Vec<Point3<f64>> = mesh.vertices.iter().map(|v| view.to_camera(v)).collect();
    let k = &view.intrinsics;
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let tri = [0, 1, 2].map(|j| {
            let mut wgt = [0.0; 3];
            wgt[j] = 1.0;
            ClipVertex { p: cam[t[j] as usize], w: wgt }
        });
        let poly = clip_near(tri);
        if poly.len() < 3 {
            continue;
        }
        let screen: Vec<(f64, f64, f64)> =
            poly.iter().map(|v| (k.cx + k.fx * v.p.x / v.p.z, k.cy + k.fy * v.p.y / v.p.z, 1.0 / v.p.z)).collect();
        for j in 1..poly.len() - 1 {
            let idx = [0, j, j + 1];
            draw_triangle(&mut out, ti as u32, idx.map(|i| screen[i]), idx.map(|i| poly[i].w));
        }
    }
    out
}

fn draw_triangle(out: &mut MeshRaster, tri_id: u32, s: [(f64, f64, f64); 3], wts: [[f64; 3]; 3]) {
    let area = edge(s[0].0, s[0].1, s[1].0, s[1].1, s[2].0, s[2].1);
    if !(area.abs() > MIN_AREA) {
        return;
    }
    let (w, h) = (out.depth.width() as f64, out.depth.height() as f64);
    let min_x = s.iter().map(|v| v.0).fold(f64::INFINITY, f64::min).ceil().max(0.0);
    let max_x = s.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max).floor().min(w - 1.0);
    let min_y = s.iter().map(|v| v.1).fold(f64::INFINITY, f64::min).ceil().max(0.0);
    let max_y = s.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max).floor().min(h - 1.0);
    if min_x > max_x || min_y > max_y {
        return;
    }
    let inv_area = 1.0 / area;
    for y in min_y as usize..=max_y as usize {
        let py = y as f64;
        for x in min_x as usize..=max_x as usize {
            let px = x as f64;
            let l0 = edge(s[1].0, s[1].1, s[2].0, s[2].1, px, py) * inv_area;
            let l1 = edge(s[2].0, s[2].1, s[0].0, s[0].1, px, py) * inv_area;
            let l2 = edge(s[0].0, s[0].1, s[1].0, s[1].1, px, py) * inv_area;
            if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                continue;
            }
            // Perspective-correct: interpolate 1/z and w/z linearly in screen space.
            let (q0, q1, q2) = (l0 * s[0].2, l1 * s[1].2, l2 * s[2].2);
            let inv_z = q0 + q1 + q2;
            let depth = 1.0 / inv_z;
            let i = out.depth.index(x, y);
            if depth < out.depth.data()[i] {
                let mut b = [0.0; 3];
                for (c, bc) in b.iter_mut().enumerate() {
                    *bc = (q0 * wts[0][c] + q1 * wts[1][c] + q2 * wts[2][c]) * depth;
                }
                out.depth.data_mut()[i] = depth;
                out.triangle.data_mut()[i] = tri_id;
                out.bary.data_mut()[i] = b;
            }
        }
    }
}

impl MeshRaster {
    pub fn interpolate_scalar(&self, mesh: &Mesh, values: &[f32], empty: f32) -> Grid<f32> {
        let mut out = Grid::new(self.depth.width(), self.depth.height(), empty);
        for (i, &t) in self.triangle.data().iter().enumerate() {
            if t == NO_TRIANGLE {
                continue;
            }
            let tri = mesh.triangles[t as usize];
            let b = self.bary.data()[i];
            let v: f64 = (0..3).map(|c| b[c] * values[tri[c] as usize] as f64).sum();
            out.data_mut()[i] = v as f32;
        }
        out
    }

    /// Label of the vertex with the largest barycentric weight.
    pub fn nearest_vertex_label(&self, mesh: &Mesh, labels: &[ClassId]) -> Grid<ClassId> {
        let mut out = Grid::new(self.depth.width(), self.depth.height(), IGNORE);
        for (i, &t) in self.triangle.data().iter().enumerate() {
            if t == NO_TRIANGLE {
                continue;
            }
            let tri = mesh.triangles[t as usize];
            let b = self.bary.data()[i];
            let mut best = 0;
            for c in 1..3 {
                if b[c] > b[best] {
                    best = c;
                }
            }
            out.data_mut()[i] = labels[tri[best] as usize];
        }
        out
    }

    /// Interpolated, renormalized vertex normals flipped to face the camera.
    /// Empty pixels hold the zero vector.
    pub fn normals(&self, mesh: &Mesh, normals: &[Vector3<f64>], view: &CameraView) -> Grid<[f64; 3]> {
        let mut out = Grid::new(self.depth.width(), self.depth.height(), [0.0; 3]);
        let eye = view.position();
        for y in 0..self.depth.height() {
            for x in 0..self.depth.width() {
                let i = self.depth.index(x, y);
                let t = self.triangle.data()[i];
                if t == NO_TRIANGLE {
                    continue;
                }
                let tri = mesh.triangles[t as usize];
                let b = self.bary.data()[i];
                let n: Vector3<f64> = (0..3).map(|c| normals[tri[c] as usize] * b[c]).sum();
                let Some(mut n) = n.try_normalize(1e-12) else { continue };
                let surface = view.unproject(x as f64, y as f64, self.depth.data()[i]);
                if n.dot(&(eye - surface)) < 0.0 {
                    n = -n;
                }
                out.data_mut()[i] = [n.x, n.y, n.z];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Intrinsics, PoseFamily};
    use crate::pose::Pose;

    fn view(w: u32, h: u32) -> CameraView {
        CameraView {
            view_id: 0,
            family: PoseFamily::Car,
            pose: Pose::identity(),
            intrinsics: Intrinsics::from_hfov(w, h, 90.0).unwrap(),
        }
    }

    fn square(z: f64, half: f64, first_label: ClassId) -> Mesh {
        Mesh {
            vertices: vec![
                Point3::new(-half, -half, z),
                Point3::new(half, -half, z),
                Point3::new(half, half, z),
                Point3::new(-half, half, z),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            vertex_intensity: Some(vec![0.0, 1.0, 1.0, 0.0]),
            vertex_label: Some(vec![first_label; 4]),
            vertex_normal: None,
        }
    }

    #[test]
    fn square_filling_frustum_has_constant_depth() {
        let v = view(64, 32);
        let r = rasterize_mesh(&square(10.0, 30.0, 1), &v);
        assert!(r.triangle.data().iter().all(|&t| t != NO_TRIANGLE));
        assert_eq!(r.depth.get(32, 16), 10.0);
        assert!(r.depth.data().iter().all(|d| (d - 10.0).abs() < 1e-9));
    }

    #[test]
    fn intensity_interpolates_monotonically() {
        let v = view(64, 32);
        let mesh = square(10.0, 30.0, 1);
        let r = rasterize_mesh(&mesh, &v);
        let img = r.interpolate_scalar(&mesh, mesh.vertex_intensity.as_ref().unwrap(), 0.0);
        let row: Vec<f32> = (0..64).map(|x| img.get(x, 16)).collect();
        assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(row.windows(2).all(|w| w[0] <= w[1] + 1e-6));
        // Planar and fronto-parallel: intensity is affine in x, exactly 0.5 at the centre column.
        assert!((img.get(32, 16) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn perspective_correct_on_slanted_plane() {
        // Plane z = 10 + x; the ray through pixel u hits it at depth 10 / (1 - (u - cx) / fx).
        let v = view(64, 32);
        let mesh = Mesh {
            vertices: vec![
                Point3::new(-5.0, -20.0, 5.0),
                Point3::new(5.0, -20.0, 15.0),
                Point3::new(5.0, 20.0, 15.0),
                Point3::new(-5.0, 20.0, 5.0),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            vertex_intensity: None,
            vertex_label: None,
            vertex_normal: None,
        };
        let r = rasterize_mesh(&mesh, &v);
        let k = v.intrinsics;
        for x in 22..42 {
            let expected = 10.0 / (1.0 - (x as f64 - k.cx) / k.fx);
            assert!((r.depth.get(x, 16) - expected).abs() < 1e-9, "x={x}");
        }
    }

    #[test]
    fn nearer_plane_wins_regardless_of_winding() {
        let v = view(32, 16);
        let mut near = square(5.0, 1.0, 2);
        near.triangles = vec![[2, 1, 0], [3, 2, 0]];
        let far = square(10.0, 30.0, 1);
        let mut both = far.clone();
        let off = both.vertices.len() as u32;
        both.vertices.extend(near.vertices.iter().copied());
        both.triangles.extend(near.triangles.iter().map(|t| t.map(|i| i + off)));
        let mut labels = far.vertex_label.clone().unwrap();
        labels.extend(near.vertex_label.clone().unwrap());
        let r = rasterize_mesh(&both, &v);
        let lab = r.nearest_vertex_label(&both, &labels);
        assert_eq!(lab.get(16, 8), 2);
        assert_eq!(r.depth.get(16, 8), 5.0);
        assert_eq!(lab.get(0, 0), 1);
    }

    #[test]
    fn clips_triangles_crossing_the_camera_plane() {
        // Ground plane 1.5 m below a forward-looking camera, extending behind it.
        let v = view(64, 32);
        let mesh = Mesh {
            vertices: vec![
                Point3::new(-50.0, 1.5, -50.0),
                Point3::new(50.0, 1.5, -50.0),
                Point3::new(50.0, 1.5, 50.0),
                Point3::new(-50.0, 1.5, 50.0),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            ..Default::default()
        };
        let r = rasterize_mesh(&mesh, &v);
        let k = v.intrinsics;
        // Below the horizon every pixel sees the ground at depth fy * 1.5 / (v - cy).
        for y in 20..32 {
            let expected = k.fy * 1.5 / (y as f64 - k.cy);
            assert!((r.depth.get(10, y) - expected).abs() < 1e-9);
        }
        // Above the horizon nothing.
        assert_eq!(r.triangle.get(10, 5), NO_TRIANGLE);
    }

    #[test]
    fn degenerate_triangles_are_skipped() {
        let v = view(16, 8);
        let mesh = Mesh {
            vertices: vec![Point3::new(0.0, 0.0, 5.0), Point3::new(1.0, 0.0, 5.0), Point3::new(2.0, 0.0, 5.0)],
            triangles: vec![[0, 1, 2]],
            ..Default::default()
        };
        let r = rasterize_mesh(&mesh, &v);
        assert!(r.triangle.data().iter().all(|&t| t == NO_TRIANGLE));
    }

    #[test]
    fn normals_face_the_camera() {
        let v = view(16, 8);
        let mesh = square(10.0, 30.0, 1);
        let r = rasterize_mesh(&mesh, &v);
        let n = r.normals(&mesh, &[Vector3::z(); 4], &v);
        assert_eq!(n.get(8, 4), [0.0, 0.0, -1.0]);
    }
}
