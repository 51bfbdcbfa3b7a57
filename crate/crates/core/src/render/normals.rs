//! Point normals from local plane fits.

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::Scene;
use crate::knn::KdTree;

pub const DEFAULT_NORMAL_K: usize = 16;

/// Relative eigenvalue threshold below which a neighbourhood counts as collinear.
const COLLINEAR_RATIO: f64 = 1e-10;

/// Normal of each point: eigenvector of the smallest eigenvalue of the
/// covariance of its `k` nearest neighbours (the point included), oriented
/// towards the nearest sensor position. Collinear or degenerate
/// neighbourhoods get `+Z`.
pub fn estimate_point_normals(scene: &Scene, k: usize) -> Result<Vec<Vector3<f64>>> {
    if k < 3 {
        return Err(Error::Invalid(format!("normal estimation needs k >= 3, got {k}")));
    }
    if scene.points.is_empty() {
        return Ok(Vec::new());
    }
    let tree = KdTree::new(&scene.points);
    let sensors: Vec<Point3<f64>> = scene.sensor_trajectory.iter().map(|p| p.position()).collect();
    let sensor_tree = KdTree::new(&sensors);
    Ok(scene
        .points
        .par_iter()
        .map(|p| {
            let nbrs = tree.knn(p, k);
            let pts: Vec<Point3<f64>> = nbrs.iter().map(|n| scene.points[n.index]).collect();
            let Some(n) = plane_normal(&pts) else { return Vector3::z() };
            match sensor_tree.nearest(p) {
                Some(s) if n.dot(&(sensors[s.index] - p)) < 0.0 => -n,
                _ => n,
            }
        })
        .collect())
}

/// Unit normal of the best-fit plane, `None` when the points are (nearly) collinear.
pub fn plane_normal(points: &[Point3<f64>]) -> Option<Vector3<f64>> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (mid, max) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(max > 0.0) || mid <= COLLINEAR_RATIO * max {
        return None;
    }
    eig.eigenvectors.column(order[0]).into_owned().try_normalize(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Provenance;
    use crate::pose::Pose;

    fn scene(points: Vec<Point3<f64>>, sensor: Vector3<f64>) -> Scene {
        let n = points.len();
        Scene {
            points,
            intensity: vec![0.0; n],
            labels: vec![0; n],
            provenance: (0..n as u32).map(|i| Provenance { scan_id: 0, point_index: i }).collect(),
            sensor_trajectory: vec![Pose::from_translation(sensor)],
            ..Default::default()
        }
    }

    fn jittered_grid(f: impl Fn(f64, f64) -> Point3<f64>) -> Vec<Point3<f64>> {
        (0..20)
            .flat_map(|i| (0..20).map(move |j| (i, j)))
            .map(|(i, j)| f(i as f64 * 0.1 + (j % 3) as f64 * 0.013, j as f64 * 0.1 + (i % 5) as f64 * 0.007))
            .collect()
    }

    #[test]
    fn ground_plane_points_up() {
        let s = scene(jittered_grid(|a, b| Point3::new(a, b, 0.0)), Vector3::new(1.0, 1.0, 2.0));
        for n in estimate_point_normals(&s, 8).unwrap() {
            assert!((n - Vector3::z()).norm() < 1e-3);
        }
    }

    #[test]
    fn wall_faces_the_sensor() {
        let pts = jittered_grid(|a, b| Point3::new(0.0, a, b));
        // Independent oracle: the plane x = 0 has normal ±X; the sensor at x = 10 selects +X.
        let s = scene(pts, Vector3::new(10.0, 1.0, 1.0));
        for n in estimate_point_normals(&s, 10).unwrap() {
            assert!((n - Vector3::x()).norm() < 1e-3, "{n:?}");
        }
    }

    #[test]
    fn collinear_and_tiny_inputs_fall_back() {
        let line: Vec<Point3<f64>> = (0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let s = scene(line, Vector3::new(0.0, 0.0, 5.0));
        assert!(estimate_point_normals(&s, 4).unwrap().iter().all(|n| *n == Vector3::z()));
        let two = scene(vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)], Vector3::z());
        assert_eq!(estimate_point_normals(&two, 8).unwrap().len(), 2);
        let tri = scene(
            vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)],
            Vector3::new(0.0, 0.0, -3.0),
        );
        for n in estimate_point_normals(&tri, 16).unwrap() {
            assert!((n + Vector3::z()).norm() < 1e-9);
        }
        assert!(estimate_point_normals(&tri, 2).is_err());
    }
}
