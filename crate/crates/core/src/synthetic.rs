//! Procedural labeled scenes built from planar primitives, with an exact
//! mesh and an analytic ray-visibility oracle.

use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{assemble_scene, write_sequence, ClassId, Mesh, Scan, Scene, Sequence};
use crate::pose::{rot_z, Pose};
use crate::rng::seeded_rng;

pub const SYNTHETIC_CLASSES: [&str; 4] = ["ground", "wall", "box", "pole"];
pub const DEFAULT_POLE_SEGMENTS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Primitive {
    /// Horizontal rectangle spanning `min..max` in x and y at height `z`.
    Plane { min: [f64; 2], max: [f64; 2], z: f64, class: ClassId, density: f64 },
    /// Vertical rectangle from `start` to `end` in the xy-plane, `base_z..base_z + height`.
    Wall { start: [f64; 2], end: [f64; 2], base_z: f64, height: f64, class: ClassId, density: f64 },
    /// Axis-aligned box resting on `base_z`; top and side faces only.
    Box { center: [f64; 2], size: [f64; 3], base_z: f64, class: ClassId, density: f64 },
    /// Vertical prism approximating a cylinder; side faces only.
    Pole {
        center: [f64; 2],
        radius: f64,
        base_z: f64,
        height: f64,
        class: ClassId,
        density: f64,
        #[serde(default = "default_segments")]
        segments: usize,
    },
}

fn default_segments() -> usize {
    DEFAULT_POLE_SEGMENTS
}

/// Parallelogram `origin + a * e1 + b * e2`, `a, b` in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub origin: Point3<f64>,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub class: ClassId,
}

impl Quad {
    pub fn area(&self) -> f64 {
        self.e1.cross(&self.e2).norm()
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.e1.cross(&self.e2).normalize()
    }

    pub fn at(&self, a: f64, b: f64) -> Point3<f64> {
        self.origin + self.e1 * a + self.e2 * b
    }

    /// The quad shrunk by `margin` along both edges on every side; a negative
    /// margin grows it.
    pub fn inset(&self, margin: f64) -> Quad {
        let (l1, l2) = (self.e1.norm(), self.e2.norm());
        let s1 = ((l1 - 2.0 * margin) / l1).max(0.0);
        let s2 = ((l2 - 2.0 * margin) / l2).max(0.0);
        Quad {
            origin: self.origin + self.e1 / l1 * margin + self.e2 / l2 * margin,
            e1: self.e1 * s1,
            e2: self.e2 * s2,
            class: self.class,
        }
    }

    /// Ray parameter `t` at which `origin + t * dir` crosses the quad.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let n = self.e1.cross(&self.e2);
        let denom = n.dot(dir);
        if denom.abs() < 1e-15 {
            return None;
        }
        let t = n.dot(&(self.origin - origin)) / denom;
        let rel = origin + dir * t - self.origin;
        // Solve rel = a e1 + b e2 in the quad's plane.
        let (e11, e12, e22) = (self.e1.dot(&self.e1), self.e1.dot(&self.e2), self.e2.dot(&self.e2));
        let (r1, r2) = (rel.dot(&self.e1), rel.dot(&self.e2));
        let det = e11 * e22 - e12 * e12;
        let a = (r1 * e22 - r2 * e12) / det;
        let b = (r2 * e11 - r1 * e12) / det;
        ((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b)).then_some(t)
    }
}

impl Primitive {
    pub fn class(&self) -> ClassId {
        match *self {
            Primitive::Plane { class, .. }
            | Primitive::Wall { class, .. }
            | Primitive::Box { class, .. }
            | Primitive::Pole { class, .. } => class,
        }
    }

    pub fn density(&self) -> f64 {
        match *self {
            Primitive::Plane { density, .. }
            | Primitive::Wall { density, .. }
            | Primitive::Box { density, .. }
            | Primitive::Pole { density, .. } => density,
        }
    }

    pub fn quads(&self) -> Vec<Quad> {
        let class = self.class();
        match *self {
            Primitive::Plane { min, max, z, .. } => vec![Quad {
                origin: Point3::new(min[0], min[1], z),
                e1: Vector3::new(max[0] - min[0], 0.0, 0.0),
                e2: Vector3::new(0.0, max[1] - min[1], 0.0),
                class,
            }],
            Primitive::Wall { start, end, base_z, height, .. } => vec![Quad {
                origin: Point3::new(start[0], start[1], base_z),
                e1: Vector3::new(end[0] - start[0], end[1] - start[1], 0.0),
                e2: Vector3::new(0.0, 0.0, height),
                class,
            }],
            Primitive::Box { center, size, base_z, .. } => {
                let [sx, sy, sz] = size;
                let lo = Point3::new(center[0] - sx / 2.0, center[1] - sy / 2.0, base_z);
                let (ex, ey, ez) = (Vector3::x() * sx, Vector3::y() * sy, Vector3::z() * sz);
                vec![
                    Quad { origin: lo + ez, e1: ex, e2: ey, class },
                    Quad { origin: lo, e1: ex, e2: ez, class },
                    Quad { origin: lo + ey, e1: ex, e2: ez, class },
                    Quad { origin: lo, e1: ey, e2: ez, class },
                    Quad { origin: lo + ex, e1: ey, e2: ez, class },
                ]
            }
            Primitive::Pole { center, radius, base_z, height, segments, .. } => {
                let n = segments.max(3);
                let corner = |k: usize| {
                    let a = std::f64::consts::TAU * k as f64 / n as f64;
                    Point3::new(center[0] + radius * a.cos(), center[1] + radius * a.sin(), base_z)
                };
                (0..n)
                    .map(|k| {
                        let (p, q) = (corner(k), corner(k + 1));
                        Quad { origin: p, e1: q - p, e2: Vector3::z() * height, class }
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrajectorySpec {
    /// Evenly spaced poses from `start` to `end`, heading along the line.
    Line { start: [f64; 3], end: [f64; 3], poses: usize },
    /// Poses on a horizontal arc around `center`, heading along the tangent.
    Arc { center: [f64; 3], radius: f64, start_deg: f64, end_deg: f64, poses: usize },
}

impl TrajectorySpec {
    pub fn poses(&self) -> Vec<Pose> {
        match *self {
            TrajectorySpec::Line { start, end, poses } => {
                let (s, e) = (Vector3::from(start), Vector3::from(end));
                let d = e - s;
                let yaw = d.y.atan2(d.x);
                (0..poses)
                    .map(|i| {
                        let f = if poses > 1 { i as f64 / (poses - 1) as f64 } else { 0.0 };
                        Pose::from_parts_unchecked(rot_z(yaw), s + d * f)
                    })
                    .collect()
            }
            TrajectorySpec::Arc { center, radius, start_deg, end_deg, poses } => (0..poses)
                .map(|i| {
                    let f = if poses > 1 { i as f64 / (poses - 1) as f64 } else { 0.0 };
                    let a = (start_deg + (end_deg - start_deg) * f).to_radians();
                    let p = Vector3::new(center[0] + radius * a.cos(), center[1] + radius * a.sin(), center[2]);
                    let heading = if end_deg >= start_deg { a + std::f64::consts::FRAC_PI_2 } else { a - std::f64::consts::FRAC_PI_2 };
                    Pose::from_parts_unchecked(rot_z(heading), p)
                })
                .collect(),
        }
    }
}

/// Uniform intensity in `mean ± spread`, clamped to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityModel {
    pub mean: f32,
    pub spread: f32,
}

impl IntensityModel {
    pub fn for_class(class: ClassId) -> Self {
        Self { mean: 0.15 + 0.2 * (class % 4) as f32, spread: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecipe {
    pub name: String,
    pub seed: u64,
    pub classes: Vec<String>,
    pub primitives: Vec<Primitive>,
    pub trajectory: TrajectorySpec,
    /// Per class id; classes without an entry use a built-in default.
    #[serde(default)]
    pub intensity: Vec<IntensityModel>,
}

impl SceneRecipe {
    pub fn empty() -> Self {
        Self {
            name: "empty".into(),
            seed: 0,
            classes: SYNTHETIC_CLASSES.iter().map(|s| s.to_string()).collect(),
            primitives: vec![],
            trajectory: TrajectorySpec::Line { start: [0.0, 0.0, 1.7], end: [0.0, 0.0, 1.7], poses: 1 },
            intensity: vec![],
        }
    }

    /// Street-like scene of about 50 000 points: ground, two facades,
    /// three boxes and two poles along a 40 m drive.
    pub fn closed_loop() -> Self {
        let mut primitives = vec![
            Primitive::Plane { min: [-30.0, -10.0], max: [30.0, 10.0], z: 0.0, class: 0, density: 25.0 },
            Primitive::Wall { start: [-30.0, 10.0], end: [30.0, 10.0], base_z: 0.0, height: 4.0, class: 1, density: 30.0 },
            Primitive::Wall { start: [30.0, -10.0], end: [-30.0, -10.0], base_z: 0.0, height: 4.0, class: 1, density: 30.0 },
        ];
        for (x, y) in [(-12.0, 4.0), (3.0, -5.0), (15.0, 5.0)] {
            primitives.push(Primitive::Box { center: [x, y], size: [4.0, 2.0, 1.5], base_z: 0.0, class: 2, density: 50.0 });
        }
        for (x, y) in [(-5.0, -7.0), (10.0, 7.5)] {
            primitives.push(Primitive::Pole {
                center: [x, y],
                radius: 0.2,
                base_z: 0.0,
                height: 4.0,
                class: 3,
                density: 100.0,
                segments: DEFAULT_POLE_SEGMENTS,
            });
        }
        Self {
            name: "closed_loop".into(),
            seed: 7,
            classes: SYNTHETIC_CLASSES.iter().map(|s| s.to_string()).collect(),
            primitives,
            trajectory: TrajectorySpec::Line { start: [-20.0, 0.0, 1.7], end: [20.0, 0.0, 1.7], poses: 20 },
            intensity: vec![],
        }
    }

    /// A 10 m wall 10 m ahead of the origin in front of a wide backdrop at
    /// 20 m, over a ground plane: the occlusion test fixture.
    pub fn wall_fixture() -> Self {
        Self {
            name: "wall_fixture".into(),
            seed: 5,
            classes: SYNTHETIC_CLASSES.iter().map(|s| s.to_string()).collect(),
            primitives: vec![
                Primitive::Plane { min: [0.0, -15.0], max: [25.0, 15.0], z: 0.0, class: 0, density: 5.0 },
                Primitive::Wall { start: [10.0, -5.0], end: [10.0, 5.0], base_z: 0.0, height: 4.0, class: 2, density: 50.0 },
                Primitive::Wall { start: [20.0, -15.0], end: [20.0, 15.0], base_z: 0.0, height: 8.0, class: 1, density: 20.0 },
            ],
            trajectory: TrajectorySpec::Line { start: [0.0, -3.0, 1.7], end: [0.0, 3.0, 1.7], poses: 4 },
            intensity: vec![],
        }
    }

    /// A few thousand points; quick enough for examples and smoke tests.
    pub fn small() -> Self {
        Self {
            name: "small".into(),
            seed: 3,
            classes: SYNTHETIC_CLASSES.iter().map(|s| s.to_string()).collect(),
            primitives: vec![
                Primitive::Plane { min: [-12.0, -6.0], max: [12.0, 6.0], z: 0.0, class: 0, density: 10.0 },
                Primitive::Wall { start: [-12.0, 6.0], end: [12.0, 6.0], base_z: 0.0, height: 3.0, class: 1, density: 15.0 },
                Primitive::Box { center: [2.0, -2.0], size: [3.0, 2.0, 1.5], base_z: 0.0, class: 2, density: 30.0 },
                Primitive::Pole {
                    center: [-4.0, 3.0],
                    radius: 0.25,
                    base_z: 0.0,
                    height: 3.0,
                    class: 3,
                    density: 60.0,
                    segments: DEFAULT_POLE_SEGMENTS,
                },
            ],
            trajectory: TrajectorySpec::Line { start: [-8.0, 0.0, 1.7], end: [8.0, 0.0, 1.7], poses: 5 },
            intensity: vec![],
        }
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "empty" => Ok(Self::empty()),
            "closed_loop" => Ok(Self::closed_loop()),
            "wall_fixture" => Ok(Self::wall_fixture()),
            "small" => Ok(Self::small()),
            _ => Err(Error::Config(format!("unknown scene recipe {name:?}"))),
        }
    }

    /// A built-in name or a JSON recipe file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        let path = Path::new(name_or_path);
        if path.extension().is_some_and(|e| e == "json") || path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let recipe: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
            recipe.validate()?;
            Ok(recipe)
        } else {
            Self::builtin(name_or_path)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.primitives.iter().enumerate() {
            if !(p.density() > 0.0) {
                return Err(Error::Config(format!("primitive {i} has non-positive density")));
            }
            if p.class() as usize >= self.classes.len() {
                return Err(Error::Config(format!("primitive {i} class {} >= {} classes", p.class(), self.classes.len())));
            }
        }
        Ok(())
    }

    pub fn quads(&self) -> Vec<Quad> {
        self.primitives.iter().flat_map(|p| p.quads()).collect()
    }

    fn intensity_model(&self, class: ClassId) -> IntensityModel {
        self.intensity.get(class as usize).copied().unwrap_or_else(|| IntensityModel::for_class(class))
    }

    /// Two triangles per quad with exact labels, class-mean intensity and face normals.
    pub fn mesh(&self) -> Mesh {
        let mut mesh = Mesh {
            vertex_intensity: Some(vec![]),
            vertex_label: Some(vec![]),
            vertex_normal: Some(vec![]),
            ..Default::default()
        };
        for q in self.quads() {
            let base = mesh.vertices.len() as u32;
            mesh.vertices.extend([q.at(0.0, 0.0), q.at(1.0, 0.0), q.at(1.0, 1.0), q.at(0.0, 1.0)]);
            mesh.triangles.extend([[base, base + 1, base + 2], [base, base + 2, base + 3]]);
            let mean = self.intensity_model(q.class).mean;
            mesh.vertex_intensity.as_mut().unwrap().extend([mean; 4]);
            mesh.vertex_label.as_mut().unwrap().extend([q.class; 4]);
            mesh.vertex_normal.as_mut().unwrap().extend([q.normal(); 4]);
        }
        mesh
    }

    /// World-frame samples: points, intensities and labels.
    pub fn sample_points(&self) -> Result<(Vec<Point3<f64>>, Vec<f32>, Vec<ClassId>)> {
        self.validate()?;
        let mut rng = seeded_rng(self.seed);
        let (mut points, mut intensity, mut labels) = (vec![], vec![], vec![]);
        for prim in &self.primitives {
            let model = self.intensity_model(prim.class());
            for q in prim.quads() {
                let mean = q.area() * prim.density();
                if !(mean > 0.0) {
                    continue;
                }
                let count = Poisson::new(mean).expect("positive mean").sample(&mut rng) as usize;
                for _ in 0..count {
                    let (a, b): (f64, f64) = (rng.random(), rng.random());
                    points.push(q.at(a, b));
                    let jitter: f32 = rng.random_range(-1.0..=1.0);
                    intensity.push((model.mean + model.spread * jitter).clamp(0.0, 1.0));
                    labels.push(prim.class());
                }
            }
        }
        Ok((points, intensity, labels))
    }

    /// Splits the samples into per-pose scans (each point goes to the
    /// nearest trajectory pose) expressed in sensor frames.
    pub fn sequence(&self) -> Result<Sequence> {
        let poses = self.trajectory.poses();
        if poses.is_empty() {
            return Err(Error::Config(format!("recipe {} has an empty trajectory", self.name)));
        }
        let (points, intensity, labels) = self.sample_points()?;
        let mut scans: Vec<Scan> = (0..poses.len())
            .map(|i| Scan {
                scan_id: i as u32,
                name: format!("{i:06}"),
                points: vec![],
                intensity: vec![],
                labels: Some(vec![]),
            })
            .collect();
        for ((p, i), l) in points.iter().zip(&intensity).zip(&labels) {
            let k = (0..poses.len())
                .min_by(|&a, &b| {
                    let da = (poses[a].position() - p).norm_squared();
                    let db = (poses[b].position() - p).norm_squared();
                    da.total_cmp(&db)
                })
                .expect("non-empty trajectory");
            let scan = &mut scans[k];
            scan.points.push(poses[k].inverse_transform_point(p));
            scan.intensity.push(*i);
            scan.labels.as_mut().unwrap().push(*l);
        }
        Ok(Sequence { scans, poses })
    }

    /// The labeled scene with its exact mesh.
    pub fn generate(&self) -> Result<Scene> {
        let seq = self.sequence()?;
        let mut scene = assemble_scene(&seq.scans, &seq.poses, seq.scans.len())?.remove(0);
        scene.mesh = Some(self.mesh());
        Ok(scene)
    }

    /// Writes the recipe's scans in KITTI layout under `root`.
    pub fn export_kitti(&self, root: &Path) -> Result<Sequence> {
        let seq = self.sequence()?;
        write_sequence(root, &seq)?;
        Ok(seq)
    }
}

/// True if the open segment from `eye` to `point` crosses any quad more than
/// `tolerance` meters before reaching `point`.
pub fn ray_blocked(quads: &[Quad], eye: &Point3<f64>, point: &Point3<f64>, tolerance: f64) -> bool {
    let dir = point - eye;
    let len = dir.norm();
    if len == 0.0 {
        return false;
    }
    let t_max = 1.0 - tolerance / len;
    quads.iter().any(|q| q.intersect(eye, &dir).is_some_and(|t| t > 0.0 && t < t_max))
}

/// Analytic visibility from `eye`: `Some(true)` hidden, `Some(false)` visible,
/// `None` within `margin` meters of an occluder's silhouette.
pub fn classify_visibility(quads: &[Quad], eye: &Point3<f64>, point: &Point3<f64>, margin: f64) -> Option<bool> {
    let tolerance = margin.max(1e-6);
    let shrunk: Vec<Quad> = quads.iter().map(|q| q.inset(margin)).collect();
    let grown: Vec<Quad> = quads.iter().map(|q| q.inset(-margin)).collect();
    let hidden_shrunk = ray_blocked(&shrunk, eye, point, tolerance);
    let hidden_grown = ray_blocked(&grown, eye, point, tolerance);
    match (hidden_shrunk, hidden_grown) {
        (true, _) => Some(true),
        (false, false) => Some(false),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_point_count_follows_area_times_density() {
        let mut recipe = SceneRecipe::empty();
        recipe.primitives = vec![Primitive::Plane { min: [0.0, 0.0], max: [10.0, 10.0], z: 0.0, class: 0, density: 100.0 }];
        let scene = recipe.generate().unwrap();
        // Poisson(10 000): five standard deviations is 500.
        assert!((scene.len() as f64 - 10_000.0).abs() < 500.0, "{}", scene.len());
        assert!(scene.labels.iter().all(|&l| l == 0));
        let mesh = scene.mesh.as_ref().unwrap();
        assert_eq!(mesh.triangles.len(), 2);
    }

    #[test]
    fn empty_recipe_is_empty() {
        let scene = SceneRecipe::empty().generate().unwrap();
        assert!(scene.is_empty());
        assert!(scene.mesh.as_ref().unwrap().vertices.is_empty());
    }

    #[test]
    fn same_seed_same_scene() {
        let a = SceneRecipe::small().generate().unwrap();
        let b = SceneRecipe::small().generate().unwrap();
        assert_eq!(a, b);
        let mut other = SceneRecipe::small();
        other.seed += 1;
        assert_ne!(other.generate().unwrap().points, a.points);
    }

    #[test]
    fn closed_loop_has_about_fifty_thousand_points() {
        let scene = SceneRecipe::closed_loop().generate().unwrap();
        assert!((45_000..55_000).contains(&scene.len()), "{}", scene.len());
        assert_eq!(scene.label_set(), vec![0, 1, 2, 3]);
        scene.validate().unwrap();
    }

    #[test]
    fn points_lie_on_the_mesh_primitives() {
        let recipe = SceneRecipe::small();
        let scene = recipe.generate().unwrap();
        let quads = recipe.quads();
        for (p, &l) in scene.points.iter().zip(&scene.labels).step_by(17) {
            let on = quads.iter().filter(|q| q.class == l).any(|q| {
                let n = q.normal();
                let d = (p - q.origin).dot(&n);
                d.abs() < 1e-9 && q.intersect(&(p + n), &(-n)).is_some()
            });
            assert!(on, "{p:?}");
        }
    }

    #[test]
    fn wall_hides_backdrop_analytically() {
        let quads = SceneRecipe::wall_fixture().quads();
        let eye = Point3::new(0.0, 0.0, 2.0);
        assert_eq!(classify_visibility(&quads, &eye, &Point3::new(20.0, 0.0, 2.0), 0.1), Some(true));
        assert_eq!(classify_visibility(&quads, &eye, &Point3::new(20.0, 12.0, 2.0), 0.1), Some(false));
        // The ray passes just inside the wall's edge at y = 5.
        assert_eq!(classify_visibility(&quads, &eye, &Point3::new(20.0, 9.98, 2.0), 0.1), None);
        // Points on the wall itself are visible.
        assert_eq!(classify_visibility(&quads, &eye, &Point3::new(10.0, 0.0, 2.0), 0.1), Some(false));
    }

    #[test]
    fn recipe_json_round_trip_and_validation() {
        let recipe = SceneRecipe::closed_loop();
        let json = serde_json::to_string(&recipe).unwrap();
        let back: SceneRecipe = serde_json::from_str(&json).unwrap();
        assert_eq!(back, recipe);
        let mut bad = SceneRecipe::small();
        bad.primitives.push(Primitive::Plane { min: [0.0; 2], max: [1.0; 2], z: 0.0, class: 9, density: 1.0 });
        assert!(bad.generate().is_err());
    }

    #[test]
    fn arc_trajectory_heads_along_tangent() {
        let poses = TrajectorySpec::Arc { center: [0.0, 0.0, 1.7], radius: 10.0, start_deg: 0.0, end_deg: 90.0, poses: 3 }.poses();
        assert!((poses[0].position() - Point3::new(10.0, 0.0, 1.7)).norm() < 1e-12);
        let heading = poses[0].transform_vector(&Vector3::x());
        assert!((heading - Vector3::y()).norm() < 1e-12);
    }
}
