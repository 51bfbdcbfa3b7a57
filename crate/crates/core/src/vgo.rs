//! Virtual camera pose generation around the sensor trajectory.
//!
//! Four pose families are anchored on Lidar positions sampled uniformly (with
//! replacement) from the trajectory:
//!
//! * `car`: a road user's viewpoint, `car.height` above the anchor, random yaw.
//! * `conic`: on the rim of a downward cone whose apex is the anchor, looking at the apex.
//! * `top`: straight above the anchor looking down, random height and roll.
//! * `bottom`: straight below the anchor looking up, random roll.
//!
//! Every pose is then perturbed by a uniform positional offset and a small
//! rotation in the camera frame. Generation is driven by one ChaCha8 stream
//! consumed family-major, then pose index, with exactly nine draws per view:
//! anchor index, two family draws, three offsets and three angles.

use std::f64::consts::TAU;

use nalgebra::{Point3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{look_at, CameraView, Intrinsics, PoseFamily, Resolution, DEFAULT_HFOV_DEG};
use crate::error::{Error, Result};
use crate::ingest::Scene;
use crate::pose::{rot_x, rot_y, rot_z, Pose};
use crate::rng::{seeded_rng, PipelineRng};

/// The best-performing preset: all four families.
pub const DEFAULT_PRESET: &str = "car_conic_top_bottom";
pub const DEFAULT_POSES_PER_FAMILY: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CarParams {
    pub height: f64,
    pub hfov_deg: f64,
}

impl Default for CarParams {
    fn default() -> Self {
        Self { height: 1.7, hfov_deg: DEFAULT_HFOV_DEG }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConicParams {
    /// Horizontal distance from the apex.
    pub radius: f64,
    /// Height above the apex.
    pub height: f64,
    pub hfov_deg: f64,
}

impl Default for ConicParams {
    fn default() -> Self {
        Self { radius: 20.0, height: 20.0, hfov_deg: DEFAULT_HFOV_DEG }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopParams {
    pub min_height: f64,
    pub max_height: f64,
    pub hfov_deg: f64,
}

impl Default for TopParams {
    fn default() -> Self {
        Self { min_height: 15.0, max_height: 40.0, hfov_deg: DEFAULT_HFOV_DEG }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BottomParams {
    /// Distance below the anchor.
    pub depth: f64,
    pub hfov_deg: f64,
}

impl Default for BottomParams {
    fn default() -> Self {
        Self { depth: 15.0, hfov_deg: DEFAULT_HFOV_DEG }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JitterParams {
    /// Half-width of the uniform offset per axis, meters.
    pub position: f64,
    /// Half-width of the uniform rotation per camera axis, degrees.
    pub rotation_deg: f64,
}

impl Default for JitterParams {
    fn default() -> Self {
        Self { position: 2.0, rotation_deg: 5.0 }
    }
}

impl JitterParams {
    pub fn none() -> Self {
        Self { position: 0.0, rotation_deg: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VgoConfig {
    pub families: Vec<PoseFamily>,
    pub poses_per_family: usize,
    pub seed: u64,
    pub resolution: Resolution,
    pub car: CarParams,
    pub conic: ConicParams,
    pub top: TopParams,
    pub bottom: BottomParams,
    pub jitter: JitterParams,
}

impl Default for VgoConfig {
    fn default() -> Self {
        Self {
            families: PoseFamily::ALL.to_vec(),
            poses_per_family: DEFAULT_POSES_PER_FAMILY,
            seed: 0,
            resolution: Resolution::Ld,
            car: CarParams::default(),
            conic: ConicParams::default(),
            top: TopParams::default(),
            bottom: BottomParams::default(),
            jitter: JitterParams::default(),
        }
    }
}

impl VgoConfig {
    /// Families from an underscore-joined preset name such as `car_conic_top_bottom`.
    pub fn preset(name: &str) -> Result<Self> {
        let families = parse_families(name)?;
        Ok(Self { families, ..Self::default() })
    }

    pub fn preset_name(&self) -> String {
        self.families.iter().map(|f| f.name()).collect::<Vec<_>>().join("_")
    }

    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::Config("VGO needs at least one pose family".into()));
        }
        if self.poses_per_family == 0 {
            return Err(Error::Config("poses_per_family must be at least 1".into()));
        }
        if !(self.top.min_height <= self.top.max_height) {
            return Err(Error::Config("top view height range is empty".into()));
        }
        if !(self.jitter.position >= 0.0 && self.jitter.rotation_deg >= 0.0) {
            return Err(Error::Config("jitter magnitudes must be non-negative".into()));
        }
        Ok(())
    }

    pub fn intrinsics(&self, family: PoseFamily) -> Result<Intrinsics> {
        let hfov = match family {
            PoseFamily::Car => self.car.hfov_deg,
            PoseFamily::Conic => self.conic.hfov_deg,
            PoseFamily::Top => self.top.hfov_deg,
            PoseFamily::Bottom => self.bottom.hfov_deg,
        };
        Intrinsics::for_resolution(self.resolution, hfov)
    }

    pub fn view_count(&self) -> usize {
        self.families.len() * self.poses_per_family
    }
}

pub fn parse_families(name: &str) -> Result<Vec<PoseFamily>> {
    let mut families = Vec::new();
    for part in name.split('_') {
        let f = PoseFamily::parse(part)
            .ok_or_else(|| Error::Config(format!("unknown pose family {part:?} in preset {name:?}")))?;
        if families.contains(&f) {
            return Err(Error::Config(format!("pose family {part:?} repeated in preset {name:?}")));
        }
        families.push(f);
    }
    Ok(families)
}

/// `|families| * poses_per_family` views numbered family-major from 0.
pub fn generate_views(scene: &Scene, config: &VgoConfig) -> Result<Vec<CameraView>> {
    generate_views_on_trajectory(&scene.sensor_trajectory, config)
}

pub fn generate_views_on_trajectory(trajectory: &[Pose], config: &VgoConfig) -> Result<Vec<CameraView>> {
    config.validate()?;
    if trajectory.is_empty() {
        return Err(Error::Invalid("cannot generate views on an empty trajectory".into()));
    }
    let mut rng = seeded_rng(config.seed);
    let mut views = Vec::with_capacity(config.view_count());
    for &family in &config.families {
        for _ in 0..config.poses_per_family {
            let view_id = views.len() as u32;
            views.push(sample_view(trajectory, family, config, view_id, &mut rng)?);
        }
    }
    Ok(views)
}

/// Draws one view of `family` from `rng` (nine draws).
pub fn sample_view(
    trajectory: &[Pose],
    family: PoseFamily,
    config: &VgoConfig,
    view_id: u32,
    rng: &mut PipelineRng,
) -> Result<CameraView> {
    if trajectory.is_empty() {
        return Err(Error::Invalid("cannot generate views on an empty trajectory".into()));
    }
    let anchor = trajectory[rng.random_range(0..trajectory.len())].position();
    let (a, b): (f64, f64) = (rng.random(), rng.random());
    let mut jitter = [0.0; 6];
    for j in jitter.iter_mut() {
        *j = rng.random_range(-1.0..1.0);
    }

    let pose = family_pose(family, &anchor, a, b, config)?;
    let offset = Vector3::new(jitter[0], jitter[1], jitter[2]) * config.jitter.position;
    let max_angle = config.jitter.rotation_deg.to_radians();
    let local = rot_x(jitter[3] * max_angle) * rot_y(jitter[4] * max_angle) * rot_z(jitter[5] * max_angle);
    let pose = pose.translated(&offset).rotated_locally(&local);
    Ok(CameraView { view_id, family, pose, intrinsics: config.intrinsics(family)? })
}

/// Un-jittered pose of a family given two uniform draws in [0, 1).
fn family_pose(family: PoseFamily, anchor: &Point3<f64>, a: f64, b: f64, c: &VgoConfig) -> Result<Pose> {
    let up = Vector3::z();
    match family {
        PoseFamily::Car => {
            let eye = anchor + up * c.car.height;
            let yaw = TAU * a;
            look_at(&eye, &(eye + Vector3::new(yaw.cos(), yaw.sin(), 0.0)), &up)
        }
        PoseFamily::Conic => {
            let azimuth = TAU * a;
            let eye = anchor + Vector3::new(c.conic.radius * azimuth.cos(), c.conic.radius * azimuth.sin(), c.conic.height);
            look_at(&eye, anchor, &up)
        }
        PoseFamily::Top => {
            let h = c.top.min_height + (c.top.max_height - c.top.min_height) * a;
            let roll = TAU * b;
            let eye = anchor + up * h;
            look_at(&eye, &(eye - up), &Vector3::new(roll.cos(), roll.sin(), 0.0))
        }
        PoseFamily::Bottom => {
            let roll = TAU * b;
            let eye = anchor - up * c.bottom.depth;
            look_at(&eye, &(eye + up), &Vector3::new(roll.cos(), roll.sin(), 0.0))
        }
    }
}
