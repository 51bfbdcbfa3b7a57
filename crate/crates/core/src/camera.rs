//! Pinhole cameras: intrinsics, camera-to-world poses, projection and
//! look-at pose construction.
//!
//! Camera frame: +X right, +Y down, +Z forward. Pixel `(i, j)` covers the
//! continuous coordinates `[i - 0.5, i + 0.5) x [j - 0.5, j + 0.5)`, so a
//! projected point lands on pixel `floor(u + 0.5), floor(v + 0.5)`.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Pose;

pub const DEFAULT_HFOV_DEG: f64 = 90.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseFamily {
    Car,
    Conic,
    Top,
    Bottom,
}

impl PoseFamily {
    pub const ALL: [PoseFamily; 4] = [PoseFamily::Car, PoseFamily::Conic, PoseFamily::Top, PoseFamily::Bottom];

    pub fn name(self) -> &'static str {
        match self {
            PoseFamily::Car => "car",
            PoseFamily::Conic => "conic",
            PoseFamily::Top => "top",
            PoseFamily::Bottom => "bottom",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolution {
    #[serde(rename = "LD")]
    Ld,
    #[serde(rename = "HD")]
    Hd,
}

impl Resolution {
    pub fn size(self) -> (u32, u32) {
        match self {
            Resolution::Ld => (1024, 512),
            Resolution::Hd => (2048, 1024),
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "LD" => Some(Resolution::Ld),
            "HD" => Some(Resolution::Hd),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square pixels with the principal point at the image centre.
    pub fn from_hfov(width: u32, height: u32, hfov_deg: f64) -> Result<Self> {
        if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
            return Err(Error::Invalid(format!("horizontal FOV {hfov_deg} outside (0, 180)")));
        }
        let fx = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        let k = Self { width, height, fx, fy: fx, cx: width as f64 / 2.0, cy: height as f64 / 2.0 };
        k.validate()?;
        Ok(k)
    }

    pub fn for_resolution(res: Resolution, hfov_deg: f64) -> Result<Self> {
        let (w, h) = res.size();
        Self::from_hfov(w, h, hfov_deg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("image size must be at least 1x1".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::Invalid("focal lengths must be positive".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// A projected point: continuous pixel coordinates and camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    /// Integer pixel `(column, row)` the projection rounds to.
    pub fn pixel(&self) -> (usize, usize) {
        ((self.u + 0.5).floor() as usize, (self.v + 0.5).floor() as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub view_id: u32,
    pub family: PoseFamily,
    /// Camera-to-world.
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

impl CameraView {
    pub fn to_camera(&self, p_world: &Point3<f64>) -> Point3<f64> {
        self.pose.inverse_transform_point(p_world)
    }

    /// Projects a camera-frame point; `None` behind the camera or off the image.
    pub fn project_camera(&self, p: &Point3<f64>) -> Option<Projection> {
        if !(p.z > 0.0) {
            return None;
        }
        let k = &self.intrinsics;
        let u = k.cx + k.fx * p.x / p.z;
        let v = k.cy + k.fy * p.y / p.z;
        let inside = |c: f64, size: u32| {
            let i = (c + 0.5).floor();
            i >= 0.0 && i < size as f64
        };
        (inside(u, k.width) && inside(v, k.height)).then_some(Projection { u, v, depth: p.z })
    }

    pub fn project(&self, p_world: &Point3<f64>) -> Option<Projection> {
        self.project_camera(&self.to_camera(p_world))
    }

    /// World point at pixel coordinates `(u, v)` and camera depth `depth`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Point3<f64> {
        let k = &self.intrinsics;
        let p = Point3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
        self.pose.transform_point(&p)
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.pose.rotation().column(2).into_owned()
    }

    pub fn position(&self) -> Point3<f64> {
        self.pose.position()
    }
}

/// Camera-to-world pose at `eye` looking at `target`, with image "down"
/// along `-up_hint` projected orthogonally to the viewing direction. An
/// `up_hint` parallel to the view direction is replaced by world +X (then +Y).
pub fn look_at(eye: &Point3<f64>, target: &Point3<f64>, up_hint: &Vector3<f64>) -> Result<Pose> {
    let forward = (target - eye)
        .try_normalize(1e-12)
        .ok_or_else(|| Error::Invalid("look_at: eye and target coincide".into()))?;
    let down = [*up_hint, Vector3::x(), Vector3::y()]
        .iter()
        .find_map(|up| {
            let d = -up;
            (d - forward * d.dot(&forward)).try_normalize(1e-9)
        })
        .expect("x and y cannot both be parallel to the view direction");
    let right = down.cross(&forward);
    let rotation = Matrix3::from_columns(&[right, down, forward]);
    Ok(Pose::from_parts_unchecked(rotation, eye.coords))
}

/// A scene's camera set, serialized as the views manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewManifest {
    pub schema: String,
    #[serde(default)]
    pub scene_id: String,
    pub views: Vec<CameraView>,
}

pub const VIEW_MANIFEST_SCHEMA: &str = "pc2dseg.views/1";

impl ViewManifest {
    pub fn new(scene_id: impl Into<String>, views: Vec<CameraView>) -> Self {
        Self { schema: VIEW_MANIFEST_SCHEMA.to_string(), scene_id: scene_id.into(), views }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if m.schema != VIEW_MANIFEST_SCHEMA {
            return Err(Error::format(path, format!("unsupported schema {:?}", m.schema)));
        }
        let mut ids: Vec<u32> = m.views.iter().map(|v| v.view_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::format(path, "duplicate view ids"));
        }
        for v in &m.views {
            v.intrinsics.validate().map_err(|e| Error::format(path, e.to_string()))?;
        }
        Ok(m)
    }
}
