//! Multi-channel view composition from point splats and mesh rasters.

use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::ingest::{Scene, IGNORE};
use crate::tensor::RawTensor;

use super::raster::{rasterize_mesh, MeshRaster};
use super::splat::{point_size_for_width, splat_points, DepthRange, PointSplat};
use super::Grid;

/// Depth channels encode `clamp(d, 0, DEPTH_ENCODING_RANGE) / DEPTH_ENCODING_RANGE`.
pub const DEPTH_ENCODING_RANGE: f64 = 50.0;

/// Depth interval rasterized into views. Back-projection applies its own, tighter range.
pub const DEFAULT_RENDER_RANGE: DepthRange = DepthRange::new(0.1, 200.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSource {
    PointIntensity,
    MeshIntensity,
    MeshDepth,
    PointDepth,
    MeshNormalX,
    MeshNormalY,
    MeshNormalZ,
}

impl ChannelSource {
    pub fn needs_mesh(self) -> bool {
        !matches!(self, ChannelSource::PointIntensity | ChannelSource::PointDepth)
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelSource::PointIntensity => "point_intensity",
            ChannelSource::MeshIntensity => "mesh_intensity",
            ChannelSource::MeshDepth => "mesh_depth",
            ChannelSource::PointDepth => "point_depth",
            ChannelSource::MeshNormalX => "mesh_normal_x",
            ChannelSource::MeshNormalY => "mesh_normal_y",
            ChannelSource::MeshNormalZ => "mesh_normal_z",
        }
    }
}

/// Where label images come from: splatted point labels or rasterized mesh labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Pfl,
    Mfl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub name: String,
    pub channels: Vec<ChannelSource>,
    pub label_source: LabelSource,
}

impl ChannelConfig {
    /// Point intensity, mesh intensity, mesh depth.
    pub fn trimerge() -> Self {
        use ChannelSource::*;
        Self { name: "trimerge".into(), channels: vec![PointIntensity, MeshIntensity, MeshDepth], label_source: LabelSource::Pfl }
    }

    /// Point intensity, mesh depth, mesh normal X, mesh normal Y.
    pub fn trimerge_normals_xy() -> Self {
        use ChannelSource::*;
        Self {
            name: "trimerge_normals_XY".into(),
            channels: vec![PointIntensity, MeshDepth, MeshNormalX, MeshNormalY],
            label_source: LabelSource::Pfl,
        }
    }

    /// Point-only intensity and depth, usable without a mesh.
    pub fn points_only() -> Self {
        use ChannelSource::*;
        Self { name: "points".into(), channels: vec![PointIntensity, PointDepth], label_source: LabelSource::Pfl }
    }

    pub fn registry() -> Vec<ChannelConfig> {
        vec![Self::trimerge(), Self::trimerge_normals_xy(), Self::points_only()]
    }

    /// Looks up a registered configuration. A `_pfl` or `_mfl` suffix selects
    /// the label source (`trimerge_normals_XY_mfl`).
    pub fn lookup(name: &str) -> Result<Self> {
        let (base, label_source) = match name.rsplit_once('_') {
            Some((base, "pfl")) => (base, Some(LabelSource::Pfl)),
            Some((base, "mfl")) => (base, Some(LabelSource::Mfl)),
            _ => (name, None),
        };
        let mut cfg = Self::registry()
            .into_iter()
            .find(|c| c.name == base)
            .ok_or_else(|| Error::Config(format!("unknown channel configuration {name:?}")))?;
        if let Some(ls) = label_source {
            cfg.label_source = ls;
        }
        cfg.name = name.to_string();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() > 4 {
            return Err(Error::Config(format!("{} has {} channels, need 1-4", self.name, self.channels.len())));
        }
        Ok(())
    }

    pub fn needs_mesh(&self) -> bool {
        self.label_source == LabelSource::Mfl || self.channels.iter().any(|c| c.needs_mesh())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Splat size; `None` scales with image width.
    pub point_px: Option<usize>,
    pub range: DepthRange,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { point_px: None, range: DEFAULT_RENDER_RANGE }
    }
}

/// One rendered view: encoded channels in [0, 1], depth maps and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub view_id: u32,
    pub channel_config_name: String,
    pub channel_sources: Vec<ChannelSource>,
    pub channels: Vec<Grid<f32>>,
    /// Camera depth of the splatted point per pixel, `+inf` where empty.
    pub point_depth: Grid<f64>,
    /// Camera depth of the mesh surface per pixel; `None` without a mesh.
    pub mesh_depth: Option<Grid<f64>>,
    /// Class per pixel, 255 where unlabeled.
    pub label_image: Option<Grid<u8>>,
}

impl RenderedView {
    pub fn width(&self) -> usize {
        self.point_depth.width()
    }

    pub fn height(&self) -> usize {
        self.point_depth.height()
    }

    /// Channels as a `C x H x W` tensor.
    pub fn to_tensor(&self) -> RawTensor {
        let mut data = Vec::with_capacity(self.channels.len() * self.width() * self.height());
        for c in &self.channels {
            data.extend_from_slice(c.data());
        }
        RawTensor::new(vec![self.channels.len() as u32, self.height() as u32, self.width() as u32], data)
            .expect("channel grids share the view shape")
    }
}

pub fn encode_depth(depth: f64) -> f32 {
    (depth.clamp(0.0, DEPTH_ENCODING_RANGE) / DEPTH_ENCODING_RANGE) as f32
}

pub fn decode_depth(value: f32) -> f64 {
    value as f64 * DEPTH_ENCODING_RANGE
}

pub fn encode_normal(component: f64) -> f32 {
    ((component.clamp(-1.0, 1.0) + 1.0) / 2.0) as f32
}

pub fn decode_normal(value: f32) -> f64 {
    value as f64 * 2.0 - 1.0
}

fn label_to_u8(l: u16) -> u8 {
    if l >= IGNORE {
        IGNORE as u8
    } else {
        l as u8
    }
}

pub fn compose_view(
    scene: &Scene,
    view: &CameraView,
    config: &ChannelConfig,
    options: &RenderOptions,
) -> Result<RenderedView> {
    config.validate()?;
    let mesh = scene.mesh.as_ref().filter(|m| !m.vertices.is_empty());
    if mesh.is_none() {
        if let Some(c) = config.channels.iter().find(|c| c.needs_mesh()) {
            return Err(Error::Invalid(format!("channel {} needs a scene mesh", c.name())));
        }
        if config.label_source == LabelSource::Mfl {
            return Err(Error::Invalid("mfl labels need a scene mesh".into()));
        }
    }
    let point_px = options.point_px.unwrap_or_else(|| point_size_for_width(view.intrinsics.width as usize));
    let splat: PointSplat = splat_points(&scene.points, view, point_px, options.range);
    let raster: Option<MeshRaster> = mesh.map(|m| rasterize_mesh(m, view));

    let mut normals = None;
    let mut channels = Vec::with_capacity(config.channels.len());
    for &source in &config.channels {
        let grid = match source {
            ChannelSource::PointIntensity => splat.gather(&scene.intensity, 0.0),
            ChannelSource::PointDepth => splat.depth.map(encode_depth),
            ChannelSource::MeshDepth => raster.as_ref().unwrap().depth.map(encode_depth),
            ChannelSource::MeshIntensity => {
                let m = mesh.unwrap();
                let values = m
                    .vertex_intensity
                    .as_ref()
                    .ok_or_else(|| Error::Invalid("channel mesh_intensity needs vertex intensities".into()))?;
                raster.as_ref().unwrap().interpolate_scalar(m, values, 0.0)
            }
            ChannelSource::MeshNormalX | ChannelSource::MeshNormalY | ChannelSource::MeshNormalZ => {
                let m = mesh.unwrap();
                let n = normals.get_or_insert_with(|| {
                    let vn = m.vertex_normal.clone().unwrap_or_else(|| m.face_vertex_normals());
                    raster.as_ref().unwrap().normals(m, &vn, view)
                });
                let axis = match source {
                    ChannelSource::MeshNormalX => 0,
                    ChannelSource::MeshNormalY => 1,
                    _ => 2,
                };
                n.map(|v| encode_normal(v[axis]))
            }
        };
        channels.push(grid);
    }

    let label_image = match config.label_source {
        LabelSource::Pfl => Some(splat.gather(&scene.labels, IGNORE).map(label_to_u8)),
        LabelSource::Mfl => {
            let m = mesh.unwrap();
            m.vertex_label
                .as_ref()
                .map(|labels| raster.as_ref().unwrap().nearest_vertex_label(m, labels).map(label_to_u8))
        }
    };

    Ok(RenderedView {
        view_id: view.view_id,
        channel_config_name: config.name.clone(),
        channel_sources: config.channels.clone(),
        channels,
        point_depth: splat.depth,
        mesh_depth: raster.map(|r| r.depth),
        label_image,
    })
}
