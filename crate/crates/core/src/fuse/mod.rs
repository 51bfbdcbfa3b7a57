//! Back-projection of per-view logits onto scene points with mesh-depth
//! occlusion, vote accumulation and label finalization.

mod pseudo;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::ingest::{ClassId, Scene, IGNORE};
use crate::render::{compose_view, rasterize_mesh, ChannelConfig, DepthRange, Grid, RenderOptions, RenderedView};
use crate::segmenter::{LogitTensor, Segmenter};

pub use pseudo::{export_pseudolabels, PseudoLabelOptions};

pub const DEFAULT_FUSE_RANGE: DepthRange = DepthRange::new(1.0, 30.0);
pub const DEFAULT_OCCLUSION_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteMode {
    /// Sum raw logits.
    Logits,
    /// Sum one-hot votes of the per-pixel argmax.
    Masks,
}

impl VoteMode {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "logits" => Some(Self::Logits),
            "masks" => Some(Self::Masks),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FuseConfig {
    pub depth_range: DepthRange,
    pub occlusion_enabled: bool,
    /// Points up to this far behind the mesh surface still receive votes.
    pub occlusion_margin: f64,
    pub vote_mode: VoteMode,
}

impl Default for FuseConfig {
    fn default() -> Self {
        Self {
            depth_range: DEFAULT_FUSE_RANGE,
            occlusion_enabled: true,
            occlusion_margin: DEFAULT_OCCLUSION_MARGIN,
            vote_mode: VoteMode::Logits,
        }
    }
}

impl FuseConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.depth_range.is_valid() {
            return Err(Error::Config(format!(
                "fusion depth range [{}, {}] needs 0 < near < far",
                self.depth_range.near, self.depth_range.far
            )));
        }
        if !(self.occlusion_margin >= 0.0) {
            return Err(Error::Config(format!("occlusion margin {} must be >= 0", self.occlusion_margin)));
        }
        Ok(())
    }
}

/// Per-point logit sums and vote counts.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteTable {
    pub classes: usize,
    pub sums: Vec<f64>,
    pub counts: Vec<u32>,
}

impl VoteTable {
    pub fn new(points: usize, classes: usize) -> Self {
        Self { classes, sums: vec![0.0; points * classes], counts: vec![0; points] }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn row(&self, point: usize) -> &[f64] {
        &self.sums[point * self.classes..(point + 1) * self.classes]
    }

    /// Elementwise sum with another table of the same shape.
    pub fn merge(&mut self, other: &VoteTable) -> Result<()> {
        if other.classes != self.classes || other.len() != self.len() {
            return Err(Error::Shape("vote tables differ in shape".into()));
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Points of one view that pass the visibility tests, with the pixel they hit.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ViewVotes {
    pub view_id: u32,
    pub hits: Vec<(u32, u32)>,
}

/// Selects the points that receive a vote from `view`.
pub fn visible_points(scene: &Scene, view: &CameraView, rendered: &RenderedView, cfg: &FuseConfig) -> Result<ViewVotes> {
    let (w, h) = (view.intrinsics.width as usize, view.intrinsics.height as usize);
    if rendered.width() != w || rendered.height() != h {
        return Err(Error::Shape(format!("view {}: rendered size differs from intrinsics", view.view_id)));
    }
    visible_points_with_depth(scene, view, rendered.mesh_depth.as_ref(), cfg)
}

/// Visibility against an explicit mesh depth map, required when occlusion is on.
pub fn visible_points_with_depth(
    scene: &Scene,
    view: &CameraView,
    mesh_depth: Option<&Grid<f64>>,
    cfg: &FuseConfig,
) -> Result<ViewVotes> {
    let w = view.intrinsics.width as usize;
    let mesh_depth = if cfg.occlusion_enabled {
        let md = mesh_depth
            .ok_or_else(|| Error::Invalid(format!("view {}: occlusion needs a mesh depth map", view.view_id)))?;
        if md.width() != w || md.height() != view.intrinsics.height as usize {
            return Err(Error::Shape(format!("view {}: mesh depth size differs from intrinsics", view.view_id)));
        }
        Some(md)
    } else {
        None
    };
    let mut hits = Vec::new();
    for (i, p) in scene.points.iter().enumerate() {
        let Some(proj) = view.project(p) else { continue };
        if !cfg.depth_range.contains(proj.depth) {
            continue;
        }
        let (x, y) = proj.pixel();
        if let Some(md) = mesh_depth {
            if proj.depth > md.get(x, y) + cfg.occlusion_margin {
                continue;
            }
        }
        hits.push((i as u32, (y * w + x) as u32));
    }
    Ok(ViewVotes { view_id: view.view_id, hits })
}

/// Adds one view's votes to the table. All-zero logit pixels abstain.
pub fn apply_votes(table: &mut VoteTable, votes: &ViewVotes, logits: &LogitTensor, mode: VoteMode) -> Result<()> {
    if logits.classes != table.classes {
        return Err(Error::Shape(format!(
            "view {}: {} logit classes, table has {}",
            logits.view_id, logits.classes, table.classes
        )));
    }
    let c = table.classes;
    let plane = logits.plane_len();
    for &(point, pixel) in &votes.hits {
        let (point, pixel) = (point as usize, pixel as usize);
        let (x, y) = (pixel % logits.width, pixel / logits.width);
        let row = &mut table.sums[point * c..(point + 1) * c];
        match mode {
            VoteMode::Logits => {
                if (0..c).all(|k| logits.data[k * plane + pixel] == 0.0) {
                    continue;
                }
                for (k, s) in row.iter_mut().enumerate() {
                    *s += logits.data[k * plane + pixel] as f64;
                }
            }
            VoteMode::Masks => match logits.argmax(x, y) {
                Some(k) => row[k as usize] += 1.0,
                None => continue,
            },
        }
        table.counts[point] += 1;
    }
    Ok(())
}

pub fn backproject_view(
    scene: &Scene,
    view: &CameraView,
    rendered: &RenderedView,
    logits: &LogitTensor,
    cfg: &FuseConfig,
    table: &mut VoteTable,
) -> Result<()> {
    if table.len() != scene.len() {
        return Err(Error::Shape(format!("vote table has {} rows for {} points", table.len(), scene.len())));
    }
    logits.matches_view(rendered)?;
    let votes = visible_points(scene, view, rendered, cfg)?;
    apply_votes(table, &votes, logits, cfg.vote_mode)
}

/// Argmax per point, lowest class id on ties, 255 for unvoted points.
pub fn finalize_labels(table: &VoteTable) -> Vec<ClassId> {
    (0..table.len())
        .into_par_iter()
        .map(|i| {
            if table.counts[i] == 0 {
                return IGNORE;
            }
            let row = table.row(i);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best as ClassId
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuseOutcome {
    pub labels: Vec<ClassId>,
    pub table: VoteTable,
    pub views: usize,
}

impl FuseOutcome {
    pub fn voted_points(&self) -> usize {
        self.table.counts.iter().filter(|&&c| c > 0).count()
    }

    pub fn summary(&self, cfg: &FuseConfig, channel_config: &str) -> FuseSummary {
        let total: u64 = self.table.counts.iter().map(|&c| c as u64).sum();
        FuseSummary {
            points: self.labels.len(),
            views: self.views,
            voted_points: self.voted_points(),
            total_votes: total,
            max_votes: self.table.counts.iter().copied().max().unwrap_or(0),
            depth_range: [cfg.depth_range.near, cfg.depth_range.far],
            occlusion_enabled: cfg.occlusion_enabled,
            occlusion_margin: cfg.occlusion_margin,
            vote_mode: cfg.vote_mode,
            channel_config: channel_config.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseSummary {
    pub points: usize,
    pub views: usize,
    pub voted_points: usize,
    pub total_votes: u64,
    pub max_votes: u32,
    pub depth_range: [f64; 2],
    pub occlusion_enabled: bool,
    pub occlusion_margin: f64,
    pub vote_mode: VoteMode,
    pub channel_config: String,
}

/// Renders, segments and back-projects every view, then finalizes labels.
///
/// Views are handled in ascending `view_id` order in chunks of the
/// segmenter's batch size; rendering and visibility run in parallel within
/// a chunk, while votes are applied serially so the result does not depend
/// on the thread count.
pub fn fuse_scene(
    scene: &Scene,
    views: &[CameraView],
    cfg: &FuseConfig,
    segmenter: &dyn Segmenter,
    channels: &ChannelConfig,
    render: &RenderOptions,
) -> Result<FuseOutcome> {
    cfg.validate()?;
    let mut ordered: Vec<&CameraView> = views.iter().collect();
    ordered.sort_by_key(|v| v.view_id);
    let mut table = VoteTable::new(scene.len(), segmenter.class_count());
    for chunk in ordered.chunks(segmenter.preferred_batch().max(1)) {
        let rendered: Vec<RenderedView> =
            chunk.par_iter().map(|v| compose_view(scene, v, channels, render)).collect::<Result<_>>()?;
        let logits = segmenter.infer_batch(&rendered)?;
        if logits.len() != rendered.len() {
            return Err(Error::Adapter(format!("{} logit tensors for {} views", logits.len(), rendered.len())));
        }
        let votes: Vec<ViewVotes> = chunk
            .par_iter()
            .zip(&rendered)
            .zip(&logits)
            .map(|((v, r), l)| {
                l.matches_view(r)?;
                visible_points(scene, v, r, cfg)
            })
            .collect::<Result<_>>()?;
        for (v, l) in votes.iter().zip(&logits) {
            apply_votes(&mut table, v, l, cfg.vote_mode)?;
        }
    }
    Ok(FuseOutcome { labels: finalize_labels(&table), table, views: ordered.len() })
}

/// Fuses logits produced earlier (e.g. read from disk). `load` returns the
/// tensors of a batch of views in order; mesh depth for occlusion is
/// rasterized from the scene mesh. Matches [`fuse_scene`] given the same logits.
pub fn fuse_precomputed<F>(
    scene: &Scene,
    views: &[CameraView],
    cfg: &FuseConfig,
    classes: usize,
    batch: usize,
    mut load: F,
) -> Result<FuseOutcome>
where
    F: FnMut(&[&CameraView]) -> Result<Vec<LogitTensor>>,
{
    cfg.validate()?;
    let mesh = scene.mesh.as_ref().filter(|m| !m.vertices.is_empty());
    if cfg.occlusion_enabled && mesh.is_none() {
        return Err(Error::Invalid("occlusion needs a scene mesh".into()));
    }
    let mut ordered: Vec<&CameraView> = views.iter().collect();
    ordered.sort_by_key(|v| v.view_id);
    let mut table = VoteTable::new(scene.len(), classes);
    for chunk in ordered.chunks(batch.max(1)) {
        let logits = load(chunk)?;
        if logits.len() != chunk.len() {
            return Err(Error::Shape(format!("{} logit tensors for {} views", logits.len(), chunk.len())));
        }
        let votes: Vec<ViewVotes> = chunk
            .par_iter()
            .zip(&logits)
            .map(|(v, l)| {
                if l.view_id != v.view_id
                    || l.width != v.intrinsics.width as usize
                    || l.height != v.intrinsics.height as usize
                {
                    return Err(Error::Shape(format!("logits {} do not match view {}", l.view_id, v.view_id)));
                }
                let depth = match (cfg.occlusion_enabled, mesh) {
                    (true, Some(m)) => Some(rasterize_mesh(m, v).depth),
                    _ => None,
                };
                visible_points_with_depth(scene, v, depth.as_ref(), cfg)
            })
            .collect::<Result<_>>()?;
        for (v, l) in votes.iter().zip(&logits) {
            apply_votes(&mut table, v, l, cfg.vote_mode)?;
        }
    }
    Ok(FuseOutcome { labels: finalize_labels(&table), table, views: ordered.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{look_at, Intrinsics, PoseFamily};
    use crate::ingest::Mesh;
    use crate::render::ChannelSource;
    use crate::segmenter::{OracleConfig, OracleSegmenter};
    use nalgebra::{Point3, Vector3};

    fn forward_view(view_id: u32) -> CameraView {
        let pose = look_at(&Point3::origin(), &Point3::new(0.0, 0.0, 1.0), &Vector3::new(0.0, -1.0, 0.0)).unwrap();
        CameraView { view_id, family: PoseFamily::Car, pose, intrinsics: Intrinsics::from_hfov(32, 16, 90.0).unwrap() }
    }

    fn rendered_with_mesh_depth(view: &CameraView, depth: f64) -> RenderedView {
        let (w, h) = (view.intrinsics.width as usize, view.intrinsics.height as usize);
        RenderedView {
            view_id: view.view_id,
            channel_config_name: "points".into(),
            channel_sources: vec![ChannelSource::PointIntensity],
            channels: vec![Grid::new(w, h, 0.0)],
            point_depth: Grid::new(w, h, f64::INFINITY),
            mesh_depth: Some(Grid::new(w, h, depth)),
            label_image: None,
        }
    }

    fn points_scene(points: Vec<Point3<f64>>) -> Scene {
        let n = points.len();
        Scene { points, intensity: vec![0.5; n], labels: vec![0; n], ..Default::default() }
    }

    fn uniform_logits(view: &CameraView, values: &[f32]) -> LogitTensor {
        let (w, h) = (view.intrinsics.width as usize, view.intrinsics.height as usize);
        let mut data = Vec::new();
        for &v in values {
            data.extend(std::iter::repeat_n(v, w * h));
        }
        LogitTensor::new(view.view_id, values.len(), h, w, data).unwrap()
    }

    #[test]
    fn occlusion_margin_rule() {
        let view = forward_view(0);
        let scene = points_scene(vec![
            Point3::new(0.0, 0.0, 10.3),
            Point3::new(0.0, 0.0, 10.6),
            Point3::new(0.0, 0.0, 0.5),
        ]);
        let rendered = rendered_with_mesh_depth(&view, 10.0);
        let logits = uniform_logits(&view, &[1.0, 0.0]);
        let mut table = VoteTable::new(3, 2);
        backproject_view(&scene, &view, &rendered, &logits, &FuseConfig::default(), &mut table).unwrap();
        assert_eq!(table.counts, vec![1, 0, 0]);
        let open = FuseConfig { occlusion_enabled: false, ..Default::default() };
        let mut table = VoteTable::new(3, 2);
        backproject_view(&scene, &view, &rendered, &logits, &open, &mut table).unwrap();
        assert_eq!(table.counts, vec![1, 1, 0]);
    }

    #[test]
    fn uncovered_pixels_never_occlude() {
        let view = forward_view(0);
        let scene = points_scene(vec![Point3::new(0.0, 0.0, 25.0)]);
        let rendered = rendered_with_mesh_depth(&view, f64::INFINITY);
        let mut table = VoteTable::new(1, 2);
        let logits = uniform_logits(&view, &[0.0, 2.0]);
        backproject_view(&scene, &view, &rendered, &logits, &FuseConfig::default(), &mut table).unwrap();
        assert_eq!(table.counts, vec![1]);
        assert_eq!(finalize_labels(&table), vec![1]);
    }

    #[test]
    fn finalize_tie_and_empty_rules() {
        let table = VoteTable { classes: 2, sums: vec![2.0, 1.0, 1.0, 1.0, 0.0, 0.0], counts: vec![1, 1, 0] };
        assert_eq!(finalize_labels(&table), vec![0, 0, IGNORE]);
    }

    #[test]
    fn zero_logits_abstain_and_masks_count_argmax() {
        let view = forward_view(0);
        let scene = points_scene(vec![Point3::new(0.0, 0.0, 5.0)]);
        let rendered = rendered_with_mesh_depth(&view, 5.0);
        let mut table = VoteTable::new(1, 3);
        backproject_view(&scene, &view, &rendered, &uniform_logits(&view, &[0.0, 0.0, 0.0]), &FuseConfig::default(), &mut table)
            .unwrap();
        assert_eq!(table.counts, vec![0]);
        let masks = FuseConfig { vote_mode: VoteMode::Masks, ..Default::default() };
        backproject_view(&scene, &view, &rendered, &uniform_logits(&view, &[0.2, 3.0, 1.0]), &masks, &mut table).unwrap();
        assert_eq!(table.row(0), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn missing_mesh_depth_is_an_error_with_occlusion() {
        let view = forward_view(0);
        let scene = points_scene(vec![Point3::new(0.0, 0.0, 5.0)]);
        let mut rendered = rendered_with_mesh_depth(&view, 5.0);
        rendered.mesh_depth = None;
        let mut table = VoteTable::new(1, 1);
        let logits = uniform_logits(&view, &[1.0]);
        assert!(backproject_view(&scene, &view, &rendered, &logits, &FuseConfig::default(), &mut table).is_err());
    }

    #[test]
    fn no_views_leaves_everything_unlabeled() {
        let scene = points_scene(vec![Point3::new(0.0, 0.0, 5.0); 4]);
        let seg = OracleSegmenter::new(2, OracleConfig::default());
        let cfg = FuseConfig { occlusion_enabled: false, ..Default::default() };
        let out = fuse_scene(&scene, &[], &cfg, &seg, &ChannelConfig::points_only(), &RenderOptions::default()).unwrap();
        assert_eq!(out.labels, vec![IGNORE; 4]);
    }

    #[test]
    fn wall_in_front_hides_points_behind_it() {
        let view = forward_view(0);
        let wall = Mesh {
            vertices: vec![
                Point3::new(-50.0, -50.0, 8.0),
                Point3::new(50.0, -50.0, 8.0),
                Point3::new(50.0, 50.0, 8.0),
                Point3::new(-50.0, 50.0, 8.0),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            vertex_label: Some(vec![1; 4]),
            ..Default::default()
        };
        let mut scene = points_scene(vec![Point3::new(0.5, 0.5, 8.0), Point3::new(0.5, 0.5, 20.0)]);
        scene.labels = vec![1, 0];
        scene.mesh = Some(wall);
        let seg = OracleSegmenter::new(2, OracleConfig::default());
        let out =
            fuse_scene(&scene, &[view], &FuseConfig::default(), &seg, &ChannelConfig::points_only(), &RenderOptions::default())
                .unwrap();
        assert_eq!(out.table.counts, vec![1, 0]);
        assert_eq!(out.labels, vec![1, IGNORE]);
    }
}
