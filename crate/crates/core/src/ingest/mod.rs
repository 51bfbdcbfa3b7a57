//! Scans, poses and aligned scenes: reading, assembly, intensity
//! normalization, ground cropping, label densification and class mapping.

mod kitti;
mod mapping;
mod mesh;

use std::collections::BTreeMap;

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::KdTree;
use crate::pose::Pose;

pub use kitti::{
    list_with_extension, read_labels, read_poses, read_scan_bin, read_sequence, semantic_id, write_labels,
    write_poses, write_scan_bin, write_sequence, Sequence,
};
pub use mapping::ClassMapping;
pub use mesh::{read_ply, write_ply, Mesh, NORMAL_TOLERANCE};

pub type ClassId = u16;

/// Ignore / unlabeled class id.
pub const IGNORE: ClassId = 255;

/// Default scans accumulated per scene.
pub const DEFAULT_GROUP_SIZE: usize = 100;
/// Default neighbour count for label densification.
pub const DEFAULT_DENSIFY_K: usize = 5;
/// Ground crop heights below the first sensor position.
pub const CROP_Z_SEMANTICKITTI: f64 = -2.2;
pub const CROP_Z_NUSCENES: f64 = -2.5;

/// One Lidar sweep in its sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub scan_id: u32,
    /// File stem the scan was read from, used when writing per-scan outputs.
    pub name: String,
    pub points: Vec<Point3<f64>>,
    pub intensity: Vec<f32>,
    pub labels: Option<Vec<ClassId>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub scan_id: u32,
    pub point_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceScan {
    pub scan_id: u32,
    pub name: String,
    pub point_count: u32,
}

/// Scans aligned in a common world frame.
///
/// All per-point vectors have the same length. Intensities are raw after
/// [`assemble_scene`] and in [0, 1] after [`normalize_intensity`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub points: Vec<Point3<f64>>,
    pub intensity: Vec<f32>,
    pub labels: Vec<ClassId>,
    pub provenance: Vec<Provenance>,
    pub sensor_trajectory: Vec<Pose>,
    pub source_scans: Vec<SourceScan>,
    pub mesh: Option<Mesh>,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if self.intensity.len() != n || self.labels.len() != n || self.provenance.len() != n {
            return Err(Error::Invalid(format!(
                "per-point arrays disagree: {} points, {} intensities, {} labels, {} provenance",
                n,
                self.intensity.len(),
                self.labels.len(),
                self.provenance.len()
            )));
        }
        if self.sensor_trajectory.is_empty() {
            return Err(Error::Invalid("scene has an empty sensor trajectory".into()));
        }
        if self.points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::Invalid("scene has non-finite coordinates".into()));
        }
        if let Some(mesh) = &self.mesh {
            mesh.validate()?;
        }
        Ok(())
    }

    /// Keeps the points for which `keep` is true, in order.
    pub fn retain_points(&self, keep: &[bool]) -> Scene {
        assert_eq!(keep.len(), self.len());
        fn pick<T: Clone>(v: &[T], keep: &[bool]) -> Vec<T> {
            v.iter().zip(keep).filter(|(_, &k)| k).map(|(x, _)| x.clone()).collect()
        }
        Scene {
            points: pick(&self.points, keep),
            intensity: pick(&self.intensity, keep),
            labels: pick(&self.labels, keep),
            provenance: pick(&self.provenance, keep),
            sensor_trajectory: self.sensor_trajectory.clone(),
            source_scans: self.source_scans.clone(),
            mesh: self.mesh.clone(),
        }
    }

    /// Classes present in the labels, ignore excluded.
    pub fn label_set(&self) -> Vec<ClassId> {
        let mut seen: Vec<ClassId> = self.labels.iter().copied().filter(|&l| l != IGNORE).collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    }
}

/// Groups consecutive scans into scenes and moves every point into the world frame.
pub fn assemble_scene(scans: &[Scan], poses: &[Pose], group_size: usize) -> Result<Vec<Scene>> {
    if scans.is_empty() {
        return Err(Error::Invalid("no scans to assemble".into()));
    }
    if scans.len() != poses.len() {
        return Err(Error::PoseCountMismatch { poses: poses.len(), scans: scans.len() });
    }
    if group_size == 0 {
        return Err(Error::Invalid("group size must be at least 1".into()));
    }
    let mut scenes = Vec::with_capacity(scans.len().div_ceil(group_size));
    for (group, group_poses) in scans.chunks(group_size).zip(poses.chunks(group_size)) {
        let total: usize = group.iter().map(|s| s.points.len()).sum();
        let mut scene = Scene {
            points: Vec::with_capacity(total),
            intensity: Vec::with_capacity(total),
            labels: Vec::with_capacity(total),
            provenance: Vec::with_capacity(total),
            sensor_trajectory: group_poses.to_vec(),
            source_scans: Vec::with_capacity(group.len()),
            mesh: None,
        };
        for (scan, pose) in group.iter().zip(group_poses) {
            if scan.intensity.len() != scan.points.len()
                || scan.labels.as_ref().is_some_and(|l| l.len() != scan.points.len())
            {
                return Err(Error::Invalid(format!("scan {} has misaligned arrays", scan.scan_id)));
            }
            scene.points.extend(scan.points.iter().map(|p| pose.transform_point(p)));
            scene.intensity.extend_from_slice(&scan.intensity);
            match &scan.labels {
                Some(l) => scene.labels.extend_from_slice(l),
                None => scene.labels.extend(std::iter::repeat_n(IGNORE, scan.points.len())),
            }
            scene.provenance.extend(
                (0..scan.points.len() as u32).map(|i| Provenance { scan_id: scan.scan_id, point_index: i }),
            );
            scene.source_scans.push(SourceScan {
                scan_id: scan.scan_id,
                name: scan.name.clone(),
                point_count: scan.points.len() as u32,
            });
        }
        scenes.push(scene);
    }
    Ok(scenes)
}

/// Percentile with linear interpolation between order statistics.
pub(crate) fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub const INTENSITY_LOW_PERCENTILE: f64 = 0.01;
pub const INTENSITY_HIGH_PERCENTILE: f64 = 0.99;

/// Per source scan, maps intensities linearly so that the 1st and 99th
/// percentiles land on 0 and 1, clamping outside. Scans whose percentile
/// range collapses fall back to their min/max; constant scans become 0.5.
pub fn normalize_intensity(scene: &Scene) -> Scene {
    let mut by_scan: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, p) in scene.provenance.iter().enumerate() {
        by_scan.entry(p.scan_id).or_default().push(i);
    }
    let mut out = scene.clone();
    for idx in by_scan.values() {
        let mut values: Vec<f64> = idx.iter().map(|&i| scene.intensity[i] as f64).collect();
        values.sort_by(f64::total_cmp);
        let (mut lo, mut hi) = (
            percentile(&values, INTENSITY_LOW_PERCENTILE),
            percentile(&values, INTENSITY_HIGH_PERCENTILE),
        );
        if hi <= lo {
            (lo, hi) = (values[0], values[values.len() - 1]);
        }
        for &i in idx {
            out.intensity[i] = if hi > lo {
                ((scene.intensity[i] as f64 - lo) / (hi - lo)).clamp(0.0, 1.0) as f32
            } else {
                0.5
            };
        }
    }
    out
}

/// Drops points lower than `z_min` below the first sensor position.
pub fn crop_ground(scene: &Scene, z_min: f64) -> Scene {
    let Some(first) = scene.sensor_trajectory.first() else {
        return scene.clone();
    };
    let threshold = first.translation().z + z_min;
    let keep: Vec<bool> = scene.points.iter().map(|p| p.z >= threshold).collect();
    scene.retain_points(&keep)
}

/// Labels every unlabeled point with the majority class of its `k` nearest
/// labeled points (ties to the lowest class id). Labeled points are kept.
pub fn densify_labels(scene: &Scene, labeled_mask: &[bool], k: usize) -> Result<Scene> {
    if labeled_mask.len() != scene.len() {
        return Err(Error::Shape(format!(
            "labeled mask has {} entries for {} points",
            labeled_mask.len(),
            scene.len()
        )));
    }
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    let labeled: Vec<usize> = (0..scene.len()).filter(|&i| labeled_mask[i]).collect();
    if labeled.is_empty() {
        return Err(Error::Invalid("densification needs at least one labeled point".into()));
    }
    let tree = KdTree::new(&labeled.iter().map(|&i| scene.points[i]).collect::<Vec<_>>());
    let labels: Vec<ClassId> = (0..scene.len())
        .into_par_iter()
        .map(|i| {
            if labeled_mask[i] {
                return scene.labels[i];
            }
            let votes: Vec<ClassId> =
                tree.knn(&scene.points[i], k).iter().map(|n| scene.labels[labeled[n.index]]).collect();
            majority(&votes)
        })
        .collect();
    Ok(Scene { labels, ..scene.clone() })
}

/// Most frequent label, lowest id on ties.
pub(crate) fn majority(votes: &[ClassId]) -> ClassId {
    let mut counts: BTreeMap<ClassId, usize> = BTreeMap::new();
    for &v in votes {
        *counts.entry(v).or_default() += 1;
    }
    let mut best = (IGNORE, 0);
    for (label, count) in counts {
        if count > best.1 {
            best = (label, count);
        }
    }
    best.0
}

pub fn map_classes(scene: &Scene, mapping: &ClassMapping) -> Scene {
    let mut out = scene.clone();
    for l in out.labels.iter_mut() {
        *l = mapping.map(*l);
    }
    if let Some(labels) = out.mesh.as_mut().and_then(|m| m.vertex_label.as_mut()) {
        for l in labels.iter_mut() {
            *l = mapping.map(*l);
        }
    }
    out
}
