use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{write_labels, ClassId, Scene, IGNORE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PseudoLabelOptions {
    /// Label word written for unvoted points.
    pub ignore_id: u32,
    /// Source points absent from the scene (e.g. cropped) get `ignore_id`
    /// instead of raising an error.
    pub allow_missing: bool,
}

impl Default for PseudoLabelOptions {
    fn default() -> Self {
        Self { ignore_id: IGNORE as u32, allow_missing: false }
    }
}

/// Scatters per-point labels back to one `<scan name>.label` file per source
/// scan, in original point order.
pub fn export_pseudolabels(
    scene: &Scene,
    labels: &[ClassId],
    out_dir: &Path,
    opts: &PseudoLabelOptions,
) -> Result<Vec<PathBuf>> {
    if labels.len() != scene.len() || scene.provenance.len() != scene.len() {
        return Err(Error::Shape(format!(
            "{} labels and {} provenance entries for {} points",
            labels.len(),
            scene.provenance.len(),
            scene.len()
        )));
    }
    let mut words: Vec<Vec<Option<u32>>> =
        scene.source_scans.iter().map(|s| vec![None; s.point_count as usize]).collect();
    for (i, (prov, &label)) in scene.provenance.iter().zip(labels).enumerate() {
        let slot = scene
            .source_scans
            .iter()
            .position(|s| s.scan_id == prov.scan_id)
            .and_then(|k| words[k].get_mut(prov.point_index as usize))
            .ok_or_else(|| Error::Invalid(format!("point {i} has provenance outside the source scans")))?;
        if slot.is_some() {
            return Err(Error::Invalid(format!("point {i} duplicates scan {} point {}", prov.scan_id, prov.point_index)));
        }
        *slot = Some(if label == IGNORE { opts.ignore_id } else { label as u32 });
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::with_capacity(words.len());
    for (scan, scan_words) in scene.source_scans.iter().zip(words) {
        let filled: Vec<u32> = scan_words
            .iter()
            .enumerate()
            .map(|(j, w)| match w {
                Some(w) => Ok(*w),
                None if opts.allow_missing => Ok(opts.ignore_id),
                None => Err(Error::Invalid(format!("scan {} point {j} has no fused label", scan.name))),
            })
            .collect::<Result<_>>()?;
        let path = out_dir.join(format!("{}.label", scan.name));
        write_labels(&path, &filled)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{read_labels, Provenance, SourceScan};
    use nalgebra::Point3;

    fn two_scan_scene() -> Scene {
        let mut scene = Scene::default();
        for s in 0..2u32 {
            scene.source_scans.push(SourceScan { scan_id: s, name: format!("{s:06}"), point_count: 5 });
            for j in 0..5u32 {
                scene.points.push(Point3::new(j as f64, s as f64, 0.0));
                scene.intensity.push(0.0);
                scene.labels.push(0);
                scene.provenance.push(Provenance { scan_id: s, point_index: j });
            }
        }
        scene
    }

    #[test]
    fn scatters_by_provenance() {
        let scene = two_scan_scene();
        let labels: Vec<ClassId> = (0..10).map(|i| if i == 3 { IGNORE } else { i as ClassId }).collect();
        let dir = tempfile::tempdir().unwrap();
        let opts = PseudoLabelOptions { ignore_id: 0, allow_missing: false };
        let files = export_pseudolabels(&scene, &labels, dir.path(), &opts).unwrap();
        assert_eq!(files.len(), 2);
        assert_eq!(read_labels(&files[0]).unwrap(), vec![0, 1, 2, 0, 4]);
        assert_eq!(read_labels(&files[1]).unwrap(), vec![5, 6, 7, 8, 9]);
    }

    #[test]
    fn gaps_are_errors_unless_allowed() {
        let scene = two_scan_scene().retain_points(&[true, true, false, true, true, true, true, true, true, true]);
        let labels = vec![1; 9];
        let dir = tempfile::tempdir().unwrap();
        assert!(export_pseudolabels(&scene, &labels, dir.path(), &PseudoLabelOptions::default()).is_err());
        let opts = PseudoLabelOptions { allow_missing: true, ..Default::default() };
        let files = export_pseudolabels(&scene, &labels, dir.path(), &opts).unwrap();
        assert_eq!(read_labels(&files[0]).unwrap(), vec![1, 1, 255, 1, 1]);
    }
}
