//! KITTI-style sequence layout: `NNNNNN.bin` scans, `NNNNNN.label` labels and
//! a `poses.txt` file with one row-major 3x4 world-from-sensor matrix per scan.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::pose::Pose;

use super::{ClassId, Scan};

/// Scans of one sequence together with their poses, in filename order.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub scans: Vec<Scan>,
    pub poses: Vec<Pose>,
}

pub fn read_sequence(scan_dir: &Path, pose_file: &Path, label_dir: Option<&Path>) -> Result<Sequence> {
    let files = list_with_extension(scan_dir, "bin")?;
    let mut scans = Vec::with_capacity(files.len());
    for (scan_id, file) in files.iter().enumerate() {
        let (points, intensity) = read_scan_bin(file)?;
        let name = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let labels = match label_dir {
            Some(dir) => {
                let path = dir.join(format!("{name}.label"));
                if path.exists() {
                    let labels = read_labels(&path)?;
                    if labels.len() != points.len() {
                        return Err(Error::format(
                            &path,
                            format!("{} labels for {} points", labels.len(), points.len()),
                        ));
                    }
                    Some(labels.into_iter().map(semantic_id).collect())
                } else {
                    None
                }
            }
            None => None,
        };
        scans.push(Scan { scan_id: scan_id as u32, name, points, intensity, labels });
    }
    let poses = read_poses(pose_file)?;
    if poses.len() != scans.len() {
        return Err(Error::PoseCountMismatch { poses: poses.len(), scans: scans.len() });
    }
    Ok(Sequence { scans, poses })
}

/// Files in `dir` with the given extension, sorted by file name.
pub fn list_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads little-endian float32 `(x, y, z, intensity)` quadruples.
pub fn read_scan_bin(path: &Path) -> Result<(Vec<Point3<f64>>, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(Error::format(path, format!("size {} is not a multiple of 16", bytes.len())));
    }
    let n = bytes.len() / 16;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(16).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
        let (x, y, z, r) = (f(0), f(1), f(2), f(3));
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::format(path, format!("point {i} has non-finite coordinates")));
        }
        points.push(Point3::new(x as f64, y as f64, z as f64));
        intensity.push(if r.is_finite() { r } else { 0.0 });
    }
    Ok((points, intensity))
}

pub fn write_scan_bin(path: &Path, points: &[Point3<f64>], intensity: &[f32]) -> Result<()> {
    assert_eq!(points.len(), intensity.len());
    let mut out = Vec::with_capacity(points.len() * 16);
    for (p, &r) in points.iter().zip(intensity) {
        for v in [p.x as f32, p.y as f32, p.z as f32, r] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Raw little-endian uint32 label words.
pub fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(path, format!("size {} is not a multiple of 4", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn write_labels(path: &Path, labels: &[u32]) -> Result<()> {
    let bytes: Vec<u8> = labels.iter().flat_map(|l| l.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Semantic class of a label word: its low 16 bits (the high bits hold the instance id).
pub fn semantic_id(word: u32) -> ClassId {
    (word & 0xFFFF) as ClassId
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut poses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |msg: String| Error::format(path, format!("line {}: {msg}", lineno + 1));
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| fail(format!("bad number {t:?}: {e}"))))
            .collect::<Result<_>>()?;
        let values: [f64; 12] = values
            .try_into()
            .map_err(|v: Vec<f64>| fail(format!("expected 12 values, found {}", v.len())))?;
        poses.push(Pose::from_row_major_lenient(&values).map_err(|e| fail(e.to_string()))?);
    }
    Ok(poses)
}

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for pose in poses {
        let line: Vec<String> = pose.to_row_major().iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", line.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a sequence in the on-disk layout read by [`read_sequence`]:
/// `velodyne/`, `labels/` and `poses.txt` under `root`.
pub fn write_sequence(root: &Path, seq: &Sequence) -> Result<()> {
    let scan_dir = root.join("velodyne");
    let label_dir = root.join("labels");
    fs::create_dir_all(&scan_dir).map_err(|e| Error::io(&scan_dir, e))?;
    fs::create_dir_all(&label_dir).map_err(|e| Error::io(&label_dir, e))?;
    for scan in &seq.scans {
        write_scan_bin(&scan_dir.join(format!("{}.bin", scan.name)), &scan.points, &scan.intensity)?;
        if let Some(labels) = &scan.labels {
            let words: Vec<u32> = labels.iter().map(|&l| l as u32).collect();
            write_labels(&label_dir.join(format!("{}.label", scan.name)), &words)?;
        }
    }
    write_poses(&root.join("poses.txt"), &seq.poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_five_point_scan(dir: &Path, name: &str) {
        let pts: Vec<Point3<f64>> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        write_scan_bin(&dir.join(format!("{name}.bin")), &pts, &[0.5; 5]).unwrap();
    }

    #[test]
    fn reads_two_scans_and_poses() {
        let dir = tempdir().unwrap();
        write_five_point_scan(dir.path(), "000001");
        write_five_point_scan(dir.path(), "000000");
        let poses = dir.path().join("poses.txt");
        write_poses(&poses, &[Pose::identity(), Pose::identity()]).unwrap();
        let seq = read_sequence(dir.path(), &poses, None).unwrap();
        assert_eq!(seq.scans.len(), 2);
        assert_eq!(seq.poses.len(), 2);
        assert_eq!(seq.scans[0].name, "000000");
        assert!(seq.scans.iter().all(|s| s.points.len() == 5 && s.labels.is_none()));
    }

    #[test]
    fn label_word_keeps_low_sixteen_bits() {
        let dir = tempdir().unwrap();
        write_five_point_scan(dir.path(), "000000");
        write_labels(&dir.path().join("000000.label"), &[0x0001_0009, 9, 0xFFFF_0028, 40, 0]).unwrap();
        let poses = dir.path().join("poses.txt");
        write_poses(&poses, &[Pose::identity()]).unwrap();
        let seq = read_sequence(dir.path(), &poses, Some(dir.path())).unwrap();
        // Independent check: mask the raw words by hand.
        let raw = read_labels(&dir.path().join("000000.label")).unwrap();
        let manual: Vec<u16> = raw.iter().map(|w| (w % 65536) as u16).collect();
        assert_eq!(seq.scans[0].labels.as_deref(), Some(&manual[..]));
        assert_eq!(manual[0], 9);
    }

    #[test]
    fn rejects_pose_count_mismatch() {
        let dir = tempdir().unwrap();
        write_five_point_scan(dir.path(), "000000");
        write_five_point_scan(dir.path(), "000001");
        let poses = dir.path().join("poses.txt");
        write_poses(&poses, &[Pose::identity(); 3]).unwrap();
        let err = read_sequence(dir.path(), &poses, None).unwrap_err();
        assert!(err.to_string().contains("pose/scan count mismatch"), "{err}");
    }

    #[test]
    fn rejects_label_length_mismatch() {
        let dir = tempdir().unwrap();
        write_five_point_scan(dir.path(), "000000");
        write_labels(&dir.path().join("000000.label"), &[1, 2, 3]).unwrap();
        let poses = dir.path().join("poses.txt");
        write_poses(&poses, &[Pose::identity()]).unwrap();
        let err = read_sequence(dir.path(), &poses, Some(dir.path())).unwrap_err();
        assert!(err.to_string().contains("3 labels for 5 points"), "{err}");
    }

    #[test]
    fn malformed_pose_line_reports_line_number() {
        let dir = tempdir().unwrap();
        let poses = dir.path().join("poses.txt");
        fs::write(&poses, "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0\n").unwrap();
        let err = read_poses(&poses).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        fs::write(&poses, "1 0 0 0 0 1 0 0 0 0 1 zero\n").unwrap();
        assert!(read_poses(&poses).unwrap_err().to_string().contains("line 1"));
    }

    #[test]
    fn truncated_scan_file_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("000000.bin");
        fs::write(&path, [0u8; 20]).unwrap();
        assert!(read_scan_bin(&path).is_err());
    }
}
