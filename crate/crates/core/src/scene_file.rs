//! Compact binary container for prepared scenes.
//!
//! Layout (little endian): magic `PC2DSCEN`, `u32` version, then counted
//! sections for points (`f64 x3`), intensity (`f32`), labels (`u16`),
//! provenance (`u32 x2`), trajectory (`f64 x12` row-major), source scans
//! (`u32` id, `u32` count, `u32` name length, UTF-8 name) and an optional
//! mesh (vertices, triangles, then flagged vertex attribute arrays).

use std::fs;
use std::path::Path;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::ingest::{Mesh, Provenance, Scene, SourceScan};
use crate::pose::Pose;

pub const SCENE_MAGIC: &[u8; 8] = b"PC2DSCEN";
pub const SCENE_VERSION: u32 = 1;
pub const SCENE_EXTENSION: &str = "pc2dscene";

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(n as u32);
    }
    fn point(&mut self, p: &Point3<f64>) {
        p.coords.iter().for_each(|&c| self.f64(c));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated scene file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> std::result::Result<f32, String> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> std::result::Result<usize, String> {
        let n = self.u32()? as usize;
        if n > self.bytes.len() {
            return Err(format!("implausible count {n}"));
        }
        Ok(n)
    }
    fn point(&mut self) -> std::result::Result<Point3<f64>, String> {
        Ok(Point3::new(self.f64()?, self.f64()?, self.f64()?))
    }
}

pub fn scene_to_bytes(scene: &Scene) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(SCENE_MAGIC);
    w.u32(SCENE_VERSION);
    w.len(scene.points.len());
    scene.points.iter().for_each(|p| w.point(p));
    w.len(scene.intensity.len());
    scene.intensity.iter().for_each(|&v| w.f32(v));
    w.len(scene.labels.len());
    scene.labels.iter().for_each(|&v| w.u16(v));
    w.len(scene.provenance.len());
    for p in &scene.provenance {
        w.u32(p.scan_id);
        w.u32(p.point_index);
    }
    w.len(scene.sensor_trajectory.len());
    for pose in &scene.sensor_trajectory {
        pose.to_row_major().iter().for_each(|&v| w.f64(v));
    }
    w.len(scene.source_scans.len());
    for s in &scene.source_scans {
        w.u32(s.scan_id);
        w.u32(s.point_count);
        w.len(s.name.len());
        w.0.extend_from_slice(s.name.as_bytes());
    }
    match &scene.mesh {
        None => w.u8(0),
        Some(m) => {
            w.u8(1);
            w.len(m.vertices.len());
            m.vertices.iter().for_each(|p| w.point(p));
            w.len(m.triangles.len());
            m.triangles.iter().flatten().for_each(|&i| w.u32(i));
            let flags = m.vertex_intensity.is_some() as u8
                | (m.vertex_label.is_some() as u8) << 1
                | (m.vertex_normal.is_some() as u8) << 2;
            w.u8(flags);
            if let Some(v) = &m.vertex_intensity {
                v.iter().for_each(|&x| w.f32(x));
            }
            if let Some(v) = &m.vertex_label {
                v.iter().for_each(|&x| w.u16(x));
            }
            if let Some(v) = &m.vertex_normal {
                v.iter().flat_map(|n| n.iter()).for_each(|&x| w.f64(x));
            }
        }
    }
    w.0
}

pub fn scene_from_bytes(bytes: &[u8]) -> std::result::Result<Scene, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != SCENE_MAGIC {
        return Err("not a scene container".into());
    }
    let version = r.u32()?;
    if version != SCENE_VERSION {
        return Err(format!("unsupported scene container version {version}"));
    }
    let mut scene = Scene::default();
    let n = r.len()?;
    scene.points = (0..n).map(|_| r.point()).collect::<std::result::Result<_, _>>()?;
    let n = r.len()?;
    scene.intensity = (0..n).map(|_| r.f32()).collect::<std::result::Result<_, _>>()?;
    let n = r.len()?;
    scene.labels = (0..n).map(|_| r.u16()).collect::<std::result::Result<_, _>>()?;
    let n = r.len()?;
    for _ in 0..n {
        scene.provenance.push(Provenance { scan_id: r.u32()?, point_index: r.u32()? });
    }
    let n = r.len()?;
    for _ in 0..n {
        let mut m = [0.0; 12];
        for v in m.iter_mut() {
            *v = r.f64()?;
        }
        scene.sensor_trajectory.push(Pose::from_row_major_lenient(&m).map_err(|e| e.to_string())?);
    }
    let n = r.len()?;
    for _ in 0..n {
        let scan_id = r.u32()?;
        let point_count = r.u32()?;
        let len = r.len()?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| "scan name is not UTF-8")?;
        scene.source_scans.push(SourceScan { scan_id, name, point_count });
    }
    if r.u8()? == 1 {
        let mut m = Mesh::default();
        let nv = r.len()?;
        m.vertices = (0..nv).map(|_| r.point()).collect::<std::result::Result<_, _>>()?;
        let nt = r.len()?;
        for _ in 0..nt {
            m.triangles.push([r.u32()?, r.u32()?, r.u32()?]);
        }
        let flags = r.u8()?;
        if flags & 1 != 0 {
            m.vertex_intensity = Some((0..nv).map(|_| r.f32()).collect::<std::result::Result<_, _>>()?);
        }
        if flags & 2 != 0 {
            m.vertex_label = Some((0..nv).map(|_| r.u16()).collect::<std::result::Result<_, _>>()?);
        }
        if flags & 4 != 0 {
            m.vertex_normal = Some(
                (0..nv)
                    .map(|_| Ok(Vector3::new(r.f64()?, r.f64()?, r.f64()?)))
                    .collect::<std::result::Result<_, String>>()?,
            );
        }
        scene.mesh = Some(m);
    }
    if r.pos != bytes.len() {
        return Err("trailing bytes after scene".into());
    }
    Ok(scene)
}

pub fn write_scene(path: &Path, scene: &Scene) -> Result<()> {
    fs::write(path, scene_to_bytes(scene)).map_err(|e| Error::io(path, e))
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let scene = scene_from_bytes(&bytes).map_err(|m| Error::format(path, m))?;
    scene.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SceneRecipe;

    #[test]
    fn round_trip_is_exact() {
        let scene = SceneRecipe::small().generate().unwrap();
        let bytes = scene_to_bytes(&scene);
        assert_eq!(scene_from_bytes(&bytes).unwrap(), scene);
        let mut bare = scene.clone();
        bare.mesh = None;
        assert_eq!(scene_from_bytes(&scene_to_bytes(&bare)).unwrap(), bare);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = scene_to_bytes(&SceneRecipe::small().generate().unwrap());
        assert!(scene_from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(scene_from_bytes(b"NOTASCENE").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(scene_from_bytes(&extra).is_err());
    }
}
