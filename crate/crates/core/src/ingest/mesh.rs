//! Triangle meshes with per-vertex attributes, stored as binary PLY.

use std::fs;
use std::path::Path;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::knn::KdTree;

use super::{ClassId, IGNORE};

pub const NORMAL_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    /// Per-vertex intensity in [0, 1].
    pub vertex_intensity: Option<Vec<f32>>,
    pub vertex_label: Option<Vec<ClassId>>,
    /// Per-vertex unit normals.
    pub vertex_normal: Option<Vec<Vector3<f64>>>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(Error::Invalid(format!("triangle {t:?} indexes past {n} vertices")));
        }
        let check_len = |what: &str, len: usize| {
            if len == n {
                Ok(())
            } else {
                Err(Error::Invalid(format!("{what} has {len} entries for {n} vertices")))
            }
        };
        if let Some(v) = &self.vertex_intensity {
            check_len("vertex_intensity", v.len())?;
            if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::Invalid("vertex intensity outside [0, 1]".into()));
            }
        }
        if let Some(v) = &self.vertex_label {
            check_len("vertex_label", v.len())?;
        }
        if let Some(v) = &self.vertex_normal {
            check_len("vertex_normal", v.len())?;
            if v.iter().any(|n| (n.norm() - 1.0).abs() > NORMAL_TOLERANCE) {
                return Err(Error::Invalid("vertex normal is not unit length".into()));
            }
        }
        Ok(())
    }

    /// Fills missing per-vertex intensity, label and normal from the nearest
    /// scene point. `point_normals` is used only when the mesh has no normals.
    pub fn attach_scene_attributes(
        &mut self,
        points: &[Point3<f64>],
        intensity: &[f32],
        labels: &[ClassId],
        point_normals: Option<&[Vector3<f64>]>,
    ) {
        let need = self.vertex_intensity.is_none()
            || self.vertex_label.is_none()
            || (self.vertex_normal.is_none() && point_normals.is_some());
        if !need {
            return;
        }
        let nearest: Vec<Option<usize>> = if points.is_empty() {
            vec![None; self.vertices.len()]
        } else {
            let tree = KdTree::new(points);
            self.vertices.iter().map(|v| tree.nearest(v).map(|n| n.index)).collect()
        };
        if self.vertex_intensity.is_none() {
            self.vertex_intensity =
                Some(nearest.iter().map(|n| n.map_or(0.0, |i| intensity[i])).collect());
        }
        if self.vertex_label.is_none() {
            self.vertex_label = Some(nearest.iter().map(|n| n.map_or(IGNORE, |i| labels[i])).collect());
        }
        if self.vertex_normal.is_none() {
            if let Some(normals) = point_normals {
                self.vertex_normal = Some(
                    nearest
                        .iter()
                        .map(|n| n.map_or(Vector3::z(), |i| normals[i]))
                        .collect(),
                );
            }
        }
    }

    /// Area-weighted vertex normals from the face geometry.
    pub fn face_vertex_normals(&self) -> Vec<Vector3<f64>> {
        let mut acc = vec![Vector3::zeros(); self.vertices.len()];
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| self.vertices[i as usize]);
            let n = (b - a).cross(&(c - a));
            for &i in t {
                acc[i as usize] += n;
            }
        }
        acc.into_iter()
            .map(|n| n.try_normalize(1e-12).unwrap_or_else(Vector3::z))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, ty: Scalar) -> Result<f64> {
        let end = self.pos + ty.size();
        if end > self.bytes.len() {
            return Err(Error::format(self.path, "unexpected end of PLY body"));
        }
        let v = ty.read(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(v)
    }
}

/// Reads a binary little-endian PLY with `x y z` vertex positions and
/// optional `intensity`, `label` and `nx ny nz` vertex properties. Polygonal
/// faces are fan-triangulated.
pub fn read_ply(path: &Path) -> Result<Mesh> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header_end = find_header_end(&bytes).ok_or_else(|| Error::format(path, "missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::format(path, "header is not UTF-8"))?;
    let elements = parse_header(header, path)?;

    let mut cur = Cursor { bytes: &bytes, pos: header_end, path };
    let mut mesh = Mesh::default();
    for el in &elements {
        match el.name.as_str() {
            "vertex" => read_vertices(el, &mut cur, &mut mesh)?,
            "face" => read_faces(el, &mut cur, &mut mesh)?,
            _ => {
                for _ in 0..el.count {
                    skip_record(el, &mut cur)?;
                }
            }
        }
    }
    mesh.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(mesh)
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    let marker = b"end_header";
    let at = bytes.windows(marker.len()).position(|w| w == marker)?;
    let mut end = at + marker.len();
    if bytes.get(end) == Some(&b'\r') {
        end += 1;
    }
    (bytes.get(end) == Some(&b'\n')).then_some(end + 1)
}

fn parse_header(header: &str, path: &Path) -> Result<Vec<Element>> {
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::format(path, "not a PLY file"));
    }
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, ..] => {
                return Err(Error::format(path, format!("unsupported PLY format {other}")));
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| Error::format(path, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let (Some(count), Some(item)) = (Scalar::parse(count), Scalar::parse(item)) else {
                    return Err(Error::format(path, format!("bad list property {name}")));
                };
                let el = elements.last_mut().ok_or_else(|| Error::format(path, "property before element"))?;
                el.props.push(Property::List { name: name.to_string(), count, item });
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| Error::format(path, format!("bad type {ty}")))?;
                let el = elements.last_mut().ok_or_else(|| Error::format(path, "property before element"))?;
                el.props.push(Property::Scalar { name: name.to_string(), ty });
            }
            ["comment", ..] | ["obj_info", ..] | ["end_header"] | [] => {}
            _ => return Err(Error::format(path, format!("unrecognised header line {line:?}"))),
        }
    }
    Ok(elements)
}

fn skip_record(el: &Element, cur: &mut Cursor) -> Result<()> {
    for p in &el.props {
        match p {
            Property::Scalar { ty, .. } => {
                cur.take(*ty)?;
            }
            Property::List { count, item, .. } => {
                let n = cur.take(*count)? as usize;
                for _ in 0..n {
                    cur.take(*item)?;
                }
            }
        }
    }
    Ok(())
}

fn read_vertices(el: &Element, cur: &mut Cursor, mesh: &mut Mesh) -> Result<()> {
    let has = |n: &str| el.props.iter().any(|p| matches!(p, Property::Scalar { name, .. } if name == n));
    if !(has("x") && has("y") && has("z")) {
        return Err(Error::format(cur.path, "vertex element lacks x/y/z"));
    }
    let with_intensity = has("intensity");
    let with_label = has("label");
    let with_normal = has("nx") && has("ny") && has("nz");
    let mut intensity = Vec::new();
    let mut labels = Vec::new();
    let mut normals = Vec::new();
    for _ in 0..el.count {
        let mut v = [0.0; 3];
        let mut n = [0.0; 3];
        let (mut r, mut l) = (0.0, IGNORE as f64);
        for p in &el.props {
            match p {
                Property::Scalar { name, ty } => {
                    let x = cur.take(*ty)?;
                    match name.as_str() {
                        "x" => v[0] = x,
                        "y" => v[1] = x,
                        "z" => v[2] = x,
                        "nx" => n[0] = x,
                        "ny" => n[1] = x,
                        "nz" => n[2] = x,
                        "intensity" => r = x,
                        "label" => l = x,
                        _ => {}
                    }
                }
                Property::List { count, item, .. } => {
                    let k = cur.take(*count)? as usize;
                    for _ in 0..k {
                        cur.take(*item)?;
                    }
                }
            }
        }
        mesh.vertices.push(Point3::from(v));
        intensity.push((r as f32).clamp(0.0, 1.0));
        labels.push(if (0.0..=u16::MAX as f64).contains(&l) { l as ClassId } else { IGNORE });
        let n = Vector3::from(n);
        normals.push(n.try_normalize(1e-12).unwrap_or_else(Vector3::z));
    }
    mesh.vertex_intensity = with_intensity.then_some(intensity);
    mesh.vertex_label = with_label.then_some(labels);
    mesh.vertex_normal = with_normal.then_some(normals);
    Ok(())
}

fn read_faces(el: &Element, cur: &mut Cursor, mesh: &mut Mesh) -> Result<()> {
    for _ in 0..el.count {
        for p in &el.props {
            match p {
                Property::List { name, count, item } if name == "vertex_indices" || name == "vertex_index" => {
                    let k = cur.take(*count)? as usize;
                    let idx: Vec<u32> = (0..k).map(|_| cur.take(*item).map(|v| v as u32)).collect::<Result<_>>()?;
                    for j in 1..k.saturating_sub(1) {
                        mesh.triangles.push([idx[0], idx[j], idx[j + 1]]);
                    }
                }
                Property::List { count, item, .. } => {
                    let k = cur.take(*count)? as usize;
                    for _ in 0..k {
                        cur.take(*item)?;
                    }
                }
                Property::Scalar { ty, .. } => {
                    cur.take(*ty)?;
                }
            }
        }
    }
    Ok(())
}

pub fn write_ply(path: &Path, mesh: &Mesh) -> Result<()> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header += &format!("element vertex {}\n", mesh.vertices.len());
    header += "property float x\nproperty float y\nproperty float z\n";
    if mesh.vertex_intensity.is_some() {
        header += "property float intensity\n";
    }
    if mesh.vertex_label.is_some() {
        header += "property ushort label\n";
    }
    if mesh.vertex_normal.is_some() {
        header += "property float nx\nproperty float ny\nproperty float nz\n";
    }
    header += &format!("element face {}\n", mesh.triangles.len());
    header += "property list uchar int vertex_indices\nend_header\n";

    let mut out = header.into_bytes();
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in [v.x, v.y, v.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        if let Some(r) = &mesh.vertex_intensity {
            out.extend_from_slice(&r[i].to_le_bytes());
        }
        if let Some(l) = &mesh.vertex_label {
            out.extend_from_slice(&l[i].to_le_bytes());
        }
        if let Some(n) = &mesh.vertex_normal {
            for c in [n[i].x, n[i].y, n[i].z] {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
    }
    for t in &mesh.triangles {
        out.push(3);
        for &i in t {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn quad() -> Mesh {
        Mesh {
            vertices: vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(1.0, 1.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            vertex_intensity: Some(vec![0.0, 0.25, 0.5, 1.0]),
            vertex_label: Some(vec![1, 2, 3, 4]),
            vertex_normal: Some(vec![Vector3::z(); 4]),
        }
    }

    #[test]
    fn ply_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ply");
        write_ply(&path, &quad()).unwrap();
        assert_eq!(read_ply(&path).unwrap(), quad());
    }

    #[test]
    fn positions_only_and_quad_faces() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ply");
        let mut body = b"ply\nformat binary_little_endian 1.0\ncomment test\nelement vertex 4\nproperty double x\nproperty double y\nproperty double z\nelement face 1\nproperty list uchar uint vertex_index\nend_header\n".to_vec();
        for v in [[0.0f64, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]] {
            for c in v {
                body.extend_from_slice(&c.to_le_bytes());
            }
        }
        body.push(4);
        for i in 0u32..4 {
            body.extend_from_slice(&i.to_le_bytes());
        }
        fs::write(&path, body).unwrap();
        let mesh = read_ply(&path).unwrap();
        assert_eq!(mesh.triangles, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(mesh.vertex_intensity.is_none() && mesh.vertex_label.is_none());
    }

    #[test]
    fn out_of_range_indices_rejected() {
        let mut m = quad();
        m.triangles.push([0, 1, 9]);
        assert!(m.validate().is_err());
    }

    #[test]
    fn attaches_nearest_point_attributes() {
        let mut m = quad();
        m.vertex_intensity = None;
        m.vertex_label = None;
        let pts = vec![Point3::new(0.1, 0.0, 0.0), Point3::new(0.9, 1.0, 0.0)];
        m.attach_scene_attributes(&pts, &[0.2, 0.8], &[5, 6], None);
        assert_eq!(m.vertex_label, Some(vec![5, 5, 6, 6]));
        assert_eq!(m.vertex_intensity, Some(vec![0.2, 0.2, 0.8, 0.8]));
    }
}
