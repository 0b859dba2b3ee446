//! Mesh file formats: ASCII OBJ and binary little-endian PLY.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::{Point, TriMesh};

pub fn write_obj(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, obj_string(mesh)).map_err(|e| Error::io(path, e))
}

pub fn obj_string(mesh: &TriMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 40 + mesh.faces.len() * 24);
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn read_obj(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_obj(BufReader::new(file)).map_err(|msg| Error::parse(path, msg))
}

/// Parses `v` and `f` records; polygons are fan-triangulated and
/// `v/vt/vn` index forms are accepted.
pub fn parse_obj(reader: impl BufRead) -> std::result::Result<TriMesh, String> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| format!("line {}: {e}", lineno + 1))?;
                if c.len() != 3 {
                    return Err(format!("line {}: vertex needs 3 coordinates", lineno + 1));
                }
                vertices.push(Point::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let head = tok.split('/').next().unwrap_or(tok);
                    let i: i64 = head
                        .parse()
                        .map_err(|e| format!("line {}: {e}", lineno + 1))?;
                    let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                    if resolved < 0 {
                        return Err(format!("line {}: index {i} out of range", lineno + 1));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(format!("line {}: face needs 3 indices", lineno + 1));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, faces).map_err(|e| e.to_string())
}

/// Writes binary little-endian PLY with double-precision positions and
/// optional per-vertex RGB.
pub fn write_ply(mesh: &TriMesh, colors: Option<&[[u8; 3]]>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ply_bytes(mesh, colors)?).map_err(|e| Error::io(path, e))
}

pub fn ply_bytes(mesh: &TriMesh, colors: Option<&[[u8; 3]]>) -> Result<Vec<u8>> {
    if let Some(c) = colors {
        if c.len() != mesh.vertices.len() {
            return Err(Error::invalid("color count differs from vertex count"));
        }
    }
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    let _ = writeln!(header, "element vertex {}", mesh.vertices.len());
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    let _ = writeln!(header, "element face {}", mesh.faces.len());
    header.push_str("property list uchar int vertex_indices\nend_header\n");

    let mut out = header.into_bytes();
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in v.iter() {
            out.extend_from_slice(&c.to_le_bytes());
        }
        if let Some(cols) = colors {
            out.extend_from_slice(&cols[i]);
        }
    }
    for f in &mesh.faces {
        out.push(3);
        for &i in f {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes).map_err(|msg| Error::parse(path, msg))
}

#[derive(Clone, Copy)]
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
    fn parse(name: &str) -> std::result::Result<Self, String> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(format!("unsupported PLY type {other}")),
        })
    }

    fn read(self, cur: &mut &[u8]) -> std::result::Result<f64, String> {
        fn take<const N: usize>(cur: &mut &[u8]) -> std::result::Result<[u8; N], String> {
            let mut buf = [0u8; N];
            cur.read_exact(&mut buf)
                .map_err(|_| "unexpected end of PLY data".to_string())?;
            Ok(buf)
        }
        Ok(match self {
            Scalar::I8 => i8::from_le_bytes(take(cur)?) as f64,
            Scalar::U8 => u8::from_le_bytes(take(cur)?) as f64,
            Scalar::I16 => i16::from_le_bytes(take(cur)?) as f64,
            Scalar::U16 => u16::from_le_bytes(take(cur)?) as f64,
            Scalar::I32 => i32::from_le_bytes(take(cur)?) as f64,
            Scalar::U32 => u32::from_le_bytes(take(cur)?) as f64,
            Scalar::F32 => f32::from_le_bytes(take(cur)?) as f64,
            Scalar::F64 => f64::from_le_bytes(take(cur)?),
        })
    }
}

enum Property {
    Scalar(String, Scalar),
    List(Scalar, Scalar),
}

struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

pub fn parse_ply(bytes: &[u8]) -> std::result::Result<TriMesh, String> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or("missing end_header")?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|e| e.to_string())?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err("missing ply magic".into());
    }
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(format!("unsupported PLY format {fmt}"));
                }
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| "bad element count")?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, _name] => elements
                .last_mut()
                .ok_or("property before element")?
                .props
                .push(Property::List(Scalar::parse(ct)?, Scalar::parse(it)?)),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or("property before element")?
                .props
                .push(Property::Scalar(name.to_string(), Scalar::parse(ty)?)),
            _ => {}
        }
    }

    let mut cur = &bytes[end + END.len()..];
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [0.0f64; 3];
            for prop in &el.props {
                match prop {
                    Property::Scalar(name, ty) => {
                        let v = ty.read(&mut cur)?;
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            _ => {}
                        }
                    }
                    Property::List(ct, it) => {
                        let n = ct.read(&mut cur)? as usize;
                        let idx: Vec<u32> = (0..n)
                            .map(|_| it.read(&mut cur).map(|v| v as u32))
                            .collect::<std::result::Result<_, _>>()?;
                        if el.name == "face" {
                            if idx.len() < 3 {
                                return Err("face with fewer than 3 indices".into());
                            }
                            for k in 1..idx.len() - 1 {
                                faces.push([idx[0], idx[k], idx[k + 1]]);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                vertices.push(Point::new(xyz[0], xyz[1], xyz[2]));
            }
        }
    }
    TriMesh::new(vertices, faces).map_err(|e| e.to_string())
}

/// Reads OBJ or PLY based on the file extension.
pub fn read_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("ply") => read_ply(path),
        _ => read_obj(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;

    #[test]
    fn obj_round_trip() {
        let m = icosphere(Point::new(0.1, -0.2, 0.3), 0.05, 1);
        let parsed = parse_obj(obj_string(&m).as_bytes()).unwrap();
        assert_eq!(parsed, m);
    }

    #[test]
    fn obj_polygons_and_slashes() {
        let src = "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3 4/4/4\n";
        let m = parse_obj(src.as_bytes()).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(parse_obj("v 0 0 0\nf 1 2 3\n".as_bytes()).is_err());
    }

    #[test]
    fn ply_round_trip_with_colors() {
        let m = icosphere(Point::origin(), 1.0, 1);
        let colors: Vec<[u8; 3]> = (0..m.vertices.len()).map(|i| [i as u8, 0, 255]).collect();
        let bytes = ply_bytes(&m, Some(&colors)).unwrap();
        assert!(bytes.starts_with(b"ply\nformat binary_little_endian 1.0\n"));
        assert_eq!(parse_ply(&bytes).unwrap(), m);
    }

    #[test]
    fn ply_float_vertices() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar uint vertex_indices\nend_header\n".to_vec();
        for v in [[0f32, 0., 0.], [1., 0., 0.], [0., 1., 0.]] {
            for c in v {
                bytes.extend_from_slice(&c.to_le_bytes());
            }
        }
        bytes.push(3);
        for i in [0u32, 1, 2] {
            bytes.extend_from_slice(&i.to_le_bytes());
        }
        let m = parse_ply(&bytes).unwrap();
        assert_eq!(m.vertices[1], Point::new(1.0, 0.0, 0.0));
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }
}
