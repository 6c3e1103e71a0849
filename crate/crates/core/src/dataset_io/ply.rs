//! PLY reader for point clouds and triangle meshes (ASCII and binary).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::RawScan;
use crate::error::{MapError, Result};
use crate::mesher::TriangleMesh;
use crate::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Encoding {
    Ascii,
    LittleEndian,
    BigEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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

    fn decode(self, b: &[u8], enc: Encoding) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let a: [u8; $n] = b[..$n].try_into().unwrap();
                (if enc == Encoding::BigEndian { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    body_start: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let bad = |msg: String| MapError::format(path, msg);
    let mut pos = 0;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut line_no = 0;
    loop {
        let Some(end) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(bad("header is not terminated by end_header".into()));
        };
        line_no += 1;
        let line = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| bad(format!("header line {line_no} is not text")))?
            .trim_end_matches('\r')
            .trim();
        pos += end + 1;
        let tok: Vec<&str> = line.split_whitespace().collect();
        if line_no == 1 {
            if line != "ply" {
                return Err(bad("missing 'ply' magic".into()));
            }
            continue;
        }
        match tok.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _] => {
                encoding = Some(match *f {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::LittleEndian,
                    "binary_big_endian" => Encoding::BigEndian,
                    other => return Err(bad(format!("unknown format '{other}'"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| bad(format!("header line {line_no}: bad element count '{count}'")))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, name] => {
                let (Some(count), Some(item)) = (Scalar::parse(c), Scalar::parse(i)) else {
                    return Err(bad(format!("header line {line_no}: unknown list types")));
                };
                let el = elements
                    .last_mut()
                    .ok_or_else(|| bad(format!("header line {line_no}: property before element")))?;
                el.props.push(Property::List {
                    name: name.to_string(),
                    count,
                    item,
                });
            }
            ["property", t, name] => {
                let ty = Scalar::parse(t).ok_or_else(|| bad(format!("header line {line_no}: unknown type '{t}'")))?;
                let el = elements
                    .last_mut()
                    .ok_or_else(|| bad(format!("header line {line_no}: property before element")))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            ["end_header"] => break,
            _ => return Err(bad(format!("header line {line_no}: cannot parse '{line}'"))),
        }
    }
    Ok(Header {
        encoding: encoding.ok_or_else(|| bad("missing format line".into()))?,
        elements,
        body_start: pos,
    })
}

/// Sequential reader over the PLY body; yields numbers as `f64`.
enum Body<'a> {
    Ascii {
        lines: std::iter::Enumerate<std::str::Lines<'a>>,
        tokens: Vec<&'a str>,
        next: usize,
        line: usize,
    },
    Binary {
        bytes: &'a [u8],
        pos: usize,
        enc: Encoding,
    },
}

impl<'a> Body<'a> {
    fn new(bytes: &'a [u8], header: &Header, path: &Path) -> Result<Self> {
        let body = &bytes[header.body_start..];
        Ok(match header.encoding {
            Encoding::Ascii => Body::Ascii {
                lines: std::str::from_utf8(body)
                    .map_err(|_| MapError::format(path, "ascii body is not valid text"))?
                    .lines()
                    .enumerate(),
                tokens: Vec::new(),
                next: 0,
                line: 0,
            },
            enc => Body::Binary {
                bytes: body,
                pos: 0,
                enc,
            },
        })
    }

    /// Starts a new record (ASCII records are one per line).
    fn begin_record(&mut self, path: &Path) -> Result<()> {
        if let Body::Ascii { lines, tokens, next, line } = self {
            loop {
                let Some((n, text)) = lines.next() else {
                    return Err(MapError::format(path, "ascii body ends before all elements were read"));
                };
                *line = n + 1;
                if !text.trim().is_empty() {
                    *tokens = text.split_whitespace().collect();
                    *next = 0;
                    return Ok(());
                }
            }
        }
        Ok(())
    }

    fn value(&mut self, ty: Scalar, header_len: usize, path: &Path) -> Result<f64> {
        match self {
            Body::Ascii { tokens, next, line, .. } => {
                let tok = tokens.get(*next).ok_or_else(|| {
                    MapError::format(path, format!("body line {line}: too few values"))
                })?;
                *next += 1;
                let parsed = match ty {
                    Scalar::F32 => tok.parse::<f32>().map(f64::from),
                    _ => tok.parse::<f64>(),
                };
                parsed.map_err(|_| MapError::format(path, format!("body line {line}: bad number '{tok}'")))
            }
            Body::Binary { bytes, pos, enc } => {
                let n = ty.size();
                if *pos + n > bytes.len() {
                    return Err(MapError::format(
                        path,
                        format!("truncated body at byte offset {}", header_len + *pos),
                    ));
                }
                let v = ty.decode(&bytes[*pos..*pos + n], *enc);
                *pos += n;
                Ok(v)
            }
        }
    }
}

struct PlyData {
    vertices: Vec<Vec3>,
    faces: Vec<Vec<u32>>,
}

fn read_ply(path: &Path, want_faces: bool) -> Result<PlyData> {
    let bytes = fs::read(path).map_err(|e| MapError::io(path, e))?;
    let header = parse_header(&bytes, path)?;
    let mut body = Body::new(&bytes, &header, path)?;
    let mut data = PlyData {
        vertices: Vec::new(),
        faces: Vec::new(),
    };
    let mut saw_vertex = false;
    for el in &header.elements {
        if saw_vertex && !want_faces {
            break;
        }
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let xyz = if is_vertex {
            let find = |axis: &str| {
                el.props
                    .iter()
                    .position(|p| matches!(p, Property::Scalar { .. }) && p.name() == axis)
                    .ok_or_else(|| MapError::format(path, format!("vertex element lacks property '{axis}'")))
            };
            Some([find("x")?, find("y")?, find("z")?])
        } else {
            None
        };
        if is_vertex {
            data.vertices.reserve(el.count);
        }
        let mut scratch = vec![0.0; el.props.len()];
        for _ in 0..el.count {
            body.begin_record(path)?;
            let mut face = Vec::new();
            for (k, prop) in el.props.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => scratch[k] = body.value(*ty, header.body_start, path)?,
                    Property::List { name, count, item } => {
                        let n = body.value(*count, header.body_start, path)?;
                        if !(n >= 0.0 && n.fract() == 0.0) {
                            return Err(MapError::format(path, format!("bad list length {n}")));
                        }
                        let keep = is_face && (name == "vertex_indices" || name == "vertex_index");
                        for _ in 0..n as usize {
                            let v = body.value(*item, header.body_start, path)?;
                            if keep {
                                if !(v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64) {
                                    return Err(MapError::format(path, format!("bad vertex index {v}")));
                                }
                                face.push(v as u32);
                            }
                        }
                    }
                }
            }
            if let Some([x, y, z]) = xyz {
                data.vertices.push(Vec3::new(scratch[x], scratch[y], scratch[z]));
            }
            if is_face && want_faces {
                data.faces.push(face);
            }
        }
        saw_vertex |= is_vertex;
    }
    if !saw_vertex {
        return Err(MapError::format(path, "no vertex element"));
    }
    Ok(data)
}

/// Vertex positions of a PLY file; any face element is ignored.
pub fn read_scan_ply(path: impl AsRef<Path>) -> Result<RawScan> {
    let data = read_ply(path.as_ref(), false)?;
    let total = data.vertices.len();
    let points: Vec<Vec3> = data.vertices.into_iter().filter(|p| p.iter().all(|v| v.is_finite())).collect();
    Ok(RawScan {
        dropped: total - points.len(),
        points,
    })
}

/// A triangle mesh from a PLY file; polygons are fan-triangulated.
pub fn read_mesh_ply(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let data = read_ply(path, true)?;
    let n = data.vertices.len() as u32;
    let mut triangles = Vec::with_capacity(data.faces.len());
    for (f, face) in data.faces.iter().enumerate() {
        if let Some(bad) = face.iter().find(|&&i| i >= n) {
            return Err(MapError::format(path, format!("face {f} references vertex {bad} of {n}")));
        }
        for k in 1..face.len().saturating_sub(1) {
            triangles.push([face[0], face[k], face[k + 1]]);
        }
    }
    Ok(TriangleMesh {
        vertices: data.vertices,
        triangles,
    })
}

/// Writes a point cloud as PLY with `float` coordinates.
pub fn write_cloud_ply(path: impl AsRef<Path>, points: &[Vec3], binary: bool) -> Result<()> {
    let path = path.as_ref();
    let io = |e| MapError::io(path, e);
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    let fmt = if binary { "binary_little_endian" } else { "ascii" };
    write!(
        w,
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        points.len()
    )
    .map_err(io)?;
    for p in points {
        if binary {
            for k in 0..3 {
                w.write_all(&(p[k] as f32).to_le_bytes()).map_err(io)?;
            }
        } else {
            writeln!(w, "{} {} {}", p.x as f32, p.y as f32, p.z as f32).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesher::{write_mesh, MeshFormat};
    use rand::{Rng, SeedableRng};

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn minimal_ascii_vertex() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.ply",
            b"ply\nformat ascii 1.0\ncomment hi\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n",
        );
        assert_eq!(read_scan_ply(&p).unwrap().points, vec![Vec3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn ascii_and_binary_agree() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec3> = (0..200)
            .map(|_| Vec3::from_fn(|_, _| rng.random_range(-10.0f32..10.0) as f64))
            .collect();
        let a = dir.path().join("a.ply");
        let b = dir.path().join("b.ply");
        write_cloud_ply(&a, &pts, false).unwrap();
        write_cloud_ply(&b, &pts, true).unwrap();
        let ra = read_scan_ply(&a).unwrap();
        assert_eq!(ra, read_scan_ply(&b).unwrap());
        assert_eq!(ra.points, pts);
    }

    #[test]
    fn extra_properties_and_big_endian() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = b"ply\nformat binary_big_endian 1.0\nelement vertex 2\nproperty double intensity\nproperty float z\nproperty float y\nproperty float x\nproperty uchar ring\nend_header\n".to_vec();
        for (i, p) in [[1.0f32, 2.0, 3.0], [4.0, 5.0, 6.0]].iter().enumerate() {
            body.extend_from_slice(&(i as f64 * 0.5).to_be_bytes());
            for v in p.iter().rev() {
                body.extend_from_slice(&v.to_be_bytes());
            }
            body.push(7);
        }
        let p = write(dir.path(), "c.ply", &body);
        assert_eq!(
            read_scan_ply(&p).unwrap().points,
            vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 5.0, 6.0)]
        );
    }

    #[test]
    fn malformed_inputs_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "m.ply",
            b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float z\nend_header\n1 2\n",
        );
        let e = read_scan_ply(&p).unwrap_err().to_string();
        assert!(e.contains("'y'"), "{e}");

        let cases: [&[u8]; 6] = [
            b"",
            b"plx\nformat ascii 1.0\nend_header\n",
            b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n",
            b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2\n",
            b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n\x00\x00",
            b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n",
        ];
        for (i, c) in cases.iter().enumerate() {
            let p = write(dir.path(), &format!("bad{i}.ply"), c);
            assert!(matches!(read_scan_ply(&p), Err(MapError::Format { .. })), "case {i}");
        }
        let p = write(
            dir.path(),
            "t.ply",
            b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n\x00\x00\x00\x00\x00\x00",
        );
        let e = read_scan_ply(&p).unwrap_err().to_string();
        assert!(e.contains("byte offset"), "{e}");
    }

    #[test]
    fn mesh_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = TriangleMesh {
            vertices: vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.5, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.25),
                Vec3::new(0.1f32 as f64, 0.2f32 as f64, 3.0),
            ],
            triangles: vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]],
        };
        for fmt in [MeshFormat::PlyAscii, MeshFormat::PlyBinary] {
            let p = dir.path().join("m.ply");
            write_mesh(&mesh, &p, fmt).unwrap();
            assert_eq!(read_mesh_ply(&p).unwrap(), mesh);
            assert_eq!(read_scan_ply(&p).unwrap().points, mesh.vertices);
        }
        let empty = dir.path().join("e.ply");
        write_mesh(&TriangleMesh::default(), &empty, MeshFormat::PlyBinary).unwrap();
        assert!(read_mesh_ply(&empty).unwrap().is_empty());

        let quad = write(
            dir.path(),
            "q.ply",
            b"ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n",
        );
        assert_eq!(read_mesh_ply(&quad).unwrap().triangles, vec![[0, 1, 2], [0, 2, 3]]);
        let broken = write(
            dir.path(),
            "b.ply",
            b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n3 0 1 2\n",
        );
        assert!(read_mesh_ply(&broken).is_err());
    }
}
