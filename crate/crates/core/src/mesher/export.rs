//! Mesh writers: PLY (ASCII or little-endian binary) and Wavefront OBJ.
//! Vertices are written as 32-bit floats, indices as 32-bit signed integers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::TriangleMesh;
use crate::error::{MapError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    PlyAscii,
    PlyBinary,
    Obj,
}

impl MeshFormat {
    /// Picks a format from the file extension (`.obj`, otherwise binary PLY).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
            Some(e) if e == "obj" => MeshFormat::Obj,
            _ => MeshFormat::PlyBinary,
        }
    }
}

pub fn write_mesh(mesh: &TriangleMesh, path: &Path, format: MeshFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| MapError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        MeshFormat::PlyAscii | MeshFormat::PlyBinary => write_ply(mesh, &mut w, format == MeshFormat::PlyBinary),
        MeshFormat::Obj => write_obj(mesh, &mut w),
    };
    res.and_then(|_| w.flush()).map_err(|e| MapError::io(path, e))
}

fn write_ply<W: Write>(mesh: &TriangleMesh, w: &mut W, binary: bool) -> std::io::Result<()> {
    let fmt = if binary { "binary_little_endian" } else { "ascii" };
    write!(
        w,
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    )?;
    if binary {
        for v in &mesh.vertices {
            for k in 0..3 {
                w.write_all(&(v[k] as f32).to_le_bytes())?;
            }
        }
        for t in &mesh.triangles {
            w.write_all(&[3u8])?;
            for &i in t {
                w.write_all(&(i as i32).to_le_bytes())?;
            }
        }
    } else {
        for v in &mesh.vertices {
            writeln!(w, "{} {} {}", v.x as f32, v.y as f32, v.z as f32)?;
        }
        for t in &mesh.triangles {
            writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
        }
    }
    Ok(())
}

fn write_obj<W: Write>(mesh: &TriangleMesh, w: &mut W) -> std::io::Result<()> {
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x as f32, v.y as f32, v.z as f32)?;
    }
    for t in &mesh.triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}
