//! Posed range scans on disk: KITTI-style `.bin` clouds, PLY clouds and
//! meshes, pose files, and the run configuration.

pub mod config;
mod ply;
mod pose;

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{MapError, Result};
use crate::Vec3;

pub use config::{ConfigKey, RunConfig, CONFIG_KEYS};
pub use ply::{read_mesh_ply, read_scan_ply, write_cloud_ply};
pub use pose::{read_poses, write_poses, Pose};

/// Points read from one scan file, in the sensor frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawScan {
    pub points: Vec<Vec3>,
    /// Records discarded because a coordinate was NaN or infinite.
    pub dropped: usize,
}

/// One scan in world coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Scan {
    pub sensor_origin: Vec3,
    pub points: Vec<Vec3>,
    pub index: usize,
}

const BIN_RECORD: usize = 16;

/// Reads little-endian `f32` quadruples `(x, y, z, intensity)`.
pub fn read_scan_bin(path: impl AsRef<Path>) -> Result<RawScan> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| MapError::io(path, e))?;
    let whole = bytes.len() - bytes.len() % BIN_RECORD;
    if whole != bytes.len() {
        return Err(MapError::format(
            path,
            format!(
                "truncated record at byte offset {whole}: file length {} is not a multiple of {BIN_RECORD}",
                bytes.len()
            ),
        ));
    }
    let mut scan = RawScan::default();
    scan.points.reserve(bytes.len() / BIN_RECORD);
    for rec in bytes.chunks_exact(BIN_RECORD) {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64;
        let p = Vec3::new(f(0), f(1), f(2));
        if p.iter().all(|v| v.is_finite()) {
            scan.points.push(p);
        } else {
            scan.dropped += 1;
        }
    }
    if scan.dropped > 0 {
        log::warn!("{}: dropped {} non-finite points", path.display(), scan.dropped);
    }
    Ok(scan)
}

/// Writes points as `.bin` records with zero intensity.
pub fn write_scan_bin(path: impl AsRef<Path>, points: &[Vec3]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(points.len() * BIN_RECORD);
    for p in points {
        for k in 0..3 {
            buf.extend_from_slice(&(p[k] as f32).to_le_bytes());
        }
        buf.extend_from_slice(&0f32.to_le_bytes());
    }
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| MapError::io(path, e))?);
    w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| MapError::io(path, e))
}

/// Reads a scan by extension: `.ply`, otherwise `.bin`.
pub fn read_scan(path: impl AsRef<Path>) -> Result<RawScan> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("ply") => read_scan_ply(path),
        _ => read_scan_bin(path),
    }
}

/// Transforms sensor-frame points into the world frame. Returns farther than
/// `max_range` are discarded first; `max_range <= 0` disables the cutoff.
pub fn to_world(raw: &RawScan, pose: &Pose, max_range: f64, index: usize) -> Scan {
    let points = raw
        .points
        .iter()
        .filter(|p| max_range <= 0.0 || p.norm() <= max_range)
        .map(|p| pose.apply(p))
        .collect();
    Scan {
        sensor_origin: pose.translation,
        points,
        index,
    }
}

/// Keeps the first point of every occupied voxel of edge `voxel`.
pub fn voxel_downsample(points: &[Vec3], voxel: f64) -> Vec<Vec3> {
    if voxel <= 0.0 {
        return points.to_vec();
    }
    let mut seen: HashSet<[i64; 3]> = HashSet::with_capacity(points.len());
    points
        .iter()
        .filter(|p| {
            let key = [0, 1, 2].map(|k| (p[k] / voxel).floor() as i64);
            seen.insert(key)
        })
        .copied()
        .collect()
}

/// Scan files (`.bin` or `.ply`) of a directory in file name order.
pub fn list_scans(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| MapError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                    Some("bin") | Some("ply")
                )
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Pairs the sorted scan files of `dir` with the lines of `pose_file`.
pub fn scan_sequence(dir: impl AsRef<Path>, pose_file: impl AsRef<Path>) -> Result<Vec<(PathBuf, Pose)>> {
    let scans = list_scans(&dir)?;
    let poses = read_poses(&pose_file)?;
    if scans.len() != poses.len() {
        return Err(MapError::format(
            pose_file.as_ref(),
            format!(
                "{} poses for {} scan files in {}",
                poses.len(),
                scans.len(),
                dir.as_ref().display()
            ),
        ));
    }
    Ok(scans.into_iter().zip(poses).collect())
}
