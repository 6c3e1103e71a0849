//! KITTI-style pose files: one row-major 3x4 `[R | t]` matrix per line.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Matrix3;

use crate::error::{MapError, Result};
use crate::Vec3;

/// Orthonormality drift accepted silently.
const POSE_TOLERANCE: f64 = 1e-6;
/// Orthonormality drift accepted with a warning.
const POSE_DRIFT_LIMIT: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vec3::zeros())
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Largest deviation of `R^T R` from identity or of `det R` from 1.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let gram = (r.transpose() * r - Matrix3::identity()).abs().max();
        gram.max((r.determinant() - 1.0).abs())
    }
}

pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<Pose>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| MapError::io(path, e))?;
    let mut poses = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| MapError::format(path, format!("line {}: {e}", n + 1)))?;
        if vals.len() != 12 {
            return Err(MapError::format(
                path,
                format!("line {}: expected 12 values, found {}", n + 1, vals.len()),
            ));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(MapError::format(path, format!("line {}: non-finite value", n + 1)));
        }
        let pose = Pose::new(
            Matrix3::new(vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10]),
            Vec3::new(vals[3], vals[7], vals[11]),
        );
        let err = pose.orthonormality_error();
        if err > POSE_DRIFT_LIMIT {
            return Err(MapError::format(
                path,
                format!("line {}: rotation is not orthonormal (error {err:.3e})", n + 1),
            ));
        }
        if err > POSE_TOLERANCE {
            log::warn!("{} line {}: rotation drift {err:.3e}", path.display(), n + 1);
        }
        poses.push(pose);
    }
    Ok(poses)
}

pub fn write_poses(path: impl AsRef<Path>, poses: &[Pose]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for p in poses {
        let r = &p.rotation;
        let t = &p.translation;
        let row: Vec<String> = (0..3)
            .flat_map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]])
            .map(|v| v.to_string())
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| MapError::io(path, e))
}
