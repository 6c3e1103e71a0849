//! Analytic test scenes scanned by a virtual spinning LiDAR.
//!
//! Returns are exact ray/primitive intersections, so every endpoint lies on
//! the analytic surface up to rounding. Scenes are written in the on-disk
//! layout the mapping commands read: `scans/NNNNNN.bin`, `poses.txt`, a
//! ground-truth mesh and a text description of the primitives.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset_io::{write_poses, write_scan_bin, Pose};
use crate::error::{MapError, Result};
use crate::mesher::{write_mesh, MeshFormat, TriangleMesh};
use crate::Vec3;

pub const SCENE_NAMES: [&str; 3] = ["sphere", "room", "two-region"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    /// Solid axis-aligned box seen from outside.
    Block { min: Vec3, max: Vec3 },
    /// Axis-aligned box seen from inside (walls, floor and ceiling).
    Room { min: Vec3, max: Vec3 },
}

impl Shape {
    /// Smallest positive ray parameter where `o + t d` meets the surface.
    pub fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<f64> {
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = o - center;
                let a = d.norm_squared();
                let b = oc.dot(d);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                // numerically stable roots
                let q = -(b + b.signum() * s);
                let (t0, t1) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
                let (near, far) = (t0.min(t1), t0.max(t1));
                if near > 0.0 {
                    Some(near)
                } else if far > 0.0 {
                    Some(far)
                } else {
                    None
                }
            }
            Shape::Block { min, max } => {
                let (mut t_enter, mut t_exit) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    if d[k] == 0.0 {
                        if o[k] < min[k] || o[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let (a, b) = ((min[k] - o[k]) / d[k], (max[k] - o[k]) / d[k]);
                    t_enter = t_enter.max(a.min(b));
                    t_exit = t_exit.min(a.max(b));
                }
                (t_enter <= t_exit && t_enter > 0.0).then_some(t_enter)
            }
            Shape::Room { min, max } => {
                let mut t_exit = f64::INFINITY;
                for k in 0..3 {
                    if d[k] > 0.0 {
                        t_exit = t_exit.min((max[k] - o[k]) / d[k]);
                    } else if d[k] < 0.0 {
                        t_exit = t_exit.min((min[k] - o[k]) / d[k]);
                    }
                }
                (t_exit.is_finite() && t_exit > 0.0).then_some(t_exit)
            }
        }
    }

    /// Distance from `p` to the surface (unsigned).
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        match *self {
            Shape::Sphere { center, radius } => ((p - center).norm() - radius).abs(),
            Shape::Block { min, max } | Shape::Room { min, max } => {
                let c = (min + max) / 2.0;
                let h = (max - min) / 2.0;
                let q = (p - c).abs() - h;
                let outside = q.sup(&Vec3::zeros()).norm();
                let inside = q.max().min(0.0);
                (outside + inside).abs()
            }
        }
    }

    pub fn mesh(&self) -> TriangleMesh {
        match *self {
            Shape::Sphere { center, radius } => uv_sphere(center, radius, 256, 512),
            Shape::Block { min, max } => box_mesh(min, max, false),
            Shape::Room { min, max } => box_mesh(min, max, true),
        }
    }

    fn describe(&self) -> String {
        let v = |p: &Vec3| format!("{} {} {}", p.x, p.y, p.z);
        match self {
            Shape::Sphere { center, radius } => format!("sphere {} {radius}", v(center)),
            Shape::Block { min, max } => format!("block {} {}", v(min), v(max)),
            Shape::Room { min, max } => format!("room {} {}", v(min), v(max)),
        }
    }
}

fn uv_sphere(c: Vec3, r: f64, n_lat: usize, n_lon: usize) -> TriangleMesh {
    let mut m = TriangleMesh::default();
    m.vertices.push(c + Vec3::new(0.0, 0.0, r));
    for i in 1..n_lat {
        let th = PI * i as f64 / n_lat as f64;
        for j in 0..n_lon {
            let ph = 2.0 * PI * j as f64 / n_lon as f64;
            m.vertices.push(c + r * Vec3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()));
        }
    }
    m.vertices.push(c - Vec3::new(0.0, 0.0, r));
    let ring = |i: usize, j: usize| (1 + (i - 1) * n_lon + j % n_lon) as u32;
    let south = (m.vertices.len() - 1) as u32;
    for j in 0..n_lon {
        m.triangles.push([0, ring(1, j), ring(1, j + 1)]);
        m.triangles.push([south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)]);
    }
    for i in 1..n_lat - 1 {
        for j in 0..n_lon {
            m.triangles.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
            m.triangles.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
        }
    }
    m
}

fn box_mesh(min: Vec3, max: Vec3, inward: bool) -> TriangleMesh {
    let corner = |c: usize| Vec3::new(
        if c & 1 == 1 { max.x } else { min.x },
        if c & 2 == 2 { max.y } else { min.y },
        if c & 4 == 4 { max.z } else { min.z },
    );
    let vertices = (0..8).map(corner).collect();
    // outward-facing quads
    let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    let mut triangles = Vec::new();
    for q in quads {
        let (a, b) = ([q[0], q[1], q[2]], [q[0], q[2], q[3]]);
        for t in [a, b] {
            triangles.push(if inward { [t[0], t[2], t[1]] } else { t });
        }
    }
    TriangleMesh { vertices, triangles }
}

/// Spinning range sensor: `rings` elevation channels evenly spaced over
/// `[elevation_min, elevation_max]`, `azimuth_steps` firings per revolution
/// about the sensor z axis, restricted to `|azimuth| <= sector`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lidar {
    pub azimuth_steps: usize,
    pub rings: usize,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub sector: f64,
    pub max_range: f64,
}

impl Default for Lidar {
    fn default() -> Self {
        Self {
            azimuth_steps: 1024,
            rings: 64,
            elevation_min: -30f64.to_radians(),
            elevation_max: 30f64.to_radians(),
            sector: PI,
            max_range: 60.0,
        }
    }
}

impl Lidar {
    /// Unit beam directions in the sensor frame.
    pub fn directions(&self, azimuth_offset: f64) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(self.azimuth_steps * self.rings);
        for r in 0..self.rings {
            let el = if self.rings == 1 {
                0.5 * (self.elevation_min + self.elevation_max)
            } else {
                self.elevation_min + (self.elevation_max - self.elevation_min) * r as f64 / (self.rings - 1) as f64
            };
            for a in 0..self.azimuth_steps {
                let mut az = -PI + 2.0 * PI * a as f64 / self.azimuth_steps as f64 + azimuth_offset;
                az = (az + PI).rem_euclid(2.0 * PI) - PI;
                if az.abs() > self.sector {
                    continue;
                }
                out.push(Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
            }
        }
        out
    }
}

/// One virtual scan position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Station {
    pub pose: Pose,
    /// Region whose primitives this scan observes.
    pub region: u8,
    pub azimuth_offset: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub name: String,
    /// Primitives with the region they belong to.
    pub primitives: Vec<(Shape, u8)>,
    pub stations: Vec<Station>,
    pub lidar: Lidar,
}

/// Rotation whose x axis points from `from` to `to`.
pub fn look_at(from: &Vec3, to: &Vec3) -> Matrix3<f64> {
    let x = (to - from).normalize();
    let up = if x.z.abs() > 0.9 { Vec3::y() } else { Vec3::z() };
    let y = up.cross(&x).normalize();
    let z = x.cross(&y);
    Matrix3::from_columns(&[x, y, z])
}

fn fibonacci_sphere(n: usize, k: usize) -> Vec3 {
    let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
    let s = (1.0 - z * z).sqrt();
    let phi = k as f64 * PI * (3.0 - 5f64.sqrt());
    Vec3::new(s * phi.cos(), s * phi.sin(), z)
}

impl SyntheticScene {
    /// Sphere of `radius` at the origin seen from `scans` stations spread
    /// over a sphere of radius `3 * radius`.
    pub fn sphere(radius: f64, scans: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let center = Vec3::zeros();
        let stations = (0..scans)
            .map(|k| {
                let jitter = Vec3::from_fn(|_, _| rng.random_range(-0.05..0.05));
                let pos = center + 3.0 * radius * (fibonacci_sphere(scans, k) + jitter);
                Station {
                    pose: Pose::new(look_at(&pos, &center), pos),
                    region: 0,
                    azimuth_offset: rng.random_range(0.0..2.0 * PI / 1024.0),
                }
            })
            .collect();
        Self {
            name: "sphere".into(),
            primitives: vec![(Shape::Sphere { center, radius }, 0)],
            stations,
            lidar: Lidar::default(),
        }
    }

    /// 8 x 6 x 3 m room with a pillar and a ball; the sensor walks a loop.
    pub fn room(scans: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let primitives = vec![
            (
                Shape::Room {
                    min: Vec3::new(-4.0, -3.0, 0.0),
                    max: Vec3::new(4.0, 3.0, 3.0),
                },
                0,
            ),
            (
                Shape::Block {
                    min: Vec3::new(1.5, 0.5, 0.0),
                    max: Vec3::new(2.3, 1.3, 3.0),
                },
                0,
            ),
            (
                Shape::Sphere {
                    center: Vec3::new(-1.5, -1.0, 0.8),
                    radius: 0.8,
                },
                0,
            ),
        ];
        let stations = (0..scans)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / scans as f64;
                let pos = Vec3::new(2.5 * a.cos(), 1.8 * a.sin(), 1.5 + rng.random_range(-0.2..0.2));
                let yaw = a + PI / 2.0 + rng.random_range(-0.3..0.3);
                Station {
                    pose: Pose::new(Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).into_inner(), pos),
                    region: 0,
                    azimuth_offset: rng.random_range(0.0..2.0 * PI / 1024.0),
                }
            })
            .collect();
        Self {
            name: "room".into(),
            primitives,
            stations,
            lidar: Lidar {
                elevation_min: -60f64.to_radians(),
                elevation_max: 60f64.to_radians(),
                ..Lidar::default()
            },
        }
    }

    /// A ball (region 0) and a block (region 1) side by side. The first
    /// half of the scans observe only region 0, the second half only
    /// region 1, as when a sensor passes one structure and then the next.
    pub fn two_region(scans: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ball = Vec3::new(-2.0, 0.0, 0.0);
        let block_center = Vec3::new(2.0, 0.0, 0.0);
        let primitives = vec![
            (Shape::Sphere { center: ball, radius: 1.2 }, 0),
            (
                Shape::Block {
                    min: block_center - Vec3::new(1.0, 1.0, 1.0),
                    max: block_center + Vec3::new(1.0, 1.0, 1.0),
                },
                1,
            ),
        ];
        let first = scans.div_ceil(2);
        let stations = (0..scans)
            .map(|k| {
                let (region, idx, count, target) = if k < first {
                    (0u8, k, first, ball)
                } else {
                    (1u8, k - first, scans - first, block_center)
                };
                let dir = fibonacci_sphere(count.max(1), idx);
                let pos = target + 4.0 * dir + Vec3::from_fn(|_, _| rng.random_range(-0.1..0.1));
                Station {
                    pose: Pose::new(look_at(&pos, &target), pos),
                    region,
                    azimuth_offset: rng.random_range(0.0..2.0 * PI / 1024.0),
                }
            })
            .collect();
        Self {
            name: "two-region".into(),
            primitives,
            stations,
            lidar: Lidar {
                elevation_min: -45f64.to_radians(),
                elevation_max: 45f64.to_radians(),
                sector: 60f64.to_radians(),
                ..Lidar::default()
            },
        }
    }

    /// Scene by name with `scans` stations (0 selects the scene default).
    pub fn by_name(name: &str, scans: usize, seed: u64) -> Result<Self> {
        Ok(match name {
            "sphere" => Self::sphere(2.0, if scans == 0 { 30 } else { scans }, seed),
            "room" => Self::room(if scans == 0 { 20 } else { scans }, seed),
            "two-region" => Self::two_region(if scans == 0 { 24 } else { scans }, seed),
            other => {
                return Err(MapError::Argument(format!(
                    "unknown scene '{other}', expected one of {}",
                    SCENE_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn regions(&self) -> Vec<u8> {
        let mut r: Vec<u8> = self.primitives.iter().map(|p| p.1).collect();
        r.sort_unstable();
        r.dedup();
        r
    }

    /// Endpoints of scan `k` in the world frame.
    pub fn world_points(&self, k: usize) -> Vec<Vec3> {
        let st = &self.stations[k];
        let o = st.pose.translation;
        let shapes: Vec<&Shape> = self
            .primitives
            .iter()
            .filter(|(_, r)| *r == st.region)
            .map(|(s, _)| s)
            .collect();
        self.lidar
            .directions(st.azimuth_offset)
            .iter()
            .filter_map(|d| {
                let dw = st.pose.rotation * d;
                let t = shapes
                    .iter()
                    .filter_map(|s| s.intersect(&o, &dw))
                    .fold(f64::INFINITY, f64::min);
                (t <= self.lidar.max_range).then(|| o + t * dw)
            })
            .collect()
    }

    /// Endpoints of scan `k` in the sensor frame.
    pub fn sensor_points(&self, k: usize) -> Vec<Vec3> {
        let pose = &self.stations[k].pose;
        let rt = pose.rotation.transpose();
        self.world_points(k)
            .iter()
            .map(|p| rt * (p - pose.translation))
            .collect()
    }

    /// Distance from `p` to the nearest primitive surface.
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        self.primitives
            .iter()
            .map(|(s, _)| s.surface_distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Ground-truth mesh of one region, or of everything.
    pub fn gt_mesh(&self, region: Option<u8>) -> TriangleMesh {
        let mut out = TriangleMesh::default();
        for (shape, r) in &self.primitives {
            if region.is_some_and(|want| want != *r) {
                continue;
            }
            let m = shape.mesh();
            let base = out.vertices.len() as u32;
            out.vertices.extend(m.vertices);
            out.triangles.extend(m.triangles.iter().map(|t| t.map(|i| i + base)));
        }
        out
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.stations.iter().map(|s| s.pose).collect()
    }

    /// Writes scans, poses, ground truth and the scene description.
    pub fn write(&self, out_dir: &Path) -> Result<SceneFiles> {
        let scan_dir = out_dir.join("scans");
        fs::create_dir_all(&scan_dir).map_err(|e| MapError::io(&scan_dir, e))?;
        let mut points = 0;
        for k in 0..self.stations.len() {
            let pts = self.sensor_points(k);
            points += pts.len();
            write_scan_bin(scan_dir.join(format!("{k:06}.bin")), &pts)?;
        }
        let pose_file = out_dir.join("poses.txt");
        write_poses(&pose_file, &self.poses())?;
        let gt_mesh = out_dir.join("gt_mesh.ply");
        write_mesh(&self.gt_mesh(None), &gt_mesh, MeshFormat::PlyBinary)?;
        let regions = self.regions();
        if regions.len() > 1 {
            for r in &regions {
                write_mesh(
                    &self.gt_mesh(Some(*r)),
                    &out_dir.join(format!("gt_region{r}.ply")),
                    MeshFormat::PlyBinary,
                )?;
            }
        }
        let mut desc = String::new();
        let _ = writeln!(desc, "scene = {}", self.name);
        let _ = writeln!(desc, "scans = {}", self.stations.len());
        for (shape, r) in &self.primitives {
            let _ = writeln!(desc, "primitive = {} region {r}", shape.describe());
        }
        for r in &regions {
            let idx: Vec<String> = self
                .stations
                .iter()
                .enumerate()
                .filter(|(_, s)| s.region == *r)
                .map(|(i, _)| i.to_string())
                .collect();
            let _ = writeln!(desc, "region{r}_scans = {}", idx.join(","));
        }
        let l = &self.lidar;
        let _ = writeln!(
            desc,
            "lidar = azimuth_steps {} rings {} elevation {} {} sector {} max_range {}",
            l.azimuth_steps,
            l.rings,
            l.elevation_min.to_degrees(),
            l.elevation_max.to_degrees(),
            l.sector.to_degrees(),
            l.max_range
        );
        let scene_file = out_dir.join("scene.txt");
        fs::write(&scene_file, desc).map_err(|e| MapError::io(&scene_file, e))?;
        Ok(SceneFiles {
            scan_dir,
            pose_file,
            gt_mesh,
            scene_file,
            points,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SceneFiles {
    pub scan_dir: PathBuf,
    pub pose_file: PathBuf,
    pub gt_mesh: PathBuf,
    pub scene_file: PathBuf,
    pub points: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_returns_are_exact() {
        let scene = SyntheticScene::sphere(2.0, 6, 1);
        let mut total = 0;
        for k in 0..6 {
            let pts = scene.world_points(k);
            total += pts.len();
            for p in &pts {
                assert!((p.norm() - 2.0).abs() < 1e-9);
            }
            // each return faces its sensor
            let o = scene.stations[k].pose.translation;
            assert!(pts.iter().all(|p| (o - p).dot(p) > -1e-9));
        }
        assert!(total > 6 * 2000, "{total}");
    }

    #[test]
    fn room_returns_lie_on_planes() {
        let scene = SyntheticScene::room(4, 2);
        let room_only = SyntheticScene {
            primitives: vec![scene.primitives[0]],
            ..scene.clone()
        };
        for k in 0..4 {
            for p in room_only.world_points(k) {
                let planes = [p.x + 4.0, p.x - 4.0, p.y + 3.0, p.y - 3.0, p.z, p.z - 3.0];
                assert!(planes.iter().any(|d| d.abs() < 1e-9), "{p:?}");
            }
            for p in scene.world_points(k) {
                assert!(scene.surface_distance(&p) < 1e-9);
            }
        }
    }

    #[test]
    fn block_and_room_intersections() {
        let b = Shape::Block {
            min: Vec3::new(1.0, -1.0, -1.0),
            max: Vec3::new(3.0, 1.0, 1.0),
        };
        assert_eq!(b.intersect(&Vec3::zeros(), &Vec3::x()), Some(1.0));
        assert_eq!(b.intersect(&Vec3::zeros(), &-Vec3::x()), None);
        assert_eq!(b.intersect(&Vec3::new(0.0, 2.0, 0.0), &Vec3::x()), None);
        let r = Shape::Room {
            min: Vec3::from_element(-1.0),
            max: Vec3::from_element(2.0),
        };
        assert_eq!(r.intersect(&Vec3::zeros(), &Vec3::y()), Some(2.0));
        assert_eq!(r.intersect(&Vec3::zeros(), &-Vec3::z()), Some(1.0));
        let s = Shape::Sphere {
            center: Vec3::new(5.0, 0.0, 0.0),
            radius: 1.0,
        };
        assert_eq!(s.intersect(&Vec3::zeros(), &Vec3::x()), Some(4.0));
        assert_eq!(s.intersect(&Vec3::new(5.0, 0.0, 0.0), &Vec3::x()), Some(1.0));
        assert_eq!(s.intersect(&Vec3::zeros(), &Vec3::y()), None);
    }

    #[test]
    fn regions_are_scanned_separately() {
        let scene = SyntheticScene::two_region(8, 3);
        assert_eq!(scene.regions(), vec![0, 1]);
        for (k, st) in scene.stations.iter().enumerate() {
            let pts = scene.world_points(k);
            assert!(!pts.is_empty());
            let shape = scene.primitives[st.region as usize].0;
            assert!(pts.iter().all(|p| shape.surface_distance(p) < 1e-9));
        }
        assert_eq!(scene.stations.iter().filter(|s| s.region == 0).count(), 4);
    }

    #[test]
    fn gt_meshes_lie_on_the_primitives() {
        let scene = SyntheticScene::room(2, 0);
        let mesh = scene.gt_mesh(None);
        assert_eq!(mesh.boundary_edge_count(), 0);
        for v in &mesh.vertices {
            assert!(scene.surface_distance(v) < 1e-9);
        }
        let s = Shape::Sphere { center: Vec3::zeros(), radius: 2.0 }.mesh();
        assert_eq!(s.boundary_edge_count(), 0);
        assert!((s.area() - 16.0 * PI).abs() / (16.0 * PI) < 1e-3);
        for t in 0..s.triangles.len() {
            let [a, b, c] = s.triangle(t);
            assert!((b - a).cross(&(c - a)).dot(&(a + b + c)) > 0.0);
        }
    }

    #[test]
    fn write_layout_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let scene = SyntheticScene::by_name("sphere", 3, 9).unwrap();
        let files = scene.write(dir.path()).unwrap();
        let scans = crate::dataset_io::list_scans(&files.scan_dir).unwrap();
        let poses = crate::dataset_io::read_poses(&files.pose_file).unwrap();
        assert_eq!(scans.len(), 3);
        assert_eq!(poses.len(), 3);
        let again = tempfile::tempdir().unwrap();
        SyntheticScene::by_name("sphere", 3, 9).unwrap().write(again.path()).unwrap();
        for name in ["scans/000001.bin", "poses.txt", "gt_mesh.ply", "scene.txt"] {
            assert_eq!(fs::read(dir.path().join(name)).unwrap(), fs::read(again.path().join(name)).unwrap());
        }
        assert!(SyntheticScene::by_name("cave", 0, 0).is_err());
    }
}
