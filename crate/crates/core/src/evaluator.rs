//! Reconstruction metrics between a predicted and a reference surface.
//!
//! Surfaces are compared as point clouds. Distances are exact nearest
//! neighbours from a kd-tree; reports are in centimeters.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{MapError, Result};
use crate::mesher::TriangleMesh;
use crate::Vec3;

/// Area-weighted uniform samples on the mesh surface.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    if n == 0 {
        return Err(MapError::Argument("surface sample count must be at least 1".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.triangle(t);
        total += 0.5 * (b - a).cross(&(c - a)).norm();
        cumulative.push(total);
    }
    if !(total > 0.0 && total.is_finite()) {
        return Err(MapError::Argument("cannot sample a mesh with no surface area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.random::<f64>() * total;
        let t = cumulative.partition_point(|&c| c <= r).min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangle(t);
        let (u, v): (f64, f64) = (rng.random(), rng.random());
        let su = u.sqrt();
        out.push(a * (1.0 - su) + b * (su * (1.0 - v)) + c * (su * v));
    }
    Ok(out)
}

const LEAF_BUCKET: usize = 16;

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: Box<Node>, right: Box<Node> },
}

/// Static 3-d tree for exact nearest-neighbour queries.
pub struct KdTree {
    points: Vec<Vec3>,
    root: Node,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut points = points.to_vec();
        let n = points.len();
        let root = Self::build(&mut points, 0, n);
        Self { points, root }
    }

    fn build(pts: &mut [Vec3], start: usize, end: usize) -> Node {
        let slice = &mut pts[start..end];
        if slice.len() <= LEAF_BUCKET {
            return Node::Leaf { start, end };
        }
        let (lo, hi) = slice.iter().fold(
            (Vec3::from_element(f64::INFINITY), Vec3::from_element(f64::NEG_INFINITY)),
            |(lo, hi), p| (lo.inf(p), hi.sup(p)),
        );
        let axis = (hi - lo).imax();
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
        let value = slice[mid][axis];
        let left = Box::new(Self::build(pts, start, start + mid));
        let right = Box::new(Self::build(pts, start + mid, end));
        Node::Split { axis, value, left, right }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Squared distance to the nearest point (`inf` for an empty tree).
    pub fn nearest_squared(&self, q: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        self.search(&self.root, q, &mut best);
        best
    }

    fn search(&self, node: &Node, q: &Vec3, best: &mut f64) {
        match node {
            Node::Leaf { start, end } => {
                for p in &self.points[*start..*end] {
                    let d = (p - q).norm_squared();
                    if d < *best {
                        *best = d;
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[*axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= *best {
                    self.search(far, q, best);
                }
            }
        }
    }
}

/// Distance from every point of `from` to its nearest point in `to`.
pub fn nn_distances(from: &[Vec3], to: &[Vec3]) -> Result<Vec<f64>> {
    if to.is_empty() {
        return Err(MapError::Argument("nearest neighbour target cloud is empty".into()));
    }
    let tree = KdTree::new(to);
    Ok(from.par_iter().map(|p| tree.nearest_squared(p).sqrt()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconReport {
    /// Mean distance from reference to prediction, cm.
    pub completion: f64,
    /// Mean distance from prediction to (masked) reference, cm.
    pub accuracy: f64,
    pub chamfer_l1: f64,
    /// Percentage of reference points within `tau` of the prediction.
    pub completion_ratio: f64,
    /// Percentage of predicted points within `tau` of the reference.
    pub precision: f64,
    pub f_score: f64,
    /// Threshold, cm.
    pub tau: f64,
    pub pred_points: usize,
    pub gt_points: usize,
}

impl ReconReport {
    pub const CSV_HEADER: &'static str =
        "completion_cm,accuracy_cm,chamfer_l1_cm,completion_ratio_pct,precision_pct,f_score_pct,tau_cm,pred_points,gt_points";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.4},{:.4},{:.4},{:.3},{},{}",
            self.completion,
            self.accuracy,
            self.chamfer_l1,
            self.completion_ratio,
            self.precision,
            self.f_score,
            self.tau,
            self.pred_points,
            self.gt_points
        )
    }
}

impl fmt::Display for ReconReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "completion        {:>10.3} cm", self.completion)?;
        writeln!(f, "accuracy          {:>10.3} cm", self.accuracy)?;
        writeln!(f, "chamfer-L1        {:>10.3} cm", self.chamfer_l1)?;
        writeln!(f, "completion ratio  {:>10.2} %  (tau {} cm)", self.completion_ratio, self.tau)?;
        writeln!(f, "precision         {:>10.2} %", self.precision)?;
        writeln!(f, "F-score           {:>10.2} %", self.f_score)?;
        writeln!(f, "points            {} predicted, {} reference", self.pred_points, self.gt_points)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn percent_within(v: &[f64], tau: f64) -> f64 {
    100.0 * v.iter().filter(|&&d| d <= tau).count() as f64 / v.len() as f64
}

/// Metrics for clouds in meters. Accuracy and precision use `gt_mask` when
/// given, completion always uses the full reference.
pub fn compute_report(pred: &[Vec3], gt: &[Vec3], gt_mask: Option<&[Vec3]>, tau: f64) -> Result<ReconReport> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(MapError::Argument(format!("threshold must be positive, got {tau}")));
    }
    if pred.is_empty() || gt.is_empty() {
        return Err(MapError::Argument("cannot evaluate an empty point cloud".into()));
    }
    let to_gt = nn_distances(pred, gt_mask.unwrap_or(gt))?;
    let to_pred = nn_distances(gt, pred)?;
    let completion = 100.0 * mean(&to_pred);
    let accuracy = 100.0 * mean(&to_gt);
    let recall = percent_within(&to_pred, tau);
    let precision = percent_within(&to_gt, tau);
    let f_score = if recall + precision > 0.0 {
        2.0 * recall * precision / (recall + precision)
    } else {
        0.0
    };
    Ok(ReconReport {
        completion,
        accuracy,
        chamfer_l1: 0.5 * (completion + accuracy),
        completion_ratio: recall,
        precision,
        f_score,
        tau: 100.0 * tau,
        pred_points: pred.len(),
        gt_points: gt.len(),
    })
}
