//! Iterative closest point alignment of a point set to a surface.

use super::{procrustes_align, RegistrationError, RegistrationResult};
use crate::geometry::{se3_log, RigidPose};
use nalgebra::Vector3;

/// A surface represented as a point cloud with optional triangle
/// connectivity. Nearest-point queries run over a k-d tree on the points
/// and are exact for point clouds.
#[derive(Debug, Clone)]
pub struct Surface {
    points: Vec<Vector3<f64>>,
    triangles: Vec<[usize; 3]>,
    tree: KdTree,
}

impl Surface {
    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        let tree = KdTree::build(&points);
        Surface {
            points,
            triangles: Vec::new(),
            tree,
        }
    }

    pub fn with_triangles(points: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Self {
        let tree = KdTree::build(&points);
        Surface {
            points,
            triangles,
            tree,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Closest surface point to `query`.
    pub fn nearest(&self, query: Vector3<f64>) -> Vector3<f64> {
        let idx = self.tree.nearest(&self.points, query);
        self.points[idx]
    }
}

/// Axis-cycling k-d tree over point indices.
#[derive(Debug, Clone)]
struct KdTree {
    // nodes laid out as a balanced implicit structure over sorted index spans
    indices: Vec<usize>,
}

impl KdTree {
    fn build(points: &[Vector3<f64>]) -> KdTree {
        let mut indices: Vec<usize> = (0..points.len()).collect();
        if !points.is_empty() {
            Self::build_rec(points, &mut indices, 0);
        }
        KdTree { indices }
    }

    fn build_rec(points: &[Vector3<f64>], span: &mut [usize], axis: usize) {
        if span.len() <= 1 {
            return;
        }
        let mid = span.len() / 2;
        span.select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis].partial_cmp(&points[b][axis]).unwrap()
        });
        let (lo, hi) = span.split_at_mut(mid);
        Self::build_rec(points, lo, (axis + 1) % 3);
        Self::build_rec(points, &mut hi[1..], (axis + 1) % 3);
    }

    fn nearest(&self, points: &[Vector3<f64>], query: Vector3<f64>) -> usize {
        let mut best = (f64::INFINITY, 0usize);
        self.nearest_rec(points, &self.indices, 0, query, &mut best);
        best.1
    }

    fn nearest_rec(
        &self,
        points: &[Vector3<f64>],
        span: &[usize],
        axis: usize,
        query: Vector3<f64>,
        best: &mut (f64, usize),
    ) {
        if span.is_empty() {
            return;
        }
        let mid = span.len() / 2;
        let idx = span[mid];
        let d2 = (points[idx] - query).norm_squared();
        if d2 < best.0 {
            *best = (d2, idx);
        }
        let delta = query[axis] - points[idx][axis];
        let (near, far) = if delta < 0.0 {
            (&span[..mid], &span[mid + 1..])
        } else {
            (&span[mid + 1..], &span[..mid])
        };
        let next = (axis + 1) % 3;
        self.nearest_rec(points, near, next, query, best);
        if delta * delta < best.0 {
            self.nearest_rec(points, far, next, query, best);
        }
    }
}

/// ICP: alternate nearest-point correspondence and closed-form rigid
/// update until the pose-update twist norm drops below `tol` or
/// `max_iters` is reached. The objective (mean squared point-to-surface
/// distance) is non-increasing across iterations.
pub fn icp_align(
    points: &[Vector3<f64>],
    surface: &Surface,
    init: &RigidPose,
    max_iters: usize,
    tol: f64,
) -> Result<RegistrationResult, RegistrationError> {
    if surface.is_empty() {
        return Err(RegistrationError::EmptySurface);
    }
    if points.len() < 3 {
        return Err(RegistrationError::BadPointSets(points.len(), surface.points.len()));
    }
    let mut pose = *init;
    let mut objective = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let correspondences: Vec<Vector3<f64>> = points
            .iter()
            .map(|p| surface.nearest(pose.apply(*p)))
            .collect();
        let res = procrustes_align(points, &correspondences, false)?;
        let new_pose = res.transform.to_rigid();
        objective = points
            .iter()
            .zip(&correspondences)
            .map(|(p, q)| (new_pose.apply(*p) - q).norm_squared())
            .sum::<f64>()
            / points.len() as f64;
        let step = pose.inverse().compose(&new_pose);
        let step_norm = se3_log(&step).map(|xi| xi.norm()).unwrap_or(f64::INFINITY);
        pose = new_pose;
        if step_norm < tol {
            converged = true;
            break;
        }
    }
    Ok(RegistrationResult {
        transform: pose.to_sim3(),
        metric_value: objective,
        iterations,
        converged,
    })
}
