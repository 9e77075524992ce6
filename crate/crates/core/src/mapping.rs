//! Keyframe pose graph: keyframe creation policy, sim(3) constraint
//! edges, proximity-based candidate search, and Gauss-Newton relaxation
//! with the root vertex held fixed.

use crate::geometry::{sim3_exp, sim3_log, RigidPose, SimTransform, Twist7};
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("duplicate keyframe id {0}")]
    DuplicateVertex(u64),
    #[error("keyframe id {0} not in graph")]
    MissingVertex(u64),
    #[error("self-loop edge on keyframe {0}")]
    SelfLoop(u64),
    #[error("graph is not connected from the root")]
    Disconnected,
    #[error("graph is empty")]
    Empty,
}

/// Keyframe creation policy: score = w_t * ||t|| * mean_inv_depth +
/// w_r * rotation angle; create when the score exceeds the threshold.
#[derive(Debug, Clone, Copy)]
pub struct KeyframePolicy {
    pub w_t: f64,
    pub w_r: f64,
    pub threshold: f64,
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        KeyframePolicy {
            w_t: 1.0,
            w_r: 1.0,
            threshold: 0.04,
        }
    }
}

/// Distance-weighted keyframe decision; strict inequality at the
/// threshold.
pub fn should_create_keyframe(
    rel_pose: &RigidPose,
    mean_inv_depth: f64,
    policy: &KeyframePolicy,
) -> (bool, f64) {
    let score = policy.w_t * rel_pose.translation.norm() * mean_inv_depth
        + policy.w_r * rel_pose.rotation.angle();
    (score > policy.threshold, score)
}

#[derive(Debug, Clone)]
pub struct Vertex {
    pub id: u64,
    /// keyframe-to-world
    pub pose: SimTransform,
    pub timestamp_s: f64,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub a: u64,
    pub b: u64,
    /// measured relative transform: pose_a^-1 compose pose_b
    pub measured: SimTransform,
    pub weight: f64,
}

/// Pose graph over keyframes; the first inserted vertex is the gauge
/// root and stays fixed during relaxation.
#[derive(Debug, Clone, Default)]
pub struct PoseGraph {
    vertices: Vec<Vertex>,
    index: HashMap<u64, usize>,
    edges: Vec<Edge>,
}

/// One exported map line: `timestamp tx ty tz qx qy qz qw s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapRecord {
    pub timestamp_s: f64,
    pub pose: SimTransform,
}

impl PoseGraph {
    pub fn new() -> Self {
        PoseGraph::default()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn pose(&self, id: u64) -> Option<&SimTransform> {
        self.index.get(&id).map(|&i| &self.vertices[i].pose)
    }

    /// Inserts a keyframe. An empty graph takes the keyframe as root at
    /// identity (the parent edge is ignored); otherwise the pose is
    /// parent pose composed with the edge.
    pub fn add_keyframe(
        &mut self,
        id: u64,
        timestamp_s: f64,
        parent: Option<u64>,
        edge_to_parent: &SimTransform,
        weight: f64,
    ) -> Result<(), MappingError> {
        if self.index.contains_key(&id) {
            return Err(MappingError::DuplicateVertex(id));
        }
        let pose = if let Some(parent_id) = parent.filter(|_| !self.vertices.is_empty()) {
            let parent_pose = self
                .pose(parent_id)
                .ok_or(MappingError::MissingVertex(parent_id))?;
            let pose = parent_pose.compose(edge_to_parent);
            self.edges.push(Edge {
                a: parent_id,
                b: id,
                measured: *edge_to_parent,
                weight,
            });
            pose
        } else {
            if !self.vertices.is_empty() {
                return Err(MappingError::MissingVertex(id));
            }
            SimTransform::identity()
        };
        self.index.insert(id, self.vertices.len());
        self.vertices.push(Vertex {
            id,
            pose,
            timestamp_s,
        });
        Ok(())
    }

    /// Appends a loop-closure constraint between existing vertices.
    pub fn add_constraint(
        &mut self,
        id_a: u64,
        id_b: u64,
        measured: SimTransform,
        weight: f64,
    ) -> Result<(), MappingError> {
        if id_a == id_b {
            return Err(MappingError::SelfLoop(id_a));
        }
        for id in [id_a, id_b] {
            if !self.index.contains_key(&id) {
                return Err(MappingError::MissingVertex(id));
            }
        }
        self.edges.push(Edge {
            a: id_a,
            b: id_b,
            measured,
            weight,
        });
        Ok(())
    }

    fn adjacent(&self, id: u64) -> Vec<u64> {
        self.edges
            .iter()
            .filter_map(|e| {
                if e.a == id {
                    Some(e.b)
                } else if e.b == id {
                    Some(e.a)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Median translational edge length; the unit of the candidate-search
    /// radius. Falls back to 1 (post-normalization scene scale) for
    /// graphs without edges.
    pub fn scene_scale(&self) -> f64 {
        let mut lengths: Vec<f64> = self
            .edges
            .iter()
            .map(|e| e.measured.translation.norm())
            .filter(|l| *l > 0.0)
            .collect();
        if lengths.is_empty() {
            return 1.0;
        }
        lengths.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lengths[lengths.len() / 2]
    }

    /// Up to k_max non-adjacent keyframes within `radius x scene scale`
    /// of `id`, nearest first.
    pub fn find_constraint_candidates(&self, id: u64, radius: f64, k_max: usize) -> Vec<u64> {
        let Some(pose) = self.pose(id) else {
            return Vec::new();
        };
        let center = pose.translation;
        let adjacent = self.adjacent(id);
        let limit = radius * self.scene_scale();
        let mut candidates: Vec<(f64, u64)> = self
            .vertices
            .iter()
            .filter(|v| v.id != id && !adjacent.contains(&v.id))
            .map(|v| ((v.pose.translation - center).norm(), v.id))
            .filter(|(d, _)| *d < limit)
            .collect();
        candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        candidates.truncate(k_max);
        candidates.into_iter().map(|(_, id)| id).collect()
    }

    fn edge_residual(&self, edge: &Edge) -> Twist7 {
        let pose_a = self.pose(edge.a).expect("edge endpoint exists");
        let pose_b = self.pose(edge.b).expect("edge endpoint exists");
        let err = edge
            .measured
            .inverse()
            .compose(&pose_a.inverse())
            .compose(pose_b);
        sim3_log(&err).unwrap_or_else(|_| Twist7::from_element(f64::INFINITY))
    }

    /// Total weighted squared residual over all edges.
    pub fn total_residual(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| e.weight * self.edge_residual(e).norm_squared())
            .sum()
    }

    fn check_connected(&self) -> Result<(), MappingError> {
        if self.vertices.is_empty() {
            return Err(MappingError::Empty);
        }
        let mut seen = vec![false; self.vertices.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            let id = self.vertices[v].id;
            for n in self.adjacent(id) {
                let ni = self.index[&n];
                if !seen[ni] {
                    seen[ni] = true;
                    stack.push(ni);
                }
            }
        }
        if seen.iter().all(|&s| s) {
            Ok(())
        } else {
            Err(MappingError::Disconnected)
        }
    }

    /// Gauss-Newton relaxation over all non-root vertex poses with
    /// numeric edge Jacobians; the residual history (including the
    /// initial value) is non-increasing over accepted steps, with step
    /// halving on increase.
    pub fn relax(&mut self, iterations: usize) -> Result<Vec<f64>, MappingError> {
        self.check_connected()?;
        let n_free = self.vertices.len() - 1; // root fixed
        let mut history = vec![self.total_residual()];
        if n_free == 0 || self.edges.is_empty() {
            return Ok(history);
        }
        let h = 1e-6;
        for _ in 0..iterations {
            let dim = 7 * n_free;
            let mut hess = DMatrix::<f64>::zeros(dim, dim);
            let mut grad = DVector::<f64>::zeros(dim);
            for e_idx in 0..self.edges.len() {
                let edge = self.edges[e_idx].clone();
                let r0 = self.edge_residual(&edge);
                // numeric Jacobian wrt left increments on each endpoint
                let mut blocks: Vec<(usize, [Twist7; 7])> = Vec::new();
                for id in [edge.a, edge.b] {
                    let vi = self.index[&id];
                    if vi == 0 {
                        continue; // gauge
                    }
                    let original = self.vertices[vi].pose;
                    let mut cols = [Twist7::zeros(); 7];
                    for k in 0..7 {
                        let mut delta = Twist7::zeros();
                        delta[k] = h;
                        self.vertices[vi].pose = sim3_exp(&delta).compose(&original);
                        let rp = self.edge_residual(&edge);
                        delta[k] = -h;
                        self.vertices[vi].pose = sim3_exp(&delta).compose(&original);
                        let rm = self.edge_residual(&edge);
                        cols[k] = (rp - rm) / (2.0 * h);
                    }
                    self.vertices[vi].pose = original;
                    blocks.push((vi, cols));
                }
                let w = edge.weight;
                for &(vi, ref cols_i) in &blocks {
                    let oi = 7 * (vi - 1);
                    for k in 0..7 {
                        grad[oi + k] += w * cols_i[k].dot(&r0);
                        for &(vj, ref cols_j) in &blocks {
                            let oj = 7 * (vj - 1);
                            for l in 0..7 {
                                hess[(oi + k, oj + l)] += w * cols_i[k].dot(&cols_j[l]);
                            }
                        }
                    }
                }
            }
            // mild damping keeps the system solvable under gauge-adjacent
            // flat directions
            for k in 0..dim {
                hess[(k, k)] += 1e-9;
            }
            let Some(step) = hess.lu().solve(&(-grad)) else {
                break;
            };
            let saved: Vec<SimTransform> = self.vertices.iter().map(|v| v.pose).collect();
            let current = *history.last().unwrap();
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..=10 {
                for vi in 1..self.vertices.len() {
                    let mut delta = Twist7::zeros();
                    for k in 0..7 {
                        delta[k] = scale * step[7 * (vi - 1) + k];
                    }
                    self.vertices[vi].pose = sim3_exp(&delta).compose(&saved[vi]);
                }
                let residual = self.total_residual();
                if residual < current {
                    history.push(residual);
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                for (vi, pose) in saved.into_iter().enumerate() {
                    self.vertices[vi].pose = pose;
                }
                break;
            }
            let (prev, last) = (history[history.len() - 2], *history.last().unwrap());
            if prev - last < 1e-14 * prev.max(1.0) {
                break;
            }
        }
        Ok(history)
    }

    /// Per-keyframe pose records in insertion order.
    pub fn export_map(&self) -> Vec<MapRecord> {
        self.vertices
            .iter()
            .map(|v| MapRecord {
                timestamp_s: v.timestamp_s,
                pose: v.pose,
            })
            .collect()
    }
}

/// Serializes map records as `timestamp tx ty tz qx qy qz qw s` lines.
pub fn format_map(records: &[MapRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let [qx, qy, qz, qw] = r.pose.rotation.quaternion();
        out.push_str(&format!(
            "{:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}\n",
            r.timestamp_s,
            r.pose.translation.x,
            r.pose.translation.y,
            r.pose.translation.z,
            qx,
            qy,
            qz,
            qw,
            r.pose.scale
        ));
    }
    out
}

/// Parses the output of [`format_map`].
pub fn parse_map(text: &str) -> Result<Vec<MapRecord>, String> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse().map_err(|e| format!("line {}: {e}", i + 1)))
            .collect::<Result<_, _>>()?;
        if f.len() != 9 {
            return Err(format!("line {}: expected 9 fields, got {}", i + 1, f.len()));
        }
        let rotation = crate::geometry::RotationMatrix::from_quaternion(f[4], f[5], f[6], f[7]);
        let pose = SimTransform::new(rotation, nalgebra::Vector3::new(f[1], f[2], f[3]), f[8])
            .map_err(|e| format!("line {}: {e}", i + 1))?;
        records.push(MapRecord {
            timestamp_s: f[0],
            pose,
        });
    }
    Ok(records)
}
