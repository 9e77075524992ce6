//! Rigid registration suite: closed-form point-based alignment, iterative
//! surface alignment (ICP), and intensity-based similarity metrics with a
//! multi-resolution rigid optimizer.

mod histogram;
mod icp;
mod metrics;
mod multires;
mod procrustes;

pub use histogram::{
    joint_entropy, joint_histogram, marginal_entropies, mutual_information,
    normalized_mutual_information, JointHistogram,
};
pub use icp::{icp_align, Surface};
pub use metrics::{ncc, sad, ssd};
pub use multires::{
    metric_landscape, register_rigid_multires, InPlaneTransform, Metric, SearchBounds,
};
pub use procrustes::procrustes_align;

use crate::geometry::SimTransform;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("point sets have different or insufficient sizes ({0} vs {1}, need >= 3)")]
    BadPointSets(usize, usize),
    #[error("degenerate point configuration (collinear or coincident points)")]
    Degenerate,
    #[error("surface is empty")]
    EmptySurface,
    #[error("image dimensions mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("image has zero intensity variance; correlation undefined")]
    ZeroVariance,
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("joint entropy is zero; normalized mutual information undefined")]
    DegenerateEntropy,
    #[error("bin count {0} too small (need >= 2)")]
    BadBinCount(usize),
    #[error("search bounds are empty")]
    EmptySearchBounds,
    #[error("images too small for multi-resolution search (need >= 32x32)")]
    ImageTooSmall,
    #[error("no overlapping samples between the images")]
    NoOverlap,
}

/// Outcome of a registration run.
#[derive(Debug, Clone)]
pub struct RegistrationResult {
    /// Recovered transform; scale is fixed to 1 for rigid-only modes.
    pub transform: SimTransform,
    /// Final metric value (objective for iterative methods).
    pub metric_value: f64,
    pub iterations: usize,
    pub converged: bool,
}
