//! Trajectory records: text serialization and absolute trajectory error.

use crate::geometry::RotationMatrix;
use crate::registration::{procrustes_align, RegistrationError};
use nalgebra::Vector3;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("parse error at line {0}: {1}")]
    Parse(usize, String),
    #[error("need at least {0} matched records, got {1}")]
    InsufficientData(usize, usize),
    #[error("tracking lost and relocalization failed after {0} frames")]
    TrackingLost(usize),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One pose sample: `timestamp tx ty tz qx qy qz qw` on disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub timestamp_s: f64,
    pub translation: Vector3<f64>,
    /// unit quaternion (x, y, z, w)
    pub quaternion: [f64; 4],
}

impl TrajectoryRecord {
    pub fn identity(timestamp_s: f64) -> Self {
        TrajectoryRecord {
            timestamp_s,
            translation: Vector3::zeros(),
            quaternion: [0.0, 0.0, 0.0, 1.0],
        }
    }

    pub fn rotation(&self) -> RotationMatrix {
        let [x, y, z, w] = self.quaternion;
        RotationMatrix::from_quaternion(x, y, z, w)
    }
}

/// Writes one `timestamp tx ty tz qx qy qz qw` line per record, 9
/// significant digits.
pub fn write_trajectory(records: &[TrajectoryRecord], path: &Path) -> Result<(), PipelineError> {
    let mut out = String::new();
    for r in records {
        let [qx, qy, qz, qw] = r.quaternion;
        out.push_str(&format!(
            "{:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}\n",
            r.timestamp_s, r.translation.x, r.translation.y, r.translation.z, qx, qy, qz, qw
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRecord>, PipelineError> {
    parse_trajectory(&std::fs::read_to_string(path)?)
}

pub fn parse_trajectory(text: &str) -> Result<Vec<TrajectoryRecord>, PipelineError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|f| {
                f.parse()
                    .map_err(|e| PipelineError::Parse(i + 1, format!("bad number `{f}`: {e}")))
            })
            .collect::<Result<_, _>>()?;
        if fields.len() != 8 {
            return Err(PipelineError::Parse(
                i + 1,
                format!("expected 8 fields, got {}", fields.len()),
            ));
        }
        records.push(TrajectoryRecord {
            timestamp_s: fields[0],
            translation: Vector3::new(fields[1], fields[2], fields[3]),
            quaternion: [fields[4], fields[5], fields[6], fields[7]],
        });
    }
    Ok(records)
}

/// Absolute trajectory error: rigidly aligns the estimated translations to
/// ground truth (matching records by order over shared timestamps), then
/// returns the RMSE and per-frame residual norms.
pub fn evaluate_ate(
    estimated: &[TrajectoryRecord],
    ground_truth: &[TrajectoryRecord],
) -> Result<(f64, Vec<f64>), PipelineError> {
    let mut est = Vec::new();
    let mut gt = Vec::new();
    for e in estimated {
        if let Some(g) = ground_truth
            .iter()
            .find(|g| (g.timestamp_s - e.timestamp_s).abs() < 1e-6)
        {
            est.push(e.translation);
            gt.push(g.translation);
        }
    }
    if est.len() < 3 {
        return Err(PipelineError::InsufficientData(3, est.len()));
    }
    let res = procrustes_align(&est, &gt, false)?;
    let errors: Vec<f64> = est
        .iter()
        .zip(&gt)
        .map(|(e, g)| (res.transform.apply(*e) - g).norm())
        .collect();
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
    Ok((rmse, errors))
}
