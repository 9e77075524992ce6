//! Coarse-to-fine rigid (in-plane translation + rotation) registration
//! driven by any of the intensity metrics.

use super::histogram::{
    joint_entropy, mutual_information, normalized_mutual_information, JointHistogram,
};
use super::metrics::ncc_samples;
use super::{RegistrationError, RegistrationResult};
use crate::camera::Image;
use crate::geometry::{RotationMatrix, SimTransform};
use nalgebra::Vector3;

/// Similarity metric selector. SSD, SAD, and joint entropy are minimized;
/// NCC, MI, and NMI are maximized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Ssd,
    Sad,
    Ncc,
    JointEntropy,
    MutualInformation,
    NormalizedMutualInformation,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ssd" => Ok(Metric::Ssd),
            "sad" => Ok(Metric::Sad),
            "ncc" | "cc" => Ok(Metric::Ncc),
            "je" | "joint-entropy" => Ok(Metric::JointEntropy),
            "mi" => Ok(Metric::MutualInformation),
            "nmi" => Ok(Metric::NormalizedMutualInformation),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

/// In-plane rigid motion: translation in pixels plus rotation about the
/// image center, mapping moving-image coordinates into fixed-image
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InPlaneTransform {
    pub tx: f64,
    pub ty: f64,
    /// radians, counter-clockwise
    pub theta: f64,
}

impl InPlaneTransform {
    pub fn identity() -> Self {
        InPlaneTransform {
            tx: 0.0,
            ty: 0.0,
            theta: 0.0,
        }
    }

    /// Embeds into Sim(3) as a rotation about z with unit scale.
    pub fn to_sim3(&self) -> SimTransform {
        SimTransform {
            rotation: RotationMatrix::exp(Vector3::new(0.0, 0.0, self.theta)),
            translation: Vector3::new(self.tx, self.ty, 0.0),
            scale: 1.0,
        }
    }
}

/// Search region for the coarse grid, in full-resolution pixels / degrees.
#[derive(Debug, Clone, Copy)]
pub struct SearchBounds {
    pub tx: (f64, f64),
    pub ty: (f64, f64),
    pub theta_deg: (f64, f64),
}

impl SearchBounds {
    pub fn is_empty(&self) -> bool {
        self.tx.0 > self.tx.1 || self.ty.0 > self.ty.1 || self.theta_deg.0 > self.theta_deg.1
    }
}

const HISTOGRAM_BINS: usize = 32;

/// Paired samples of fixed pixels and warped moving intensities; samples
/// falling outside the moving image are excluded.
fn paired_samples(moving: &Image, fixed: &Image, t: &InPlaneTransform) -> (Vec<f64>, Vec<f64>) {
    let cx = fixed.width() as f64 * 0.5;
    let cy = fixed.height() as f64 * 0.5;
    let (sin, cos) = (-t.theta).sin_cos();
    let mut fa = Vec::new();
    let mut fb = Vec::new();
    for y in 0..fixed.height() {
        for x in 0..fixed.width() {
            // inverse warp: fixed pixel back into the moving image
            let dx = x as f64 - cx - t.tx;
            let dy = y as f64 - cy - t.ty;
            let mx = cos * dx - sin * dy + cx;
            let my = sin * dx + cos * dy + cy;
            if let Some(m) = moving.sample_bilinear(mx, my) {
                fa.push(fixed.get(x, y) as f64);
                fb.push(m);
            }
        }
    }
    (fa, fb)
}

/// Metric value at `t`, as a score where larger is always better.
fn score(
    moving: &Image,
    fixed: &Image,
    t: &InPlaneTransform,
    metric: Metric,
) -> Result<f64, RegistrationError> {
    let (fa, fb) = paired_samples(moving, fixed, t);
    if fa.len() < 16 {
        return Err(RegistrationError::NoOverlap);
    }
    let n = fa.len() as f64;
    match metric {
        Metric::Ssd => {
            let s: f64 = fa.iter().zip(&fb).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok(-s / n)
        }
        Metric::Sad => {
            let s: f64 = fa.iter().zip(&fb).map(|(a, b)| (a - b).abs()).sum();
            Ok(-s / n)
        }
        Metric::Ncc => ncc_samples(fa.iter().copied(), fb.iter().copied()),
        Metric::JointEntropy | Metric::MutualInformation | Metric::NormalizedMutualInformation => {
            let mut h = JointHistogram::new(HISTOGRAM_BINS)?;
            for (a, b) in fa.iter().zip(&fb) {
                h.add(
                    a.round().clamp(0.0, 255.0) as u8,
                    b.round().clamp(0.0, 255.0) as u8,
                );
            }
            match metric {
                Metric::JointEntropy => Ok(-joint_entropy(&h)?),
                Metric::MutualInformation => mutual_information(&h),
                _ => normalized_mutual_information(&h),
            }
        }
    }
}

fn halve(img: &Image) -> Image {
    let w = (img.width() + 1) / 2;
    let h = (img.height() + 1) / 2;
    Image::from_fn(w, h, |x, y| {
        let x0 = (2 * x).min(img.width() - 1);
        let x1 = (2 * x + 1).min(img.width() - 1);
        let y0 = (2 * y).min(img.height() - 1);
        let y1 = (2 * y + 1).min(img.height() - 1);
        let sum = img.get(x0, y0) as u32
            + img.get(x1, y0) as u32
            + img.get(x0, y1) as u32
            + img.get(x1, y1) as u32;
        ((sum + 2) / 4) as u8
    })
}

fn pyramid(img: &Image, levels: usize) -> Vec<Image> {
    let mut out = vec![img.to_gray()];
    for _ in 1..levels {
        out.push(halve(out.last().unwrap()));
    }
    out
}

/// Exhaustive coarse-grid scores at the coarsest pyramid level, for
/// landscape inspection. Rows are (tx, ty, theta_deg, score) at full
/// resolution units.
pub fn metric_landscape(
    moving: &Image,
    fixed: &Image,
    metric: Metric,
    levels: usize,
    bounds: &SearchBounds,
) -> Result<Vec<(f64, f64, f64, f64)>, RegistrationError> {
    if bounds.is_empty() {
        return Err(RegistrationError::EmptySearchBounds);
    }
    let scale = (1usize << (levels - 1)) as f64;
    let mov = pyramid(moving, levels).pop().unwrap();
    let fix = pyramid(fixed, levels).pop().unwrap();
    let mut rows = Vec::new();
    let mut ty = (bounds.ty.0 / scale).floor();
    while ty <= (bounds.ty.1 / scale).ceil() {
        let mut tx = (bounds.tx.0 / scale).floor();
        while tx <= (bounds.tx.1 / scale).ceil() {
            let mut th = bounds.theta_deg.0.floor();
            while th <= bounds.theta_deg.1.ceil() {
                let t = InPlaneTransform {
                    tx,
                    ty,
                    theta: th.to_radians(),
                };
                if let Ok(s) = score(&mov, &fix, &t, metric) {
                    rows.push((tx * scale, ty * scale, th, s));
                }
                th += 1.0;
            }
            tx += 1.0;
        }
        ty += 1.0;
    }
    Ok(rows)
}

/// Coarse-to-fine search: exhaustive grid (1 px / 1 degree steps) at the
/// coarsest level, then local pattern-search refinement with halving steps
/// at every finer level.
pub fn register_rigid_multires(
    moving: &Image,
    fixed: &Image,
    metric: Metric,
    levels: usize,
    bounds: &SearchBounds,
) -> Result<RegistrationResult, RegistrationError> {
    if moving.width() < 32 || moving.height() < 32 || fixed.width() < 32 || fixed.height() < 32 {
        return Err(RegistrationError::ImageTooSmall);
    }
    if bounds.is_empty() {
        return Err(RegistrationError::EmptySearchBounds);
    }
    let levels = levels.max(1);
    let mov_pyr = pyramid(moving, levels);
    let fix_pyr = pyramid(fixed, levels);

    let mut evals = 0usize;
    let scale = (1usize << (levels - 1)) as f64;
    let mov = &mov_pyr[levels - 1];
    let fix = &fix_pyr[levels - 1];
    let mut best = (f64::NEG_INFINITY, InPlaneTransform::identity());
    let mut ty = (bounds.ty.0 / scale).floor();
    while ty <= (bounds.ty.1 / scale).ceil() {
        let mut tx = (bounds.tx.0 / scale).floor();
        while tx <= (bounds.tx.1 / scale).ceil() {
            let mut th = bounds.theta_deg.0.floor();
            while th <= bounds.theta_deg.1.ceil() {
                let t = InPlaneTransform {
                    tx,
                    ty,
                    theta: th.to_radians(),
                };
                evals += 1;
                if let Ok(s) = score(mov, fix, &t, metric) {
                    if s > best.0 {
                        best = (s, t);
                    }
                }
                th += 1.0;
            }
            tx += 1.0;
        }
        ty += 1.0;
    }
    if best.0 == f64::NEG_INFINITY {
        return Err(RegistrationError::NoOverlap);
    }

    let mut current = best.1;
    for level in (0..levels).rev() {
        if level != levels - 1 {
            current.tx *= 2.0;
            current.ty *= 2.0;
        }
        let mov = &mov_pyr[level];
        let fix = &fix_pyr[level];
        let mut cur_score = score(mov, fix, &current, metric)?;
        let mut step = 1.0f64;
        let min_step = if level == 0 { 0.05 } else { 0.25 };
        let min_angle_step = if level == 0 { 0.05f64 } else { 0.25 };
        while step >= min_step {
            let astep = (step.to_radians()).max(min_angle_step.to_radians());
            let candidates = [
                InPlaneTransform { tx: current.tx + step, ..current },
                InPlaneTransform { tx: current.tx - step, ..current },
                InPlaneTransform { ty: current.ty + step, ..current },
                InPlaneTransform { ty: current.ty - step, ..current },
                InPlaneTransform { theta: current.theta + astep, ..current },
                InPlaneTransform { theta: current.theta - astep, ..current },
            ];
            let mut improved = false;
            for c in candidates {
                evals += 1;
                if let Ok(s) = score(mov, fix, &c, metric) {
                    if s > cur_score {
                        cur_score = s;
                        current = c;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
    }

    // never report a result worse than the identity transform
    let final_score = score(&mov_pyr[0], &fix_pyr[0], &current, metric)?;
    if let Ok(id_score) = score(&mov_pyr[0], &fix_pyr[0], &InPlaneTransform::identity(), metric) {
        if id_score > final_score {
            current = InPlaneTransform::identity();
        }
    }
    let metric_value = score(&mov_pyr[0], &fix_pyr[0], &current, metric)?;
    Ok(RegistrationResult {
        transform: current.to_sim3(),
        metric_value,
        iterations: evals,
        converged: true,
    })
}
