//! Per-pixel Gaussian inverse-depth estimation: epipolar small-baseline
//! stereo observations, Bayesian fusion, propagation to new keyframes, and
//! scale normalization.

use crate::camera::{project, unproject};
use crate::geometry::{RigidPose, SimTransform};
use crate::odometry::{ImagePyramid, Keyframe, OdometryError};
use nalgebra::Vector2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DepthError {
    #[error("no observation: {0}")]
    NoObservation(&'static str),
    #[error("ambiguous epipolar match (second best within {0:.3}x of best)")]
    RejectedAmbiguous(f64),
    #[error("pixel ({0}, {1}) has no active hypothesis")]
    InactivePixel(usize, usize),
    #[error("cannot normalize: no valid hypotheses")]
    CannotNormalize,
    #[error(transparent)]
    Odometry(#[from] OdometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One pixel's Gaussian inverse-depth estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthHypothesis {
    pub mean: f64,
    pub variance: f64,
    pub obs_count: u32,
    pub valid: bool,
}

/// Result of one epipolar stereo comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoObservation {
    pub inverse_depth: f64,
    pub variance: f64,
    /// best patch SSD along the search
    pub score: f64,
}

/// Filter parameters; defaults match the library-wide configuration.
#[derive(Debug, Clone, Copy)]
pub struct DepthParams {
    pub sigma2_init: f64,
    pub sigma2_max: f64,
    /// variance inflation factor on propagation
    pub rho_prop: f64,
    /// ambiguity rejection: second-best SSD within this factor of the best
    pub ambiguity_ratio: f64,
    /// consecutive search failures before a hypothesis is invalidated
    pub max_fail_count: u32,
}

impl Default for DepthParams {
    fn default() -> Self {
        DepthParams {
            sigma2_init: 1.0,
            sigma2_max: 4.0,
            rho_prop: 1.2,
            ambiguity_ratio: 1.05,
            max_fail_count: 5,
        }
    }
}

/// Seeds every active pixel with mean drawn uniformly from [0.5, 1.5] and
/// variance sigma2_init; deterministic given the seed.
pub fn init_hypotheses(kf: &mut Keyframe, seed: u64, params: &DepthParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..kf.idepth.len() {
        if kf.mask.active[i] && !kf.valid[i] {
            kf.idepth[i] = rng.gen_range(0.5..1.5);
            kf.variance[i] = params.sigma2_init;
            kf.valid[i] = true;
            kf.obs_count[i] = 0;
            kf.fail_count[i] = 0;
        } else if !kf.mask.active[i] {
            // keep the invariant: hypotheses only at active pixels
            kf.valid[i] = false;
        }
    }
}

const PATCH: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];

fn patch_ssd(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    let mut s = 0.0;
    for k in 0..5 {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

/// Searches the epipolar line of `pixel` in `frame` within the
/// hypothesis' +/- 2 sigma inverse-depth interval; matches a 5-point 1-D
/// intensity patch by SSD, refines with a parabola fit, and returns the
/// triangulated inverse depth with a geometric-plus-photometric variance.
pub fn epipolar_search(
    kf: &Keyframe,
    frame: &ImagePyramid,
    pose: &RigidPose,
    pixel: (usize, usize),
    params: &DepthParams,
) -> Result<StereoObservation, DepthError> {
    let (px, py) = pixel;
    let i = py * kf.mask.width + px;
    if !kf.mask.active[i] || !kf.valid[i] {
        return Err(DepthError::InactivePixel(px, py));
    }
    if pose.translation.norm() < 1e-9 {
        return Err(DepthError::NoObservation("zero baseline"));
    }
    let d0 = kf.idepth[i];
    let sigma = kf.variance[i].sqrt();
    let d_lo = (d0 - 2.0 * sigma).max(0.05);
    let d_hi = (d0 + 2.0 * sigma).max(d_lo + 1e-6);
    let intr = &kf.camera;
    let kf_level = &kf.pyramid.levels[0];
    let frame_level = &frame.levels[0];
    let p = Vector2::new(px as f64, py as f64);

    // keyframe epipolar direction at p: image direction of the ray from
    // the frame camera center through the hypothesis point (valid even
    // when the epipole is at infinity, as for pure lateral motion)
    let frame_center_in_kf = pose.inverse().translation;
    let dir_kf = {
        let x0 = unproject(p, d0.max(0.05), intr)
            .map_err(|_| DepthError::NoObservation("hypothesis behind camera"))?;
        let v = x0 - frame_center_in_kf;
        let iz = 1.0 / x0.z;
        let d = Vector2::new(
            intr.fx * (v.x * iz - x0.x * v.z * iz * iz),
            intr.fy * (v.y * iz - x0.y * v.z * iz * iz),
        );
        if d.norm() < 1e-9 {
            return Err(DepthError::NoObservation("pixel at epipole"));
        }
        d / d.norm()
    };
    let mut kf_patch = [0.0f64; 5];
    for (k, &o) in PATCH.iter().enumerate() {
        let q = p + dir_kf * o;
        match kf_level.sample_with_gradient(q.x, q.y) {
            Some((v, _, _)) => kf_patch[k] = v,
            None => return Err(DepthError::NoObservation("patch outside keyframe")),
        }
    }

    // candidate positions, uniform in inverse depth
    let warp = |d: f64| -> Option<Vector2<f64>> {
        let x = unproject(p, d, intr).ok()?;
        project(pose.apply(x), intr).ok()
    };
    let (u_lo, u_hi) = match (warp(d_lo), warp(d_hi)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(DepthError::NoObservation("search interval behind camera")),
    };
    let len_px = (u_hi - u_lo).norm();
    let n = ((len_px / 0.7).ceil() as usize).clamp(5, 100);
    let dd = (d_hi - d_lo) / (n - 1) as f64;
    let mut scores = vec![f64::INFINITY; n];
    let mut positions = vec![None; n];
    let mut any_valid = false;
    for c in 0..n {
        let d = d_lo + dd * c as f64;
        let Some(u) = warp(d) else { continue };
        // local epipolar tangent in the frame
        let t = match (warp(d + 0.5 * dd), warp(d - 0.5 * dd)) {
            (Some(a), Some(b)) if (a - b).norm() > 1e-9 => (a - b) / (a - b).norm(),
            _ => {
                let v = u_hi - u_lo;
                if v.norm() < 1e-9 {
                    continue;
                }
                v / v.norm()
            }
        };
        let mut patch = [0.0f64; 5];
        let mut ok = true;
        for (k, &o) in PATCH.iter().enumerate() {
            let q = u + t * o;
            match frame_level.sample_with_gradient(q.x, q.y) {
                Some((v, _, _)) => patch[k] = v,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            scores[c] = patch_ssd(&kf_patch, &patch);
            positions[c] = Some(u);
            any_valid = true;
        }
    }
    if !any_valid {
        return Err(DepthError::NoObservation("epipolar line outside frame"));
    }
    let best = (0..n)
        .filter(|&c| scores[c].is_finite())
        .min_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap())
        .unwrap();
    let best_score = scores[best];
    // ambiguity: a distant near-tie means a flat or repetitive SSD profile
    let second = (0..n)
        .filter(|&c| scores[c].is_finite() && (c as i64 - best as i64).abs() >= 3)
        .map(|c| scores[c])
        .fold(f64::INFINITY, f64::min);
    if second.is_finite() && second < params.ambiguity_ratio * best_score + 1e-9 {
        return Err(DepthError::RejectedAmbiguous(
            if best_score > 0.0 { second / best_score } else { 1.0 },
        ));
    }

    // parabola fit over the best triplet for sub-step refinement
    let mut d_star = d_lo + dd * best as f64;
    let mut curvature = 0.0;
    if best > 0 && best + 1 < n && scores[best - 1].is_finite() && scores[best + 1].is_finite() {
        let (s0, s1, s2) = (scores[best - 1], scores[best], scores[best + 1]);
        curvature = s0 - 2.0 * s1 + s2;
        if curvature > 1e-12 {
            let offset = 0.5 * (s0 - s2) / curvature;
            d_star += offset.clamp(-0.5, 0.5) * dd;
        }
    }

    // observation variance: geometric term from the keyframe gradient's
    // alignment with the epipolar direction, photometric term from the
    // SSD curvature; both mapped from pixels to inverse-depth units via
    // the local pixel-per-inverse-depth rate
    let jac_px = len_px / (d_hi - d_lo); // px per unit inverse depth
    let (_, gx, gy) = kf_level
        .sample_with_gradient(p.x, p.y)
        .unwrap_or((0.0, 0.0, 0.0));
    let g_along = (gx * dir_kf.x + gy * dir_kf.y).abs().max(1e-3);
    let sigma_i = 1.0; // intensity noise, one grey level
    let var_px_geo = (sigma_i / g_along).powi(2);
    let var_px_photo = if curvature > 1e-12 {
        2.0 * sigma_i * sigma_i / (curvature / (dd * jac_px).powi(2))
    } else {
        params.sigma2_max * jac_px.powi(2).max(1e-12)
    };
    let var = ((var_px_geo + var_px_photo) / jac_px.powi(2))
        .clamp(1e-4, params.sigma2_max);
    Ok(StereoObservation {
        inverse_depth: d_star,
        variance: var,
        score: best_score,
    })
}

/// Gaussian product fusion; observation count increments by one.
pub fn fuse(prior: &DepthHypothesis, obs: &StereoObservation) -> DepthHypothesis {
    let (vp, vo) = (prior.variance, obs.variance);
    DepthHypothesis {
        mean: (prior.mean * vo + obs.inverse_depth * vp) / (vp + vo),
        variance: vp * vo / (vp + vo),
        obs_count: prior.obs_count + 1,
        valid: prior.valid,
    }
}

/// Per-pixel outcome counts of one keyframe depth update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DepthUpdateStats {
    pub updated: usize,
    pub no_observation: usize,
    pub rejected: usize,
    pub invalidated: usize,
}

/// Runs epipolar_search + fuse over every valid hypothesis. Hypotheses
/// exceeding sigma2_max or failing `max_fail_count` consecutive searches
/// are invalidated.
pub fn update_keyframe_depth(
    kf: &mut Keyframe,
    frame: &ImagePyramid,
    pose: &RigidPose,
    params: &DepthParams,
) -> DepthUpdateStats {
    let mut stats = DepthUpdateStats::default();
    if pose.translation.norm() < 1e-9 {
        // A zero baseline observes nothing: skip the frame rather than
        // punishing every hypothesis for it.
        return stats;
    }
    let (w, h) = (kf.mask.width, kf.mask.height);
    for py in 0..h {
        for px in 0..w {
            let i = py * w + px;
            if !kf.valid[i] || !kf.mask.active[i] {
                continue;
            }
            match epipolar_search(kf, frame, pose, (px, py), params) {
                Ok(obs) => {
                    let prior = DepthHypothesis {
                        mean: kf.idepth[i],
                        variance: kf.variance[i],
                        obs_count: kf.obs_count[i],
                        valid: true,
                    };
                    let post = fuse(&prior, &obs);
                    kf.idepth[i] = post.mean;
                    kf.variance[i] = post.variance;
                    kf.obs_count[i] = post.obs_count;
                    kf.fail_count[i] = 0;
                    stats.updated += 1;
                }
                Err(DepthError::RejectedAmbiguous(_)) => {
                    kf.fail_count[i] += 1;
                    stats.rejected += 1;
                }
                Err(_) => {
                    kf.fail_count[i] += 1;
                    stats.no_observation += 1;
                }
            }
            if kf.variance[i] > params.sigma2_max || kf.fail_count[i] >= params.max_fail_count
            {
                kf.valid[i] = false;
                stats.invalidated += 1;
            }
        }
    }
    stats
}

/// Projects every valid hypothesis of `old` into a keyframe built from
/// `image` under `pose_old_to_new`; inverse depth is recomputed from the
/// transformed point, variances inflate by rho_prop, collisions keep the
/// smaller variance, and uncovered active pixels are seeded fresh.
pub fn propagate(
    old: &Keyframe,
    image: &crate::camera::Image,
    pose_old_to_new: &RigidPose,
    new_id: u64,
    g_min: f64,
    seed: u64,
    params: &DepthParams,
) -> Result<Keyframe, DepthError> {
    let levels = old.pyramid.levels.len();
    let mut new_kf = Keyframe::new(new_id, image, old.camera, g_min, levels)?;
    new_kf.pose = old
        .pose
        .compose(&pose_old_to_new.inverse().to_sim3());
    let (w, h) = (old.mask.width, old.mask.height);
    for py in 0..h {
        for px in 0..w {
            let i = py * w + px;
            if !old.valid[i] {
                continue;
            }
            let Ok(x) = unproject(
                Vector2::new(px as f64, py as f64),
                old.idepth[i],
                &old.camera,
            ) else {
                continue;
            };
            let y = pose_old_to_new.apply(x);
            let Ok(u) = project(y, &old.camera) else {
                continue;
            };
            let (ux, uy) = (u.x.round(), u.y.round());
            if ux < 0.0 || uy < 0.0 {
                continue;
            }
            let (ux, uy) = (ux as usize, uy as usize);
            if ux >= w || uy >= h {
                continue;
            }
            let j = uy * w + ux;
            if !new_kf.mask.active[j] {
                continue;
            }
            let d_new = 1.0 / y.z;
            let var_new = old.variance[i] * params.rho_prop;
            if !new_kf.valid[j] || var_new < new_kf.variance[j] {
                new_kf.idepth[j] = d_new;
                new_kf.variance[j] = var_new.min(params.sigma2_max);
                new_kf.valid[j] = true;
                new_kf.obs_count[j] = old.obs_count[i];
            }
        }
    }
    init_hypotheses(&mut new_kf, seed, params);
    Ok(new_kf)
}

/// Rescales the keyframe so the mean inverse depth is exactly one and
/// adjusts the pose so world geometry is unchanged; returns the applied
/// scale m (old mean).
pub fn normalize_scale(kf: &mut Keyframe) -> Result<f64, DepthError> {
    let m = kf.mean_inverse_depth().ok_or(DepthError::CannotNormalize)?;
    for i in 0..kf.idepth.len() {
        if kf.valid[i] {
            kf.idepth[i] /= m;
            kf.variance[i] /= m * m;
        }
    }
    // camera-frame points scale by m, so the pose's scale absorbs 1/m to
    // keep world points fixed
    kf.pose = SimTransform::new(kf.pose.rotation, kf.pose.translation, kf.pose.scale / m)
        .expect("scale stays positive");
    Ok(m)
}

/// Writes the keyframe's inverse-depth map as a 16-bit PGM with a sidecar
/// scale file; invalid pixels are zero.
pub fn export_inverse_depth(kf: &Keyframe, path: &Path) -> Result<(), DepthError> {
    let values: Vec<f64> = kf
        .idepth
        .iter()
        .zip(&kf.valid)
        .map(|(&d, &v)| if v { d } else { 0.0 })
        .collect();
    crate::synthscene::write_depth_pgm16(&values, kf.mask.width, kf.mask.height, path)
        .map_err(|e| DepthError::Io(std::io::Error::other(e.to_string())))
}
