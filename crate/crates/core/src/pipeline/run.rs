//! The SLAM loop: consumes frames from a queue, tracks each against the
//! current keyframe, maintains the inverse-depth map, creates keyframes by
//! the weighted-distance policy, closes constraints, and relaxes the pose
//! graph.

use super::config::RunConfig;
use super::queue::{FrameQueue, PopResult};
use super::trajectory::{PipelineError, TrajectoryRecord};
use crate::camera::{
    extract_roi, resize_frame, undistort, undistort_omni, CameraConfig, Image, LensModel,
    PinholeIntrinsics,
};
use crate::depth::{init_hypotheses, normalize_scale, propagate, update_keyframe_depth, DepthParams};
use crate::geometry::{sim3_log, RigidPose, SimTransform};
use crate::mapping::{should_create_keyframe, KeyframePolicy, PoseGraph};
use crate::odometry::{align_sim3, build_pyramid, track_se3, Keyframe, OdometryError, TrackParams};

/// Consecutive lost frames tolerated before the run aborts.
const MAX_LOST_FRAMES: usize = 10;
/// Mean fused observations per hypothesis before the bootstrap phase ends.
const BOOTSTRAP_MEAN_OBS: f64 = 5.0;
/// Hard cap on bootstrap frames, in case depth never firms up.
const BOOTSTRAP_MAX_FRAMES: usize = 15;
/// Reciprocal-consistency gate for loop-closure constraints (twist norm).
const CONSTRAINT_RECIPROCAL_TOL: f64 = 0.01;
/// Relaxation iterations after each accepted constraint.
const RELAX_ITERS: usize = 10;

/// Result of a full [`run_slam`] pass.
#[derive(Debug)]
pub struct SlamOutput {
    /// one record per successfully tracked frame (world poses)
    pub trajectory: Vec<TrajectoryRecord>,
    pub graph: PoseGraph,
    /// all keyframes in creation order, with their final optimized poses
    pub keyframes: Vec<Keyframe>,
    pub frames_processed: usize,
    pub frames_lost: usize,
    pub keyframes_created: usize,
    pub constraints_added: usize,
}

/// Intrinsics of the preprocessed stream: ROI extraction shifts the
/// principal point; the resize back to the configured processing size
/// scales focal lengths and principal point.
fn preprocessing_intrinsics(camera: &CameraConfig) -> Result<PinholeIntrinsics, PipelineError> {
    let intr = camera.intrinsics;
    let Some(roi) = &camera.roi else {
        return Ok(intr);
    };
    let sx = intr.width as f64 / roi.w as f64;
    let sy = intr.height as f64 / roi.h as f64;
    PinholeIntrinsics::new(
        intr.fx * sx,
        intr.fy * sy,
        (intr.cx - roi.x as f64) * sx,
        (intr.cy - roi.y as f64) * sy,
        intr.width,
        intr.height,
    )
    .map_err(|e| PipelineError::Config(format!("ROI-adjusted intrinsics: {e}")))
}

/// Undistortion / ROI / resize chain applied to every raw frame.
fn preprocess(frame: &Image, camera: &CameraConfig, cfg: &RunConfig) -> Result<Image, PipelineError> {
    let mut image = if cfg.undistortion {
        match &camera.lens {
            LensModel::Pinhole(dist) => undistort(frame, &camera.intrinsics, dist)
                .map_err(|e| PipelineError::Config(format!("undistortion: {e}")))?,
            LensModel::Omni(poly) => undistort_omni(
                frame,
                poly,
                (camera.intrinsics.cx, camera.intrinsics.cy),
                &camera.intrinsics,
            )
            .map_err(|e| PipelineError::Config(format!("undistortion: {e}")))?,
        }
    } else {
        frame.to_gray()
    };
    if let Some(roi) = &camera.roi {
        image = extract_roi(&image, roi)
            .map_err(|e| PipelineError::Config(format!("ROI extraction: {e}")))?;
        image = resize_frame(&image, camera.intrinsics.width, camera.intrinsics.height);
    }
    Ok(image)
}

/// Mean fused observation count over the keyframe's valid hypotheses.
fn mean_observations(kf: &Keyframe) -> f64 {
    let mut sum = 0u64;
    let mut n = 0u64;
    for i in 0..kf.obs_count.len() {
        if kf.valid[i] {
            sum += kf.obs_count[i] as u64;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}

fn world_record(kf: &Keyframe, rel: &RigidPose, timestamp_s: f64) -> TrajectoryRecord {
    // rel maps keyframe coordinates into frame coordinates, so the
    // frame-to-world pose is keyframe-to-world composed with its inverse.
    let world = kf.pose.compose(&rel.inverse().to_sim3());
    TrajectoryRecord {
        timestamp_s,
        translation: world.translation,
        quaternion: world.rotation.quaternion(),
    }
}

/// Attempts a reciprocally-consistent sim(3) constraint between two
/// keyframes; returns the measured new-to-candidate transform and a weight.
fn try_constraint(
    kf_cand: &Keyframe,
    kf_new: &Keyframe,
    params: &TrackParams,
) -> Option<(SimTransform, f64)> {
    let init_fwd = kf_cand.pose.inverse().compose(&kf_new.pose);
    // forward: new -> candidate coordinates, matching the edge convention
    let fwd = align_sim3(kf_new, kf_cand, &init_fwd.inverse(), params).ok()?;
    let bwd = align_sim3(kf_cand, kf_new, &init_fwd, params).ok()?;
    if !fwd.converged || !bwd.converged {
        return None;
    }
    let closure = fwd.transform.compose(&bwd.transform);
    let twist = sim3_log(&closure).ok()?;
    if twist.norm() > CONSTRAINT_RECIPROCAL_TOL {
        return None;
    }
    let weight = (fwd.inlier_fraction * fwd.residual_count as f64).max(1.0);
    Some((fwd.transform, weight))
}

/// Runs the full loop until the queue signals end-of-stream: pop, preprocess,
/// track against the current keyframe, then either refine that keyframe's
/// depth map or promote the frame to a new keyframe (propagated depth,
/// normalized scale, graph insertion, constraint search, relaxation). Lost
/// frames are retried against the current keyframe with an identity
/// initialization; more than [`MAX_LOST_FRAMES`] consecutive losses abort.
pub fn run_slam(
    queue: &FrameQueue,
    camera: &CameraConfig,
    cfg: &RunConfig,
) -> Result<SlamOutput, PipelineError> {
    let track_intr = preprocessing_intrinsics(camera)?;
    let track_params = TrackParams {
        huber_delta: cfg.huber_delta,
        ..TrackParams::default()
    };
    let depth_params = DepthParams {
        sigma2_init: cfg.sigma2_init,
        sigma2_max: cfg.sigma2_max,
        rho_prop: cfg.rho_prop,
        ..DepthParams::default()
    };
    let policy = KeyframePolicy {
        w_t: cfg.keyframe_w_t,
        w_r: cfg.keyframe_w_r,
        threshold: cfg.keyframe_threshold,
    };

    let mut graph = PoseGraph::new();
    let mut trajectory = Vec::new();
    let mut keyframes: Vec<Keyframe> = Vec::new();
    let mut current: Option<usize> = None;
    let mut last_rel = RigidPose::identity();
    let mut next_id = 0u64;
    let mut frames_processed = 0usize;
    let mut frames_lost = 0usize;
    let mut lost_streak = 0usize;
    let mut constraints_added = 0usize;
    // Bootstrap: until the root keyframe's random depth map has absorbed a
    // few observations per pixel, track translation-only. Full 6-dof
    // tracking against an unconverged depth map lets rotation absorb the
    // parallax the epipolar filter needs, and the map never firms up.
    let mut bootstrapping = true;
    let mut bootstrap_frames = 0usize;

    loop {
        let frame = match queue.pop() {
            PopResult::Frame(f) => f,
            PopResult::EndOfStream => break,
        };
        frames_processed += 1;
        let image = preprocess(&frame, camera, cfg)?;
        let timestamp_s = image.timestamp_us as f64 * 1e-6;

        let Some(cur) = current else {
            // First frame bootstraps the map: root keyframe at identity
            // with randomly seeded inverse-depth hypotheses.
            let mut kf = Keyframe::new(next_id, &image, track_intr, cfg.g_min, cfg.pyramid_levels)
                .map_err(|e| PipelineError::Config(format!("keyframe creation: {e}")))?;
            init_hypotheses(&mut kf, cfg.seed, &depth_params);
            graph
                .add_keyframe(next_id, timestamp_s, None, &SimTransform::identity(), 1.0)
                .map_err(|e| PipelineError::Config(format!("pose graph: {e}")))?;
            trajectory.push(world_record(&kf, &RigidPose::identity(), timestamp_s));
            keyframes.push(kf);
            current = Some(0);
            next_id += 1;
            continue;
        };

        let pyramid = build_pyramid(&image, cfg.pyramid_levels)
            .map_err(|e| PipelineError::Config(format!("pyramid: {e}")))?;
        let frame_params = TrackParams {
            translation_only: bootstrapping,
            ..track_params
        };
        let tracked = match track_se3(&keyframes[cur], &pyramid, &last_rel, &frame_params) {
            Ok(r) => Ok(r),
            Err(OdometryError::TrackingLost(_)) => {
                // relocalization attempt: identity initialization
                track_se3(&keyframes[cur], &pyramid, &RigidPose::identity(), &frame_params)
            }
            Err(e) => return Err(PipelineError::Config(format!("tracking: {e}"))),
        };
        let result = match tracked {
            Ok(r) => r,
            Err(OdometryError::TrackingLost(_)) => {
                frames_lost += 1;
                lost_streak += 1;
                if lost_streak > MAX_LOST_FRAMES {
                    return Err(PipelineError::TrackingLost(lost_streak));
                }
                continue;
            }
            Err(e) => return Err(PipelineError::Config(format!("tracking: {e}"))),
        };
        lost_streak = 0;
        let rel = result.pose;
        trajectory.push(world_record(&keyframes[cur], &rel, timestamp_s));

        if bootstrapping {
            update_keyframe_depth(&mut keyframes[cur], &pyramid, &rel, &depth_params);
            last_rel = rel;
            bootstrap_frames += 1;
            if mean_observations(&keyframes[cur]) >= BOOTSTRAP_MEAN_OBS
                || bootstrap_frames >= BOOTSTRAP_MAX_FRAMES
            {
                bootstrapping = false;
            }
            continue;
        }

        let mean_inv_depth = keyframes[cur].mean_inverse_depth().unwrap_or(1.0);
        let (make_keyframe, _) = should_create_keyframe(&rel, mean_inv_depth, &policy);
        if !make_keyframe {
            update_keyframe_depth(&mut keyframes[cur], &pyramid, &rel, &depth_params);
            last_rel = rel;
            continue;
        }

        // Promote the frame: carry the depth map over, re-normalize scale,
        // and insert the keyframe into the graph.
        let id = next_id;
        next_id += 1;
        let mut kf = propagate(
            &keyframes[cur],
            &image,
            &rel,
            id,
            cfg.g_min,
            cfg.seed.wrapping_add(id),
            &depth_params,
        )
        .map_err(|e| PipelineError::Config(format!("depth propagation: {e}")))?;
        // One immediate stereo refinement against the parent keyframe: the
        // full parent-to-keyframe baseline gives the freshly propagated
        // hypotheses a strong observation before normalization locks the
        // scale in.
        update_keyframe_depth(&mut kf, &keyframes[cur].pyramid, &rel.inverse(), &depth_params);
        let _ = normalize_scale(&mut kf);
        let parent_id = keyframes[cur].id;
        let edge = keyframes[cur].pose.inverse().compose(&kf.pose);
        let weight = (result.inlier_fraction * kf.mask.count() as f64).max(1.0);
        graph
            .add_keyframe(id, timestamp_s, Some(parent_id), &edge, weight)
            .map_err(|e| PipelineError::Config(format!("pose graph: {e}")))?;
        keyframes.push(kf);
        let new_index = keyframes.len() - 1;

        // Loop-closure constraints against nearby non-adjacent keyframes,
        // gated on reciprocal consistency of the two alignment directions.
        let candidates =
            graph.find_constraint_candidates(id, cfg.constraint_radius, cfg.constraint_k_max);
        let mut accepted_any = false;
        for cand_id in candidates {
            let cand_index = keyframes.iter().position(|k| k.id == cand_id).unwrap();
            if let Some((measured, w)) =
                try_constraint(&keyframes[cand_index], &keyframes[new_index], &track_params)
            {
                graph
                    .add_constraint(cand_id, id, measured, w)
                    .map_err(|e| PipelineError::Config(format!("pose graph: {e}")))?;
                constraints_added += 1;
                accepted_any = true;
            }
        }
        if accepted_any {
            graph
                .relax(RELAX_ITERS)
                .map_err(|e| PipelineError::Config(format!("relaxation: {e}")))?;
            // pull the optimized poses back into the keyframe store
            for kf in &mut keyframes {
                if let Some(pose) = graph.pose(kf.id) {
                    kf.pose = *pose;
                }
            }
        }

        current = Some(new_index);
        last_rel = RigidPose::identity();
    }

    Ok(SlamOutput {
        trajectory,
        graph,
        keyframes_created: keyframes.len(),
        keyframes,
        frames_processed,
        frames_lost,
        constraints_added,
    })
}
