//! Virtual-camera pose synchronization: maps tracker pose updates onto a
//! rendered camera through a dead-zone threshold, a movement scale factor,
//! and a yaw-dependent movement direction, mirroring the reference
//! integration layer branch for branch (including its strafe/forward
//! interaction quirk, which is reproduced deliberately).

use crate::geometry::{convert_rotation_convention, GeometryError, RotationMatrix};
use nalgebra::{Matrix3, Vector3};
use std::sync::{Arc, Mutex};
use thiserror::Error;

/// Degree-to-radian constant used by the reference implementation.
const DEG_TO_RAD: f64 = 0.0174532925;

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("invalid tracker rotation: {0}")]
    Rotation(#[from] GeometryError),
    #[error("invalid sync configuration: {0}")]
    Config(String),
}

/// Dead-zone / scaling options for the position and rotation sync.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncConfig {
    /// Per-axis dead-zone half-width in tracker units.
    pub threshold: f64,
    /// Virtual units of camera movement per tracker unit.
    pub scale_factor: f64,
    pub use_translation: bool,
    pub use_rotation: bool,
}

impl SyncConfig {
    pub fn new(
        threshold: f64,
        scale_factor: f64,
        use_translation: bool,
        use_rotation: bool,
    ) -> Result<Self, SyncError> {
        if threshold < 0.0 {
            return Err(SyncError::Config(format!(
                "threshold must be non-negative, got {threshold}"
            )));
        }
        if !(scale_factor > 0.0) {
            return Err(SyncError::Config(format!(
                "scale factor must be positive, got {scale_factor}"
            )));
        }
        Ok(SyncConfig {
            threshold,
            scale_factor,
            use_translation,
            use_rotation,
        })
    }

    pub fn from_run_config(cfg: &crate::pipeline::RunConfig) -> Result<Self, SyncError> {
        SyncConfig::new(
            cfg.sync_threshold,
            cfg.sync_scale_factor,
            cfg.sync_translation,
            cfg.sync_rotation,
        )
    }
}

impl Default for SyncConfig {
    fn default() -> Self {
        SyncConfig {
            threshold: 0.0,
            scale_factor: 1.0,
            use_translation: true,
            use_rotation: true,
        }
    }
}

/// Virtual camera pose plus the tracker reference position the dead-zone
/// comparisons are made against.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualCameraState {
    /// Camera position in virtual-world units.
    pub position: Vector3<f64>,
    /// Camera orientation after convention conversion.
    pub rotation: RotationMatrix,
    /// Last accepted tracker position, in tracker units.
    pub reference: Vector3<f64>,
    /// Movement direction (yaw about the vertical axis) in degrees.
    pub move_direction_deg: f64,
    /// False until the first position update stores the origin reference.
    pub initialized: bool,
}

impl VirtualCameraState {
    pub fn new() -> Self {
        VirtualCameraState {
            position: Vector3::zeros(),
            rotation: RotationMatrix::identity(),
            reference: Vector3::zeros(),
            move_direction_deg: 0.0,
            initialized: false,
        }
    }
}

impl Default for VirtualCameraState {
    fn default() -> Self {
        VirtualCameraState::new()
    }
}

/// Stores the tracker rotation after coordinate-convention conversion. On an
/// invalid (non-orthonormal) input the state is left untouched. A disabled
/// rotation sync is a no-op.
pub fn sync_rotation(
    state: &mut VirtualCameraState,
    tracker_rotation: &Matrix3<f64>,
    cfg: &SyncConfig,
) -> Result<(), SyncError> {
    if !cfg.use_rotation {
        return Ok(());
    }
    state.rotation = convert_rotation_convention(tracker_rotation)?;
    Ok(())
}

/// Applies one tracker position sample to the virtual camera.
///
/// The first call only stores the tracker position as the origin reference.
/// Afterwards each axis is compared against the reference with a dead zone
/// of width `threshold`; supra-threshold deltas move the camera by
/// `distance * scale_factor` along the direction given by
/// `move_direction_deg`. Branch structure, the stale position snapshot, and
/// the strafe branch's guarded z / unconditional x writes all follow the
/// reference implementation exactly; the reference position is updated per
/// axis only when that axis caused a change. A disabled translation sync is
/// a no-op.
pub fn sync_position(state: &mut VirtualCameraState, tracker_pos: Vector3<f64>, cfg: &SyncConfig) {
    if !cfg.use_translation {
        return;
    }

    let mut pos_x_changed = false;
    let mut pos_y_changed = false;
    let mut pos_z_changed = false;

    if !state.initialized {
        state.reference = tracker_pos;
        state.initialized = true;
        return;
    }

    // Snapshot read once: later branches intentionally compute from this
    // stale value even when an earlier branch already moved the camera.
    let camera_position = state.position;
    let md = state.move_direction_deg * DEG_TO_RAD;
    let threshold = cfg.threshold;
    let scale = cfg.scale_factor;

    // Forward / backward along the tracker z axis.
    if tracker_pos.z > state.reference.z + threshold {
        let distance = tracker_pos.z - state.reference.z;
        state.position.x = camera_position.x + md.sin() * (distance * scale);
        state.position.z = camera_position.z + md.cos() * (distance * scale);
        pos_x_changed = true;
        pos_z_changed = true;
    } else if tracker_pos.z < state.reference.z - threshold {
        let distance = state.reference.z - tracker_pos.z;
        state.position.x = camera_position.x - md.sin() * (distance * scale);
        state.position.z = camera_position.z - md.cos() * (distance * scale);
        pos_x_changed = true;
        pos_z_changed = true;
    }

    // Strafe right / left along the tracker x axis. The x write is
    // unconditional while the z write is skipped when the forward branch
    // already set it -- an asymmetry kept on purpose.
    if tracker_pos.x > state.reference.x + threshold {
        let distance = tracker_pos.x - state.reference.x;
        state.position.x = camera_position.x + md.cos() * (distance * scale);
        if !pos_z_changed {
            state.position.z = camera_position.z + md.sin() * (distance * scale);
        }
        pos_x_changed = true;
        pos_z_changed = true;
    } else if tracker_pos.x < state.reference.x - threshold {
        let distance = state.reference.x - tracker_pos.x;
        state.position.x = camera_position.x - md.cos() * (distance * scale);
        if !pos_z_changed {
            state.position.z = camera_position.z - md.sin() * (distance * scale);
        }
        pos_x_changed = true;
        pos_z_changed = true;
    }

    // Fly: tracker y grows downward relative to the virtual camera.
    if tracker_pos.y > state.reference.y + threshold {
        let distance = tracker_pos.y - state.reference.y;
        state.position.y = camera_position.y - distance * scale;
        pos_y_changed = true;
    } else if tracker_pos.y < state.reference.y - threshold {
        let distance = state.reference.y - tracker_pos.y;
        state.position.y = camera_position.y + distance * scale;
        pos_y_changed = true;
    }

    if pos_x_changed {
        state.reference.x = tracker_pos.x;
    }
    if pos_y_changed {
        state.reference.y = tracker_pos.y;
    }
    if pos_z_changed {
        state.reference.z = tracker_pos.z;
    }
}

/// Shared sync cell: one writer applies tracker updates, any number of
/// readers take consistent snapshots. The mutex guarantees a reader never
/// observes a half-written rotation matrix or reference position.
#[derive(Debug, Clone)]
pub struct SharedCameraState {
    inner: Arc<Mutex<VirtualCameraState>>,
    config: SyncConfig,
}

impl SharedCameraState {
    pub fn new(config: SyncConfig) -> Self {
        SharedCameraState {
            inner: Arc::new(Mutex::new(VirtualCameraState::new())),
            config,
        }
    }

    pub fn update_rotation(&self, tracker_rotation: &Matrix3<f64>) -> Result<(), SyncError> {
        let mut state = self.inner.lock().expect("sync state lock poisoned");
        sync_rotation(&mut state, tracker_rotation, &self.config)
    }

    pub fn update_position(&self, tracker_pos: Vector3<f64>) {
        let mut state = self.inner.lock().expect("sync state lock poisoned");
        sync_position(&mut state, tracker_pos, &self.config);
    }

    pub fn snapshot(&self) -> VirtualCameraState {
        self.inner.lock().expect("sync state lock poisoned").clone()
    }
}
