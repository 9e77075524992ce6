//! Semi-dense direct monocular visual odometry with a sim(3) keyframe pose
//! graph, a rigid image-registration suite (point, surface, and intensity
//! based), camera undistortion preprocessing, a virtual-camera pose
//! synchronization layer, and a Phong-shaded synthetic-scene oracle used as
//! ground truth throughout the test suite.

pub mod camera;
pub mod depth;
pub mod geometry;
pub mod mapping;
pub mod odometry;
pub mod pipeline;
pub mod registration;
pub mod sync;
pub mod synthscene;
