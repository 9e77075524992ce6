//! Synthetic-scene oracle: Phong-shaded ray-cast rendering of textured
//! planes and spheres along scripted camera trajectories, with exact depth
//! maps and poses for the odometry and depth test suites.

mod noise;
mod render;
mod scene;

pub use noise::ValueNoise;
pub use render::{
    generate_sequence, phong_shade, read_depth_pgm16, render_frame, write_depth_pgm16,
    GroundTruthFrame, SequenceManifest,
};
pub use scene::{Material, SceneObject, SceneSpec, SynthError};

pub mod fixtures {
    //! Ready-made scenes and trajectories shared by tests and the CLI.

    use super::{Material, SceneObject, SceneSpec};
    use crate::camera::PinholeIntrinsics;
    use crate::geometry::{RigidPose, RotationMatrix};
    use nalgebra::Vector3;

    /// A gradient-rich textured plane roughly one unit in front of the
    /// camera, tilted slightly so depth varies across the image. The mean
    /// scene depth over the view is close to 1. Texture frequency scales
    /// with resolution so per-pixel gradient statistics stay comparable
    /// across image sizes.
    pub fn textured_plane_scene(width: usize, height: usize, seed: u64) -> SceneSpec {
        let f = width as f64 * 0.625; // 400 at 640
        let texture_scale = 6.0 * width as f64 / 160.0;
        let camera = PinholeIntrinsics::new(
            f,
            f,
            width as f64 * 0.5,
            height as f64 * 0.5,
            width,
            height,
        )
        .expect("valid fixture intrinsics");
        let tilt = 0.15f64;
        let normal_tilt = RotationMatrix::exp(Vector3::new(0.0, tilt, 0.0));
        let u_axis = normal_tilt.rotate(Vector3::new(1.0, 0.0, 0.0));
        let v_axis = Vector3::new(0.0, 1.0, 0.0);
        SceneSpec {
            objects: vec![SceneObject::Plane {
                center: Vector3::new(0.0, 0.0, 1.0),
                u_axis,
                v_axis,
                half_u: 3.0,
                half_v: 3.0,
                material: Material {
                    k_a: 0.4,
                    k_d: 0.9,
                    k_s: 0.15,
                    shininess: 8.0,
                    texture_seed: seed,
                    texture_scale,
                },
            }],
            light_position: Vector3::new(0.5, -0.8, -0.5),
            light_intensity: 160.0,
            ambient_intensity: 120.0,
            camera,
        }
    }

    /// Adds a sphere to the plane fixture for richer depth structure.
    pub fn plane_and_sphere_scene(width: usize, height: usize, seed: u64) -> SceneSpec {
        let mut scene = textured_plane_scene(width, height, seed);
        scene.objects.push(SceneObject::Sphere {
            center: Vector3::new(0.25, 0.1, 0.8),
            radius: 0.18,
            material: Material {
                k_a: 0.5,
                k_d: 0.8,
                k_s: 0.4,
                shininess: 16.0,
                texture_seed: seed.wrapping_add(99),
                texture_scale: 10.0 * width as f64 / 160.0,
            },
        });
        scene
    }

    /// Lateral sweep: camera translating along +x while looking down +z.
    pub fn lateral_sweep(frames: usize, step: f64) -> Vec<(f64, RigidPose)> {
        (0..frames)
            .map(|i| {
                (
                    i as f64 / 30.0,
                    RigidPose::new(
                        RotationMatrix::identity(),
                        Vector3::new(i as f64 * step, 0.0, 0.0),
                    ),
                )
            })
            .collect()
    }

    /// Closed loop: lateral sweep out and back to the starting pose.
    pub fn loop_trajectory(frames: usize, radius: f64) -> Vec<(f64, RigidPose)> {
        (0..frames)
            .map(|i| {
                let phase = i as f64 / frames as f64 * std::f64::consts::TAU;
                (
                    i as f64 / 30.0,
                    RigidPose::new(
                        RotationMatrix::identity(),
                        Vector3::new(
                            radius * phase.sin(),
                            radius * 0.5 * (1.0 - phase.cos()),
                            0.0,
                        ),
                    ),
                )
            })
            .collect()
    }
}
