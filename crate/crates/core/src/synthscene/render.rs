//! Ray-cast renderer applying the Phong shading model per hit.

use super::noise::ValueNoise;
use super::scene::{Material, SceneObject, SceneSpec, SynthError};
use crate::camera::Image;
use crate::geometry::RigidPose;
use crate::pipeline::{write_trajectory, TrajectoryRecord};
use nalgebra::Vector3;
use std::path::{Path, PathBuf};

/// Rendered frame with exact per-pixel depth (along the optical axis;
/// 0 marks background) and the camera-to-world pose.
#[derive(Debug, Clone)]
pub struct GroundTruthFrame {
    pub image: Image,
    pub depth: Vec<f64>,
    pub pose: RigidPose,
    pub timestamp_s: f64,
}

impl GroundTruthFrame {
    pub fn depth_at(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.image.width() + x]
    }
}

/// I = k_a I_a + I_direct (k_d max(L.N, 0) + k_s max(V.R, 0)^n), with
/// R = reflect(-L, N). Back-facing terms clamp to zero.
pub fn phong_shade(
    normal: Vector3<f64>,
    to_light: Vector3<f64>,
    to_viewer: Vector3<f64>,
    material: &Material,
    ambient: f64,
    direct: f64,
) -> Result<f64, SynthError> {
    for (name, v) in [("N", &normal), ("L", &to_light), ("V", &to_viewer)] {
        if (v.norm() - 1.0).abs() > 1e-6 {
            return Err(SynthError::NonUnitVector(name, v.norm()));
        }
    }
    let ln = normal.dot(&to_light).max(0.0);
    let reflected = 2.0 * normal.dot(&to_light) * normal - to_light;
    let vr = to_viewer.dot(&reflected).max(0.0);
    Ok(material.k_a * ambient + direct * (material.k_d * ln + material.k_s * vr.powf(material.shininess)))
}

struct Hit {
    /// depth along the optical axis
    z: f64,
    point: Vector3<f64>,
    normal: Vector3<f64>,
    albedo: f64,
    object: usize,
}

/// Intersects a ray `origin + z * dir` (dir scaled so z equals camera
/// depth) with one object; returns (z, normal, texture uv).
fn intersect(
    object: &SceneObject,
    origin: Vector3<f64>,
    dir: Vector3<f64>,
) -> Option<(f64, Vector3<f64>, (f64, f64))> {
    match object {
        SceneObject::Plane {
            center,
            u_axis,
            v_axis,
            half_u,
            half_v,
            ..
        } => {
            let normal = u_axis.cross(v_axis).normalize();
            let denom = dir.dot(&normal);
            if denom.abs() < 1e-12 {
                return None;
            }
            let z = (center - origin).dot(&normal) / denom;
            if z <= 1e-9 {
                return None;
            }
            let p = origin + dir * z;
            let rel = p - center;
            let u = rel.dot(&u_axis.normalize());
            let v = rel.dot(&v_axis.normalize());
            if u.abs() > *half_u || v.abs() > *half_v {
                return None;
            }
            Some((z, normal, (u, v)))
        }
        SceneObject::Sphere { center, radius, .. } => {
            let oc = origin - center;
            let a = dir.norm_squared();
            let b = 2.0 * oc.dot(&dir);
            let c = oc.norm_squared() - radius * radius;
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let z = [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
                .into_iter()
                .filter(|&t| t > 1e-9)
                .fold(f64::INFINITY, f64::min);
            if !z.is_finite() {
                return None;
            }
            let p = origin + dir * z;
            let n = (p - center).normalize();
            // spherical texture coordinates scaled to the radius
            let u = n.y.atan2(n.x) * radius;
            let v = n.z.acos() * radius;
            Some((z, n, (u, v)))
        }
    }
}

/// Renders one frame from a camera-to-world pose. Per-pixel rays, nearest
/// hit shaded by [`phong_shade`] times the procedural albedo, rounded
/// half-up to 8 bits.
pub fn render_frame(scene: &SceneSpec, pose: &RigidPose) -> Result<GroundTruthFrame, SynthError> {
    scene.validate()?;
    let intr = &scene.camera;
    let cam_pos = pose.translation;
    let mut image = Image::zeros(intr.width, intr.height);
    let mut depth = vec![0.0f64; intr.width * intr.height];
    let textures: Vec<ValueNoise> = scene
        .objects
        .iter()
        .map(|o| ValueNoise::new(o.material().texture_seed))
        .collect();
    for py in 0..intr.height {
        for px in 0..intr.width {
            // dir scaled so the ray parameter equals camera z-depth
            let dir_cam = Vector3::new(
                (px as f64 - intr.cx) / intr.fx,
                (py as f64 - intr.cy) / intr.fy,
                1.0,
            );
            let dir = pose.rotation.rotate(dir_cam);
            let mut best: Option<Hit> = None;
            for (i, object) in scene.objects.iter().enumerate() {
                if let Some((z, mut normal, (tu, tv))) = intersect(object, cam_pos, dir) {
                    if best.as_ref().map_or(true, |h| z < h.z) {
                        if normal.dot(&dir) > 0.0 {
                            normal = -normal;
                        }
                        let scale = object.material().texture_scale;
                        best = Some(Hit {
                            z,
                            point: cam_pos + dir * z,
                            normal,
                            albedo: textures[i].albedo(tu * scale, tv * scale),
                            object: i,
                        });
                    }
                }
            }
            if let Some(hit) = best {
                let material = scene.objects[hit.object].material();
                let to_light = (scene.light_position - hit.point).normalize();
                let to_viewer = (cam_pos - hit.point).normalize();
                let shade = phong_shade(
                    hit.normal,
                    to_light,
                    to_viewer,
                    material,
                    scene.ambient_intensity,
                    scene.light_intensity,
                )?;
                let value = (shade * hit.albedo).clamp(0.0, 255.0);
                image.set(px, py, (value + 0.5).floor() as u8);
                depth[py * intr.width + px] = hit.z;
            }
        }
    }
    Ok(GroundTruthFrame {
        image,
        depth,
        pose: *pose,
        timestamp_s: 0.0,
    })
}

/// Files written by [`generate_sequence`].
#[derive(Debug, Clone)]
pub struct SequenceManifest {
    pub frames: Vec<PathBuf>,
    pub depth_maps: Vec<PathBuf>,
    pub trajectory: PathBuf,
}

/// Renders frames and depth maps along a trajectory into `out_dir` and
/// writes the ground-truth trajectory file.
pub fn generate_sequence(
    scene: &SceneSpec,
    trajectory: &[(f64, RigidPose)],
    out_dir: &Path,
) -> Result<SequenceManifest, SynthError> {
    if trajectory.is_empty() {
        return Err(SynthError::Invalid("trajectory is empty".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = SequenceManifest {
        frames: Vec::new(),
        depth_maps: Vec::new(),
        trajectory: out_dir.join("groundtruth.txt"),
    };
    let mut records = Vec::new();
    for (i, (timestamp, pose)) in trajectory.iter().enumerate() {
        let mut frame = render_frame(scene, pose)?;
        frame.image.timestamp_us = (timestamp * 1e6).round() as u64;
        let frame_path = out_dir.join(format!("frame_{i:06}.pgm"));
        frame
            .image
            .save_pgm(&frame_path)
            .map_err(|e| SynthError::Invalid(e.to_string()))?;
        let depth_path = out_dir.join(format!("depth_{i:06}.pgm"));
        write_depth_pgm16(&frame.depth, frame.image.width(), frame.image.height(), &depth_path)?;
        manifest.frames.push(frame_path);
        manifest.depth_maps.push(depth_path);
        let q = pose.rotation.quaternion();
        records.push(TrajectoryRecord {
            timestamp_s: *timestamp,
            translation: pose.translation,
            quaternion: q,
        });
    }
    write_trajectory(&records, &manifest.trajectory)
        .map_err(|e| SynthError::Invalid(e.to_string()))?;
    Ok(manifest)
}

/// 16-bit big-endian PGM with a sidecar `<path>.scale` file holding the
/// depth-per-count factor.
pub fn write_depth_pgm16(
    depth: &[f64],
    width: usize,
    height: usize,
    path: &Path,
) -> Result<(), SynthError> {
    use std::io::Write;
    let max = depth.iter().copied().fold(0.0f64, f64::max).max(1e-12);
    let scale = max / 65535.0;
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{width} {height}\n65535\n")?;
    let mut buf = Vec::with_capacity(depth.len() * 2);
    for &d in depth {
        let v = (d / scale).round().clamp(0.0, 65535.0) as u16;
        buf.extend_from_slice(&v.to_be_bytes());
    }
    f.write_all(&buf)?;
    std::fs::write(path.with_extension("pgm.scale"), format!("{scale:.12e}\n"))?;
    Ok(())
}

/// Reads a depth map written by [`write_depth_pgm16`], returning scene-unit
/// depths (counts times the sidecar scale factor).
pub fn read_depth_pgm16(path: &Path) -> Result<(Vec<f64>, usize, usize), SynthError> {
    let bytes = std::fs::read(path)?;
    let header_err = || SynthError::Invalid(format!("{}: not a 16-bit P5 PGM", path.display()));
    let mut fields = Vec::new();
    let mut pos = 0usize;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| header_err())?
                .to_string(),
        );
    }
    if fields.len() < 4 || fields[0] != "P5" || fields[3] != "65535" {
        return Err(header_err());
    }
    let width: usize = fields[1].parse().map_err(|_| header_err())?;
    let height: usize = fields[2].parse().map_err(|_| header_err())?;
    pos += 1; // single whitespace byte after the maxval
    let n = width * height;
    if bytes.len() < pos + 2 * n {
        return Err(SynthError::Invalid(format!(
            "{}: truncated pixel data",
            path.display()
        )));
    }
    let scale_text = std::fs::read_to_string(path.with_extension("pgm.scale"))?;
    let scale: f64 = scale_text
        .trim()
        .parse()
        .map_err(|_| SynthError::Invalid("bad depth scale sidecar".into()))?;
    let mut depth = Vec::with_capacity(n);
    for i in 0..n {
        let v = u16::from_be_bytes([bytes[pos + 2 * i], bytes[pos + 2 * i + 1]]);
        depth.push(v as f64 * scale);
    }
    Ok((depth, width, height))
}
