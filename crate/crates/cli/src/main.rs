//! `arslam` command line: registration, synthetic-scene rendering, direct
//! tracking, the full SLAM loop, trajectory evaluation, and an offline
//! replay of the virtual-camera pose synchronization.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use std::path::PathBuf;

use arslam_core::camera::{CameraConfig, Image};
use arslam_core::depth::export_inverse_depth;
use arslam_core::mapping::format_map;
use arslam_core::odometry::{build_pyramid, track_se3, Keyframe, TrackParams};
use arslam_core::pipeline::{
    evaluate_ate, read_trajectory, run_slam, write_trajectory, FrameQueue, RunConfig,
    TrajectoryRecord,
};
use arslam_core::registration::{
    metric_landscape, register_rigid_multires, Metric, SearchBounds,
};
use arslam_core::sync::{sync_position, SyncConfig, VirtualCameraState};
use arslam_core::synthscene::{fixtures, generate_sequence, read_depth_pgm16};
use nalgebra::Vector3;

#[derive(Parser)]
#[command(name = "arslam", version, about = "Semi-dense direct visual odometry toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rigid 2-D registration of a moving image onto a fixed image
    Register {
        moving: PathBuf,
        fixed: PathBuf,
        /// metric: ssd, sad, ncc, je, mi, nmi
        #[arg(long, default_value = "mi")]
        metric: String,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        /// translation search bound, pixels
        #[arg(long, default_value_t = 12.0)]
        max_shift: f64,
        /// rotation search bound, degrees
        #[arg(long, default_value_t = 6.0)]
        max_rotation: f64,
        /// write the coarse metric landscape as CSV
        #[arg(long)]
        landscape: Option<PathBuf>,
    },
    /// Render a synthetic Phong-shaded sequence with ground truth
    Render {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 640)]
        width: usize,
        #[arg(long, default_value_t = 480)]
        height: usize,
        #[arg(long, default_value_t = 60)]
        frames: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// trajectory shape: lateral or loop
        #[arg(long, default_value = "lateral")]
        trajectory: String,
        /// lateral step per frame / loop radius, scene units
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        /// include a sphere in front of the plane
        #[arg(long)]
        sphere: bool,
    },
    /// Track a frame against a keyframe with a known depth map
    Track {
        keyframe: PathBuf,
        /// 16-bit depth PGM with `.pgm.scale` sidecar
        depth: PathBuf,
        frame: PathBuf,
        camera: PathBuf,
        #[arg(long, default_value_t = 4)]
        levels: usize,
        #[arg(long, default_value_t = 5.0)]
        g_min: f64,
    },
    /// Run the full SLAM loop over a directory of PGM frames
    Slam {
        frames_dir: PathBuf,
        camera: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// timestamps assigned as frame_index / fps
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
        /// export the final keyframe inverse-depth map here
        #[arg(long)]
        depth_out: Option<PathBuf>,
    },
    /// Absolute trajectory error of an estimate against ground truth
    Eval {
        estimated: PathBuf,
        ground_truth: PathBuf,
    },
    /// Replay the virtual-camera position sync over a tracker trajectory
    SyncSim {
        /// lines: `timestamp x y z move_direction_deg`
        tracker_traj: PathBuf,
        sync_config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Register {
            moving,
            fixed,
            metric,
            levels,
            max_shift,
            max_rotation,
            landscape,
        } => {
            let metric: Metric = metric.parse().map_err(|e: String| anyhow::anyhow!(e))?;
            let mov = Image::load(&moving).context("loading moving image")?;
            let fix = Image::load(&fixed).context("loading fixed image")?;
            let bounds = SearchBounds {
                tx: (-max_shift, max_shift),
                ty: (-max_shift, max_shift),
                theta_deg: (-max_rotation, max_rotation),
            };
            if let Some(path) = landscape {
                let rows = metric_landscape(&mov, &fix, metric, levels, &bounds)?;
                let mut csv = String::from("tx,ty,theta_deg,score\n");
                for (tx, ty, th, s) in rows {
                    csv.push_str(&format!("{tx},{ty},{th},{s:.9}\n"));
                }
                std::fs::write(&path, csv).context("writing landscape CSV")?;
            }
            let result = register_rigid_multires(&mov, &fix, metric, levels, &bounds)?;
            let t = result.transform.translation;
            let theta = result.transform.rotation.angle().to_degrees()
                * result.transform.rotation.matrix()[(1, 0)].signum();
            println!(
                "tx {:.4} ty {:.4} theta_deg {:.4} metric {:.6} evaluations {}",
                t.x, t.y, theta, result.metric_value, result.iterations
            );
        }
        Command::Render {
            out_dir,
            width,
            height,
            frames,
            seed,
            trajectory,
            step,
            sphere,
        } => {
            let scene = if sphere {
                fixtures::plane_and_sphere_scene(width, height, seed)
            } else {
                fixtures::textured_plane_scene(width, height, seed)
            };
            let traj = match trajectory.as_str() {
                "lateral" => fixtures::lateral_sweep(frames, step),
                "loop" => fixtures::loop_trajectory(frames, step),
                other => bail!("unknown trajectory `{other}` (expected lateral or loop)"),
            };
            let manifest = generate_sequence(&scene, &traj, &out_dir)?;
            let intr = &scene.camera;
            std::fs::write(
                out_dir.join("camera.cfg"),
                format!(
                    "model = pinhole\nfx = {}\nfy = {}\ncx = {}\ncy = {}\nwidth = {}\nheight = {}\n",
                    intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height
                ),
            )
            .context("writing camera config")?;
            println!(
                "rendered {} frames to {} (ground truth: {})",
                manifest.frames.len(),
                out_dir.display(),
                manifest.trajectory.display()
            );
        }
        Command::Track {
            keyframe,
            depth,
            frame,
            camera,
            levels,
            g_min,
        } => {
            let camera = CameraConfig::load(&camera)?;
            let kf_img = Image::load(&keyframe).context("loading keyframe image")?;
            let frame_img = Image::load(&frame).context("loading frame image")?;
            let (depth_map, dw, dh) = read_depth_pgm16(&depth)?;
            if (dw, dh) != (kf_img.width(), kf_img.height()) {
                bail!(
                    "depth map is {dw}x{dh} but the keyframe is {}x{}",
                    kf_img.width(),
                    kf_img.height()
                );
            }
            let mut kf = Keyframe::new(0, &kf_img, camera.intrinsics, g_min, levels)?;
            kf.set_depth_from_map(&depth_map, 0.01);
            let pyramid = build_pyramid(&frame_img, levels)?;
            let result = track_se3(
                &kf,
                &pyramid,
                &arslam_core::geometry::RigidPose::identity(),
                &TrackParams::default(),
            )?;
            let t = result.pose.translation;
            let [qx, qy, qz, qw] = result.pose.rotation.quaternion();
            println!(
                "t {:.6} {:.6} {:.6} q {:.6} {:.6} {:.6} {:.6} error {:.4} inliers {:.3} converged {}",
                t.x, t.y, t.z, qx, qy, qz, qw, result.error, result.inlier_fraction,
                result.converged
            );
        }
        Command::Slam {
            frames_dir,
            camera,
            out,
            map,
            config,
            fps,
            depth_out,
        } => {
            let camera = CameraConfig::load(&camera)?;
            let cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            if !(fps > 0.0) {
                bail!("fps must be positive");
            }
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&frames_dir)
                .with_context(|| format!("reading {}", frames_dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".pgm"))
                })
                .collect();
            paths.sort();
            if paths.is_empty() {
                bail!("no frame_*.pgm files in {}", frames_dir.display());
            }
            // offline run: size the queue to the sequence so nothing drops
            let queue = FrameQueue::new(paths.len());
            for (i, path) in paths.iter().enumerate() {
                let mut img = Image::load(path)
                    .with_context(|| format!("loading {}", path.display()))?;
                img.timestamp_us = (i as f64 / fps * 1e6).round() as u64;
                queue.push(img);
            }
            queue.close();
            let output = run_slam(&queue, &camera, &cfg)
                .map_err(|e| anyhow::anyhow!("slam failed: {e}"))?;
            println!(
                "processed {} frames: {} keyframes, {} constraints, {} lost",
                output.frames_processed,
                output.keyframes_created,
                output.constraints_added,
                output.frames_lost
            );
            if let Some(path) = out {
                write_trajectory(&output.trajectory, &path)?;
                println!("trajectory written to {}", path.display());
            }
            if let Some(path) = map {
                std::fs::write(&path, format_map(&output.graph.export_map()))
                    .context("writing map")?;
                println!("map written to {}", path.display());
            }
            if let Some(path) = depth_out {
                if let Some(kf) = output.keyframes.last() {
                    export_inverse_depth(kf, &path)?;
                    println!("inverse depth written to {}", path.display());
                }
            }
        }
        Command::Eval {
            estimated,
            ground_truth,
        } => {
            let est = read_trajectory(&estimated)?;
            let gt = read_trajectory(&ground_truth)?;
            let (rmse, errors) = evaluate_ate(&est, &gt)?;
            let max = errors.iter().copied().fold(0.0f64, f64::max);
            println!(
                "ate_rmse {:.6} max_error {:.6} matched {}",
                rmse,
                max,
                errors.len()
            );
        }
        Command::SyncSim {
            tracker_traj,
            sync_config,
            out,
        } => {
            let cfg = SyncConfig::from_run_config(&RunConfig::load(&sync_config)?)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let text = std::fs::read_to_string(&tracker_traj)
                .with_context(|| format!("reading {}", tracker_traj.display()))?;
            let mut state = VirtualCameraState::new();
            let mut lines_out = String::new();
            let mut records = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let f: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .with_context(|| format!("line {}: bad number", i + 1))?;
                if f.len() != 5 {
                    bail!(
                        "line {}: expected `timestamp x y z move_direction_deg`",
                        i + 1
                    );
                }
                state.move_direction_deg = f[4];
                sync_position(&mut state, Vector3::new(f[1], f[2], f[3]), &cfg);
                lines_out.push_str(&format!(
                    "{:.9} {:.9} {:.9} {:.9}\n",
                    f[0], state.position.x, state.position.y, state.position.z
                ));
                records.push(TrajectoryRecord {
                    timestamp_s: f[0],
                    translation: state.position,
                    quaternion: [0.0, 0.0, 0.0, 1.0],
                });
            }
            match out {
                Some(path) => {
                    std::fs::write(&path, lines_out).context("writing virtual trajectory")?;
                    println!("{} records written to {}", records.len(), path.display());
                }
                None => print!("{lines_out}"),
            }
        }
    }
    Ok(())
}
