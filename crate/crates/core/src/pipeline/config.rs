//! Run configuration: case-insensitive key=value text file covering the
//! virtual-camera sync options plus tracking/depth/mapping parameters.

use super::trajectory::PipelineError;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// dead-zone threshold for virtual-camera position sync (tracker units)
    pub sync_threshold: f64,
    /// virtual units per tracker unit
    pub sync_scale_factor: f64,
    pub sync_translation: bool,
    pub sync_rotation: bool,
    pub undistortion: bool,
    /// semi-dense gradient threshold (intensity per pixel)
    pub g_min: f64,
    pub sigma2_init: f64,
    pub sigma2_max: f64,
    /// variance inflation when propagating depth to a new keyframe
    pub rho_prop: f64,
    pub pyramid_levels: usize,
    /// keyframe decision: score = w_t * ||t|| * mean_inv_depth + w_r * angle
    pub keyframe_w_t: f64,
    pub keyframe_w_r: f64,
    pub keyframe_threshold: f64,
    pub huber_delta: f64,
    pub queue_capacity: usize,
    pub seed: u64,
    /// constraint candidate search radius (fraction of scene scale)
    pub constraint_radius: f64,
    pub constraint_k_max: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sync_threshold: 0.0,
            sync_scale_factor: 1.0,
            sync_translation: true,
            sync_rotation: true,
            undistortion: false,
            g_min: 5.0,
            sigma2_init: 1.0,
            sigma2_max: 4.0,
            rho_prop: 1.2,
            pyramid_levels: 4,
            keyframe_w_t: 1.0,
            keyframe_w_r: 1.0,
            keyframe_threshold: 0.04,
            huber_delta: 10.0,
            queue_capacity: 64,
            seed: 0,
            constraint_radius: 0.5,
            constraint_k_max: 5,
        }
    }
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "on" | "yes" => Ok(true),
        "0" | "false" | "off" | "no" => Ok(false),
        other => Err(format!("not a boolean: `{other}`")),
    }
}

impl RunConfig {
    /// Parses `key = value` lines; keys are case-insensitive, `#` starts a
    /// comment. Unknown keys are rejected so typos surface immediately.
    pub fn parse(text: &str) -> Result<RunConfig, PipelineError> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.splitn(2, '=');
            let key = it.next().unwrap_or("").trim().to_ascii_lowercase();
            let value = it
                .next()
                .ok_or_else(|| PipelineError::Parse(i + 1, format!("missing '=' in `{line}`")))?
                .trim();
            let num = || -> Result<f64, PipelineError> {
                value
                    .parse()
                    .map_err(|e| PipelineError::Parse(i + 1, format!("bad number for `{key}`: {e}")))
            };
            let flag = || -> Result<bool, PipelineError> {
                parse_bool(value).map_err(|e| PipelineError::Parse(i + 1, e))
            };
            match key.as_str() {
                "lsdslam_threshold" => cfg.sync_threshold = num()?,
                "lsdslam_scalefactor" => cfg.sync_scale_factor = num()?,
                "lsdslam_translation" => cfg.sync_translation = flag()?,
                "lsdslam_rotation" => cfg.sync_rotation = flag()?,
                "lsdslam_undistortion" => cfg.undistortion = flag()?,
                "g_min" => cfg.g_min = num()?,
                "sigma2_init" => cfg.sigma2_init = num()?,
                "sigma2_max" => cfg.sigma2_max = num()?,
                "rho_prop" => cfg.rho_prop = num()?,
                "pyramid_levels" => cfg.pyramid_levels = num()? as usize,
                "keyframe_w_t" => cfg.keyframe_w_t = num()?,
                "keyframe_w_r" => cfg.keyframe_w_r = num()?,
                "keyframe_threshold" => cfg.keyframe_threshold = num()?,
                "huber_delta" => cfg.huber_delta = num()?,
                "queue_capacity" => cfg.queue_capacity = num()? as usize,
                "seed" => cfg.seed = num()? as u64,
                "constraint_radius" => cfg.constraint_radius = num()?,
                "constraint_k_max" => cfg.constraint_k_max = num()? as usize,
                other => {
                    return Err(PipelineError::Parse(i + 1, format!("unknown key `{other}`")))
                }
            }
        }
        if cfg.sync_scale_factor <= 0.0 {
            return Err(PipelineError::Config("scale factor must be positive".into()));
        }
        if cfg.sync_threshold < 0.0 {
            return Err(PipelineError::Config("threshold must be non-negative".into()));
        }
        if cfg.pyramid_levels == 0 {
            return Err(PipelineError::Config("pyramid_levels must be >= 1".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, PipelineError> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }
}
