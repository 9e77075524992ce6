//! Camera models, image buffers, and the preprocessing chain
//! (undistortion, ROI extraction, resize).

mod image;
mod model;
mod undistort;

pub use image::{Image, ImageError};
pub use model::{
    omni_projection, project, unproject, CameraError, DistortionCoefficients, OmniPolynomial,
    PinholeIntrinsics,
};
pub use undistort::{
    apply_distortion, extract_roi, resize_frame, undistort, undistort_omni, RegionOfInterest,
    UndistortionMap,
};

use std::collections::HashMap;
use std::path::Path;

/// Lens model selector for a [`CameraConfig`].
#[derive(Debug, Clone, PartialEq)]
pub enum LensModel {
    Pinhole(DistortionCoefficients),
    Omni(OmniPolynomial),
}

/// Parsed camera configuration file (key=value text).
#[derive(Debug, Clone, PartialEq)]
pub struct CameraConfig {
    pub intrinsics: PinholeIntrinsics,
    pub lens: LensModel,
    pub roi: Option<RegionOfInterest>,
}

impl CameraConfig {
    /// Parses the key=value camera config format:
    ///
    /// ```text
    /// model = pinhole
    /// fx = 400  fy = 400  cx = 320  cy = 240
    /// width = 640  height = 480
    /// k1 = 0  k2 = 0  p1 = 0  p2 = 0  k3 = 0
    /// roi_x = 10  roi_y = 170  roi_w = 620  roi_h = 300
    /// ```
    pub fn parse(text: &str) -> Result<Self, CameraError> {
        let mut map = HashMap::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            for pair in line.split(';') {
                let pair = pair.trim();
                if pair.is_empty() {
                    continue;
                }
                let mut it = pair.splitn(2, '=');
                let key = it.next().unwrap_or("").trim().to_ascii_lowercase();
                let value = it
                    .next()
                    .ok_or_else(|| CameraError::Config(format!("missing '=' in `{pair}`")))?
                    .trim()
                    .to_string();
                map.insert(key, value);
            }
        }
        let get = |k: &str| -> Result<f64, CameraError> {
            map.get(k)
                .ok_or_else(|| CameraError::Config(format!("missing key `{k}`")))?
                .parse::<f64>()
                .map_err(|e| CameraError::Config(format!("bad value for `{k}`: {e}")))
        };
        let get_or = |k: &str, default: f64| -> Result<f64, CameraError> {
            match map.get(k) {
                Some(v) => v
                    .parse::<f64>()
                    .map_err(|e| CameraError::Config(format!("bad value for `{k}`: {e}"))),
                None => Ok(default),
            }
        };
        let intrinsics = PinholeIntrinsics::new(
            get("fx")?,
            get("fy")?,
            get("cx")?,
            get("cy")?,
            get("width")? as usize,
            get("height")? as usize,
        )?;
        let model = map
            .get("model")
            .map(|s| s.to_ascii_lowercase())
            .unwrap_or_else(|| "pinhole".to_string());
        let lens = match model.as_str() {
            "pinhole" => LensModel::Pinhole(DistortionCoefficients {
                k1: get_or("k1", 0.0)?,
                k2: get_or("k2", 0.0)?,
                p1: get_or("p1", 0.0)?,
                p2: get_or("p2", 0.0)?,
                k3: get_or("k3", 0.0)?,
            }),
            "omni" => LensModel::Omni(OmniPolynomial::new([
                get_or("a0", 0.0)?,
                get_or("a1", 0.0)?,
                get_or("a2", 0.0)?,
                get_or("a3", 0.0)?,
                get_or("a4", 0.0)?,
                get_or("a5", 0.0)?,
            ])?),
            other => {
                return Err(CameraError::Config(format!("unknown model `{other}`")));
            }
        };
        let roi = if map.contains_key("roi_x") {
            Some(RegionOfInterest::new(
                get("roi_x")? as usize,
                get("roi_y")? as usize,
                get("roi_w")? as usize,
                get("roi_h")? as usize,
            ))
        } else {
            None
        };
        Ok(CameraConfig {
            intrinsics,
            lens,
            roi,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CameraError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CameraError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}
