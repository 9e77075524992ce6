//! Pinhole and omnidirectional projection models.

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("invalid intrinsics: {0}")]
    Invalid(String),
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("inverse depth must be positive, got {0}")]
    NonPositiveInverseDepth(f64),
    #[error("image dimensions {0}x{1} do not match camera model {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("config error: {0}")]
    Config(String),
}

/// Pinhole camera matrix: focal lengths and optical center in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl PinholeIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, CameraError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(CameraError::Invalid(format!("fx={fx}, fy={fy}")));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(CameraError::Invalid(format!(
                "optical center ({cx},{cy}) outside {width}x{height}"
            )));
        }
        Ok(PinholeIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Intrinsics of pyramid level `level` (each level halves the resolution).
    pub fn at_level(&self, level: usize) -> PinholeIntrinsics {
        let s = 1.0 / (1 << level) as f64;
        PinholeIntrinsics {
            fx: self.fx * s,
            fy: self.fy * s,
            cx: self.cx * s,
            cy: self.cy * s,
            width: (self.width + (1 << level) - 1) >> level,
            height: (self.height + (1 << level) - 1) >> level,
        }
    }
}

/// Radial/tangential distortion (k1, k2, p1, p2, k3).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DistortionCoefficients {
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
    pub k3: f64,
}

impl DistortionCoefficients {
    pub fn is_zero(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0 && self.p1 == 0.0 && self.p2 == 0.0 && self.k3 == 0.0
    }

    /// Forward distortion of normalized image coordinates.
    pub fn distort(&self, x: f64, y: f64) -> (f64, f64) {
        let r2 = x * x + y * y;
        let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2 + self.k3 * r2 * r2 * r2;
        let xd = x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
        (xd, yd)
    }

    /// Inverse distortion by fixed-point iteration (8 iterations).
    pub fn undistort_point(&self, xd: f64, yd: f64) -> (f64, f64) {
        let (mut x, mut y) = (xd, yd);
        for _ in 0..8 {
            let r2 = x * x + y * y;
            let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2 + self.k3 * r2 * r2 * r2;
            let dx = 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
            let dy = self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
            x = (xd - dx) / radial;
            y = (yd - dy) / radial;
        }
        (x, y)
    }
}

/// Fifth-order polynomial of the omnidirectional projection function,
/// evaluated over the radial image distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmniPolynomial {
    coeffs: [f64; 6],
}

impl OmniPolynomial {
    pub fn new(coeffs: [f64; 6]) -> Result<Self, CameraError> {
        if coeffs.iter().all(|&c| c == 0.0) {
            return Err(CameraError::Invalid("all-zero polynomial".into()));
        }
        Ok(OmniPolynomial { coeffs })
    }

    pub fn coeffs(&self) -> &[f64; 6] {
        &self.coeffs
    }

    pub fn eval(&self, rho: f64) -> f64 {
        // Horner
        self.coeffs
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * rho + c)
    }

    pub fn eval_derivative(&self, rho: f64) -> f64 {
        let mut acc = 0.0;
        for i in (1..6).rev() {
            acc = acc * rho + self.coeffs[i] * i as f64;
        }
        acc
    }
}

/// F(rho) = a0 + a1 rho + a2 rho^2 + a3 rho^3 + a4 rho^4 + a5 rho^5
pub fn omni_projection(rho: f64, coeffs: &OmniPolynomial) -> f64 {
    coeffs.eval(rho)
}

/// Pinhole projection: u = fx x/z + cx, v = fy y/z + cy.
pub fn project(point: Vector3<f64>, intr: &PinholeIntrinsics) -> Result<Vector2<f64>, CameraError> {
    if point.z <= 1e-9 {
        return Err(CameraError::BehindCamera(point.z));
    }
    Ok(Vector2::new(
        intr.fx * point.x / point.z + intr.cx,
        intr.fy * point.y / point.z + intr.cy,
    ))
}

/// Point at depth `1/inverse_depth` along the ray through `pixel`.
pub fn unproject(
    pixel: Vector2<f64>,
    inverse_depth: f64,
    intr: &PinholeIntrinsics,
) -> Result<Vector3<f64>, CameraError> {
    if inverse_depth <= 0.0 {
        return Err(CameraError::NonPositiveInverseDepth(inverse_depth));
    }
    let z = 1.0 / inverse_depth;
    Ok(Vector3::new(
        (pixel.x - intr.cx) / intr.fx * z,
        (pixel.y - intr.cy) / intr.fy * z,
        z,
    ))
}
