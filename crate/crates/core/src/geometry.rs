//! Lie-group types for rigid (SE(3)) and similarity (Sim(3)) transforms.
//!
//! Tangent-space ordering is (translation 3, rotation 3) for se(3) and
//! (translation 3, rotation 3, log-scale 1) for sim(3). Rotations are stored
//! in matrix form.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// se(3) tangent vector: (translation x3, rotation x3).
pub type Twist6 = nalgebra::SVector<f64, 6>;
/// sim(3) tangent vector: (translation x3, rotation x3, log-scale).
pub type Twist7 = nalgebra::SVector<f64, 7>;

const ORTHONORMALITY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("matrix is not a proper rotation (orthonormality residual {residual:.3e})")]
    NotARotation { residual: f64 },
    #[error("rotation angle {angle} too close to pi for a stable logarithm")]
    AngleNearPi { angle: f64 },
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
}

/// A proper rotation: orthonormal with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    /// Wraps a matrix after checking orthonormality and orientation.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let residual = (m.transpose() * m - Matrix3::identity()).abs().max();
        if residual > ORTHONORMALITY_TOL || m.determinant() < 0.0 {
            return Err(GeometryError::NotARotation { residual });
        }
        Ok(RotationMatrix(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    /// Rodrigues formula with a second-order Taylor branch for small angles.
    pub fn exp(omega: Vector3<f64>) -> Self {
        let theta = omega.norm();
        let k = skew(omega);
        let (a, b) = if theta < 1e-8 {
            // sin(t)/t and (1-cos(t))/t^2
            (1.0 - theta * theta / 6.0, 0.5 - theta * theta / 24.0)
        } else {
            (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
        };
        RotationMatrix(Matrix3::identity() + k * a + k * k * b)
    }

    /// Rotation angle in [0, pi].
    pub fn angle(&self) -> f64 {
        let c = ((self.0.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Axis-angle vector. Errors when the angle is within 1e-6 of pi.
    pub fn log(&self) -> Result<Vector3<f64>, GeometryError> {
        let theta = self.angle();
        if theta >= std::f64::consts::PI - 1e-6 {
            return Err(GeometryError::AngleNearPi { angle: theta });
        }
        let v = Vector3::new(
            self.0[(2, 1)] - self.0[(1, 2)],
            self.0[(0, 2)] - self.0[(2, 0)],
            self.0[(1, 0)] - self.0[(0, 1)],
        );
        if theta < 1e-8 {
            Ok(v * (0.5 + theta * theta / 12.0))
        } else {
            Ok(v * (theta / (2.0 * theta.sin())))
        }
    }

    pub fn rotate(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.0 * p
    }

    /// Unit quaternion (x, y, z, w) of this rotation.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = nalgebra::UnitQuaternion::from_matrix(&self.0);
        [q.i, q.j, q.k, q.w]
    }

    pub fn from_quaternion(x: f64, y: f64, z: f64, w: f64) -> Self {
        let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
        RotationMatrix(q.to_rotation_matrix().into_inner())
    }
}

/// SE(3) element: rotation plus translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl RigidPose {
    pub fn identity() -> Self {
        RigidPose {
            rotation: RotationMatrix::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: RotationMatrix, translation: Vector3<f64>) -> Self {
        RigidPose {
            rotation,
            translation,
        }
    }

    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: RotationMatrix(self.rotation.0 * other.rotation.0),
            translation: self.rotation.0 * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidPose {
        let rt = self.rotation.0.transpose();
        RigidPose {
            rotation: RotationMatrix(rt),
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation.0 * p + self.translation
    }

    /// Lifts to Sim(3) with unit scale.
    pub fn to_sim3(&self) -> SimTransform {
        SimTransform {
            rotation: self.rotation,
            translation: self.translation,
            scale: 1.0,
        }
    }
}

/// Sim(3) element: rotation, translation, and uniform positive scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimTransform {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl SimTransform {
    pub fn identity() -> Self {
        SimTransform {
            rotation: RotationMatrix::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn new(
        rotation: RotationMatrix,
        translation: Vector3<f64>,
        scale: f64,
    ) -> Result<Self, GeometryError> {
        if !(scale > 0.0) {
            return Err(GeometryError::NonPositiveScale(scale));
        }
        Ok(SimTransform {
            rotation,
            translation,
            scale,
        })
    }

    pub fn compose(&self, other: &SimTransform) -> SimTransform {
        SimTransform {
            rotation: RotationMatrix(self.rotation.0 * other.rotation.0),
            translation: self.scale * (self.rotation.0 * other.translation) + self.translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> SimTransform {
        let rt = self.rotation.0.transpose();
        let s_inv = 1.0 / self.scale;
        SimTransform {
            rotation: RotationMatrix(rt),
            translation: -(rt * self.translation) * s_inv,
            scale: s_inv,
        }
    }

    /// apply(T, x) = s * R * x + t
    pub fn apply(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation.0 * p) + self.translation
    }

    /// Drops the scale component.
    pub fn to_rigid(&self) -> RigidPose {
        RigidPose {
            rotation: self.rotation,
            translation: self.translation,
        }
    }
}

pub fn skew(v: Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// SE(3) exponential map.
pub fn se3_exp(xi: &Twist6) -> RigidPose {
    let rho = Vector3::new(xi[0], xi[1], xi[2]);
    let omega = Vector3::new(xi[3], xi[4], xi[5]);
    let rotation = RotationMatrix::exp(omega);
    let translation = left_jacobian_so3(omega) * rho;
    RigidPose {
        rotation,
        translation,
    }
}

/// SE(3) logarithm. Errors for rotation angles within 1e-6 of pi.
pub fn se3_log(p: &RigidPose) -> Result<Twist6, GeometryError> {
    let omega = p.rotation.log()?;
    let v = left_jacobian_so3(omega);
    let rho = v
        .lu()
        .solve(&p.translation)
        .expect("left Jacobian is invertible for angle < pi");
    Ok(Twist6::from_column_slice(&[
        rho.x, rho.y, rho.z, omega.x, omega.y, omega.z,
    ]))
}

/// Sim(3) exponential map; the seventh component is log-scale.
pub fn sim3_exp(xi: &Twist7) -> SimTransform {
    let rho = Vector3::new(xi[0], xi[1], xi[2]);
    let omega = Vector3::new(xi[3], xi[4], xi[5]);
    let sigma = xi[6];
    let rotation = RotationMatrix::exp(omega);
    let translation = sim3_w_matrix(omega, sigma) * rho;
    SimTransform {
        rotation,
        translation,
        scale: sigma.exp(),
    }
}

/// Sim(3) logarithm, inverse of [`sim3_exp`].
pub fn sim3_log(t: &SimTransform) -> Result<Twist7, GeometryError> {
    if !(t.scale > 0.0) {
        return Err(GeometryError::NonPositiveScale(t.scale));
    }
    let omega = t.rotation.log()?;
    let sigma = t.scale.ln();
    let w = sim3_w_matrix(omega, sigma);
    let rho = w
        .lu()
        .solve(&t.translation)
        .expect("W matrix is invertible for angle < pi and finite sigma");
    Ok(Twist7::from_column_slice(&[
        rho.x, rho.y, rho.z, omega.x, omega.y, omega.z, sigma,
    ]))
}

/// V = I + (1-cos t)/t^2 [w]x + (t - sin t)/t^3 [w]x^2
fn left_jacobian_so3(omega: Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = skew(omega);
    let (b, c) = if theta < 1e-8 {
        (0.5 - theta * theta / 24.0, 1.0 / 6.0 - theta * theta / 120.0)
    } else {
        let t2 = theta * theta;
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    };
    Matrix3::identity() + k * b + k * k * c
}

/// W = C I + A [w]x + B [w]x^2 with coefficients from the integrals
/// int_0^1 e^{s u} {1, sin(t u), cos(t u)} du.
fn sim3_w_matrix(omega: Vector3<f64>, sigma: f64) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = skew(omega);
    let a = sigma;
    let b = theta;
    let i0 = if a.abs() < 1e-5 {
        1.0 + a / 2.0 + a * a / 6.0 + a * a * a / 24.0
    } else {
        (a.exp() - 1.0) / a
    };
    let (coef_a, coef_b) = if b < 1e-5 && a.abs() < 1e-5 {
        // joint Taylor in sigma and theta
        (
            0.5 + a / 3.0 + (a * a / 2.0 - b * b / 6.0) / 4.0,
            1.0 / 6.0 + a / 8.0,
        )
    } else if b < 1e-5 {
        let ea = a.exp();
        (
            (ea * (a - 1.0) + 1.0) / (a * a),
            (ea * (a * a - 2.0 * a + 2.0) - 2.0) / (2.0 * a * a * a),
        )
    } else {
        let ea = a.exp();
        let d = a * a + b * b;
        let ic = (ea * (a * b.cos() + b * b.sin()) - a) / d;
        let is = (ea * (a * b.sin() - b * b.cos()) + b) / d;
        (is / b, (i0 - ic) / (b * b))
    };
    Matrix3::identity() * i0 + k * coef_a + k * k * coef_b
}

/// Coordinate-convention conversion for rotation matrices coming from the
/// tracker: transpose, then negate the (1,2),(2,1),(2,3),(3,2) entries
/// (1-based). Equivalent to conjugation by diag(1,-1,1) of the transpose,
/// so the result stays orthonormal and the conversion is an involution.
pub fn convert_rotation_convention(m: &Matrix3<f64>) -> Result<RotationMatrix, GeometryError> {
    let residual = (m.transpose() * m - Matrix3::identity()).abs().max();
    if residual > ORTHONORMALITY_TOL {
        return Err(GeometryError::NotARotation { residual });
    }
    let mut out = m.transpose();
    out[(0, 1)] = -out[(0, 1)];
    out[(1, 0)] = -out[(1, 0)];
    out[(1, 2)] = -out[(1, 2)];
    out[(2, 1)] = -out[(2, 1)];
    Ok(RotationMatrix(out))
}
