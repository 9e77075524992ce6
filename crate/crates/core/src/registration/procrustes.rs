//! Closed-form point-based alignment (the Procrustes problem).

use super::{RegistrationError, RegistrationResult};
use crate::geometry::{RotationMatrix, SimTransform};
use nalgebra::{Matrix3, Vector3};

/// Finds the similarity (or rigid, when `with_scale` is false) transform
/// minimizing the mean squared distance `mean ||s R p_i + t - q_i||^2`.
///
/// Closed form: centroid removal, cross-covariance SVD with a reflection
/// guard, scale from the singular-value sum over the source variance.
pub fn procrustes_align(
    p: &[Vector3<f64>],
    q: &[Vector3<f64>],
    with_scale: bool,
) -> Result<RegistrationResult, RegistrationError> {
    if p.len() != q.len() || p.len() < 3 {
        return Err(RegistrationError::BadPointSets(p.len(), q.len()));
    }
    let n = p.len() as f64;
    let p_bar: Vector3<f64> = p.iter().sum::<Vector3<f64>>() / n;
    let q_bar: Vector3<f64> = q.iter().sum::<Vector3<f64>>() / n;

    let mut cross = Matrix3::zeros();
    let mut p_var = 0.0;
    for (pi, qi) in p.iter().zip(q) {
        let dp = pi - p_bar;
        let dq = qi - q_bar;
        cross += dq * dp.transpose();
        p_var += dp.norm_squared();
    }

    // degenerate when the source points are collinear or coincident
    let p_cov_svd = {
        let mut cov = Matrix3::zeros();
        for pi in p {
            let dp = pi - p_bar;
            cov += dp * dp.transpose();
        }
        cov.svd(false, false)
    };
    let sv = p_cov_svd.singular_values;
    if sv[1] <= 1e-12 * sv[0] || sv[0] == 0.0 {
        return Err(RegistrationError::Degenerate);
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd with u");
    let v_t = svd.v_t.expect("svd with v_t");
    let d = (u * v_t).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = u * correction * v_t;
    let rotation = RotationMatrix::from_matrix(r).map_err(|_| RegistrationError::Degenerate)?;

    let scale = if with_scale {
        let sigma_sum = svd.singular_values[0] + svd.singular_values[1] + d * svd.singular_values[2];
        sigma_sum / p_var
    } else {
        1.0
    };
    let translation = q_bar - scale * (r * p_bar);

    let transform = SimTransform {
        rotation,
        translation,
        scale,
    };
    let e = p
        .iter()
        .zip(q)
        .map(|(pi, qi)| (transform.apply(*pi) - qi).norm_squared())
        .sum::<f64>()
        / n;
    Ok(RegistrationResult {
        transform,
        metric_value: e,
        iterations: 1,
        converged: true,
    })
}
