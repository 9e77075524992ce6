//! Pixel-wise similarity metrics over equally sized images.

use super::RegistrationError;
use crate::camera::Image;

fn check_dims(a: &Image, b: &Image) -> Result<(), RegistrationError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(RegistrationError::DimensionMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    Ok(())
}

/// Mean of squared per-pixel differences.
pub fn ssd(a: &Image, b: &Image) -> Result<f64, RegistrationError> {
    check_dims(a, b)?;
    let mut sum = 0.0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x as f64 - y as f64;
        sum += d * d;
    }
    Ok(sum / a.data().len() as f64)
}

/// Mean of absolute per-pixel differences.
pub fn sad(a: &Image, b: &Image) -> Result<f64, RegistrationError> {
    check_dims(a, b)?;
    let mut sum = 0.0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        sum += (x as f64 - y as f64).abs();
    }
    Ok(sum / a.data().len() as f64)
}

/// Normalized cross correlation in [-1, 1]; errors when either image has
/// zero intensity variance.
pub fn ncc(a: &Image, b: &Image) -> Result<f64, RegistrationError> {
    check_dims(a, b)?;
    ncc_samples(
        a.data().iter().map(|&v| v as f64),
        b.data().iter().map(|&v| v as f64),
    )
}

/// NCC over paired intensity samples.
pub fn ncc_samples(
    a: impl Iterator<Item = f64> + Clone,
    b: impl Iterator<Item = f64> + Clone,
) -> Result<f64, RegistrationError> {
    let n = a.clone().count();
    if n == 0 {
        return Err(RegistrationError::NoOverlap);
    }
    let mean_a = a.clone().sum::<f64>() / n as f64;
    let mean_b = b.clone().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in a.zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        num += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a <= 0.0 || var_b <= 0.0 {
        return Err(RegistrationError::ZeroVariance);
    }
    Ok(num / (var_a.sqrt() * var_b.sqrt()))
}
