//! Undistortion maps, ROI extraction, and frame resizing.
//!
//! Maps are precomputed once per camera model and applied per frame;
//! destination pixels with no valid source sample are written black.

use super::image::Image;
use super::model::{CameraError, DistortionCoefficients, OmniPolynomial, PinholeIntrinsics};

/// Valid sub-rectangle of a frame; (x, y) top-left, (w, h) extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionOfInterest {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl RegionOfInterest {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        RegionOfInterest { x, y, w, h }
    }
}

/// Precomputed per-destination-pixel source coordinates. Negative entries
/// mark destination pixels with no valid source.
#[derive(Debug, Clone)]
pub struct UndistortionMap {
    width: usize,
    height: usize,
    src_width: usize,
    src_height: usize,
    map: Vec<(f32, f32)>,
}

impl UndistortionMap {
    /// Map for the radial/tangential pinhole model. Each destination
    /// (undistorted) pixel is pushed through the forward distortion to find
    /// its source sample.
    pub fn pinhole(intr: &PinholeIntrinsics, dist: &DistortionCoefficients) -> Self {
        let mut map = Vec::with_capacity(intr.width * intr.height);
        for v in 0..intr.height {
            for u in 0..intr.width {
                let x = (u as f64 - intr.cx) / intr.fx;
                let y = (v as f64 - intr.cy) / intr.fy;
                let (xd, yd) = dist.distort(x, y);
                map.push(((intr.fx * xd + intr.cx) as f32, (intr.fy * yd + intr.cy) as f32));
            }
        }
        UndistortionMap {
            width: intr.width,
            height: intr.height,
            src_width: intr.width,
            src_height: intr.height,
            map,
        }
    }

    /// Map from an omnidirectional source frame to a pinhole destination.
    /// `src_center` is the omni image center and `src_dims` the source frame
    /// size; `dest` defines the virtual pinhole view.
    pub fn omni(
        poly: &OmniPolynomial,
        src_center: (f64, f64),
        src_dims: (usize, usize),
        dest: &PinholeIntrinsics,
    ) -> Self {
        let mut map = Vec::with_capacity(dest.width * dest.height);
        let rho_max = (src_dims.0.max(src_dims.1)) as f64;
        for v in 0..dest.height {
            for u in 0..dest.width {
                let x = (u as f64 - dest.cx) / dest.fx;
                let y = (v as f64 - dest.cy) / dest.fy;
                let r_xy = (x * x + y * y).sqrt();
                let entry = if r_xy < 1e-12 {
                    // optical axis maps to the image center
                    (src_center.0 as f32, src_center.1 as f32)
                } else {
                    match solve_omni_radius(poly, r_xy, 1.0, rho_max) {
                        Some(rho) => (
                            (src_center.0 + x / r_xy * rho) as f32,
                            (src_center.1 + y / r_xy * rho) as f32,
                        ),
                        None => (-1.0, -1.0),
                    }
                };
                map.push(entry);
            }
        }
        UndistortionMap {
            width: dest.width,
            height: dest.height,
            src_width: src_dims.0,
            src_height: src_dims.1,
            map,
        }
    }

    /// Applies the map with bilinear interpolation; invalid or out-of-source
    /// samples write black.
    pub fn apply(&self, image: &Image) -> Result<Image, CameraError> {
        if image.width() != self.src_width || image.height() != self.src_height {
            return Err(CameraError::DimensionMismatch(
                image.width(),
                image.height(),
                self.src_width,
                self.src_height,
            ));
        }
        let gray = image.to_gray();
        let mut out = Image::zeros(self.width, self.height);
        out.timestamp_us = image.timestamp_us;
        for v in 0..self.height {
            for u in 0..self.width {
                let (sx, sy) = self.map[v * self.width + u];
                if sx >= 0.0 {
                    if let Some(val) = gray.sample_bilinear(sx as f64, sy as f64) {
                        out.set(u, v, val.round().clamp(0.0, 255.0) as u8);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Solves F(rho) * r_xy = z * rho for rho in (0, rho_max] by bisection on a
/// sign change, then Newton polish.
fn solve_omni_radius(poly: &OmniPolynomial, r_xy: f64, z: f64, rho_max: f64) -> Option<f64> {
    let g = |rho: f64| poly.eval(rho) * r_xy - z * rho;
    let n = 64;
    let mut lo = 0.0f64;
    let mut glo = g(lo);
    let mut bracket = None;
    for i in 1..=n {
        let hi = rho_max * i as f64 / n as f64;
        let ghi = g(hi);
        if glo == 0.0 {
            bracket = Some((lo, lo));
            break;
        }
        if glo * ghi <= 0.0 {
            bracket = Some((lo, hi));
            break;
        }
        lo = hi;
        glo = ghi;
    }
    let (mut a, mut b) = bracket?;
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        if g(a) * g(m) <= 0.0 {
            b = m;
        } else {
            a = m;
        }
    }
    let mut rho = 0.5 * (a + b);
    for _ in 0..4 {
        let dg = poly.eval_derivative(rho) * r_xy - z;
        if dg.abs() > 1e-12 {
            rho -= g(rho) / dg;
        }
    }
    (rho.is_finite() && rho >= 0.0).then_some(rho)
}

/// Undistorts a frame with the radial/tangential model. Zero coefficients
/// are an identity mapping and return a copy.
pub fn undistort(
    image: &Image,
    intr: &PinholeIntrinsics,
    dist: &DistortionCoefficients,
) -> Result<Image, CameraError> {
    if image.width() != intr.width || image.height() != intr.height {
        return Err(CameraError::DimensionMismatch(
            image.width(),
            image.height(),
            intr.width,
            intr.height,
        ));
    }
    if dist.is_zero() {
        return Ok(image.to_gray());
    }
    UndistortionMap::pinhole(intr, dist).apply(image)
}

/// Undistorts an omnidirectional frame into a virtual pinhole view.
pub fn undistort_omni(
    image: &Image,
    poly: &OmniPolynomial,
    src_center: (f64, f64),
    dest: &PinholeIntrinsics,
) -> Result<Image, CameraError> {
    UndistortionMap::omni(poly, src_center, (image.width(), image.height()), dest).apply(image)
}

/// Synthesizes a distorted frame from a clean pinhole frame (test helper for
/// the inverse path): each distorted pixel samples the clean image at its
/// undistorted location, found by fixed-point iteration.
pub fn apply_distortion(
    image: &Image,
    intr: &PinholeIntrinsics,
    dist: &DistortionCoefficients,
) -> Result<Image, CameraError> {
    if image.width() != intr.width || image.height() != intr.height {
        return Err(CameraError::DimensionMismatch(
            image.width(),
            image.height(),
            intr.width,
            intr.height,
        ));
    }
    let gray = image.to_gray();
    let mut out = Image::zeros(intr.width, intr.height);
    for v in 0..intr.height {
        for u in 0..intr.width {
            let xd = (u as f64 - intr.cx) / intr.fx;
            let yd = (v as f64 - intr.cy) / intr.fy;
            let (x, y) = dist.undistort_point(xd, yd);
            let sx = intr.fx * x + intr.cx;
            let sy = intr.fy * y + intr.cy;
            if let Some(val) = gray.sample_bilinear(sx, sy) {
                out.set(u, v, val.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(out)
}

/// Copies the ROI rows out of `image`.
pub fn extract_roi(image: &Image, roi: &RegionOfInterest) -> Result<Image, CameraError> {
    if roi.x + roi.w > image.width() || roi.y + roi.h > image.height() || roi.w == 0 || roi.h == 0 {
        return Err(CameraError::Invalid(format!(
            "roi ({},{},{},{}) outside {}x{} frame",
            roi.x,
            roi.y,
            roi.w,
            roi.h,
            image.width(),
            image.height()
        )));
    }
    let c = image.channels();
    let mut data = Vec::with_capacity(roi.w * roi.h * c);
    for row in roi.y..roi.y + roi.h {
        let start = (row * image.width() + roi.x) * c;
        data.extend_from_slice(&image.data()[start..start + roi.w * c]);
    }
    let mut out = Image::new(roi.w, roi.h, c, data).expect("sizes consistent by construction");
    out.timestamp_us = image.timestamp_us;
    Ok(out)
}

/// Bilinear resize, as in the frame-stream downsampling step
/// (e.g. 752x480 to 640x480).
pub fn resize_frame(image: &Image, new_width: usize, new_height: usize) -> Image {
    if new_width == image.width() && new_height == image.height() {
        return image.clone();
    }
    let gray = image.to_gray();
    let mut out = Image::zeros(new_width, new_height);
    out.timestamp_us = image.timestamp_us;
    let sx = gray.width() as f64 / new_width as f64;
    let sy = gray.height() as f64 / new_height as f64;
    for v in 0..new_height {
        for u in 0..new_width {
            // pixel-center mapping
            let x = ((u as f64 + 0.5) * sx - 0.5)
                .clamp(0.0, (gray.width() - 1) as f64);
            let y = ((v as f64 + 0.5) * sy - 0.5)
                .clamp(0.0, (gray.height() - 1) as f64);
            let x0 = x.floor().min(gray.width().saturating_sub(2) as f64);
            let y0 = y.floor().min(gray.height().saturating_sub(2) as f64);
            let fx = x - x0;
            let fy = y - y0;
            let (x0, y0) = (x0 as usize, y0 as usize);
            let x1 = (x0 + 1).min(gray.width() - 1);
            let y1 = (y0 + 1).min(gray.height() - 1);
            let val = gray.get(x0, y0) as f64 * (1.0 - fx) * (1.0 - fy)
                + gray.get(x1, y0) as f64 * fx * (1.0 - fy)
                + gray.get(x0, y1) as f64 * (1.0 - fx) * fy
                + gray.get(x1, y1) as f64 * fx * fy;
            out.set(u, v, val.round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> PinholeIntrinsics {
        PinholeIntrinsics::new(300.0, 300.0, 160.0, 120.0, 320, 240).unwrap()
    }

    fn grid_image(w: usize, h: usize, pitch: usize) -> Image {
        Image::from_fn(w, h, |x, y| {
            if x % pitch == 0 || y % pitch == 0 {
                255
            } else {
                32
            }
        })
    }

    #[test]
    fn zero_distortion_is_identity() {
        let img = grid_image(320, 240, 16);
        let out = undistort(&img, &intr(), &DistortionCoefficients::default()).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let img = grid_image(64, 64, 8);
        assert!(undistort(&img, &intr(), &DistortionCoefficients::default()).is_err());
    }

    /// Synthetic distortion applied then inverted: a vertical grid line bent
    /// by radial distortion straightens to within 0.5 px of a least-squares
    /// line after undistortion.
    #[test]
    fn radial_distortion_straightens_grid_lines() {
        let intr = intr();
        let dist = DistortionCoefficients {
            k1: -0.3,
            ..Default::default()
        };
        // single bright vertical line at x=40, away from the center
        let clean = Image::from_fn(320, 240, |x, _| if x == 40 { 255 } else { 0 });
        let distorted = apply_distortion(&clean, &intr, &dist).unwrap();
        let line_dev = |img: &Image| -> f64 {
            // centroid column per row, then max deviation from the LS line
            let mut pts = Vec::new();
            for y in 20..220 {
                let mut sum = 0.0;
                let mut wsum = 0.0;
                for x in 0..img.width() {
                    let v = img.get(x, y) as f64;
                    sum += v * x as f64;
                    wsum += v;
                }
                if wsum > 100.0 {
                    pts.push((y as f64, sum / wsum));
                }
            }
            let n = pts.len() as f64;
            let my = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let mx = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy: f64 = pts.iter().map(|p| (p.0 - my) * (p.1 - mx)).sum();
            let syy: f64 = pts.iter().map(|p| (p.0 - my) * (p.0 - my)).sum();
            let slope = sxy / syy;
            pts.iter()
                .map(|p| (p.1 - (mx + slope * (p.0 - my))).abs())
                .fold(0.0, f64::max)
        };
        let dev_distorted = line_dev(&distorted);
        let corrected = undistort(&distorted, &intr, &dist).unwrap();
        let dev_corrected = line_dev(&corrected);
        assert!(
            dev_distorted > 2.0,
            "distortion should visibly bend the line (got {dev_distorted})"
        );
        assert!(
            dev_corrected < 0.5,
            "corrected line deviation {dev_corrected} not < 0.5 px"
        );
    }

    /// Border pixels whose source falls outside the frame come out black.
    #[test]
    fn border_without_source_is_black() {
        let intr = intr();
        // pincushion: pushes border samples outside the source frame
        let dist = DistortionCoefficients {
            k1: 0.5,
            ..Default::default()
        };
        let img = Image::from_fn(320, 240, |_, _| 200);
        let out = undistort(&img, &intr, &dist).unwrap();
        assert_eq!(out.get(0, 0), 0);
        assert_eq!(out.get(319, 239), 0);
        assert_eq!(out.get(160, 120), 200);
    }

    #[test]
    fn omni_map_center_and_symmetry() {
        // simple linear projection F(rho) = 300 - 0.0 *rho ... use a poly with
        // a0 > 0 so rays map to radius proportional to tan(angle)
        let poly = OmniPolynomial::new([300.0, 0.0, -0.001, 0.0, 0.0, 0.0]).unwrap();
        let dest = PinholeIntrinsics::new(200.0, 200.0, 64.0, 64.0, 128, 128).unwrap();
        let img = Image::from_fn(256, 256, |x, y| ((x + y) % 251) as u8);
        let out = undistort_omni(&img, &poly, (128.0, 128.0), &dest).unwrap();
        assert_eq!(out.width(), 128);
        // the optical axis samples the omni center
        assert_eq!(out.get(64, 64), img.get(128, 128));
    }

    #[test]
    fn roi_full_frame_and_inner_block() {
        let img = grid_image(16, 16, 4);
        let full = extract_roi(&img, &RegionOfInterest::new(0, 0, 16, 16)).unwrap();
        assert_eq!(full.data(), img.data());
        // 4x4 checkerboard, inner 2x2
        let board = Image::from_fn(4, 4, |x, y| if (x + y) % 2 == 0 { 255 } else { 0 });
        let inner = extract_roi(&board, &RegionOfInterest::new(1, 1, 2, 2)).unwrap();
        assert_eq!(inner.data(), &[255, 0, 0, 255]);
        assert!(extract_roi(&board, &RegionOfInterest::new(3, 3, 2, 2)).is_err());
    }

    #[test]
    fn nested_roi_composes() {
        let img = grid_image(32, 32, 5);
        let outer = extract_roi(&img, &RegionOfInterest::new(4, 6, 20, 18)).unwrap();
        let nested = extract_roi(&outer, &RegionOfInterest::new(3, 2, 10, 8)).unwrap();
        let combined = extract_roi(&img, &RegionOfInterest::new(7, 8, 10, 8)).unwrap();
        assert_eq!(nested.data(), combined.data());
    }

    #[test]
    fn resize_same_size_and_constant() {
        let img = grid_image(20, 10, 3);
        assert_eq!(resize_frame(&img, 20, 10).data(), img.data());
        let flat = Image::from_fn(20, 10, |_, _| 77);
        let out = resize_frame(&flat, 13, 7);
        assert!(out.data().iter().all(|&v| v == 77));
    }

    #[test]
    fn resize_monotone_ramp() {
        let img = Image::new(2, 1, 1, vec![0, 255]).unwrap();
        let out = resize_frame(&img, 4, 1);
        for i in 1..4 {
            assert!(out.data()[i] >= out.data()[i - 1]);
        }
        assert!(out.data()[3] as i32 - out.data()[0] as i32 > 100);
    }
}
