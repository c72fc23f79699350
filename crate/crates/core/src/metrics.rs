//! Image quality metrics on magnitude images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::ComplexImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Dynamic range of normalized magnitudes.
pub const PEAK: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    /// `+inf` for identical inputs.
    pub psnr_db: f64,
    pub ssim: f64,
}

impl QualityScore {
    pub fn evaluate(reference: &ComplexImage, test: &ComplexImage) -> Result<Self> {
        Ok(Self {
            psnr_db: psnr(reference, test)?,
            ssim: ssim(reference, test)?,
        })
    }
}

/// Real-valued map, e.g. a filtered difference map.
#[derive(Clone, Debug, PartialEq)]
pub struct RealMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

/// Mean squared error between magnitude images.
pub fn magnitude_mse(reference: &ComplexImage, test: &ComplexImage) -> Result<f64> {
    reference.same_dims(test)?;
    let sum: f64 = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a.norm() - b.norm()).powi(2))
        .sum();
    Ok(sum / reference.len() as f64)
}

/// `10 log10(PEAK^2 / MSE)` on magnitudes.
pub fn psnr(reference: &ComplexImage, test: &ComplexImage) -> Result<f64> {
    let mse = magnitude_mse(reference, test)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / mse).log10())
}

fn gaussian_kernel() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Weighted local statistics of one window, anchored at the window's center
/// sample so constant windows produce exact means and zero variances.
struct WindowStats {
    mean_a: f64,
    mean_b: f64,
    var_a: f64,
    var_b: f64,
    cov: f64,
}

fn window_stats(a: &[f64], b: &[f64], width: usize, top: usize, left: usize, weights: &[f64]) -> WindowStats {
    let half = SSIM_WINDOW / 2;
    let center = (top + half) * width + left + half;
    let (ca, cb) = (a[center], b[center]);
    let (mut da, mut db) = (0.0, 0.0);
    for (wy, row) in (top..top + SSIM_WINDOW).enumerate() {
        for (wx, col) in (left..left + SSIM_WINDOW).enumerate() {
            let w = weights[wy * SSIM_WINDOW + wx];
            da += w * (a[row * width + col] - ca);
            db += w * (b[row * width + col] - cb);
        }
    }
    let (mean_a, mean_b) = (ca + da, cb + db);
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for (wy, row) in (top..top + SSIM_WINDOW).enumerate() {
        for (wx, col) in (left..left + SSIM_WINDOW).enumerate() {
            let w = weights[wy * SSIM_WINDOW + wx];
            let (xa, xb) = (a[row * width + col] - mean_a, b[row * width + col] - mean_b);
            var_a += w * xa * xa;
            var_b += w * xb * xb;
            cov += w * xa * xb;
        }
    }
    WindowStats {
        mean_a,
        mean_b,
        var_a,
        var_b,
        cov,
    }
}

/// Mean local SSIM over all fully contained 11x11 Gaussian windows
/// (sigma 1.5, `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2`, `L = 1`).
pub fn ssim(reference: &ComplexImage, test: &ComplexImage) -> Result<f64> {
    reference.same_dims(test)?;
    let (h, w) = reference.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let a = reference.magnitude();
    let b = test.magnitude();
    let g = gaussian_kernel();
    let weights: Vec<f64> = g.iter().flat_map(|&gy| g.iter().map(move |&gx| gy * gx)).collect();
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);

    let mut first = None;
    let mut offset_sum = 0.0;
    let mut count = 0usize;
    for top in 0..=h - SSIM_WINDOW {
        for left in 0..=w - SSIM_WINDOW {
            let s = window_stats(&a, &b, w, top, left, &weights);
            let luminance = (2.0 * s.mean_a * s.mean_b + c1) / (s.mean_a * s.mean_a + s.mean_b * s.mean_b + c1);
            let structure = (2.0 * s.cov + c2) / (s.var_a + s.var_b + c2);
            let local = luminance * structure;
            // Shifted running mean: exact when all windows agree.
            let anchor = *first.get_or_insert(local);
            offset_sum += local - anchor;
            count += 1;
        }
    }
    Ok(first.unwrap_or(0.0) + offset_sum / count as f64)
}

/// `max(0, |x_fs - guide| - |x_fs - zf|)` pixelwise.
pub fn filtered_diff_map(x_fs: &ComplexImage, guide: &ComplexImage, zf: &ComplexImage) -> Result<RealMap> {
    x_fs.same_dims(guide)?;
    x_fs.same_dims(zf)?;
    let data = x_fs
        .data()
        .iter()
        .zip(guide.data())
        .zip(zf.data())
        .map(|((x, g), z)| ((x - g).norm() - (x - z).norm()).max(0.0))
        .collect();
    Ok(RealMap {
        height: x_fs.height(),
        width: x_fs.width(),
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::tests::random_image;
    use num_complex::Complex64;

    fn constant(h: usize, w: usize, v: f64) -> ComplexImage {
        ComplexImage::new(h, w, vec![Complex64::new(v, 0.0); h * w]).unwrap()
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let x = random_image(16, 16, 1);
        assert_eq!(psnr(&x, &x).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_constant_offset() {
        let a = constant(8, 8, 0.5);
        let b = constant(8, 8, 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_error_scaling() {
        let a = random_image(16, 16, 2);
        let err = random_image(16, 16, 3).scale(0.01);
        let b = &a + &err;
        let mag_a = a.magnitude();
        let mag_b = b.magnitude();
        // Scale the magnitude error by lambda on a real-valued pair.
        let ra = ComplexImage::from_parts(16, 16, &mag_a, &vec![0.0; 256]).unwrap();
        let rb = ComplexImage::from_parts(16, 16, &mag_b, &vec![0.0; 256]).unwrap();
        let lambda = 3.0;
        let scaled: Vec<f64> = mag_a.iter().zip(&mag_b).map(|(x, y)| x + lambda * (y - x)).collect();
        let rc = ComplexImage::from_parts(16, 16, &scaled, &vec![0.0; 256]).unwrap();
        let drop = psnr(&ra, &rb).unwrap() - psnr(&ra, &rc).unwrap();
        assert!((drop - 20.0 * lambda.log10()).abs() < 1e-9);
    }

    #[test]
    fn ssim_identity_and_constants() {
        let x = random_image(24, 20, 4);
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        let c1 = 0.2;
        let c2 = 0.4;
        let k1 = (SSIM_K1 * PEAK).powi(2);
        let expected = (2.0 * c1 * c2 + k1) / (c1 * c1 + c2 * c2 + k1);
        assert_eq!(ssim(&constant(16, 16, c1), &constant(16, 16, c2)).unwrap(), expected);
        // 0.1601 / 0.2001
        assert!((expected - 0.800_099_950_025).abs() < 1e-11);
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = random_image(20, 20, 5);
        let b = random_image(20, 20, 6);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = random_image(10, 20, 5);
        assert!(matches!(ssim(&a, &a), Err(Error::Dimension(_))));
    }

    #[test]
    fn filtered_map_cases() {
        let x = random_image(8, 8, 7);
        let g = random_image(8, 8, 8);
        assert!(filtered_diff_map(&x, &g, &g).unwrap().data.iter().all(|&v| v == 0.0));
        let zf = random_image(8, 8, 9);
        assert!(filtered_diff_map(&x, &x, &zf).unwrap().data.iter().all(|&v| v == 0.0));

        let truth = constant(1, 1, 1.0);
        let guide = constant(1, 1, 0.7);
        let aliased = constant(1, 1, 0.9);
        let m = filtered_diff_map(&truth, &guide, &aliased).unwrap();
        assert!((m.data[0] - 0.2).abs() < 1e-15);

        let m = filtered_diff_map(&x, &g, &zf).unwrap();
        for (i, v) in m.data.iter().enumerate() {
            let d = (x.data()[i] - g.data()[i]).norm() - (x.data()[i] - zf.data()[i]).norm();
            assert_eq!(*v, if d > 0.0 { d } else { 0.0 });
        }
    }

    #[test]
    fn dimension_mismatch() {
        let a = random_image(8, 8, 1);
        let b = random_image(8, 9, 1);
        assert!(psnr(&a, &b).is_err());
        assert!(filtered_diff_map(&a, &a, &b).is_err());
    }
}
