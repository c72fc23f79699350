//! Orthonormal multi-level 2D Haar transform in the usual pyramid layout:
//! after each level the top-left quadrant holds the approximation band and
//! the transform recurses into it.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fourier::ComplexImage;

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn check_levels(height: usize, width: usize, levels: usize) -> Result<()> {
    let block = 1usize.checked_shl(levels as u32).unwrap_or(0);
    if levels == 0 || block == 0 || height % block != 0 || width % block != 0 {
        return Err(Error::Dimension(format!(
            "{height}x{width} is not divisible by 2^{levels}"
        )));
    }
    Ok(())
}

/// Size of the coarsest approximation band.
pub fn approximation_dims(height: usize, width: usize, levels: usize) -> (usize, usize) {
    (height >> levels, width >> levels)
}

fn forward_1d(buf: &mut [Complex64], tmp: &mut Vec<Complex64>) {
    let half = buf.len() / 2;
    tmp.clear();
    tmp.extend((0..half).map(|i| (buf[2 * i] + buf[2 * i + 1]) * INV_SQRT2));
    tmp.extend((0..half).map(|i| (buf[2 * i] - buf[2 * i + 1]) * INV_SQRT2));
    buf.copy_from_slice(tmp);
}

fn inverse_1d(buf: &mut [Complex64], tmp: &mut Vec<Complex64>) {
    let half = buf.len() / 2;
    tmp.clear();
    tmp.resize(buf.len(), Complex64::new(0.0, 0.0));
    for i in 0..half {
        let (a, d) = (buf[i], buf[half + i]);
        tmp[2 * i] = (a + d) * INV_SQRT2;
        tmp[2 * i + 1] = (a - d) * INV_SQRT2;
    }
    buf.copy_from_slice(tmp);
}

/// Applies `f` to every row and then every column of the top-left `h x w` region.
fn separable(data: &mut [Complex64], stride: usize, h: usize, w: usize, f: fn(&mut [Complex64], &mut Vec<Complex64>)) {
    let mut tmp = Vec::with_capacity(h.max(w));
    for r in 0..h {
        f(&mut data[r * stride..r * stride + w], &mut tmp);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            column[r] = data[r * stride + c];
        }
        f(&mut column, &mut tmp);
        for r in 0..h {
            data[r * stride + c] = column[r];
        }
    }
}

pub fn haar_dwt2(img: &ComplexImage, levels: usize) -> Result<ComplexImage> {
    let (height, width) = img.dims();
    check_levels(height, width, levels)?;
    let mut out = img.clone();
    let (mut h, mut w) = (height, width);
    for _ in 0..levels {
        separable(out.data_mut(), width, h, w, forward_1d);
        h /= 2;
        w /= 2;
    }
    Ok(out)
}

pub fn haar_idwt2(coeffs: &ComplexImage, levels: usize) -> Result<ComplexImage> {
    let (height, width) = coeffs.dims();
    check_levels(height, width, levels)?;
    let mut out = coeffs.clone();
    for level in (0..levels).rev() {
        let (h, w) = (height >> level, width >> level);
        // Inverse of "rows then columns" is "columns then rows"; the two
        // passes commute for a separable transform, so order is immaterial.
        separable(out.data_mut(), width, h, w, inverse_1d);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::tests::random_image;

    #[test]
    fn constant_image_has_no_detail() {
        let img = ComplexImage::new(8, 8, vec![Complex64::new(0.7, -0.2); 64]).unwrap();
        let c = haar_dwt2(&img, 3).unwrap();
        // Only the 1x1 approximation survives, carrying all energy.
        assert!((c.data()[0] - Complex64::new(0.7, -0.2) * 8.0).norm() < 1e-12);
        assert!(c.data()[1..].iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn round_trip_and_parseval() {
        let img = random_image(32, 32, 1);
        for levels in 1..=5 {
            let c = haar_dwt2(&img, levels).unwrap();
            assert!((c.energy() - img.energy()).abs() / img.energy() < 1e-12);
            let back = haar_idwt2(&c, levels).unwrap();
            let err = (&back - &img).energy().sqrt() / img.energy().sqrt();
            assert!(err < 1e-12);
        }
        let rect = random_image(16, 8, 2);
        let back = haar_idwt2(&haar_dwt2(&rect, 2).unwrap(), 2).unwrap();
        assert!((&back - &rect).energy().sqrt() < 1e-12);
    }

    #[test]
    fn single_block_matches_matrix_oracle() {
        let [a, b, c, d] = [
            Complex64::new(1.0, 0.5),
            Complex64::new(-2.0, 0.0),
            Complex64::new(0.25, -1.0),
            Complex64::new(3.0, 2.0),
        ];
        let img = ComplexImage::new(2, 2, vec![a, b, c, d]).unwrap();
        let out = haar_dwt2(&img, 1).unwrap();
        // Rows of the 4x4 orthonormal Haar matrix acting on (a, b, c, d).
        let basis = [
            [0.5, 0.5, 0.5, 0.5],
            [0.5, -0.5, 0.5, -0.5],
            [0.5, 0.5, -0.5, -0.5],
            [0.5, -0.5, -0.5, 0.5],
        ];
        let x = [a, b, c, d];
        let expected: Vec<Complex64> = basis
            .iter()
            .map(|row| row.iter().zip(&x).map(|(w, v)| v * *w).sum())
            .collect();
        // Layout: [[LL, row-detail], [column-detail, diagonal]].
        for (got, want) in out.data().iter().zip(&expected) {
            assert!((got - want).norm() < 1e-15);
        }
        assert!((out.data()[0] - (a + b + c + d) / 2.0).norm() < 1e-15);
    }

    #[test]
    fn indivisible_dimensions() {
        let img = random_image(12, 8, 3);
        assert!(haar_dwt2(&img, 2).is_ok());
        assert!(matches!(haar_dwt2(&img, 3), Err(Error::Dimension(_))));
        assert!(matches!(haar_idwt2(&img, 0), Err(Error::Dimension(_))));
    }
}
