//! Complex image / k-space containers and orthonormal 2D FFTs.
//!
//! Both transform directions are scaled by `1/sqrt(H*W)`, so `fft2` is unitary
//! and `ifft2` is its exact adjoint. K-space grids produced here are in natural
//! (DC at index 0) order; [`fftshift2`] moves DC to the grid center.

use std::cell::RefCell;
use std::ops::{Add, Sub};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// H×W grid of complex samples in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

/// H×W grid of Fourier coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceGrid {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
    dc_centered: bool,
}

fn check_grid(height: usize, width: usize, data: &[Complex64]) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension(format!("zero-sized grid {height}x{width}")));
    }
    if data.len() != height * width {
        return Err(Error::Dimension(format!(
            "{} samples for a {height}x{width} grid",
            data.len()
        )));
    }
    if let Some(i) = data.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::NonFinite(i));
    }
    Ok(())
}

impl ComplexImage {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        check_grid(height, width, &data)?;
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    /// Builds an image from separate real and imaginary planes.
    pub fn from_parts(height: usize, width: usize, re: &[f64], im: &[f64]) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::Dimension("real/imaginary plane lengths differ".into()));
        }
        let data = re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Squared l2 norm, `sum |x|^2`.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|z| z * factor)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    /// `<self, other> = sum conj(self) * other`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

impl Add for &ComplexImage {
    type Output = ComplexImage;

    fn add(self, rhs: &ComplexImage) -> ComplexImage {
        assert_eq!(self.dims(), rhs.dims(), "image dimensions differ");
        ComplexImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexImage {
    type Output = ComplexImage;

    fn sub(self, rhs: &ComplexImage) -> ComplexImage {
        assert_eq!(self.dims(), rhs.dims(), "image dimensions differ");
        ComplexImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl KSpaceGrid {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>, dc_centered: bool) -> Result<Self> {
        check_grid(height, width, &data)?;
        Ok(Self {
            height,
            width,
            data,
            dc_centered,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
            dc_centered: false,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn dc_centered(&self) -> bool {
        self.dc_centered
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn inner(&self, other: &Self) -> Complex64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            data: self.data.iter().map(|z| z * factor).collect(),
            ..self.clone()
        }
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plans(height: usize, width: usize, inverse: bool) -> (std::sync::Arc<dyn Fft<f64>>, std::sync::Arc<dyn Fft<f64>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            (p.plan_fft_inverse(height), p.plan_fft_inverse(width))
        } else {
            (p.plan_fft_forward(height), p.plan_fft_forward(width))
        }
    })
}

/// Unnormalized row/column transform followed by the orthonormal scaling.
fn transform(height: usize, width: usize, data: &mut [Complex64], inverse: bool) {
    let (col_fft, row_fft) = plans(height, width, inverse);
    row_fft.process(data);

    let mut column = vec![Complex64::new(0.0, 0.0); height];
    let mut scratch = vec![Complex64::new(0.0, 0.0); col_fft.get_inplace_scratch_len()];
    for c in 0..width {
        for r in 0..height {
            column[r] = data[r * width + c];
        }
        col_fft.process_with_scratch(&mut column, &mut scratch);
        for r in 0..height {
            data[r * width + c] = column[r];
        }
    }

    let scale = 1.0 / ((height * width) as f64).sqrt();
    for z in data.iter_mut() {
        *z *= scale;
    }
}

/// Orthonormal forward 2D DFT. The result is in natural order.
pub fn fft2(img: &ComplexImage) -> Result<KSpaceGrid> {
    check_grid(img.height, img.width, &img.data)?;
    let mut data = img.data.clone();
    transform(img.height, img.width, &mut data, false);
    Ok(KSpaceGrid {
        height: img.height,
        width: img.width,
        data,
        dc_centered: false,
    })
}

/// Orthonormal inverse 2D DFT, the adjoint of [`fft2`].
///
/// A DC-centered grid is shifted back to natural order before inverting.
pub fn ifft2(k: &KSpaceGrid) -> Result<ComplexImage> {
    check_grid(k.height, k.width, &k.data)?;
    let mut data = if k.dc_centered {
        ifftshift2(k).data
    } else {
        k.data.clone()
    };
    transform(k.height, k.width, &mut data, true);
    Ok(ComplexImage {
        height: k.height,
        width: k.width,
        data,
    })
}

fn shift_by(k: &KSpaceGrid, row_offset: usize, col_offset: usize) -> KSpaceGrid {
    let (h, w) = (k.height, k.width);
    let mut data = Vec::with_capacity(h * w);
    for i in 0..h {
        let src_row = (i + row_offset) % h;
        for j in 0..w {
            data.push(k.data[src_row * w + (j + col_offset) % w]);
        }
    }
    KSpaceGrid {
        height: h,
        width: w,
        data,
        dc_centered: !k.dc_centered,
    }
}

/// Quadrant swap, `out[i][j] = in[(i + ceil(H/2)) % H][(j + ceil(W/2)) % W]`.
///
/// Moves DC from index 0 to `(H/2, W/2)` and toggles the `dc_centered` flag.
pub fn fftshift2(k: &KSpaceGrid) -> KSpaceGrid {
    shift_by(k, k.height.div_ceil(2), k.width.div_ceil(2))
}

/// Inverse of [`fftshift2`]; differs from it only for odd dimensions.
pub fn ifftshift2(k: &KSpaceGrid) -> KSpaceGrid {
    shift_by(k, k.height / 2, k.width / 2)
}
