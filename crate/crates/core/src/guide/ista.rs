//! ISTA for `||F_u x - y||^2 + 2 lambda ||Psi x||_1` with an orthonormal
//! Haar `Psi` whose coarsest approximation band is left unpenalized.
//!
//! Each step takes a gradient step on `1/2 ||F_u x - y||^2` (Lipschitz
//! constant 1 under the orthonormal FFT) and soft-thresholds the detail
//! coefficients by `step * lambda`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::haar::{approximation_dims, haar_dwt2, haar_idwt2};
use crate::error::{Error, Result};
use crate::fourier::{fft2, ifft2, ComplexImage, KSpaceGrid};
use crate::sampling::{apply_mask, zero_fill, SamplingMask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IstaConfig {
    pub sparsity_weight: f64,
    pub iterations: usize,
    pub step_size: f64,
    pub wavelet_levels: usize,
}

impl Default for IstaConfig {
    fn default() -> Self {
        Self {
            sparsity_weight: 2e-3,
            iterations: 100,
            step_size: 1.0,
            wavelet_levels: 4,
        }
    }
}

impl IstaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size <= 1.0) {
            return Err(Error::Parameter(format!("ISTA step {} outside (0, 1]", self.step_size)));
        }
        if !(self.sparsity_weight >= 0.0 && self.sparsity_weight.is_finite()) {
            return Err(Error::Parameter(format!("invalid sparsity weight {}", self.sparsity_weight)));
        }
        if self.wavelet_levels == 0 {
            return Err(Error::Parameter("at least one wavelet level is required".into()));
        }
        Ok(())
    }
}

fn is_detail(index: usize, width: usize, approx: (usize, usize)) -> bool {
    let (r, c) = (index / width, index % width);
    r >= approx.0 || c >= approx.1
}

/// `sum |c|` over the detail coefficients.
fn detail_l1(coeffs: &ComplexImage, levels: usize) -> f64 {
    let approx = approximation_dims(coeffs.height(), coeffs.width(), levels);
    coeffs
        .data()
        .iter()
        .enumerate()
        .filter(|&(i, _)| is_detail(i, coeffs.width(), approx))
        .map(|(_, z)| z.norm())
        .sum()
}

/// Value of the objective minimized by [`ista_step`].
pub fn ista_objective(x: &ComplexImage, y: &KSpaceGrid, mask: &SamplingMask, cfg: &IstaConfig) -> Result<f64> {
    let residual = apply_mask(&fft2(x)?, mask)?;
    let data: f64 = residual.data().iter().zip(y.data()).map(|(a, b)| (a - b).norm_sqr()).sum();
    let coeffs = haar_dwt2(x, cfg.wavelet_levels)?;
    Ok(data + 2.0 * cfg.sparsity_weight * detail_l1(&coeffs, cfg.wavelet_levels))
}

fn soft_threshold(z: Complex64, tau: f64) -> Complex64 {
    let mag = z.norm();
    if mag <= tau {
        Complex64::new(0.0, 0.0)
    } else {
        z * (1.0 - tau / mag)
    }
}

/// One proximal-gradient iteration.
pub fn ista_step(x: &ComplexImage, y: &KSpaceGrid, mask: &SamplingMask, cfg: &IstaConfig) -> Result<ComplexImage> {
    cfg.validate()?;
    mask.check_dims(x.height(), x.width())?;
    mask.check_dims(y.height(), y.width())?;
    // x - step * F^H M (F x - y)
    let mut k = fft2(x)?;
    let keep = mask.natural_order();
    for ((kj, &yj), &m) in k.data_mut().iter_mut().zip(y.data()).zip(&keep) {
        *kj = if m { (*kj - yj) * cfg.step_size } else { Complex64::new(0.0, 0.0) };
    }
    let correction = ifft2(&k)?;
    let z = x - &correction;

    let tau = cfg.step_size * cfg.sparsity_weight;
    if tau == 0.0 {
        return Ok(z);
    }
    let mut coeffs = haar_dwt2(&z, cfg.wavelet_levels)?;
    let width = coeffs.width();
    let approx = approximation_dims(coeffs.height(), width, cfg.wavelet_levels);
    for (i, c) in coeffs.data_mut().iter_mut().enumerate() {
        if is_detail(i, width, approx) {
            *c = soft_threshold(*c, tau);
        }
    }
    haar_idwt2(&coeffs, cfg.wavelet_levels)
}

/// Runs `cfg.iterations` steps from the zero-filled image.
pub fn ista_reconstruct(y: &KSpaceGrid, mask: &SamplingMask, cfg: &IstaConfig) -> Result<ComplexImage> {
    cfg.validate()?;
    let mut x = zero_fill(y, mask)?;
    for _ in 0..cfg.iterations {
        x = ista_step(&x, y, mask, cfg)?;
    }
    Ok(x)
}
