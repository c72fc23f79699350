//! Data-fidelity fusion of a corrected estimate with measured k-space.
//!
//! Solves `min_x ||F_u x - y||^2 + alpha ||x - t||^2` with
//! `t = guide + residual_estimate`. Under the orthonormal FFT and
//! `F_u = M o F`, the normal operator `F^H M F + alpha I` is diagonal in
//! k-space, so the optimum is
//!
//! ```text
//! X(j) = (M(j) y(j) + alpha T(j)) / (M(j) + alpha),   T = F t
//! ```
//!
//! [`fuse_oracle_cg`] solves the same problem with conjugate gradients in the
//! image domain and never forms the pointwise quotient.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fourier::{fft2, ifft2, ComplexImage, KSpaceGrid};
use crate::sampling::{apply_mask, zero_fill, SamplingMask};

pub const DEFAULT_ALPHA: f64 = 5e-5;

/// Strictly positive weight on the prior term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FidelityWeight(f64);

impl FidelityWeight {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Parameter(format!("fidelity weight must be positive, got {alpha}")));
        }
        Ok(Self(alpha))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for FidelityWeight {
    fn default() -> Self {
        Self(DEFAULT_ALPHA)
    }
}

fn check_inputs(y: &KSpaceGrid, mask: &SamplingMask, t: &ComplexImage) -> Result<()> {
    mask.check_dims(y.height(), y.width())?;
    mask.check_dims(t.height(), t.width())?;
    if y.dc_centered() {
        return Err(Error::Parameter("expected a natural-order k-space grid".into()));
    }
    Ok(())
}

/// Pointwise k-space fusion of `y` with `t`; returns the k-space of the optimum.
pub fn fuse_kspace(y: &KSpaceGrid, mask: &SamplingMask, t: &ComplexImage, alpha: FidelityWeight) -> Result<KSpaceGrid> {
    data_consistency(y, mask, t, alpha.value())
}

/// Same quotient as [`fuse_kspace`] but also admits `alpha = 0`, which
/// replaces sampled entries by `y` outright.
pub fn data_consistency(y: &KSpaceGrid, mask: &SamplingMask, t: &ComplexImage, alpha: f64) -> Result<KSpaceGrid> {
    check_inputs(y, mask, t)?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Parameter(format!("invalid fidelity weight {alpha}")));
    }
    let mut k = fft2(t)?;
    for ((x, &yj), keep) in k.data_mut().iter_mut().zip(y.data()).zip(mask.natural_order()) {
        if keep {
            *x = (yj + *x * alpha) / (1.0 + alpha);
        }
        // Unsampled: (0 + a T) / a = T, left untouched.
    }
    Ok(k)
}

/// Closed-form fusion of the guide plus the predicted residual with `y`.
pub fn fuse(
    y: &KSpaceGrid,
    mask: &SamplingMask,
    guide: &ComplexImage,
    residual_estimate: &ComplexImage,
    alpha: FidelityWeight,
) -> Result<ComplexImage> {
    guide.same_dims(residual_estimate)?;
    fuse_prior(y, mask, &(guide + residual_estimate), alpha)
}

/// [`fuse`] with the prior `t` given directly.
pub fn fuse_prior(y: &KSpaceGrid, mask: &SamplingMask, t: &ComplexImage, alpha: FidelityWeight) -> Result<ComplexImage> {
    ifft2(&fuse_kspace(y, mask, t, alpha)?)
}

/// Image-domain normal operator `x -> F^H M F x + alpha x`.
fn normal_operator(x: &ComplexImage, mask: &SamplingMask, alpha: f64) -> Result<ComplexImage> {
    let projected = ifft2(&apply_mask(&fft2(x)?, mask)?)?;
    Ok(&projected + &x.scale(alpha))
}

fn dot(a: &ComplexImage, b: &ComplexImage) -> Complex64 {
    a.inner(b)
}

fn axpy(y: &mut ComplexImage, a: Complex64, x: &ComplexImage) {
    for (yi, xi) in y.data_mut().iter_mut().zip(x.data()) {
        *yi += a * xi;
    }
}

/// Conjugate-gradient solve of `(F_u^H F_u + alpha I) x = F_u^H y + alpha t`.
///
/// Stops when `||r|| <= tol * ||b||`.
pub fn fuse_oracle_cg(
    y: &KSpaceGrid,
    mask: &SamplingMask,
    t: &ComplexImage,
    alpha: FidelityWeight,
    tol: f64,
    max_iters: usize,
) -> Result<ComplexImage> {
    check_inputs(y, mask, t)?;
    let a = alpha.value();
    let b = &zero_fill(y, mask)? + &t.scale(a);
    let b_norm = b.energy().sqrt();
    let mut x = ComplexImage::zeros(t.height(), t.width());
    if b_norm == 0.0 {
        return Ok(x);
    }

    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.energy();
    for _ in 0..max_iters {
        if rr.sqrt() <= tol * b_norm {
            return Ok(x);
        }
        let ap = normal_operator(&p, mask, a)?;
        let step = rr / dot(&p, &ap).re;
        axpy(&mut x, Complex64::new(step, 0.0), &p);
        axpy(&mut r, Complex64::new(-step, 0.0), &ap);
        let rr_next = r.energy();
        let beta = rr_next / rr;
        rr = rr_next;
        p = &r + &p.scale(beta);
    }
    if rr.sqrt() <= tol * b_norm {
        return Ok(x);
    }
    Err(Error::Convergence {
        iterations: max_iters,
        residual: rr.sqrt() / b_norm,
    })
}

/// `||F_u x - y||^2 + alpha ||x - t||^2`.
pub fn fidelity_objective(x: &ComplexImage, y: &KSpaceGrid, mask: &SamplingMask, t: &ComplexImage, alpha: f64) -> Result<f64> {
    check_inputs(y, mask, t)?;
    x.same_dims(t)?;
    let fx = apply_mask(&fft2(x)?, mask)?;
    let data: f64 = fx.data().iter().zip(y.data()).map(|(a, b)| (a - b).norm_sqr()).sum();
    let prior = (x - t).energy();
    Ok(data + alpha * prior)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::tests::random_image;
    use crate::sampling::{make_random_mask, measure};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &ComplexImage, b: &ComplexImage) -> f64 {
        (a - b).energy().sqrt() / b.energy().sqrt().max(f64::MIN_POSITIVE)
    }

    fn instance(n: usize, ratio: f64, seed: u64) -> (KSpaceGrid, SamplingMask, ComplexImage, ComplexImage) {
        let mask = make_random_mask(n, n, ratio, 0.05, seed).unwrap();
        let truth = random_image(n, n, seed * 3 + 1);
        let y = measure(&truth, &mask).unwrap();
        (y, mask, random_image(n, n, seed * 3 + 2), random_image(n, n, seed * 3 + 3).scale(0.1))
    }

    #[test]
    fn alpha_must_be_positive() {
        assert!(FidelityWeight::new(0.0).is_err());
        assert!(FidelityWeight::new(-1e-3).is_err());
        assert!(FidelityWeight::new(f64::NAN).is_err());
        assert_eq!(FidelityWeight::default().value(), 5e-5);
    }

    #[test]
    fn unsampled_entries_keep_prior_spectrum() {
        let (y, mask, g, r) = instance(16, 0.3, 1);
        let alpha = FidelityWeight::default();
        let t = &g + &r;
        let out = fft2(&fuse(&y, &mask, &g, &r, alpha).unwrap()).unwrap();
        let tk = fft2(&t).unwrap();
        let a = alpha.value();
        let mut max_dev = 0.0f64;
        let mut max_gap = 0.0f64;
        for (j, keep) in mask.natural_order().into_iter().enumerate() {
            if keep {
                max_dev = max_dev.max((out.data()[j] - y.data()[j]).norm());
                max_gap = max_gap.max((tk.data()[j] - y.data()[j]).norm());
            } else {
                assert!((out.data()[j] - tk.data()[j]).norm() < 1e-12);
            }
        }
        assert!(max_dev <= a * max_gap + 1e-12);
    }

    #[test]
    fn full_mask_small_alpha_reproduces_measurement() {
        let truth = random_image(8, 8, 4);
        let mask = SamplingMask::full(8, 8);
        let y = measure(&truth, &mask).unwrap();
        let prior = random_image(8, 8, 5);
        let out = fuse_prior(&y, &mask, &prior, FidelityWeight::new(1e-10).unwrap()).unwrap();
        assert!(rel_err(&out, &truth) < 1e-8);
    }

    #[test]
    fn closed_form_matches_cg() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..20 {
            let n = if trial % 2 == 0 { 8 } else { 16 };
            let (y, mask, g, r) = instance(n, 0.4, trial);
            let alpha = FidelityWeight::new([5e-5, 1e-2, 1.0][rng.gen_range(0..3)]).unwrap();
            let closed = fuse(&y, &mask, &g, &r, alpha).unwrap();
            let cg = fuse_oracle_cg(&y, &mask, &(&g + &r), alpha, 1e-14, 50).unwrap();
            assert!(rel_err(&closed, &cg) < 1e-8, "trial {trial}");
        }
    }

    #[test]
    fn cg_consistent_system_recovers_truth() {
        let truth = random_image(8, 8, 3);
        let mask = SamplingMask::full(8, 8);
        let y = measure(&truth, &mask).unwrap();
        let x = fuse_oracle_cg(&y, &mask, &truth, FidelityWeight::default(), 1e-12, 20).unwrap();
        assert!(rel_err(&x, &truth) < 1e-12);
    }

    #[test]
    fn cg_large_alpha_returns_prior() {
        let (y, mask, g, _) = instance(8, 0.3, 7);
        let x = fuse_oracle_cg(&y, &mask, &g, FidelityWeight::new(1e6).unwrap(), 1e-14, 20).unwrap();
        assert!(rel_err(&x, &g) < 1e-5);
    }

    #[test]
    fn cg_reports_non_convergence() {
        let (y, mask, g, _) = instance(8, 0.3, 8);
        let err = fuse_oracle_cg(&y, &mask, &g, FidelityWeight::default(), 1e-14, 0).unwrap_err();
        assert!(matches!(err, Error::Convergence { iterations: 0, .. }));
    }

    #[test]
    fn objective_zero_at_consistent_prior() {
        let t = random_image(8, 8, 11);
        let mask = make_random_mask(8, 8, 0.5, 0.1, 2).unwrap();
        let y = measure(&t, &mask).unwrap();
        assert_eq!(fidelity_objective(&t, &y, &mask, &t, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn objective_matches_summation_oracle() {
        use crate::fourier::tests::naive_dft;
        let (y, mask, t, _) = instance(8, 0.4, 12);
        let x = random_image(8, 8, 13);
        let alpha = 0.37;
        let fx = naive_dft(8, 8, x.data(), -1.0);
        let mut data = 0.0;
        for (j, keep) in mask.natural_order().into_iter().enumerate() {
            let pred = if keep { fx[j] } else { Complex64::new(0.0, 0.0) };
            data += (pred - y.data()[j]).norm_sqr();
        }
        let mut prior = 0.0;
        for (a, b) in x.data().iter().zip(t.data()) {
            prior += (a.re - b.re).powi(2) + (a.im - b.im).powi(2);
        }
        let expected = data + alpha * prior;
        let got = fidelity_objective(&x, &y, &mask, &t, alpha).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected.max(1.0));
    }

    #[test]
    fn fused_output_minimizes_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..10 {
            let (y, mask, g, r) = instance(8, 0.3, 100 + trial);
            let alpha = FidelityWeight::new(1e-2).unwrap();
            let t = &g + &r;
            let best = fuse(&y, &mask, &g, &r, alpha).unwrap();
            let f_best = fidelity_objective(&best, &y, &mask, &t, alpha.value()).unwrap();
            assert!(f_best <= fidelity_objective(&t, &y, &mask, &t, alpha.value()).unwrap());
            let zf = zero_fill(&y, &mask).unwrap();
            assert!(f_best <= fidelity_objective(&zf, &y, &mask, &t, alpha.value()).unwrap());
            for _ in 0..100 {
                let scale = 10f64.powf(rng.gen_range(-6.0..0.0));
                let noise = random_image(8, 8, rng.gen()).scale(scale);
                let f = fidelity_objective(&(&best + &noise), &y, &mask, &t, alpha.value()).unwrap();
                assert!(f_best <= f * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn interpolation_limits() {
        let (y, mask, g, _) = instance(16, 0.3, 31);
        let gk = fft2(&g).unwrap();
        let big = fuse_prior(&y, &mask, &g, FidelityWeight::new(1e4).unwrap()).unwrap();
        assert!(rel_err(&big, &g) < 1e-3);

        let small = fft2(&fuse_prior(&y, &mask, &g, FidelityWeight::new(1e-8).unwrap()).unwrap()).unwrap();
        for (j, keep) in mask.natural_order().into_iter().enumerate() {
            let target = if keep { y.data()[j] } else { gk.data()[j] };
            assert!((small.data()[j] - target).norm() < 1e-7);
        }
    }

    #[test]
    fn fusion_is_homogeneous() {
        let (y, mask, g, r) = instance(8, 0.4, 41);
        let lambda = -2.5;
        let alpha = FidelityWeight::new(0.1).unwrap();
        let lhs = fuse(&y.scale(lambda), &mask, &g.scale(lambda), &r.scale(lambda), alpha).unwrap();
        let rhs = fuse(&y, &mask, &g, &r, alpha).unwrap().scale(lambda);
        assert!(rel_err(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn repeated_fusion_contracts_sampled_error() {
        let (y, mask, g, r) = instance(16, 0.3, 51);
        let alpha = FidelityWeight::new(0.5).unwrap();
        let zero = ComplexImage::zeros(16, 16);
        let sampled_err = |img: &ComplexImage| -> f64 {
            let k = fft2(img).unwrap();
            mask.natural_order()
                .into_iter()
                .enumerate()
                .filter(|&(_, keep)| keep)
                .map(|(j, _)| (k.data()[j] - y.data()[j]).norm())
                .fold(0.0, f64::max)
        };
        let first = fuse(&y, &mask, &g, &r, alpha).unwrap();
        let second = fuse(&y, &mask, &first, &zero, alpha).unwrap();
        let (e1, e2) = (sampled_err(&first), sampled_err(&second));
        assert!(e2 < e1);
        // Each pass scales the sampled-entry error by alpha / (1 + alpha).
        assert!((e2 - e1 * 0.5 / 1.5).abs() < 1e-12);
    }
}
