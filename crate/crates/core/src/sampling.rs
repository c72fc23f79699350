//! Undersampling masks, the measurement operator and zero-filled inversion.
//!
//! Masks are stored DC-centered (DC at `(H/2, W/2)`); k-space grids are in
//! natural order. [`SamplingMask::natural_order`] does the conversion.
//!
//! Both mask generators keep a deterministic fully sampled center and draw
//! the rest without replacement with keep weight `(1 - r/r_max)^3`, where
//! `r` is the distance to DC. Drawing uses exponential keys
//! (`ln(u)/weight`, largest first), which is equivalent to successive
//! weighted sampling and hits the target count exactly.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{fft2, ifft2, ComplexImage, KSpaceGrid};

/// Polynomial decay exponent of the variable-density law.
pub const DENSITY_POWER: i32 = 3;
pub const DEFAULT_CARTESIAN_CENTER: f64 = 0.08;
pub const DEFAULT_RANDOM_CENTER: f64 = 0.04;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskPattern {
    Cartesian1D,
    Random2D,
    Full,
}

impl MaskPattern {
    pub fn default_center_fraction(self) -> f64 {
        match self {
            MaskPattern::Random2D => DEFAULT_RANDOM_CENTER,
            _ => DEFAULT_CARTESIAN_CENTER,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    height: usize,
    width: usize,
    kept: Vec<bool>,
    pattern: MaskPattern,
    seed: u64,
}

impl SamplingMask {
    /// Builds a mask from a DC-centered keep grid. An all-ones grid is always
    /// reported as [`MaskPattern::Full`].
    pub fn from_centered(height: usize, width: usize, kept: Vec<bool>, pattern: MaskPattern, seed: u64) -> Result<Self> {
        if height == 0 || width == 0 || kept.len() != height * width {
            return Err(Error::Dimension(format!(
                "{} mask entries for a {height}x{width} grid",
                kept.len()
            )));
        }
        let all = kept.iter().all(|&k| k);
        let pattern = match pattern {
            _ if all => MaskPattern::Full,
            MaskPattern::Full => {
                return Err(Error::Parameter("Full pattern with unsampled entries".into()));
            }
            p => p,
        };
        Ok(Self {
            height,
            width,
            kept,
            pattern,
            seed,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            kept: vec![true; height * width],
            pattern: MaskPattern::Full,
            seed: 0,
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

    pub fn pattern(&self) -> MaskPattern {
        self.pattern
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// DC-centered keep grid.
    pub fn centered(&self) -> &[bool] {
        &self.kept
    }

    pub fn is_kept(&self, row: usize, col: usize) -> bool {
        self.kept[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    /// Achieved sampling fraction.
    pub fn ratio(&self) -> f64 {
        self.count() as f64 / (self.height * self.width) as f64
    }

    /// Keep grid in natural k-space order (DC at index 0), matching [`fft2`].
    pub fn natural_order(&self) -> Vec<bool> {
        let (h, w) = (self.height, self.width);
        let (dr, dc) = (h / 2, w / 2);
        let mut out = vec![false; h * w];
        for i in 0..h {
            for j in 0..w {
                out[i * w + j] = self.kept[((i + dr) % h) * w + (j + dc) % w];
            }
        }
        out
    }

    pub fn check_dims(&self, height: usize, width: usize) -> Result<()> {
        if self.dims() != (height, width) {
            return Err(Error::Dimension(format!(
                "mask is {}x{}, data is {height}x{width}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

fn validate_ratios(target_ratio: f64, center_fraction: f64, units: usize) -> Result<()> {
    if !(target_ratio > 0.0 && target_ratio <= 1.0) {
        return Err(Error::Parameter(format!("target ratio {target_ratio} outside (0, 1]")));
    }
    if !(center_fraction > 0.0) {
        return Err(Error::Parameter(format!("center fraction {center_fraction} must be positive")));
    }
    if center_fraction > target_ratio {
        return Err(Error::Parameter(format!(
            "center fraction {center_fraction} exceeds target ratio {target_ratio}"
        )));
    }
    if target_ratio * (units as f64) < 1.0 {
        return Err(Error::Parameter(format!(
            "target ratio {target_ratio} keeps no samples out of {units}"
        )));
    }
    Ok(())
}

/// Picks `count` sampling units: the `center` nearest to DC unconditionally,
/// the rest by weighted draws without replacement.
fn select(distances: &[f64], center: usize, count: usize, seed: u64) -> Vec<bool> {
    let n = distances.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));

    let mut kept = vec![false; n];
    let center = center.min(count);
    for &i in &order[..center] {
        kept[i] = true;
    }

    let r_max = distances.iter().cloned().fold(0.0, f64::max) + 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keyed: Vec<(f64, usize)> = order[center..]
        .iter()
        .map(|&i| {
            let weight = (1.0 - distances[i] / r_max).powi(DENSITY_POWER);
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            (u.ln() / weight, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    for &(_, i) in keyed.iter().take(count - center) {
        kept[i] = true;
    }
    kept
}

/// 1D Cartesian mask keeping whole phase-encode rows.
///
/// Keeps the `ceil(center_fraction*H)` rows nearest DC, then draws rows
/// until `floor(target_ratio*H)` are kept.
pub fn make_cartesian_mask(
    height: usize,
    width: usize,
    target_ratio: f64,
    center_fraction: f64,
    seed: u64,
) -> Result<SamplingMask> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension("zero-sized mask".into()));
    }
    validate_ratios(target_ratio, center_fraction, height)?;
    let rows = (target_ratio * height as f64).floor() as usize;
    let center = (center_fraction * height as f64).ceil() as usize;
    let dc = (height / 2) as f64;
    let distances: Vec<f64> = (0..height).map(|i| (i as f64 - dc).abs()).collect();
    let kept_rows = select(&distances, center, rows, seed);

    let kept = kept_rows
        .iter()
        .flat_map(|&k| std::iter::repeat(k).take(width))
        .collect();
    SamplingMask::from_centered(height, width, kept, MaskPattern::Cartesian1D, seed)
}

/// 2D variable-density random mask with a fully sampled central disk of
/// `ceil(center_fraction*H*W)` points.
pub fn make_random_mask(
    height: usize,
    width: usize,
    target_ratio: f64,
    center_fraction: f64,
    seed: u64,
) -> Result<SamplingMask> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension("zero-sized mask".into()));
    }
    let n = height * width;
    validate_ratios(target_ratio, center_fraction, n)?;
    let points = (target_ratio * n as f64).floor() as usize;
    let center = (center_fraction * n as f64).ceil() as usize;
    let (dr, dc) = ((height / 2) as f64, (width / 2) as f64);
    let distances: Vec<f64> = (0..n)
        .map(|p| {
            let (i, j) = ((p / width) as f64, (p % width) as f64);
            (i - dr).hypot(j - dc)
        })
        .collect();
    let kept = select(&distances, center, points, seed);
    SamplingMask::from_centered(height, width, kept, MaskPattern::Random2D, seed)
}

/// Dispatches on pattern; `Full` ignores the ratios.
pub fn make_mask(
    pattern: MaskPattern,
    height: usize,
    width: usize,
    target_ratio: f64,
    center_fraction: f64,
    seed: u64,
) -> Result<SamplingMask> {
    match pattern {
        MaskPattern::Cartesian1D => make_cartesian_mask(height, width, target_ratio, center_fraction, seed),
        MaskPattern::Random2D => make_random_mask(height, width, target_ratio, center_fraction, seed),
        MaskPattern::Full => Ok(SamplingMask::full(height, width)),
    }
}

/// Zeroes every coefficient outside the mask. `k` must be in natural order.
pub fn apply_mask(k: &KSpaceGrid, mask: &SamplingMask) -> Result<KSpaceGrid> {
    mask.check_dims(k.height(), k.width())?;
    if k.dc_centered() {
        return Err(Error::Parameter("expected a natural-order k-space grid".into()));
    }
    let mut out = k.clone();
    for (z, keep) in out.data_mut().iter_mut().zip(mask.natural_order()) {
        if !keep {
            *z = num_complex::Complex64::new(0.0, 0.0);
        }
    }
    Ok(out)
}

/// Undersampled measurement `y = F_u x`, embedded on the full grid.
pub fn measure(x: &ComplexImage, mask: &SamplingMask) -> Result<KSpaceGrid> {
    mask.check_dims(x.height(), x.width())?;
    apply_mask(&fft2(x)?, mask)
}

/// Zero-filled reconstruction `F_u^H y`.
///
/// `y` is re-projected onto the mask first so stray values outside the
/// sampled set are ignored.
pub fn zero_fill(y: &KSpaceGrid, mask: &SamplingMask) -> Result<ComplexImage> {
    ifft2(&apply_mask(y, mask)?)
}
