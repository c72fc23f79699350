//! Synthetic complex phantoms and the normalized dataset built from them.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::ComplexImage;

pub const MIN_ELLIPSES: usize = 5;
pub const MAX_ELLIPSES: usize = 12;
pub const TRAIN_FRACTION: f64 = 0.8;

/// Indices into [`Dataset::images`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded shuffle; the first 80% (at least one, at most `n - 1`) train.
    pub fn random(n: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Parameter(format!("need at least 2 images to split, got {n}")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5911_7000));
        let n_train = ((n as f64 * TRAIN_FRACTION).round() as usize).clamp(1, n - 1);
        let mut train = order[..n_train].to_vec();
        let mut test = order[n_train..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok(Self { train, test })
    }
}

/// Full-sampled references, each scaled to unit peak magnitude.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<ComplexImage>,
    pub split: Split,
    pub seed: u64,
    /// Peak magnitude each image was divided by.
    pub peaks: Vec<f64>,
    /// Ellipse count per phantom; empty for external data.
    pub ellipse_counts: Vec<usize>,
}

impl Dataset {
    /// Normalizes `raw` and splits it with `seed`.
    pub fn from_images(raw: Vec<ComplexImage>, seed: u64) -> Result<Self> {
        let split = Split::random(raw.len(), seed)?;
        let mut images = Vec::with_capacity(raw.len());
        let mut peaks = Vec::with_capacity(raw.len());
        for img in &raw {
            let (normalized, peak) = normalize_peak(img)?;
            images.push(normalized);
            peaks.push(peak);
        }
        Ok(Self {
            images,
            split,
            seed,
            peaks,
            ellipse_counts: Vec::new(),
        })
    }

    pub fn train_images(&self) -> impl Iterator<Item = (usize, &ComplexImage)> {
        self.split.train.iter().map(|&i| (i, &self.images[i]))
    }

    pub fn test_images(&self) -> impl Iterator<Item = (usize, &ComplexImage)> {
        self.split.test.iter().map(|&i| (i, &self.images[i]))
    }

    /// Undoes the normalization of image `index`.
    pub fn denormalize(&self, index: usize, img: &ComplexImage) -> ComplexImage {
        img.scale(self.peaks[index])
    }
}

/// Pulls `z` onto the unit circle to the last bit, as far as `hypot` allows.
fn snap_to_unit(z: Complex64) -> Complex64 {
    let mut z = z / z.norm();
    for _ in 0..16 {
        let n = z.norm();
        if n == 1.0 {
            break;
        }
        // Move the larger component by one ulp toward the circle.
        let step = |v: f64| if n > 1.0 { next_toward_zero(v) } else { next_away_from_zero(v) };
        if z.re.abs() >= z.im.abs() {
            z.re = step(z.re);
        } else {
            z.im = step(z.im);
        }
    }
    z
}

fn next_toward_zero(v: f64) -> f64 {
    if v == 0.0 {
        v
    } else {
        f64::from_bits(v.to_bits() - 1)
    }
}

fn next_away_from_zero(v: f64) -> f64 {
    f64::from_bits(v.to_bits() + 1)
}

/// Divides by the peak magnitude so that `max |x| == 1.0` holds exactly.
///
/// Rounding can leave the largest pixel a few ulps off 1; those pixels are
/// moved onto the unit circle.
pub fn normalize_peak(img: &ComplexImage) -> Result<(ComplexImage, f64)> {
    let peak = img.max_magnitude();
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Parameter(format!("cannot normalize image with peak {peak}")));
    }
    let mut out = img.scale(1.0 / peak);
    let mut best = (0, 0.0);
    for (j, z) in out.data_mut().iter_mut().enumerate() {
        let n = z.norm();
        if n > 1.0 {
            *z = snap_to_unit(*z);
        }
        if n > best.1 {
            best = (j, n);
        }
    }
    let j = best.0;
    out.data_mut()[j] = snap_to_unit(out.data()[j]);
    if out.max_magnitude() != 1.0 {
        return Err(Error::Parameter("peak pixel could not be placed on the unit circle".into()));
    }
    Ok((out, peak))
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    intensity: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// One phantom before normalization, plus its ellipse count.
///
/// Magnitude is a sum of 5 to 12 constant ellipses on `[-1, 1]^2`, the first
/// being a large body outline; the phase is a random quadratic polynomial.
pub fn random_phantom(height: usize, width: usize, rng: &mut ChaCha8Rng) -> (ComplexImage, usize) {
    let count = rng.gen_range(MIN_ELLIPSES..=MAX_ELLIPSES);
    let mut ellipses = Vec::with_capacity(count);
    for i in 0..count {
        let theta = rng.gen_range(0.0..PI);
        let e = if i == 0 {
            Ellipse {
                cx: rng.gen_range(-0.05..0.05),
                cy: rng.gen_range(-0.05..0.05),
                a: rng.gen_range(0.7..0.9),
                b: rng.gen_range(0.55..0.8),
                cos: theta.cos(),
                sin: theta.sin(),
                intensity: rng.gen_range(0.6..1.0),
            }
        } else {
            Ellipse {
                cx: rng.gen_range(-0.5..0.5),
                cy: rng.gen_range(-0.5..0.5),
                a: rng.gen_range(0.05..0.35),
                b: rng.gen_range(0.05..0.35),
                cos: theta.cos(),
                sin: theta.sin(),
                intensity: rng.gen_range(-0.3..0.5),
            }
        };
        ellipses.push(e);
    }
    let phase: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    let scale = rng.gen_range(0.5..2.0);

    let data = (0..height * width)
        .map(|p| {
            let (r, c) = (p / width, p % width);
            let y = 2.0 * (r as f64 + 0.5) / height as f64 - 1.0;
            let x = 2.0 * (c as f64 + 0.5) / width as f64 - 1.0;
            let m: f64 = ellipses.iter().filter(|e| e.contains(x, y)).map(|e| e.intensity).sum();
            let m = m.max(0.0) * scale;
            let phi = phase[0] + phase[1] * x + phase[2] * y + 0.5 * (phase[3] * x * x + phase[4] * x * y + phase[5] * y * y);
            Complex64::from_polar(m, phi)
        })
        .collect();
    (ComplexImage::new(height, width, data).expect("sizes agree"), count)
}

/// `count` normalized phantoms with an 80/20 split, all drawn from `seed`.
pub fn generate_phantoms(count: usize, height: usize, width: usize, seed: u64) -> Result<Dataset> {
    if count < 2 {
        return Err(Error::Parameter(format!("need at least 2 phantoms, got {count}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::Dimension("phantom size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (raw, counts): (Vec<_>, Vec<_>) = (0..count).map(|_| random_phantom(height, width, &mut rng)).unzip();
    let mut ds = Dataset::from_images(raw, seed)?;
    ds.ellipse_counts = counts;
    Ok(ds)
}
