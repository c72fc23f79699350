#![allow(dead_code)]

use std::path::Path;

use decn::errornet::AblationMode;
use decn::guide::{GuideKind, IstaConfig};
use decn::pipeline::ExperimentConfig;
use decn::{Complex64, ComplexImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(h: usize, w: usize, seed: u64) -> ComplexImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..h * w)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    ComplexImage::new(h, w, data).unwrap()
}

/// Orthonormal DFT by direct summation; `sign = -1` forward, `+1` inverse.
pub fn naive_dft(h: usize, w: usize, x: &[Complex64], sign: f64) -> Vec<Complex64> {
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for ku in 0..h {
        for kv in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..h {
                for c in 0..w {
                    let phase = sign * 2.0 * std::f64::consts::PI * ((ku * r) as f64 / h as f64 + (kv * c) as f64 / w as f64);
                    acc += x[r * w + c] * Complex64::from_polar(1.0, phase);
                }
            }
            out[ku * w + kv] = acc * scale;
        }
    }
    out
}

/// PSNR on magnitudes by direct loops, peak 1.
pub fn naive_psnr(a: &ComplexImage, b: &ComplexImage) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.len() {
        let d = a.data()[i].norm() - b.data()[i].norm();
        sum += d * d;
    }
    let mse = sum / a.len() as f64;
    10.0 * (1.0 / mse).log10()
}

/// Textbook SSIM: 11x11 Gaussian (sigma 1.5) over valid windows, plain
/// weighted moments, arithmetic mean of the local map.
pub fn naive_ssim(a: &ComplexImage, b: &ComplexImage) -> f64 {
    let (h, w) = a.dims();
    let ma = a.magnitude();
    let mb = b.magnitude();
    let mut g = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di) / 4.5).exp() * (-(dj * dj) / 4.5).exp();
            total += *v;
        }
    }
    let c1 = 0.01f64.powi(2);
    let c2 = 0.03f64.powi(2);
    let mut acc = 0.0;
    let mut n = 0;
    for top in 0..=h - 11 {
        for left in 0..=w - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = g[i][j] / total;
                    mx += k * ma[(top + i) * w + left + j];
                    my += k * mb[(top + i) * w + left + j];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = g[i][j] / total;
                    let dx = ma[(top + i) * w + left + j] - mx;
                    let dy = mb[(top + i) * w + left + j] - my;
                    vx += k * dx * dx;
                    vy += k * dy * dy;
                    cxy += k * dx * dy;
                }
            }
            acc += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            n += 1;
        }
    }
    acc / n as f64
}

/// Small, fast experiment for plumbing tests.
pub fn tiny_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.output_dir = out.to_path_buf();
    cfg.dataset.count = 10;
    cfg.dataset.height = 32;
    cfg.dataset.width = 32;
    cfg.dataset.seed = 3;
    cfg.guide.kind = GuideKind::IstaWavelet(IstaConfig {
        iterations: 10,
        ..IstaConfig::default()
    });
    cfg.ecnet.depth = 3;
    cfg.ecnet.features = 4;
    cfg.ecnet.ablation = AblationMode::Decn;
    cfg.train.iterations = 15;
    cfg.train.learning_rate = 1e-3;
    cfg.train.log_every = 5;
    cfg
}
