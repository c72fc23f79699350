//! Small cascaded CNN guide: blocks of (conv stack with identity shortcut,
//! data-consistency layer), starting from the zero-filled image.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::errornet::train::Trainable;
use crate::errornet::weights::{read_f64, read_network, read_u32, write_f64, write_network, write_u32};
use crate::errornet::{FeatureMap, ForwardCache, Network};
use crate::fidelity::data_consistency;
use crate::fourier::{fft2, ifft2, ComplexImage, KSpaceGrid};
use crate::sampling::{zero_fill, SamplingMask};

pub const MAGIC: &[u8; 8] = b"DECNCAS\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    pub blocks: usize,
    pub convs_per_block: usize,
    pub feature_maps: usize,
    pub fidelity_alpha: f64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            blocks: 2,
            convs_per_block: 4,
            feature_maps: 32,
            fidelity_alpha: 5e-5,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.convs_per_block == 0 || self.feature_maps == 0 {
            return Err(Error::Parameter("cascade sizes must be positive".into()));
        }
        if !(self.fidelity_alpha >= 0.0 && self.fidelity_alpha.is_finite()) {
            return Err(Error::Parameter(format!("invalid cascade alpha {}", self.fidelity_alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeModel {
    pub cfg: CascadeConfig,
    blocks: Vec<Network>,
}

/// Training pair for the cascade: measurements and the full-sampled image.
#[derive(Clone, Debug)]
pub struct CascadeSample {
    pub y: KSpaceGrid,
    pub mask: Arc<SamplingMask>,
    pub zf: ComplexImage,
    pub ground_truth: ComplexImage,
}

impl CascadeSample {
    pub fn new(ground_truth: ComplexImage, y: KSpaceGrid, mask: Arc<SamplingMask>) -> Result<Self> {
        let zf = zero_fill(&y, &mask)?;
        zf.same_dims(&ground_truth)?;
        Ok(Self { y, mask, zf, ground_truth })
    }
}

struct BlockTrace {
    cache: ForwardCache,
}

impl CascadeModel {
    /// Xavier-initialized cascade; block `b` is seeded with `seed + b`.
    pub fn build(cfg: CascadeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let blocks = (0..cfg.blocks)
            .map(|b| Network::build(cfg.convs_per_block, cfg.feature_maps, 2, 2, None, seed.wrapping_add(b as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cfg, blocks })
    }

    pub fn from_blocks(cfg: CascadeConfig, blocks: Vec<Network>) -> Result<Self> {
        cfg.validate()?;
        if blocks.len() != cfg.blocks {
            return Err(Error::Dimension(format!("expected {} blocks, got {}", cfg.blocks, blocks.len())));
        }
        for net in &blocks {
            if net.in_channels() != 2 || net.out_channels() != 2 || net.depth() != cfg.convs_per_block {
                return Err(Error::Dimension("cascade block must map 2 channels to 2 channels".into()));
            }
        }
        Ok(Self { cfg, blocks })
    }

    pub fn blocks(&self) -> &[Network] {
        &self.blocks
    }

    pub fn zero_weights(&mut self) {
        let params = vec![0.0; self.num_params()];
        self.set_parameters(&params).expect("length matches");
    }

    pub fn num_params(&self) -> usize {
        self.blocks.iter().map(Network::num_params).sum()
    }

    fn dc(&self, x: &ComplexImage, y: &KSpaceGrid, mask: &SamplingMask) -> Result<ComplexImage> {
        ifft2(&data_consistency(y, mask, x, self.cfg.fidelity_alpha)?)
    }

    /// Adjoint (and transpose) of the linear part of the data-consistency
    /// layer: `F^H diag(d) F` with `d = alpha/(1+alpha)` on sampled entries and
    /// 1 elsewhere.
    fn dc_adjoint(&self, g: &ComplexImage, mask: &SamplingMask) -> Result<ComplexImage> {
        let a = self.cfg.fidelity_alpha;
        let damp = a / (1.0 + a);
        let mut k = fft2(g)?;
        for (v, keep) in k.data_mut().iter_mut().zip(mask.natural_order()) {
            if keep {
                *v *= damp;
            }
        }
        ifft2(&k)
    }

    fn run(&self, y: &KSpaceGrid, mask: &SamplingMask, mut traces: Option<&mut Vec<BlockTrace>>) -> Result<ComplexImage> {
        let mut x = zero_fill(y, mask)?;
        for net in &self.blocks {
            let cache = net.forward_cached(&FeatureMap::from_complex(&[&x])?)?;
            let plane = x.len();
            let out = cache.output();
            let refined = ComplexImage::from_parts(x.height(), x.width(), &out[..plane], &out[plane..])?;
            x = self.dc(&(&x + &refined), y, mask)?;
            if let Some(t) = traces.as_deref_mut() {
                t.push(BlockTrace { cache });
            }
        }
        Ok(x)
    }

    pub fn forward(&self, y: &KSpaceGrid, mask: &SamplingMask) -> Result<ComplexImage> {
        self.run(y, mask, None)
    }

    fn weight_norm_sqr(&self) -> f64 {
        self.blocks.iter().map(Network::weight_norm_sqr).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::read(&mut BufReader::new(File::open(path)?))
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        write_u32(w, VERSION)?;
        write_u32(w, self.cfg.blocks as u32)?;
        write_u32(w, self.cfg.convs_per_block as u32)?;
        write_u32(w, self.cfg.feature_maps as u32)?;
        write_f64(w, self.cfg.fidelity_alpha)?;
        for net in &self.blocks {
            write_network(w, net)?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("cascade file is truncated".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format("not a cascade weight file".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported cascade file version {version}")));
        }
        let cfg = CascadeConfig {
            blocks: read_u32(r)? as usize,
            convs_per_block: read_u32(r)? as usize,
            feature_maps: read_u32(r)? as usize,
            fidelity_alpha: read_f64(r)?,
        };
        if cfg.blocks > 1024 {
            return Err(Error::Format(format!("implausible block count {}", cfg.blocks)));
        }
        let blocks = (0..cfg.blocks).map(|_| read_network(r)).collect::<Result<Vec<_>>>()?;
        Self::from_blocks(cfg, blocks).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Runs a cascade on undersampled k-space.
pub fn cascade_forward(model: &CascadeModel, y: &KSpaceGrid, mask: &SamplingMask) -> Result<ComplexImage> {
    model.forward(y, mask)
}

impl Trainable for CascadeModel {
    type Sample = CascadeSample;

    fn parameters(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(Network::params).collect()
    }

    fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Dimension("parameter vector has the wrong length".into()));
        }
        let mut rest = params;
        for net in &mut self.blocks {
            let (head, tail) = rest.split_at(net.num_params());
            net.set_params(head)?;
            rest = tail;
        }
        Ok(())
    }

    /// Batch mean of `1/2 ||cascade(y) - x_fs||^2` plus weight decay.
    fn loss_and_gradient(&self, batch: &[&CascadeSample], weight_decay: f64) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Parameter("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let offsets: Vec<usize> = self
            .blocks
            .iter()
            .scan(0, |acc, n| {
                let o = *acc;
                *acc += n.num_params();
                Some(o)
            })
            .collect();
        let mut grads = vec![0.0; self.num_params()];
        let mut data = 0.0;
        for s in batch {
            let mut traces = Vec::with_capacity(self.blocks.len());
            let out = self.run(&s.y, &s.mask, Some(&mut traces))?;
            let diff = &out - &s.ground_truth;
            data += 0.5 * diff.energy();

            let mut g = diff.scale(scale);
            for (b, trace) in traces.iter().enumerate().rev() {
                // Through the data-consistency layer to the block's pre-DC sum.
                g = self.dc_adjoint(&g, &s.mask)?;
                let net = &self.blocks[b];
                let d_out = FeatureMap::from_complex(&[&g])?.data;
                let end = offsets[b] + net.num_params();
                let d_in = net
                    .backward(&trace.cache, &d_out, &mut grads[offsets[b]..end], true)?
                    .expect("input gradient requested");
                let plane = g.len();
                for (j, z) in g.data_mut().iter_mut().enumerate() {
                    *z += Complex64::new(d_in[j], d_in[plane + j]);
                }
            }
        }
        if weight_decay != 0.0 {
            let params = self.parameters();
            let decays = self.blocks.iter().flat_map(Network::decay_mask);
            for ((g, p), d) in grads.iter_mut().zip(&params).zip(decays) {
                if d {
                    *g += weight_decay * p;
                }
            }
        }
        Ok((data * scale + 0.5 * weight_decay * self.weight_norm_sqr(), grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::tests::random_image;
    use crate::sampling::{make_cartesian_mask, measure};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg(alpha: f64) -> CascadeConfig {
        CascadeConfig {
            blocks: 2,
            convs_per_block: 3,
            feature_maps: 4,
            fidelity_alpha: alpha,
        }
    }

    fn sample(n: usize, seed: u64) -> CascadeSample {
        let truth = random_image(n, n, seed);
        let mask = Arc::new(make_cartesian_mask(n, n, 0.5, 0.25, seed).unwrap());
        let y = measure(&truth, &mask).unwrap();
        CascadeSample::new(truth, y, mask).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_fill() {
        let mut model = CascadeModel::build(small_cfg(5e-5), 1).unwrap();
        model.zero_weights();
        let s = sample(8, 1);
        let out = cascade_forward(&model, &s.y, &s.mask).unwrap();
        assert!((&out - &s.zf).energy().sqrt() < 1e-12);
    }

    #[test]
    fn full_mask_recovers_truth() {
        let model = CascadeModel::build(small_cfg(1e-6), 2).unwrap();
        let truth = random_image(8, 8, 3);
        let mask = SamplingMask::full(8, 8);
        let y = measure(&truth, &mask).unwrap();
        let out = model.forward(&y, &mask).unwrap();
        let worst = out.data().iter().zip(truth.data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-4);
    }

    #[test]
    fn sampled_entries_stay_near_measurements() {
        let alpha = 0.01;
        let model = CascadeModel::build(small_cfg(alpha), 4).unwrap();
        let s = sample(8, 5);
        let t = random_image(8, 8, 50);
        let big_t = fft2(&t).unwrap();
        let k = fft2(&model.dc(&t, &s.y, &s.mask).unwrap()).unwrap();
        let keep = s.mask.natural_order();
        for j in 0..keep.len() {
            let bound = alpha * (big_t.data()[j] - s.y.data()[j]).norm() / (1.0 + alpha);
            let dev = (k.data()[j] - s.y.data()[j]).norm();
            if keep[j] {
                assert!(dev <= bound + 1e-12);
            } else {
                assert!((k.data()[j] - big_t.data()[j]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let model = CascadeModel::build(small_cfg(0.05), 6).unwrap();
        let batch = [sample(6, 7), sample(6, 8)];
        let refs: Vec<&CascadeSample> = batch.iter().collect();
        let decay = 1e-3;
        let (_, grads) = model.loss_and_gradient(&refs, decay).unwrap();
        let p0 = model.parameters();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-5;
        for _ in 0..40 {
            let idx = rng.gen_range(0..p0.len());
            let mut probe = model.clone();
            let mut p = p0.clone();
            p[idx] += h;
            probe.set_parameters(&p).unwrap();
            let up = probe.loss_and_gradient(&refs, decay).unwrap().0;
            p[idx] = p0[idx] - h;
            probe.set_parameters(&p).unwrap();
            let down = probe.loss_and_gradient(&refs, decay).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grads[idx]).abs() / fd.abs().max(grads[idx].abs()).max(1e-8);
            assert!(rel < 1e-5, "param {idx}: fd {fd} analytic {}", grads[idx]);
        }
    }

    #[test]
    fn file_round_trip() {
        let model = CascadeModel::build(small_cfg(0.1), 10).unwrap();
        let mut buf = Vec::new();
        model.write(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(CascadeModel::read(&mut buf.as_slice()).unwrap(), model);
        assert!(matches!(CascadeModel::read(&mut &buf[..20]), Err(Error::Format(_))));
    }

    #[test]
    fn deterministic_forward() {
        let model = CascadeModel::build(small_cfg(5e-5), 11).unwrap();
        let s = sample(8, 12);
        assert_eq!(model.forward(&s.y, &s.mask).unwrap(), model.forward(&s.y, &s.mask).unwrap());
    }
}
