//! Error-correction network: a convolutional regressor from
//! `(zero-filled, guide)` to the guide's reconstruction error.
//!
//! Complex images enter and leave the network as (re, im) channel pairs.
//! The four [`AblationMode`]s toggle input concatenation (both images vs a
//! single one) and error correction (regress the residual `x_fs - guide` vs
//! the image `x_fs` itself).

pub mod adam;
pub mod conv;
pub mod network;
pub mod train;
pub mod weights;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{ComplexImage, KSpaceGrid};
use crate::sampling::SamplingMask;

pub use adam::{adam_step, AdamParams, AdamState};
pub use conv::Precision;
pub use network::{Activation, Conv2d, FeatureMap, ForwardCache, Network, Skip};
pub use train::{fit, train, LossHistory, TrainConfig, Trainable};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationMode {
    /// Concatenated input, residual target.
    #[default]
    #[serde(rename = "DECN")]
    Decn,
    /// Single input, image target.
    #[serde(rename = "NIC_NEC")]
    NicNec,
    /// Concatenated input, image target.
    #[serde(rename = "IC_NEC")]
    IcNec,
    /// Single input, residual target.
    #[serde(rename = "NIC_EC")]
    NicEc,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [AblationMode::Decn, AblationMode::NicNec, AblationMode::IcNec, AblationMode::NicEc];

    pub fn concatenates(self) -> bool {
        matches!(self, AblationMode::Decn | AblationMode::IcNec)
    }

    pub fn corrects_error(self) -> bool {
        matches!(self, AblationMode::Decn | AblationMode::NicEc)
    }

    pub fn in_channels(self) -> usize {
        if self.concatenates() {
            4
        } else {
            2
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Decn => "DECN",
            AblationMode::NicNec => "NIC_NEC",
            AblationMode::IcNec => "IC_NEC",
            AblationMode::NicEc => "NIC_EC",
        }
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown ablation mode `{s}`")))
    }
}

/// Which image feeds the network in the single-input modes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingleInput {
    #[default]
    Guide,
    ZeroFilled,
}

/// Network wiring: ablation mode plus the single-input choice.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wiring {
    pub ablation: AblationMode,
    #[serde(default)]
    pub single_input: SingleInput,
}

impl Wiring {
    pub fn new(ablation: AblationMode) -> Self {
        Self {
            ablation,
            single_input: SingleInput::Guide,
        }
    }

    pub fn input(&self, zf: &ComplexImage, guide: &ComplexImage) -> Result<FeatureMap> {
        if self.ablation.concatenates() {
            FeatureMap::from_complex(&[zf, guide])
        } else {
            match self.single_input {
                SingleInput::Guide => FeatureMap::from_complex(&[guide]),
                SingleInput::ZeroFilled => FeatureMap::from_complex(&[zf]),
            }
        }
    }

    /// Regression target for a sample.
    pub fn target<'a>(&self, sample: &'a TrainSample) -> &'a ComplexImage {
        if self.ablation.corrects_error() {
            &sample.target_residual
        } else {
            &sample.ground_truth
        }
    }

    /// Prior handed to the fidelity step: `guide + f` with error correction,
    /// `f` alone without.
    pub fn prior(&self, guide: &ComplexImage, output: &ComplexImage) -> ComplexImage {
        if self.ablation.corrects_error() {
            guide + output
        } else {
            output.clone()
        }
    }

    /// The residual estimate that, added to the guide, yields [`Wiring::prior`].
    pub fn residual_estimate(&self, guide: &ComplexImage, output: &ComplexImage) -> ComplexImage {
        if self.ablation.corrects_error() {
            output.clone()
        } else {
            output - guide
        }
    }
}

/// Conv stack of `depth` layers with a long skip from the first layer's
/// activations into the input of the penultimate layer; two output channels.
pub fn build_ecnet(depth: usize, features: usize, in_channels: usize, seed: u64) -> Result<Network> {
    if depth < 3 {
        return Err(Error::Parameter(format!("error-correction net needs depth >= 3, got {depth}")));
    }
    Network::build(depth, features, in_channels, 2, Some(Skip { from: 0, to: depth - 2 }), seed)
}

/// Runs the network on one `(zf, guide)` pair.
pub fn forward(net: &Network, zf: &ComplexImage, guide: &ComplexImage, wiring: Wiring) -> Result<ComplexImage> {
    check_wiring(net, wiring)?;
    zf.same_dims(guide)?;
    net.forward(&wiring.input(zf, guide)?)?.to_complex()
}

fn check_wiring(net: &Network, wiring: Wiring) -> Result<()> {
    if net.in_channels() != wiring.ablation.in_channels() {
        return Err(Error::Dimension(format!(
            "{} mode needs {} input channels, network has {}",
            wiring.ablation.name(),
            wiring.ablation.in_channels(),
            net.in_channels()
        )));
    }
    if net.out_channels() != 2 {
        return Err(Error::Dimension("error-correction net must emit 2 channels".into()));
    }
    Ok(())
}

/// One training example.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub zf: ComplexImage,
    pub guide: ComplexImage,
    pub target_residual: ComplexImage,
    pub ground_truth: ComplexImage,
    pub y: KSpaceGrid,
    pub mask: Arc<SamplingMask>,
}

impl TrainSample {
    pub fn new(ground_truth: ComplexImage, guide: ComplexImage, zf: ComplexImage, y: KSpaceGrid, mask: Arc<SamplingMask>) -> Result<Self> {
        ground_truth.same_dims(&guide)?;
        ground_truth.same_dims(&zf)?;
        mask.check_dims(y.height(), y.width())?;
        mask.check_dims(ground_truth.height(), ground_truth.width())?;
        Ok(Self {
            target_residual: &ground_truth - &guide,
            zf,
            guide,
            ground_truth,
            y,
            mask,
        })
    }
}

fn half_sq_error(output: &[f64], target: &ComplexImage) -> f64 {
    let plane = target.len();
    let (re, im) = output.split_at(plane);
    0.5 * target
        .data()
        .iter()
        .zip(re.iter().zip(im))
        .map(|(t, (r, i))| (r - t.re).powi(2) + (i - t.im).powi(2))
        .sum::<f64>()
}

/// Training objective: batch mean of `1/2 ||target - f(x)||^2` plus
/// `weight_decay/2 * ||W||^2` over weights (not biases).
pub fn loss(net: &Network, batch: &[&TrainSample], wiring: Wiring, weight_decay: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Parameter("empty batch".into()));
    }
    check_wiring(net, wiring)?;
    let mut data = 0.0;
    for s in batch {
        let out = net.forward(&wiring.input(&s.zf, &s.guide)?)?;
        data += half_sq_error(&out.data, wiring.target(s));
    }
    Ok(data / batch.len() as f64 + 0.5 * weight_decay * net.weight_norm_sqr())
}

/// Loss and its exact gradient with respect to the flat parameters.
///
/// Per-sample gradients are summed in batch order, so the result does not
/// depend on the thread count.
pub fn backward(net: &Network, batch: &[&TrainSample], wiring: Wiring, weight_decay: f64) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Parameter("empty batch".into()));
    }
    check_wiring(net, wiring)?;
    let scale = 1.0 / batch.len() as f64;
    // Samples run in parallel; partial gradients are summed in batch order.
    let parts = batch
        .par_iter()
        .map(|s| {
            let cache = net.forward_cached(&wiring.input(&s.zf, &s.guide)?)?;
            let target = wiring.target(s);
            let err = half_sq_error(cache.output(), target);
            let plane = target.len();
            let mut d_out: Vec<f64> = cache.output().to_vec();
            for (j, t) in target.data().iter().enumerate() {
                d_out[j] = (d_out[j] - t.re) * scale;
                d_out[plane + j] = (d_out[plane + j] - t.im) * scale;
            }
            let mut g = vec![0.0; net.num_params()];
            net.backward(&cache, &d_out, &mut g, false)?;
            Ok((err, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads = vec![0.0; net.num_params()];
    let mut data = 0.0;
    for (err, g) in parts {
        data += err;
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += b;
        }
    }
    if weight_decay != 0.0 {
        let params = net.params();
        for ((g, p), decays) in grads.iter_mut().zip(&params).zip(net.decay_mask()) {
            if decays {
                *g += weight_decay * p;
            }
        }
    }
    Ok((data * scale + 0.5 * weight_decay * net.weight_norm_sqr(), grads))
}
