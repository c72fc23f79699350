//! Plain convolutional stacks with an optional long additive skip.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::{self, Precision, Scalar, TAPS};
use crate::error::{Error, Result};
use crate::fourier::ComplexImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
    /// `[out][in][3][3]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, activation: Activation) -> Self {
        Self {
            in_channels,
            out_channels,
            activation,
            weight: vec![0.0; out_channels * in_channels * TAPS],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * TAPS
    }

    pub fn fan_out(&self) -> usize {
        self.out_channels * TAPS
    }

    /// Xavier/Glorot uniform limit `sqrt(6 / (fan_in + fan_out))`.
    pub fn xavier_bound(&self) -> f64 {
        (6.0 / (self.fan_in() + self.fan_out()) as f64).sqrt()
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// The input of layer `to` is the activation of layer `to - 1` plus the
/// activation of layer `from`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Skip {
    pub from: usize,
    pub to: usize,
}

/// Multi-channel image, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    /// Stacks the real and imaginary planes of each image, in order.
    pub fn from_complex(images: &[&ComplexImage]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Dimension("no images to stack".into()))?;
        let (height, width) = first.dims();
        let plane = height * width;
        let mut data = Vec::with_capacity(2 * plane * images.len());
        for img in images {
            first.same_dims(img)?;
            data.extend(img.data().iter().map(|z| z.re));
            data.extend(img.data().iter().map(|z| z.im));
        }
        Ok(Self {
            channels: 2 * images.len(),
            height,
            width,
            data,
        })
    }

    /// Interprets a 2-channel map as (re, im).
    pub fn to_complex(&self) -> Result<ComplexImage> {
        if self.channels != 2 {
            return Err(Error::Dimension(format!("expected 2 channels, got {}", self.channels)));
        }
        let plane = self.height * self.width;
        ComplexImage::from_parts(self.height, self.width, &self.data[..plane], &self.data[plane..])
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// Per-sample intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: FeatureMap,
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&self.input.data)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Conv2d>,
    skip: Option<Skip>,
    precision: Precision,
}

impl Network {
    pub fn from_layers(layers: Vec<Conv2d>, skip: Option<Skip>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Parameter("network without layers".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(Error::Dimension(format!(
                    "layer {i} emits {} channels, layer {} expects {}",
                    pair[0].out_channels,
                    i + 1,
                    pair[1].in_channels
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.len() != l.out_channels * l.in_channels * TAPS || l.bias.len() != l.out_channels {
                return Err(Error::Dimension(format!("layer {i} parameter shapes do not match its channels")));
            }
        }
        if let Some(s) = skip {
            if s.from >= s.to || s.to >= layers.len() || layers[s.from].out_channels != layers[s.to].in_channels {
                return Err(Error::Parameter(format!("invalid skip {} -> {}", s.from, s.to)));
            }
        }
        Ok(Self {
            layers,
            skip,
            precision: Precision::F64,
        })
    }

    /// Conv stack of `depth` layers: ReLU everywhere but the identity last
    /// layer, Xavier-uniform weights, zero biases.
    pub fn build(
        depth: usize,
        features: usize,
        in_channels: usize,
        out_channels: usize,
        skip: Option<Skip>,
        seed: u64,
    ) -> Result<Self> {
        if depth == 0 || features == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::Parameter("depth, features and channel counts must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..depth)
            .map(|i| {
                let cin = if i == 0 { in_channels } else { features };
                let (cout, act) = if i + 1 == depth {
                    (out_channels, Activation::Identity)
                } else {
                    (features, Activation::Relu)
                };
                let mut layer = Conv2d::zeros(cin, cout, act);
                let bound = layer.xavier_bound();
                layer.weight.iter_mut().for_each(|w| *w = rng.gen_range(-bound..=bound));
                layer
            })
            .collect();
        Self::from_layers(layers, skip)
    }

    pub fn layers(&self) -> &[Conv2d] {
        &self.layers
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// GEMM arithmetic for forward and backward passes. Not stored in
    /// weight files.
    pub fn set_precision(&mut self, precision: Precision) {
        self.precision = precision;
    }

    pub fn skip(&self) -> Option<Skip> {
        self.skip
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.layers[self.layers.len() - 1].out_channels
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Conv2d::num_params).sum()
    }

    /// Flat parameters: for each layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "{} parameters for a network with {}",
                params.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.copy_from_slice(&params[offset..offset + n]);
            offset += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&params[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// `true` for weights, `false` for biases, in [`Network::params`] order.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(std::iter::repeat(true).take(l.weight.len()));
            out.extend(std::iter::repeat(false).take(l.bias.len()));
        }
        out
    }

    /// `sum w^2` over weights only.
    pub fn weight_norm_sqr(&self) -> f64 {
        self.layers.iter().flat_map(|l| l.weight.iter()).map(|w| w * w).sum()
    }

    /// Zeroes the last layer's weights and biases, making the output identically zero.
    pub fn zero_last_layer(&mut self) {
        let last = self.layers.last_mut().expect("network has layers");
        last.weight.iter_mut().for_each(|w| *w = 0.0);
        last.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    fn check_input(&self, input: &FeatureMap) -> Result<()> {
        if input.channels != self.in_channels() {
            return Err(Error::Dimension(format!(
                "network expects {} input channels, got {}",
                self.in_channels(),
                input.channels
            )));
        }
        if input.data.len() != input.channels * input.plane() || input.plane() == 0 {
            return Err(Error::Dimension("feature map size does not match its shape".into()));
        }
        Ok(())
    }

    /// Input of layer `i` given the activations of earlier layers.
    fn layer_input<'a>(&self, i: usize, input: &'a FeatureMap, acts: &'a [Vec<f64>]) -> std::borrow::Cow<'a, [f64]> {
        if i == 0 {
            return std::borrow::Cow::Borrowed(&input.data);
        }
        match self.skip {
            Some(s) if s.to == i => {
                let summed = acts[i - 1].iter().zip(&acts[s.from]).map(|(a, b)| a + b).collect();
                std::borrow::Cow::Owned(summed)
            }
            _ => std::borrow::Cow::Borrowed(&acts[i - 1]),
        }
    }

    pub fn forward_cached(&self, input: &FeatureMap) -> Result<ForwardCache> {
        self.check_input(input)?;
        let (h, w) = (input.height, input.width);
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let (mut col64, mut col32) = (Vec::<f64>::new(), Vec::<f32>::new());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            {
                let x = self.layer_input(i, input, &acts);
                let (cin, cout) = (layer.in_channels, layer.out_channels);
                match self.precision {
                    Precision::F64 => conv::forward(&x, cin, h, w, &layer.weight, &layer.bias, cout, &mut col64, &mut out),
                    Precision::F32 => conv::forward(&x, cin, h, w, &layer.weight, &layer.bias, cout, &mut col32, &mut out),
                }
            }
            if layer.activation == Activation::Relu {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        Ok(ForwardCache {
            input: input.clone(),
            activations: acts,
        })
    }

    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        let mut cache = self.forward_cached(input)?;
        Ok(FeatureMap {
            channels: self.out_channels(),
            height: input.height,
            width: input.width,
            data: cache.activations.pop().unwrap_or_default(),
        })
    }

    /// Reverse-mode pass for one sample.
    ///
    /// Adds `dL/dtheta` into `grads` (laid out like [`Network::params`]) and
    /// returns `dL/dinput` when `want_input` is set.
    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64], grads: &mut [f64], want_input: bool) -> Result<Option<Vec<f64>>> {
        if grads.len() != self.num_params() {
            return Err(Error::Dimension("gradient buffer does not match parameter count".into()));
        }
        let (h, w) = (cache.input.height, cache.input.width);
        if d_output.len() != self.out_channels() * h * w {
            return Err(Error::Dimension("output gradient has the wrong size".into()));
        }
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            offsets.push(acc);
            acc += l.num_params();
        }

        let acts = &cache.activations;
        let mut g = d_output.to_vec();
        let mut skip_grad: Option<Vec<f64>> = None;
        let (mut col64, mut col32) = (Vec::<f64>::new(), Vec::<f32>::new());
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if let (Some(s), Some(extra)) = (self.skip, skip_grad.as_ref()) {
                if s.from == i {
                    g.iter_mut().zip(extra).for_each(|(a, b)| *a += b);
                    skip_grad = None;
                }
            }
            if layer.activation == Activation::Relu {
                for (gi, &a) in g.iter_mut().zip(&acts[i]) {
                    if a <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            let x = self.layer_input(i, &cache.input, acts);
            let (dw, rest) = grads[offsets[i]..].split_at_mut(layer.weight.len());
            let db = &mut rest[..layer.bias.len()];
            let need_input = i > 0 || want_input;
            let mut d_in = Vec::new();
            let d_in_ref = need_input.then_some(&mut d_in);
            match self.precision {
                Precision::F64 => layer_backward(layer, &x, &g, h, w, &mut col64, dw, db, d_in_ref),
                Precision::F32 => layer_backward(layer, &x, &g, h, w, &mut col32, dw, db, d_in_ref),
            }
            if let Some(s) = self.skip {
                if s.to == i {
                    skip_grad = Some(d_in.clone());
                }
            }
            g = d_in;
        }
        Ok(want_input.then_some(g))
    }
}

#[allow(clippy::too_many_arguments)]
fn layer_backward<T: Scalar>(
    layer: &Conv2d,
    input: &[f64],
    d_out: &[f64],
    h: usize,
    w: usize,
    col: &mut Vec<T>,
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    d_input: Option<&mut Vec<f64>>,
) {
    conv::im2col(input, layer.in_channels, h, w, col);
    conv::backward(col, d_out, layer.in_channels, h, w, &layer.weight, layer.out_channels, d_weight, d_bias, d_input);
}
