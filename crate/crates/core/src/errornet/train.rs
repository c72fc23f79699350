use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamParams, AdamState};
use super::{backward, Network, TrainSample, Wiring};
use crate::error::{Error, Result};

/// Training aborts when the batch loss exceeds this multiple of the first one.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Loss history granularity.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 5e-4,
            batch_size: 4,
            iterations: 40_000,
            seed: 0,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::Parameter("batch_size and log_every must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Parameter(format!("invalid weight decay {}", self.weight_decay)));
        }
        Ok(())
    }
}

/// Anything with flat parameters and a differentiable batch objective.
pub trait Trainable {
    type Sample;

    fn parameters(&self) -> Vec<f64>;

    fn set_parameters(&mut self, params: &[f64]) -> Result<()>;

    /// Batch loss (including decay) and its gradient.
    fn loss_and_gradient(&self, batch: &[&Self::Sample], weight_decay: f64) -> Result<(f64, Vec<f64>)>;
}

/// `(step, loss)` pairs recorded every `log_every` steps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossHistory {
    pub entries: Vec<(usize, f64)>,
}

impl LossHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (step, loss) in &self.entries {
            let _ = writeln!(out, "{step},{loss}");
        }
        out
    }

    pub fn first(&self) -> Option<f64> {
        self.entries.first().map(|e| e.1)
    }

    pub fn last(&self) -> Option<f64> {
        self.entries.last().map(|e| e.1)
    }
}

/// Seeded epoch-wise shuffling into fixed-size batches.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(len: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..len).collect(),
            cursor: len,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size.min(self.order.len()) {
            if self.cursor == self.order.len() {
                self.reshuffle();
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }
}

/// ADAM over seeded mini-batches. Weight decay enters through the loss.
pub fn fit<M: Trainable>(model: &mut M, dataset: &[M::Sample], cfg: &TrainConfig) -> Result<LossHistory> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Parameter("empty training set".into()));
    }
    let adam = cfg.adam();
    let mut params = model.parameters();
    let mut state = AdamState::new(params.len());
    let mut sampler = BatchSampler::new(dataset.len(), cfg.seed);
    let mut history = LossHistory::default();
    let mut initial = None;

    for step in 1..=cfg.iterations {
        let batch: Vec<&M::Sample> = sampler.next_batch(cfg.batch_size).into_iter().map(|i| &dataset[i]).collect();
        let (loss, grads) = model.loss_and_gradient(&batch, cfg.weight_decay)?;
        let reference = *initial.get_or_insert(loss);
        if !loss.is_finite() || loss > DIVERGENCE_FACTOR * reference {
            return Err(Error::Divergence {
                step,
                loss,
                initial: reference,
            });
        }
        if step % cfg.log_every == 0 || step == 1 {
            history.entries.push((step, loss));
        }
        adam_step(&mut params, &grads, &mut state, &adam, step as u64)?;
        model.set_parameters(&params)?;
    }
    Ok(history)
}

/// Error-correction network bound to its wiring.
pub struct EcModel {
    pub net: Network,
    pub wiring: Wiring,
}

impl Trainable for EcModel {
    type Sample = TrainSample;

    fn parameters(&self) -> Vec<f64> {
        self.net.params()
    }

    fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        self.net.set_params(params)
    }

    fn loss_and_gradient(&self, batch: &[&TrainSample], weight_decay: f64) -> Result<(f64, Vec<f64>)> {
        backward(&self.net, batch, self.wiring, weight_decay)
    }
}

/// Trains an error-correction network on `dataset`.
pub fn train(net: Network, dataset: &[TrainSample], wiring: Wiring, cfg: &TrainConfig) -> Result<(Network, LossHistory)> {
    let mut model = EcModel { net, wiring };
    let history = fit(&mut model, dataset, cfg)?;
    Ok((model.net, history))
}
