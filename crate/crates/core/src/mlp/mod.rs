//! One-hidden-layer perceptron: sigmoid hidden units, a single logit out,
//! binary cross-entropy, Adam.

pub mod features;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

pub const HIDDEN: usize = 64;
pub const LOGIT_CLAMP: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MlpError {
    #[error("feature length {got} does not match model input {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("component {0} is not traversed by any lightpath")]
    Untraversed(u32),
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy of a (clamped) logit against a 0/1 label.
pub fn bce(logit: f64, label: f64) -> f64 {
    let z = logit.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    // log(1 + e^z) - y z, written to stay finite for large |z|
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    softplus - label * z
}

/// Parameters live in one flat vector: `w1 (hidden x input, row-major) | b1 | w2 | b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Mlp {
            input,
            hidden,
            params: vec![0.0; hidden * input + 2 * hidden + 1],
        }
    }

    /// Uniform in `±1/sqrt(fan_in)` per layer.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(input, hidden);
        let a1 = 1.0 / (input.max(1) as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        let split = hidden * input + hidden;
        for (k, p) in m.params.iter_mut().enumerate() {
            let a = if k < split { a1 } else { a2 };
            *p = rng.gen_range(-a..=a);
        }
        m
    }

    fn b1_at(&self) -> usize {
        self.hidden * self.input
    }

    fn w2_at(&self) -> usize {
        self.b1_at() + self.hidden
    }

    fn b2_at(&self) -> usize {
        self.w2_at() + self.hidden
    }

    fn check(&self, x: &[f64]) -> Result<(), MlpError> {
        if x.len() != self.input {
            return Err(MlpError::DimensionMismatch {
                expected: self.input,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn hidden_activations(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let b1 = self.b1_at();
        for h in 0..self.hidden {
            let row = &self.params[h * self.input..(h + 1) * self.input];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.params[b1 + h];
            out.push(sigmoid(z));
        }
    }

    fn logit_from_hidden(&self, a: &[f64]) -> f64 {
        let w2 = &self.params[self.w2_at()..self.b2_at()];
        w2.iter().zip(a).map(|(w, v)| w * v).sum::<f64>() + self.params[self.b2_at()]
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64, MlpError> {
        self.check(x)?;
        let mut a = Vec::with_capacity(self.hidden);
        self.hidden_activations(x, &mut a);
        Ok(self.logit_from_hidden(&a))
    }

    pub fn probability(&self, x: &[f64]) -> Result<f64, MlpError> {
        Ok(sigmoid(self.logit(x)?.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)))
    }

    pub fn is_faulty(&self, x: &[f64]) -> Result<bool, MlpError> {
        Ok(self.probability(x)? >= 0.5)
    }

    /// Loss on one pair, with its gradient accumulated into `grad`.
    pub fn accumulate(
        &self,
        x: &[f64],
        label: f64,
        grad: &mut [f64],
        scratch: &mut Vec<f64>,
    ) -> Result<f64, MlpError> {
        self.check(x)?;
        self.hidden_activations(x, scratch);
        let logit = self.logit_from_hidden(scratch);
        let loss = bce(logit, label);
        let dz = if logit.abs() > LOGIT_CLAMP {
            0.0
        } else {
            sigmoid(logit) - label
        };
        if dz == 0.0 {
            return Ok(loss);
        }
        let (b1, w2, b2) = (self.b1_at(), self.w2_at(), self.b2_at());
        grad[b2] += dz;
        for h in 0..self.hidden {
            let a = scratch[h];
            grad[w2 + h] += dz * a;
            let dh = dz * self.params[w2 + h] * a * (1.0 - a);
            if dh == 0.0 {
                continue;
            }
            grad[b1 + h] += dh;
            let row = &mut grad[h * self.input..(h + 1) * self.input];
            for (g, v) in row.iter_mut().zip(x) {
                *g += dh * v;
            }
        }
        Ok(loss)
    }

    /// Loss and gradient for a single pair.
    pub fn loss_and_grad(&self, x: &[f64], label: f64) -> Result<(f64, Vec<f64>), MlpError> {
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.accumulate(x, label, &mut grad, &mut Vec::new())?;
        Ok((loss, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 100,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub final_loss: f64,
    pub seed: u64,
}

impl TrainReport {
    /// Mean loss over 1-based epochs `from..=to`.
    pub fn mean_loss(&self, from: usize, to: usize) -> f64 {
        let s = &self.epoch_loss[from - 1..to.min(self.epoch_loss.len())];
        s.iter().sum::<f64>() / s.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (e, l) in self.epoch_loss.iter().enumerate() {
            out.push_str(&format!("{},{:.6}\n", e + 1, l));
        }
        out
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g;
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            params[k] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.eps);
        }
    }
}

/// Minibatch Adam on mean cross-entropy. The batch order is reshuffled each
/// epoch from `cfg.seed`; gradients are summed in a fixed order, so runs are
/// bit-reproducible.
pub fn train(
    model: &mut Mlp,
    data: &[(Vec<f64>, f64)],
    cfg: &TrainConfig,
) -> Result<TrainReport, MlpError> {
    let n = model.params.len();
    let mut adam = Adam {
        m: vec![0.0; n],
        v: vec![0.0; n],
        t: 0,
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = seed::rng(cfg.seed, "minibatch");
    let mut grad = vec![0.0; n];
    let mut scratch = Vec::with_capacity(model.hidden);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let batch = cfg.batch_size.max(1);
    for epoch in 0..cfg.epochs {
        if data.is_empty() {
            break;
        }
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &k in chunk {
                let (x, y) = &data[k];
                total += model.accumulate(x, *y, &mut grad, &mut scratch)?;
            }
            let scale = 1.0 / chunk.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut model.params, &grad, cfg);
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(MlpError::NonFiniteLoss { epoch: epoch + 1 });
        }
        epoch_loss.push(mean);
    }
    Ok(TrainReport {
        final_loss: epoch_loss.last().copied().unwrap_or(f64::NAN),
        epoch_loss,
        seed: cfg.seed,
    })
}
