use rand::seq::SliceRandom;

use super::model::{loss_and_grad, Batch, ModelSpec};
use super::optim::{sgd_step, OptimizerState};
use super::params::ParamVector;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Extra gradient terms added on top of the data loss before each optimizer step.
pub trait Penalty {
    fn add_grad(&self, params: &ParamVector, grad: &mut ParamVector);
}

pub struct NoPenalty;

impl Penalty for NoPenalty {
    fn add_grad(&self, _: &ParamVector, _: &mut ParamVector) {}
}

/// Mini-batch SGD over `indices` for `epochs` passes. Each epoch draws a fresh
/// permutation from `rng`. Returns the mean batch loss of the last epoch.
#[allow(clippy::too_many_arguments)]
pub fn run_epochs(
    params: &mut ParamVector,
    spec: &ModelSpec,
    data: &LabeledDataset,
    indices: &[usize],
    epochs: usize,
    batch_size: usize,
    opt: &mut OptimizerState,
    rng: &mut Rng,
    penalty: &dyn Penalty,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::invalid("cannot train on an empty index set"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    let mut order = indices.to_vec();
    let mut last_loss = 0.0;
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let batch = data.batch(chunk)?;
            let (loss, mut grad) = loss_and_grad(params, spec, &batch)?;
            penalty.add_grad(params, &mut grad);
            sgd_step(params, &grad, opt)?;
            total += loss;
            batches += 1;
        }
        last_loss = total / batches as f64;
    }
    Ok(last_loss)
}

impl LabeledDataset {
    /// Gathers the given rows into a batch.
    pub fn batch(&self, rows: &[usize]) -> Result<Batch> {
        let dim = self.dim();
        let mut inputs = Vec::with_capacity(rows.len() * dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= self.len() {
                return Err(Error::invalid(format!("row {r} out of range")));
            }
            inputs.extend_from_slice(self.row(r));
            labels.push(self.labels()[r]);
        }
        Batch::new(inputs, dim, labels)
    }
}

/// Client-side optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.0,
            weight_decay: 4e-4,
            batch_size: 64,
        }
    }
}

impl TrainHyper {
    pub fn optimizer(&self, len: usize) -> Result<OptimizerState> {
        OptimizerState::new(len, self.lr, self.momentum, self.weight_decay)
    }
}
