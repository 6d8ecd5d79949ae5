//! Local objectives, server aggregation, evaluation, and the client-level baselines
//! (FedAvg, FedProx, FedDyn).

mod aggregate;
mod baseline;
mod history;
mod objective;

pub use aggregate::{fedavg_aggregate, feddyn_aggregate, ServerState};
pub(crate) use baseline::collect_updates;
pub use baseline::{num_sampled, run_federated, sample_participants, Aggregation, FederatedConfig};
pub use history::{Divergence, RoundRecord, TrainHistory};
pub use objective::{local_train, ClientUpdate, LocalObjective, ObjectiveKind};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{forward, ModelSpec, ParamVector};

const EVAL_CHUNK: usize = 1024;

/// Fraction of rows whose argmax prediction (ties to the lowest class) is correct.
pub fn evaluate(params: &ParamVector, spec: &ModelSpec, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Ok(0.0);
    }
    let rows: Vec<usize> = (0..test.len()).collect();
    let mut correct = 0usize;
    for chunk in rows.chunks(EVAL_CHUNK) {
        let batch = test.batch(chunk)?;
        let predicted = forward(params, spec, &batch)?.argmax();
        correct += predicted
            .iter()
            .zip(batch.labels())
            .filter(|(p, y)| p == y)
            .count();
    }
    Ok(correct as f64 / test.len() as f64)
}

/// [`evaluate`], with activation overflow reported as divergence at `round` (1-based).
pub(crate) fn evaluate_or_diverge(
    params: &ParamVector,
    spec: &ModelSpec,
    test: &LabeledDataset,
    round: usize,
) -> Result<std::result::Result<f64, Divergence>> {
    match evaluate(params, spec, test) {
        Ok(acc) => Ok(Ok(acc)),
        Err(Error::Overflow { layer }) => Ok(Err(Divergence {
            round,
            reason: format!("non-finite activations in layer {layer} during evaluation"),
        })),
        Err(e) => Err(e),
    }
}
