use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{fedavg_aggregate, feddyn_aggregate, ServerState};
use super::evaluate_or_diverge;
use super::history::{Divergence, RoundRecord, TrainHistory};
use super::objective::{local_train, ClientUpdate, LocalObjective, ObjectiveKind};
use crate::data::{ClientPartition, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{ModelSpec, ParamVector, TrainHyper};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    FedAvg,
    FedDyn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedConfig {
    pub rounds: usize,
    pub fraction: f64,
    pub local_epochs: usize,
    pub objective: ObjectiveKind,
    pub aggregation: Aggregation,
    pub hyper: TrainHyper,
    pub seed: u64,
}

impl FederatedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.local_epochs == 0 {
            return Err(Error::invalid("rounds and local epochs must be >= 1"));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "participation fraction must be in (0,1], got {}",
                self.fraction
            )));
        }
        Ok(())
    }
}

/// `ceil(fraction * total)`, clamped to `[1, total]`.
pub fn num_sampled(total: usize, fraction: f64) -> usize {
    let n = (fraction * total as f64 - 1e-9).ceil() as usize;
    n.clamp(1, total.max(1))
}

/// Participants of round `round` (0-based), drawn uniformly without replacement, in
/// draw order.
pub fn sample_participants(seed: u64, round: usize, total: usize, fraction: f64) -> Vec<usize> {
    let mut rng = rng::stream(seed, Stream::Sampling, &[round as u64]);
    rand::seq::index::sample(&mut rng, total, num_sampled(total, fraction)).into_vec()
}

/// Client-level federated training: FedAvg (plain), FedProx (prox objective) or
/// FedDyn (dyn objective with dynamic aggregation).
pub fn run_federated(
    config: &FederatedConfig,
    spec: &ModelSpec,
    train: &LabeledDataset,
    partition: &ClientPartition,
    test: &LabeledDataset,
    theta0: &ParamVector,
) -> Result<TrainHistory> {
    config.validate()?;
    let k_total = partition.num_clients();
    let mut server = ServerState::new(theta0.clone(), k_total);
    let mut memories: Vec<Option<ParamVector>> = vec![None; k_total];
    let mut records = Vec::with_capacity(config.rounds);
    let mut divergence = None;
    let start = Instant::now();

    for t in 0..config.rounds {
        let sampled = sample_participants(config.seed, t, k_total, config.fraction);
        let theta = server.params.clone();
        let results: Vec<Result<ClientUpdate>> = sampled
            .par_iter()
            .map(|&k| {
                let objective = LocalObjective::new(config.objective, &theta, memories[k].as_ref());
                local_train(
                    &theta,
                    spec,
                    train,
                    partition.indices(k),
                    config.local_epochs,
                    &objective,
                    &config.hyper,
                    rng::derive_seed(config.seed, Stream::Local, &[k as u64, t as u64, 0]),
                    k,
                )
            })
            .collect();
        let updates = match collect_updates(results, t + 1)? {
            Ok(u) => u,
            Err(d) => {
                divergence = Some(d);
                break;
            }
        };
        for u in &updates {
            if let Some(m) = &u.grad_memory {
                memories[u.id] = Some(m.clone());
            }
        }
        let next = match config.aggregation {
            Aggregation::FedAvg => fedavg_aggregate(&updates)?,
            Aggregation::FedDyn => feddyn_aggregate(&updates, &mut server)?,
        };
        if !next.is_finite() {
            divergence = Some(Divergence {
                round: t + 1,
                reason: "non-finite global parameters after aggregation".into(),
            });
            break;
        }
        server.params = next;
        let accuracy = match evaluate_or_diverge(&server.params, spec, test, t + 1)? {
            Ok(a) => a,
            Err(d) => {
                divergence = Some(d);
                break;
            }
        };
        records.push(RoundRecord {
            round: t + 1,
            equivalent_round: (t + 1) as f64,
            accuracy,
            aggregated: true,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainHistory {
        algorithm: algorithm_name(config).into(),
        records,
        divergence,
        final_params: server.params,
    })
}

fn algorithm_name(config: &FederatedConfig) -> &'static str {
    match (config.objective, config.aggregation) {
        (ObjectiveKind::Plain, Aggregation::FedAvg) => "fedavg",
        (ObjectiveKind::Prox { .. }, _) => "fedprox",
        (ObjectiveKind::Dyn { .. }, _) | (_, Aggregation::FedDyn) => "feddyn",
    }
}

/// Splits training results into updates, or a divergence when any participant hit
/// non-finite activations. Other errors propagate.
pub(crate) fn collect_updates<T>(
    results: Vec<Result<T>>,
    round: usize,
) -> Result<std::result::Result<Vec<T>, Divergence>> {
    let mut updates = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(u) => updates.push(u),
            Err(Error::Overflow { layer }) => {
                return Ok(Err(Divergence {
                    round,
                    reason: format!(
                        "non-finite activations in layer {layer} during local training"
                    ),
                }))
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Ok(updates))
}
