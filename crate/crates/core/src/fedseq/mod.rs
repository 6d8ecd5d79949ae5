//! Sequential training inside superclients, and the FedSeq / FedSeqInter round loops.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClientPartition, LabeledDataset};
use crate::error::{Error, Result};
use crate::fl::{
    collect_updates, evaluate_or_diverge, fedavg_aggregate, feddyn_aggregate, local_train,
    num_sampled, sample_participants, Aggregation, ClientUpdate, Divergence, LocalObjective,
    ObjectiveKind, RoundRecord, ServerState, TrainHistory,
};
use crate::grouping::Superclient;
use crate::nn::{ModelSpec, ParamVector, TrainHyper};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedSeqConfig {
    pub rounds: usize,
    pub fraction: f64,
    pub local_epochs: usize,
    pub superclient_epochs: usize,
    pub objective: ObjectiveKind,
    pub aggregation: Aggregation,
    pub hyper: TrainHyper,
    pub seed: u64,
}

impl FedSeqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.local_epochs == 0 || self.superclient_epochs == 0 {
            return Err(Error::invalid("rounds, E_k and E_S must all be >= 1"));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "participation fraction must be in (0,1], got {}",
                self.fraction
            )));
        }
        Ok(())
    }

    fn suffix(&self) -> &'static str {
        match self.objective {
            ObjectiveKind::Plain => "",
            ObjectiveKind::Prox { .. } => "+prox",
            ObjectiveKind::Dyn { .. } => "+dyn",
        }
    }
}

/// Output of one superclient's sequential pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    /// Final model, weighted by the superclient's sample count and tagged with its id.
    pub update: ClientUpdate,
    /// Updated gradient memories `(client, memory)` of the dynamic objective.
    pub memories: Vec<(usize, ParamVector)>,
}

/// Member order of a superclient for one round.
pub fn chain_order(superclient: &Superclient, seed: u64, round: usize) -> Vec<usize> {
    let mut order = superclient.clients.clone();
    let mut rng = rng::stream(
        seed,
        Stream::Shuffle,
        &[superclient.id as u64, round as u64],
    );
    order.shuffle(&mut rng);
    order
}

/// Batch-order seed of `client` in `round`, pass `pass` (0-based).
pub fn local_seed(seed: u64, client: usize, round: usize, pass: usize) -> u64 {
    rng::derive_seed(
        seed,
        Stream::Local,
        &[client as u64, round as u64, pass as u64],
    )
}

/// Passes the model through the superclient's members `E_S` times in a per-round
/// shuffled order, each member training `E_k` epochs. Prox and dyn anchors follow the
/// chain: every member is anchored to its predecessor's output, the first to `theta_in`.
#[allow(clippy::too_many_arguments)]
pub fn sequential_train_superclient(
    theta_in: &ParamVector,
    superclient: &Superclient,
    spec: &ModelSpec,
    train: &LabeledDataset,
    partition: &ClientPartition,
    config: &FedSeqConfig,
    round: usize,
    memories: &[Option<ParamVector>],
) -> Result<ChainResult> {
    if superclient.clients.is_empty() {
        return Err(Error::invalid(format!(
            "superclient {} has no members",
            superclient.id
        )));
    }
    if let Some(&bad) = superclient
        .clients
        .iter()
        .find(|&&c| c >= partition.num_clients())
    {
        return Err(Error::invalid(format!(
            "superclient {} references client {bad}, partition has {}",
            superclient.id,
            partition.num_clients()
        )));
    }
    let order = chain_order(superclient, config.seed, round);
    let mut current = theta_in.clone();
    let mut updated: Vec<(usize, ParamVector)> = Vec::new();
    for pass in 0..config.superclient_epochs {
        for &client in &order {
            let memory = updated
                .iter()
                .find(|(c, _)| *c == client)
                .map(|(_, m)| m)
                .or(memories.get(client).and_then(Option::as_ref));
            let objective = LocalObjective::new(config.objective, &current, memory);
            let result = local_train(
                &current,
                spec,
                train,
                partition.indices(client),
                config.local_epochs,
                &objective,
                &config.hyper,
                local_seed(config.seed, client, round, pass),
                client,
            )?;
            if let Some(m) = result.grad_memory {
                match updated.iter_mut().find(|(c, _)| *c == client) {
                    Some(slot) => slot.1 = m,
                    None => updated.push((client, m)),
                }
            }
            current = result.params;
        }
    }
    let num_samples = superclient
        .clients
        .iter()
        .map(|&c| partition.indices(c).len())
        .sum();
    Ok(ChainResult {
        update: ClientUpdate {
            params: current,
            num_samples,
            id: superclient.id,
            grad_memory: None,
        },
        memories: updated,
    })
}

struct Runner<'a> {
    config: &'a FedSeqConfig,
    spec: &'a ModelSpec,
    train: &'a LabeledDataset,
    partition: &'a ClientPartition,
    superclients: &'a [Superclient],
    memories: Vec<Option<ParamVector>>,
}

impl Runner<'_> {
    /// Trains the sampled superclients, `starts[i]` feeding `sampled[i]`. Returns
    /// results in sampled order, or the divergence that stopped the round.
    fn round(
        &mut self,
        round: usize,
        sampled: &[usize],
        starts: &[&ParamVector],
    ) -> Result<std::result::Result<Vec<ClientUpdate>, Divergence>> {
        let results: Vec<Result<ChainResult>> = sampled
            .par_iter()
            .zip(starts.par_iter())
            .map(|(&s, theta)| {
                sequential_train_superclient(
                    theta,
                    &self.superclients[s],
                    self.spec,
                    self.train,
                    self.partition,
                    self.config,
                    round,
                    &self.memories,
                )
            })
            .collect();
        Ok(collect_updates(results, round + 1)?.map(|chains| {
            chains
                .into_iter()
                .map(|c| {
                    for (client, m) in c.memories {
                        self.memories[client] = Some(m);
                    }
                    c.update
                })
                .collect()
        }))
    }
}

fn check_inputs(
    config: &FedSeqConfig,
    superclients: &[Superclient],
    partition: &ClientPartition,
) -> Result<()> {
    config.validate()?;
    if superclients.is_empty() {
        return Err(Error::invalid("no superclients to train"));
    }
    for (i, s) in superclients.iter().enumerate() {
        if s.id != i {
            return Err(Error::invalid(format!(
                "superclient at position {i} has id {}",
                s.id
            )));
        }
    }
    if partition.num_clients() == 0 {
        return Err(Error::invalid("empty partition"));
    }
    Ok(())
}

fn record(
    round: usize,
    e_s: usize,
    accuracy: f64,
    aggregated: bool,
    start: &Instant,
) -> RoundRecord {
    RoundRecord {
        round: round + 1,
        equivalent_round: (round + 1) as f64 / e_s as f64,
        accuracy,
        aggregated,
        wall_seconds: start.elapsed().as_secs_f64(),
    }
}

fn non_finite(round: usize) -> Divergence {
    Divergence {
        round: round + 1,
        reason: "non-finite global parameters after aggregation".into(),
    }
}

/// FedSeq: every round a fraction of superclients trains sequentially from the global
/// model, and the server aggregates their outputs.
pub fn fedseq_run(
    config: &FedSeqConfig,
    spec: &ModelSpec,
    train: &LabeledDataset,
    partition: &ClientPartition,
    superclients: &[Superclient],
    test: &LabeledDataset,
    theta0: &ParamVector,
) -> Result<TrainHistory> {
    check_inputs(config, superclients, partition)?;
    let mut runner = Runner {
        config,
        spec,
        train,
        partition,
        superclients,
        memories: vec![None; partition.num_clients()],
    };
    let mut server = ServerState::new(theta0.clone(), superclients.len());
    let mut records = Vec::with_capacity(config.rounds);
    let mut divergence = None;
    let start = Instant::now();
    for t in 0..config.rounds {
        let sampled = sample_participants(config.seed, t, superclients.len(), config.fraction);
        let theta = server.params.clone();
        let starts = vec![&theta; sampled.len()];
        let updates = match runner.round(t, &sampled, &starts)? {
            Ok(u) => u,
            Err(d) => {
                divergence = Some(d);
                break;
            }
        };
        let next = match config.aggregation {
            Aggregation::FedAvg => fedavg_aggregate(&updates)?,
            Aggregation::FedDyn => feddyn_aggregate(&updates, &mut server)?,
        };
        if !next.is_finite() {
            divergence = Some(non_finite(t));
            break;
        }
        server.params = next;
        let acc = match evaluate_or_diverge(&server.params, spec, test, t + 1)? {
            Ok(a) => a,
            Err(d) => {
                divergence = Some(d);
                break;
            }
        };
        records.push(record(t, config.superclient_epochs, acc, true, &start));
    }
    Ok(TrainHistory {
        algorithm: format!("fedseq{}", config.suffix()),
        records,
        divergence,
        final_params: server.params,
    })
}

/// Model slots carried between superclients across rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct InterState {
    pub slots: Vec<ParamVector>,
    pub weights: Vec<usize>,
    pub rounds_since_aggregation: usize,
}

impl InterState {
    pub fn new(theta: &ParamVector, slots: usize) -> Self {
        Self {
            slots: vec![theta.clone(); slots],
            weights: vec![0; slots],
            rounds_since_aggregation: 0,
        }
    }

    /// `sum_i (w_i / w) * slot_i`, reduced in slot order.
    pub fn weighted_average(&self) -> Result<ParamVector> {
        let updates: Vec<ClientUpdate> = self
            .slots
            .iter()
            .zip(&self.weights)
            .enumerate()
            .filter(|(_, (_, &w))| w > 0)
            .map(|(i, (p, &w))| ClientUpdate {
                params: p.clone(),
                num_samples: w,
                id: i,
                grad_memory: None,
            })
            .collect();
        if updates.is_empty() {
            return Err(Error::invalid("no slot has accumulated weight"));
        }
        fedavg_aggregate(&updates)
    }

    /// Resets every slot to `theta` and clears the weights.
    pub fn reset(&mut self, theta: &ParamVector) {
        self.slots.iter_mut().for_each(|s| *s = theta.clone());
        self.weights.iter_mut().for_each(|w| *w = 0);
        self.rounds_since_aggregation = 0;
    }
}

/// FedSeqInter: position `i` of each round's sample continues slot `i`; slots are
/// averaged by accumulated sample count when the 0-based round index is a multiple of
/// the number of superclients. Rounds in between are evaluated on the weighted slot
/// average without touching the slots.
pub fn fedseqinter_run(
    config: &FedSeqConfig,
    spec: &ModelSpec,
    train: &LabeledDataset,
    partition: &ClientPartition,
    superclients: &[Superclient],
    test: &LabeledDataset,
    theta0: &ParamVector,
) -> Result<TrainHistory> {
    check_inputs(config, superclients, partition)?;
    let n_s = superclients.len();
    let mut runner = Runner {
        config,
        spec,
        train,
        partition,
        superclients,
        memories: vec![None; partition.num_clients()],
    };
    let mut state = InterState::new(theta0, num_sampled(n_s, config.fraction));
    let mut global = theta0.clone();
    let mut records = Vec::with_capacity(config.rounds);
    let mut divergence = None;
    let start = Instant::now();
    for t in 0..config.rounds {
        let sampled = sample_participants(config.seed, t, n_s, config.fraction);
        let slots = state.slots.clone();
        let starts: Vec<&ParamVector> = slots.iter().collect();
        let updates = match runner.round(t, &sampled, &starts)? {
            Ok(u) => u,
            Err(d) => {
                divergence = Some(d);
                break;
            }
        };
        for (i, u) in updates.into_iter().enumerate() {
            state.weights[i] += u.num_samples;
            state.slots[i] = u.params;
        }
        state.rounds_since_aggregation += 1;
        let aggregated = t % n_s == 0;
        let average = state.weighted_average()?;
        if !average.is_finite() {
            divergence = Some(non_finite(t));
            break;
        }
        if aggregated {
            state.reset(&average);
        }
        let acc = match evaluate_or_diverge(&average, spec, test, t + 1)? {
            Ok(a) => a,
            Err(d) => {
                divergence = Some(d);
                break;
            }
        };
        global = average;
        records.push(record(
            t,
            config.superclient_epochs,
            acc,
            aggregated,
            &start,
        ));
    }
    Ok(TrainHistory {
        algorithm: format!("fedseqinter{}", config.suffix()),
        records,
        divergence,
        final_params: global,
    })
}
