use crate::error::{Error, Result};
use crate::nn::ParamVector;

use super::objective::ClientUpdate;

fn sorted_by_id(updates: &[ClientUpdate]) -> Result<Vec<&ClientUpdate>> {
    let first = updates
        .first()
        .ok_or_else(|| Error::invalid("cannot aggregate an empty update list"))?;
    for u in updates {
        first.params.check_layout(&u.params)?;
        if u.num_samples == 0 {
            return Err(Error::invalid(format!(
                "update {} reports zero samples",
                u.id
            )));
        }
    }
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.id);
    Ok(sorted)
}

/// Sample-weighted mean of the participants' models, reduced in ascending id order as
/// offsets from the lowest-id model, so identical inputs aggregate to themselves exactly.
pub fn fedavg_aggregate(updates: &[ClientUpdate]) -> Result<ParamVector> {
    let sorted = sorted_by_id(updates)?;
    let total: usize = sorted.iter().map(|u| u.num_samples).sum();
    let base = &sorted[0].params;
    let mut out = base.clone();
    for u in &sorted[1..] {
        let w = u.num_samples as f64 / total as f64;
        for ((o, x), b) in out
            .values_mut()
            .iter_mut()
            .zip(u.params.values())
            .zip(base.values())
        {
            *o += w * (x - b);
        }
    }
    Ok(out)
}

/// Server state for dynamic-regularisation aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub params: ParamVector,
    pub round: usize,
    /// Running sum of `(1/m) * sum_k (theta_k - theta_prev)` over past rounds.
    pub h: ParamVector,
    /// Total number of participants that could be sampled.
    pub population: usize,
}

impl ServerState {
    pub fn new(params: ParamVector, population: usize) -> Self {
        let h = params.zeros_like();
        Self {
            params,
            round: 0,
            h,
            population,
        }
    }
}

/// `theta = mean_k(theta_k) - h`, where `h` accumulates `(1/m) sum_k (theta_k - theta_prev)`
/// across rounds. With zero prior state this is exactly one application of
/// `mean_k(theta_k) - (1/m) sum_k (theta_k - theta_prev)`.
///
/// Updates `state.params`, `state.h` and `state.round`, and returns the new model.
pub fn feddyn_aggregate(updates: &[ClientUpdate], state: &mut ServerState) -> Result<ParamVector> {
    if state.population == 0 {
        return Err(Error::invalid("FedDyn population must be positive"));
    }
    let sorted = sorted_by_id(updates)?;
    state.params.check_layout(&sorted[0].params)?;
    let inv_p = 1.0 / sorted.len() as f64;
    let inv_m = 1.0 / state.population as f64;
    let mut drift = state.params.zeros_like();
    for u in &sorted {
        for ((d, x), p) in drift
            .values_mut()
            .iter_mut()
            .zip(u.params.values())
            .zip(state.params.values())
        {
            *d += x - p;
        }
    }
    state.h.axpy(inv_m, &drift);
    // mean_k(theta_k) written as theta_prev + mean_k(theta_k - theta_prev)
    let mut next = state.params.clone();
    next.axpy(inv_p, &drift);
    next.axpy(-1.0, &state.h);
    state.params = next.clone();
    state.round += 1;
    Ok(next)
}
