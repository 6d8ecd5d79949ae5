use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{run_epochs, ModelSpec, ParamVector, Penalty, TrainHyper};
use crate::rng::Rng;

/// Hyperparameters of a local objective, without the per-call anchor state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ObjectiveKind {
    Plain,
    Prox { mu: f64 },
    Dyn { alpha: f64 },
}

/// What a participant minimises locally.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalObjective {
    /// Empirical risk only.
    Plain,
    /// `L + (mu/2) |theta - anchor|^2`
    Prox { mu: f64, anchor: ParamVector },
    /// `L - <grad_memory, theta> + (alpha/2) |theta - anchor|^2`
    Dyn {
        alpha: f64,
        anchor: ParamVector,
        grad_memory: ParamVector,
    },
}

impl LocalObjective {
    pub fn new(
        kind: ObjectiveKind,
        anchor: &ParamVector,
        grad_memory: Option<&ParamVector>,
    ) -> Self {
        match kind {
            ObjectiveKind::Plain => LocalObjective::Plain,
            ObjectiveKind::Prox { mu } => LocalObjective::Prox {
                mu,
                anchor: anchor.clone(),
            },
            ObjectiveKind::Dyn { alpha } => LocalObjective::Dyn {
                alpha,
                anchor: anchor.clone(),
                grad_memory: grad_memory.cloned().unwrap_or_else(|| anchor.zeros_like()),
            },
        }
    }

    fn check(&self, init: &ParamVector) -> Result<()> {
        match self {
            LocalObjective::Plain => Ok(()),
            LocalObjective::Prox { mu, anchor } => {
                if !(*mu >= 0.0) {
                    return Err(Error::invalid(format!(
                        "proximal mu must be >= 0, got {mu}"
                    )));
                }
                init.check_layout(anchor)
            }
            LocalObjective::Dyn {
                alpha,
                anchor,
                grad_memory,
            } => {
                if !(*alpha > 0.0) {
                    return Err(Error::invalid(format!(
                        "alpha_dyn must be > 0, got {alpha}"
                    )));
                }
                init.check_layout(anchor)?;
                init.check_layout(grad_memory)
            }
        }
    }
}

impl Penalty for LocalObjective {
    fn add_grad(&self, params: &ParamVector, grad: &mut ParamVector) {
        match self {
            LocalObjective::Plain => {}
            LocalObjective::Prox { mu, anchor } => {
                for ((g, t), a) in grad
                    .values_mut()
                    .iter_mut()
                    .zip(params.values())
                    .zip(anchor.values())
                {
                    *g += mu * (t - a);
                }
            }
            LocalObjective::Dyn {
                alpha,
                anchor,
                grad_memory,
            } => {
                for (((g, t), a), m) in grad
                    .values_mut()
                    .iter_mut()
                    .zip(params.values())
                    .zip(anchor.values())
                    .zip(grad_memory.values())
                {
                    *g += alpha * (t - a) - m;
                }
            }
        }
    }
}

/// The result a participant reports back.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub params: ParamVector,
    pub num_samples: usize,
    pub id: usize,
    /// Updated gradient memory, dynamic objective only.
    pub grad_memory: Option<ParamVector>,
}

/// `epochs` epochs of mini-batch SGD on `indices` from `init`, minimising `objective`.
/// The batch order stream is seeded with `seed`.
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    init: &ParamVector,
    spec: &ModelSpec,
    data: &LabeledDataset,
    indices: &[usize],
    epochs: usize,
    objective: &LocalObjective,
    hyper: &TrainHyper,
    seed: u64,
    id: usize,
) -> Result<ClientUpdate> {
    if epochs == 0 {
        return Err(Error::invalid("local training needs at least one epoch"));
    }
    objective.check(init)?;
    let mut params = init.clone();
    let mut opt = hyper.optimizer(params.len())?;
    let mut rng = Rng::seed_from_u64(seed);
    run_epochs(
        &mut params,
        spec,
        data,
        indices,
        epochs,
        hyper.batch_size,
        &mut opt,
        &mut rng,
        objective,
    )?;
    let grad_memory = match objective {
        LocalObjective::Dyn {
            alpha,
            anchor,
            grad_memory,
        } => {
            let mut next = grad_memory.clone();
            for ((m, t), a) in next
                .values_mut()
                .iter_mut()
                .zip(params.values())
                .zip(anchor.values())
            {
                *m -= alpha * (t - a);
            }
            Some(next)
        }
        _ => None,
    };
    Ok(ClientUpdate {
        params,
        num_samples: indices.len(),
        id,
        grad_memory,
    })
}
