//! Minimal neural-network engine: dense and small convolutional models over a flat
//! parameter vector, manual backprop, and momentum SGD.

mod model;
mod optim;
mod params;
mod train;

pub use model::{forward, loss_and_grad, softmax_in_place, Architecture, Batch, Logits, ModelSpec};
pub use optim::{cosine_annealing_lr, sgd_step, OptimizerState};
pub use params::{LayerSlot, ParamVector, Role};
pub use train::{run_epochs, NoPenalty, Penalty, TrainHyper};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which classifier layers to extract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassifierMode {
    All,
    Last2,
    Last,
}

impl std::str::FromStr for ClassifierMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "last2" => Ok(Self::Last2),
            "last" => Ok(Self::Last),
            _ => Err(Error::invalid(format!("unknown classifier mode `{s}`"))),
        }
    }
}

/// Concatenated classifier-layer values, in layout order.
pub fn extract_classifier(params: &ParamVector, mode: ClassifierMode) -> Result<Vec<f64>> {
    let slots: Vec<&LayerSlot> = params.classifier_slots().collect();
    let take = match mode {
        ClassifierMode::All => slots.len(),
        ClassifierMode::Last2 => 2,
        ClassifierMode::Last => 1,
    };
    if take > slots.len() {
        return Err(Error::invalid(format!(
            "mode {mode:?} needs {take} classifier layers, model has {}",
            slots.len()
        )));
    }
    Ok(slots[slots.len() - take..]
        .iter()
        .flat_map(|s| params.values()[s.range()].iter().copied())
        .collect())
}
