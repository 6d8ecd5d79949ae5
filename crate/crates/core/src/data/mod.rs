//! Datasets, non-iid client partitioning and exemplar sets.

mod cifar;
mod dataset;
mod exemplar;
mod partition;
mod synth;

pub use cifar::{
    load_cifar10, load_cifar10_batch, Cifar10, CIFAR10_MEAN, CIFAR10_STD, RECORD_BYTES,
};
pub use dataset::LabeledDataset;
pub use exemplar::{build_exemplar_set, ExemplarSet};
pub use partition::{dirichlet_partition, label_entropy, ClientPartition};
pub use synth::{synth_dataset, synth_split};
