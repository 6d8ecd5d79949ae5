//! Federated learning simulation with sequential training of heterogeneity-maximizing
//! client groups ("superclients").
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: a small dense/convolutional network engine with manual backprop and SGD.
//! - [`data`]: datasets, Dirichlet label-skew partitioning and exemplar sets.
//! - [`approximator`]: client pre-training and distribution estimates.
//! - [`grouping`]: distance metrics, grouping methods and superclient quality.
//! - [`fl`]: local objectives, server aggregation, evaluation and baseline runs.
//! - [`fedseq`]: sequential superclient training and the FedSeq / FedSeqInter loops.
//! - [`harness`]: configuration, experiment pipeline, reporting and the CLI.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approximator;
pub mod data;
pub mod error;
pub mod fedseq;
pub mod fl;
pub mod grouping;
pub mod harness;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
