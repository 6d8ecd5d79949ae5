//! Client pre-training and the distribution estimates derived from it.
//!
//! Every client trains a copy of the same initial model on its own data for a few
//! epochs. The resulting models are then summarised either by their classifier weights
//! (PCA-reduced) or by a confidence vector computed on a small server-side exemplar set.

mod pca;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use pca::{pca, Pca};

use crate::data::{ClientPartition, ExemplarSet, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{
    extract_classifier, forward, run_epochs, softmax_in_place, ClassifierMode, ModelSpec,
    NoPenalty, ParamVector, TrainHyper,
};
use crate::rng::{self, Stream};

#[derive(Debug, Clone)]
pub struct PretrainResult {
    pub theta0: ParamVector,
    pub clients: Vec<ParamVector>,
    pub epochs: usize,
}

/// Trains every client for `epochs` epochs from `theta0`, independently and in parallel.
///
/// All clients draw their batch order from one shared stream seed, so clients holding
/// identical data end up with identical models.
pub fn pretrain_clients(
    theta0: &ParamVector,
    spec: &ModelSpec,
    dataset: &LabeledDataset,
    partition: &ClientPartition,
    epochs: usize,
    hyper: &TrainHyper,
    seed: u64,
) -> Result<PretrainResult> {
    if epochs == 0 {
        return Err(Error::invalid("pre-training needs at least one epoch"));
    }
    let clients = partition
        .clients()
        .par_iter()
        .map(|indices| {
            let mut params = theta0.clone();
            let mut opt = hyper.optimizer(params.len())?;
            let mut rng = rng::stream(seed, Stream::Pretrain, &[]);
            run_epochs(
                &mut params,
                spec,
                dataset,
                indices,
                epochs,
                hyper.batch_size,
                &mut opt,
                &mut rng,
                &NoPenalty,
            )?;
            Ok(params)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PretrainResult {
        theta0: theta0.clone(),
        clients,
        epochs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimateKind {
    Confidence,
    Embedding,
}

impl EstimateKind {
    fn label(self) -> &'static str {
        match self {
            EstimateKind::Confidence => "confidence",
            EstimateKind::Embedding => "embedding",
        }
    }
}

/// One vector per client, all of the same kind and length.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionEstimate {
    pub kind: EstimateKind,
    pub rows: Vec<Vec<f64>>,
    /// Set when the estimate collapsed (e.g. PCA over identical models).
    pub degenerate: bool,
}

impl DistributionEstimate {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("client_id");
        for j in 0..self.dim() {
            let _ = write!(out, ",{}_{j}", self.kind.label());
        }
        out.push('\n');
        for (k, row) in self.rows.iter().enumerate() {
            let _ = write!(out, "{k}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// How the per-class scalar `p_{k,c}` is read off the averaged predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfMode {
    /// Mean over all exemplars of the class-`c` probability.
    GlobalMean,
    /// Mean over class-`c` exemplars of the class-`c` probability.
    PerClassDiag,
}

impl std::str::FromStr for ConfMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global-mean" => Ok(Self::GlobalMean),
            "per-class-diag" => Ok(Self::PerClassDiag),
            _ => Err(Error::invalid(format!("unknown confidence mode `{s}`"))),
        }
    }
}

/// Confidence vectors: softmax over per-class scalars computed from each pre-trained
/// model's predicted probabilities on the exemplar set.
pub fn psi_conf(
    pretrain: &PretrainResult,
    spec: &ModelSpec,
    exemplars: &ExemplarSet,
    mode: ConfMode,
) -> Result<DistributionEstimate> {
    let nc = spec.num_classes;
    if exemplars.data.num_classes() != nc {
        return Err(Error::invalid(format!(
            "exemplar set has {} classes, model outputs {nc}",
            exemplars.data.num_classes()
        )));
    }
    let all: Vec<usize> = (0..exemplars.data.len()).collect();
    let batch = exemplars.data.batch(&all)?;
    let rows = pretrain
        .clients
        .par_iter()
        .map(|params| {
            let probs = forward(params, spec, &batch)?.softmax();
            let mut scores = vec![0.0; nc];
            match mode {
                ConfMode::GlobalMean => {
                    for row in probs.chunks(nc) {
                        for (s, p) in scores.iter_mut().zip(row) {
                            *s += p;
                        }
                    }
                    let n = batch.rows() as f64;
                    scores.iter_mut().for_each(|s| *s /= n);
                }
                ConfMode::PerClassDiag => {
                    for (c, s) in scores.iter_mut().enumerate() {
                        let range = exemplars.class_rows(c);
                        let n = range.len() as f64;
                        *s = range.map(|r| probs[r * nc + c]).sum::<f64>() / n;
                    }
                }
            }
            softmax_in_place(&mut scores);
            Ok(scores)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DistributionEstimate {
        kind: EstimateKind::Confidence,
        rows,
        degenerate: false,
    })
}

/// PCA-reduced classifier weights, keeping the fewest components whose cumulative
/// explained variance reaches `explained_variance`.
pub fn psi_clf(
    pretrain: &PretrainResult,
    mode: ClassifierMode,
    explained_variance: f64,
) -> Result<DistributionEstimate> {
    if pretrain.clients.len() < 2 {
        return Err(Error::invalid(
            "classifier embeddings need at least two clients",
        ));
    }
    let rows = pretrain
        .clients
        .iter()
        .map(|p| extract_classifier(p, mode))
        .collect::<Result<Vec<_>>>()?;
    let fit = pca(&rows, explained_variance)?;
    if fit.degenerate {
        log::warn!("classifier embeddings are degenerate: all client classifiers are identical");
    }
    Ok(DistributionEstimate {
        kind: EstimateKind::Embedding,
        rows: fit.embedding,
        degenerate: fit.degenerate,
    })
}

/// Pairwise cosine similarity of the flattened pre-trained models.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub size: usize,
    pub values: Vec<f64>,
    pub epochs: usize,
    pub frobenius: f64,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }
}

pub fn similarity_matrix(pretrain: &PretrainResult) -> Result<SimilarityMatrix> {
    let k = pretrain.clients.len();
    let norms: Vec<f64> = pretrain.clients.iter().map(ParamVector::norm).collect();
    if let Some(index) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroNorm { index });
    }
    let mut values = vec![0.0; k * k];
    for i in 0..k {
        values[i * k + i] = 1.0;
        for j in i + 1..k {
            let s = pretrain.clients[i].dot(&pretrain.clients[j]) / (norms[i] * norms[j]);
            values[i * k + j] = s;
            values[j * k + i] = s;
        }
    }
    let frobenius = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(SimilarityMatrix {
        size: k,
        values,
        epochs: pretrain.epochs,
        frobenius,
    })
}

/// Normalised true label histogram of every client.
pub fn oracle_estimate(
    partition: &ClientPartition,
    dataset: &LabeledDataset,
) -> DistributionEstimate {
    let rows = partition
        .histograms(dataset)
        .into_iter()
        .map(|h| {
            let total: usize = h.iter().sum();
            h.into_iter().map(|c| c as f64 / total as f64).collect()
        })
        .collect();
    DistributionEstimate {
        kind: EstimateKind::Confidence,
        rows,
        degenerate: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_exemplar_set, dirichlet_partition, synth_dataset};

    fn setup() -> (ModelSpec, LabeledDataset, ClientPartition) {
        let data = synth_dataset(4, 40, 6, 4.0, 3).unwrap();
        let partition = dirichlet_partition(&data, 8, 0.0, 5).unwrap();
        (ModelSpec::mlp(6, vec![8], 4).unwrap(), data, partition)
    }

    #[test]
    fn zero_lr_keeps_theta0() {
        let (spec, data, partition) = setup();
        let theta0 = spec.init(1);
        let hyper = TrainHyper {
            lr: 0.0,
            weight_decay: 0.0,
            ..TrainHyper::default()
        };
        let res = pretrain_clients(&theta0, &spec, &data, &partition, 2, &hyper, 3).unwrap();
        assert!(res.clients.iter().all(|p| *p == theta0));
    }

    #[test]
    fn clients_with_identical_data_get_identical_models() {
        let (spec, data, _) = setup();
        // rows 0..20 duplicated as rows 20..40
        let rows: Vec<usize> = (0..20).chain(0..20).collect();
        let twin = data.subset(&rows).unwrap();
        let partition =
            ClientPartition::new(vec![(0..20).collect(), (20..40).collect()], twin.len()).unwrap();
        let theta0 = spec.init(2);
        let res = pretrain_clients(
            &theta0,
            &spec,
            &twin,
            &partition,
            3,
            &TrainHyper::default(),
            9,
        )
        .unwrap();
        assert_eq!(res.clients[0], res.clients[1]);
        assert_ne!(res.clients[0], theta0);
    }

    #[test]
    fn zero_model_confidence_is_uniform() {
        let (spec, data, partition) = setup();
        let ex = build_exemplar_set(&data, 3, 1, "test").unwrap();
        let pre = PretrainResult {
            theta0: spec.zeros(),
            clients: vec![spec.zeros(); partition.num_clients()],
            epochs: 1,
        };
        for mode in [ConfMode::GlobalMean, ConfMode::PerClassDiag] {
            let est = psi_conf(&pre, &spec, &ex, mode).unwrap();
            for row in &est.rows {
                for v in row {
                    assert!((v - 0.25).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn similarity_scale_and_sign() {
        let (spec, _, _) = setup();
        let a = spec.init(4);
        let mut b = a.clone();
        b.scale(2.0);
        let mut c = a.clone();
        c.scale(-1.0);
        let pre = PretrainResult {
            theta0: a.clone(),
            clients: vec![a, b, c],
            epochs: 1,
        };
        let s = similarity_matrix(&pre).unwrap();
        assert_eq!(s.get(1, 1), 1.0);
        assert!((s.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((s.get(0, 2) + 1.0).abs() < 1e-12);
        assert_eq!(s.get(1, 2), s.get(2, 1));
    }

    #[test]
    fn similarity_rejects_zero_vector() {
        let (spec, _, _) = setup();
        let pre = PretrainResult {
            theta0: spec.zeros(),
            clients: vec![spec.init(1), spec.zeros()],
            epochs: 1,
        };
        assert!(matches!(
            similarity_matrix(&pre),
            Err(Error::ZeroNorm { index: 1 })
        ));
    }

    #[test]
    fn oracle_histograms() {
        let (_, data, partition) = setup();
        let est = oracle_estimate(&partition, &data);
        for (k, row) in est.rows.iter().enumerate() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let class = data.labels()[partition.indices(k)[0]];
            assert_eq!(row[class], 1.0);
        }
        let uniform = ClientPartition::new(vec![vec![0, 40, 80, 120]], data.len()).unwrap();
        assert_eq!(oracle_estimate(&uniform, &data).rows[0], vec![0.25; 4]);
    }

    #[test]
    fn csv_header_records_kind() {
        let est = DistributionEstimate {
            kind: EstimateKind::Confidence,
            rows: vec![vec![0.5, 0.5]],
            degenerate: false,
        };
        assert_eq!(
            est.to_csv(),
            "client_id,confidence_0,confidence_1\n0,0.5,0.5\n"
        );
    }
}
