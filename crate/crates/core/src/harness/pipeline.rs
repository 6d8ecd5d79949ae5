use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ExperimentConfig};
use super::report::final_accuracy;
use crate::approximator::{
    oracle_estimate, pretrain_clients, psi_clf, psi_conf, ConfMode, DistributionEstimate,
};
use crate::data::{
    build_exemplar_set, dirichlet_partition, load_cifar10, synth_split, ClientPartition,
    ExemplarSet, LabeledDataset,
};
use crate::error::{Error, Result};
use crate::fedseq::{fedseq_run, fedseqinter_run, FedSeqConfig};
use crate::fl::{
    evaluate, run_federated, Aggregation, Divergence, FederatedConfig, ObjectiveKind, RoundRecord,
    TrainHistory,
};
use crate::grouping::{
    group_clients, grouping_csv, grouping_quality, GroupingConfig, GroupingMethod, GroupingQuality,
    Metric, Superclient,
};
use crate::nn::{
    cosine_annealing_lr, run_epochs, ClassifierMode, ModelSpec, NoPenalty, OptimizerState,
    ParamVector, TrainHyper,
};
use crate::rng::{self, Stream};

fn config_value<T: FromStr<Err = Error>>(key: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|e: Error| Error::Config(format!("{key}: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Datasets and model shape resolved from a configuration.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: LabeledDataset,
    /// Test split with the exemplar rows removed.
    pub test: LabeledDataset,
    pub exemplars: ExemplarSet,
    pub spec: ModelSpec,
    pub normalization: Option<Normalization>,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let d = &config.data;
    let (train, test, normalization) = match d.source.as_str() {
        "synth" => {
            let (train, test) = synth_split(
                d.num_classes,
                d.train_per_class,
                d.test_per_class,
                d.dim,
                d.separation,
                config.seed,
            )?;
            (train, test, None)
        }
        "cifar10" => {
            let c = load_cifar10(Path::new(&d.cifar_dir))?;
            (
                c.train,
                c.test,
                Some(Normalization {
                    mean: c.mean,
                    std: c.std,
                }),
            )
        }
        other => return Err(Error::Config(format!("unknown data.source `{other}`"))),
    };
    let exemplars = build_exemplar_set(&test, d.exemplars_per_class, config.seed, "test")?;
    let test = test.without(&exemplars.source_indices)?;
    let m = &config.model;
    let spec = match m.arch.as_str() {
        "mlp" => ModelSpec::mlp(train.dim(), m.hidden.clone(), train.num_classes())?,
        "cnn" => {
            if train.dim() != 3 * 32 * 32 {
                return Err(Error::Config(format!(
                    "model.arch = cnn expects 3x32x32 inputs, data has dimension {}",
                    train.dim()
                )));
            }
            ModelSpec::small_cnn(
                (3, 32, 32),
                m.filters,
                m.hidden.clone(),
                train.num_classes(),
            )?
        }
        other => return Err(Error::Config(format!("unknown model.arch `{other}`"))),
    };
    Ok(Prepared {
        train,
        test,
        exemplars,
        spec,
        normalization,
    })
}

/// One experiment: configuration plus its prepared data.
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub data: Prepared,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let data = prepare(&config)?;
        Ok(Self { config, data })
    }

    pub fn hyper(&self) -> TrainHyper {
        let t = &self.config.train;
        TrainHyper {
            lr: t.lr,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
        }
    }

    /// Seeds derived from the master seed, by stage.
    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let s = self.config.seed;
        let mut out = BTreeMap::new();
        out.insert("master".to_string(), s);
        out.insert("init".to_string(), rng::derive_seed(s, Stream::Init, &[]));
        for (name, stream) in [
            ("data", Stream::Synth),
            ("exemplar", Stream::Exemplar),
            ("partition", Stream::Partition),
            ("pretrain", Stream::Pretrain),
            ("grouping", Stream::Grouping),
            ("kmeans", Stream::KMeans),
            ("sampling", Stream::Sampling),
            ("centralized", Stream::Centralized),
        ] {
            out.insert(name.to_string(), rng::derive_seed(s, stream, &[]));
        }
        out
    }

    pub fn theta0(&self) -> ParamVector {
        self.data
            .spec
            .init(rng::derive_seed(self.config.seed, Stream::Init, &[]))
    }

    pub fn partition(&self) -> Result<ClientPartition> {
        let p = &self.config.partition;
        dirichlet_partition(&self.data.train, p.clients, p.alpha, self.config.seed)
    }

    /// Pre-trains every client (unless the oracle is selected) and returns the
    /// distribution estimates.
    pub fn estimate(
        &self,
        partition: &ClientPartition,
        theta0: &ParamVector,
    ) -> Result<DistributionEstimate> {
        let a = &self.config.approximator;
        if a.kind == "oracle" {
            return Ok(oracle_estimate(partition, &self.data.train));
        }
        log::info!(
            "pre-training {} clients for {} epochs",
            partition.num_clients(),
            self.config.pretrain.epochs
        );
        let pre = pretrain_clients(
            theta0,
            &self.data.spec,
            &self.data.train,
            partition,
            self.config.pretrain.epochs,
            &self.hyper(),
            self.config.seed,
        )?;
        match a.kind.as_str() {
            "conf" => psi_conf(
                &pre,
                &self.data.spec,
                &self.data.exemplars,
                config_value::<ConfMode>("approximator.conf_mode", &a.conf_mode)?,
            ),
            "clf" => psi_clf(
                &pre,
                config_value::<ClassifierMode>("approximator.classifier_mode", &a.classifier_mode)?,
                a.explained_variance,
            ),
            other => Err(Error::Config(format!(
                "unknown approximator.kind `{other}`"
            ))),
        }
    }

    pub fn grouping_config(&self) -> Result<GroupingConfig> {
        let g = &self.config.grouping;
        Ok(GroupingConfig {
            min_samples: g.min_samples,
            max_clients: g.max_clients,
            method: config_value::<GroupingMethod>("grouping.method", &g.method)?,
            metric: config_value::<Metric>("grouping.metric", &g.metric)?,
            seed: self.config.seed,
        })
    }

    pub fn group(
        &self,
        partition: &ClientPartition,
        estimates: &DistributionEstimate,
    ) -> Result<(Vec<Superclient>, GroupingQuality)> {
        let gc = self.grouping_config()?;
        if !gc.metric.supports(estimates.kind) {
            return Err(Error::Config(format!(
                "grouping.metric = {} needs confidence estimates, approximator.kind = {}",
                gc.metric.name(),
                self.config.approximator.kind
            )));
        }
        let scs = group_clients(
            estimates,
            &partition.sizes(),
            self.data.train.num_classes(),
            &gc,
        )?;
        let quality = grouping_quality(&scs, partition, &self.data.train);
        Ok((scs, quality))
    }

    fn objective(&self) -> ObjectiveKind {
        let t = &self.config.train;
        match self.config.algorithm {
            Algorithm::FedProx | Algorithm::FedSeqProx => ObjectiveKind::Prox { mu: t.mu },
            Algorithm::FedDyn | Algorithm::FedSeqDyn => ObjectiveKind::Dyn { alpha: t.alpha_dyn },
            Algorithm::FedSeqInterProx => ObjectiveKind::Prox { mu: t.inter_mu },
            Algorithm::FedSeqInterDyn => ObjectiveKind::Dyn {
                alpha: t.inter_alpha_dyn,
            },
            _ => ObjectiveKind::Plain,
        }
    }

    fn aggregation(&self) -> Aggregation {
        match self.config.algorithm {
            Algorithm::FedDyn | Algorithm::FedSeqDyn => Aggregation::FedDyn,
            _ => Aggregation::FedAvg,
        }
    }

    pub fn fedseq_config(&self) -> FedSeqConfig {
        let t = &self.config.train;
        FedSeqConfig {
            rounds: t.rounds,
            fraction: t.fraction,
            local_epochs: t.local_epochs,
            superclient_epochs: t.superclient_epochs,
            objective: self.objective(),
            aggregation: self.aggregation(),
            hyper: self.hyper(),
            seed: self.config.seed,
        }
    }

    pub fn federated_config(&self) -> FederatedConfig {
        let t = &self.config.train;
        FederatedConfig {
            rounds: t.rounds,
            fraction: t.fraction,
            local_epochs: t.local_epochs,
            objective: self.objective(),
            aggregation: self.aggregation(),
            hyper: self.hyper(),
            seed: self.config.seed,
        }
    }

    /// Runs the configured algorithm. Grouping algorithms require `superclients`.
    pub fn train(
        &self,
        partition: &ClientPartition,
        superclients: Option<&[Superclient]>,
        theta0: &ParamVector,
    ) -> Result<TrainHistory> {
        let algo = self.config.algorithm;
        log::info!(
            "training {} for {} rounds",
            algo.name(),
            self.config.train.rounds
        );
        let d = &self.data;
        if algo == Algorithm::Centralized {
            return self.centralized(theta0);
        }
        if !algo.uses_grouping() {
            return run_federated(
                &self.federated_config(),
                &d.spec,
                &d.train,
                partition,
                &d.test,
                theta0,
            );
        }
        let scs = superclients
            .ok_or_else(|| Error::invalid(format!("{} needs superclients", algo.name())))?;
        let cfg = self.fedseq_config();
        let mut history = if algo.is_inter() {
            fedseqinter_run(&cfg, &d.spec, &d.train, partition, scs, &d.test, theta0)?
        } else {
            fedseq_run(&cfg, &d.spec, &d.train, partition, scs, &d.test, theta0)?
        };
        history.algorithm = algo.name().to_string();
        Ok(history)
    }

    /// Single model on the pooled training set with momentum and a per-epoch cosine
    /// learning-rate schedule.
    pub fn centralized(&self, theta0: &ParamVector) -> Result<TrainHistory> {
        let c = &self.config.centralized;
        let d = &self.data;
        let mut params = theta0.clone();
        let mut opt = OptimizerState::new(
            params.len(),
            c.lr,
            c.momentum,
            self.config.train.weight_decay,
        )?;
        let mut rng = rng::stream(self.config.seed, Stream::Centralized, &[]);
        let indices: Vec<usize> = (0..d.train.len()).collect();
        let mut records = Vec::with_capacity(c.epochs);
        let mut divergence = None;
        let start = std::time::Instant::now();
        for epoch in 0..c.epochs {
            opt.lr = cosine_annealing_lr(epoch, c.epochs, c.lr)?;
            let step = run_epochs(
                &mut params,
                &d.spec,
                &d.train,
                &indices,
                1,
                self.config.train.batch_size,
                &mut opt,
                &mut rng,
                &NoPenalty,
            );
            match step {
                Ok(_) if params.is_finite() => {}
                Ok(_) | Err(Error::Overflow { .. }) => {
                    divergence = Some(Divergence {
                        round: epoch + 1,
                        reason: "non-finite parameters during centralized training".into(),
                    });
                    break;
                }
                Err(e) => return Err(e),
            }
            let accuracy = match evaluate(&params, &d.spec, &d.test) {
                Ok(a) => a,
                Err(Error::Overflow { .. }) => {
                    divergence = Some(Divergence {
                        round: epoch + 1,
                        reason: "non-finite activations during evaluation".into(),
                    });
                    break;
                }
                Err(e) => return Err(e),
            };
            records.push(RoundRecord {
                round: epoch + 1,
                equivalent_round: (epoch + 1) as f64,
                accuracy,
                aggregated: true,
                wall_seconds: start.elapsed().as_secs_f64(),
            });
        }
        Ok(TrainHistory {
            algorithm: Algorithm::Centralized.name().to_string(),
            records,
            divergence,
            final_params: params,
        })
    }
}

/// Summary of a grouping stored in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingSummary {
    pub superclients: usize,
    pub undersized: usize,
    pub mean_balance_ratio: f64,
    pub mean_covered_classes: f64,
    pub mean_samples: f64,
}

/// Everything needed to identify and re-run an output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<String, u64>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub diverged: bool,
    pub divergence: Option<String>,
    pub normalization: Option<Normalization>,
    /// Exemplar rows removed from the test split before evaluation.
    pub exemplars_excluded: usize,
    pub test_size: usize,
    pub rounds_completed: Option<usize>,
    /// Trailing-100 mean for federated runs, last-epoch accuracy for centralized ones.
    pub final_accuracy: Option<f64>,
    pub grouping: Option<GroupingSummary>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Partition,
    Pretrain,
    Group,
    Train,
    Centralized,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Partition => "partition",
            Command::Pretrain => "pretrain",
            Command::Group => "group",
            Command::Train => "train",
            Command::Centralized => "centralized",
        }
    }
}

fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn write(dir: &Path, name: &str, contents: &str, outputs: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    outputs.push(name.to_string());
    Ok(())
}

/// Runs `command` end to end and writes its outputs into `config.output_dir`.
pub fn execute(command: Command, config: ExperimentConfig) -> Result<RunManifest> {
    let started = now_unix();
    let mut config = config;
    if command == Command::Centralized {
        config.algorithm = Algorithm::Centralized;
    }
    let dir = config.output_path();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let pipe = Pipeline::new(config)?;
    let cfg = &pipe.config;
    let mut outputs = Vec::new();
    write(&dir, "config.toml", &cfg.to_toml()?, &mut outputs)?;
    let theta0 = pipe.theta0();
    let mut history = None;
    let mut grouping = None;

    let algo = cfg.algorithm;
    let needs_partition = command != Command::Centralized && algo != Algorithm::Centralized;
    if needs_partition {
        let partition = pipe.partition()?;
        write(
            &dir,
            "partition.json",
            &serde_json::to_string(&partition.to_json())?,
            &mut outputs,
        )?;
        let wants_estimates = match command {
            Command::Pretrain | Command::Group => true,
            Command::Train => algo.uses_grouping(),
            _ => false,
        };
        let mut superclients = None;
        if wants_estimates {
            let estimates = pipe.estimate(&partition, &theta0)?;
            write(&dir, "estimates.csv", &estimates.to_csv(), &mut outputs)?;
            if command != Command::Pretrain {
                let (scs, quality) = pipe.group(&partition, &estimates)?;
                write(
                    &dir,
                    "grouping.csv",
                    &grouping_csv(&scs, &quality),
                    &mut outputs,
                )?;
                grouping = Some(GroupingSummary {
                    superclients: scs.len(),
                    undersized: scs.iter().filter(|s| s.undersized).count(),
                    mean_balance_ratio: quality.mean_balance,
                    mean_covered_classes: quality.mean_covered,
                    mean_samples: quality.mean_samples,
                });
                superclients = Some(scs);
            }
        }
        if command == Command::Train {
            history = Some(pipe.train(&partition, superclients.as_deref(), &theta0)?);
        }
    } else {
        history = Some(pipe.centralized(&theta0)?);
    }

    if let Some(h) = &history {
        write(
            &dir,
            "history.csv",
            &h.to_csv(cfg.train.timing),
            &mut outputs,
        )?;
    }
    let final_acc = history.as_ref().and_then(|h| {
        let acc = h.accuracies();
        if h.algorithm == Algorithm::Centralized.name() {
            acc.last().copied()
        } else {
            final_accuracy(&acc).ok()
        }
    });
    outputs.push("manifest.json".to_string());
    let manifest = RunManifest {
        command: command.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        seeds: pipe.seeds(),
        started_unix: started,
        finished_unix: now_unix(),
        diverged: history.as_ref().is_some_and(|h| h.diverged()),
        divergence: history
            .as_ref()
            .and_then(|h| h.divergence.as_ref())
            .map(|d| format!("round {}: {}", d.round, d.reason)),
        normalization: pipe.data.normalization,
        exemplars_excluded: pipe.data.exemplars.source_indices.len(),
        test_size: pipe.data.test.len(),
        rounds_completed: history.as_ref().map(|h| h.records.len()),
        final_accuracy: final_acc,
        grouping,
        outputs,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
