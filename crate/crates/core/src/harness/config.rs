use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::approximator::{ConfMode, EstimateKind};
use crate::error::{Error, Result};
use crate::grouping::{GroupingMethod, Metric};
use crate::nn::ClassifierMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "centralized")]
    Centralized,
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "fedprox")]
    FedProx,
    #[serde(rename = "feddyn")]
    FedDyn,
    #[serde(rename = "fedseq")]
    FedSeq,
    #[serde(rename = "fedseq+prox")]
    FedSeqProx,
    #[serde(rename = "fedseq+dyn")]
    FedSeqDyn,
    #[serde(rename = "fedseqinter")]
    FedSeqInter,
    #[serde(rename = "fedseqinter+prox")]
    FedSeqInterProx,
    #[serde(rename = "fedseqinter+dyn")]
    FedSeqInterDyn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 10] = [
        Algorithm::Centralized,
        Algorithm::FedAvg,
        Algorithm::FedProx,
        Algorithm::FedDyn,
        Algorithm::FedSeq,
        Algorithm::FedSeqProx,
        Algorithm::FedSeqDyn,
        Algorithm::FedSeqInter,
        Algorithm::FedSeqInterProx,
        Algorithm::FedSeqInterDyn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Centralized => "centralized",
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx => "fedprox",
            Algorithm::FedDyn => "feddyn",
            Algorithm::FedSeq => "fedseq",
            Algorithm::FedSeqProx => "fedseq+prox",
            Algorithm::FedSeqDyn => "fedseq+dyn",
            Algorithm::FedSeqInter => "fedseqinter",
            Algorithm::FedSeqInterProx => "fedseqinter+prox",
            Algorithm::FedSeqInterDyn => "fedseqinter+dyn",
        }
    }

    /// Whether the algorithm trains over superclients.
    pub fn uses_grouping(self) -> bool {
        matches!(
            self,
            Algorithm::FedSeq
                | Algorithm::FedSeqProx
                | Algorithm::FedSeqDyn
                | Algorithm::FedSeqInter
                | Algorithm::FedSeqInterProx
                | Algorithm::FedSeqInterDyn
        )
    }

    pub fn is_inter(self) -> bool {
        matches!(
            self,
            Algorithm::FedSeqInter | Algorithm::FedSeqInterProx | Algorithm::FedSeqInterDyn
        )
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// `synth` or `cifar10`.
    pub source: String,
    /// Directory holding the CIFAR-10 binary batches.
    pub cifar_dir: String,
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub separation: f64,
    /// Exemplars per class, drawn from the test split and removed from evaluation.
    pub exemplars_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `mlp` or `cnn`.
    pub arch: String,
    pub hidden: Vec<usize>,
    /// Convolution filters, `cnn` only.
    pub filters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub clients: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub rounds: usize,
    pub fraction: f64,
    pub local_epochs: usize,
    pub superclient_epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Proximal weight for fedprox and fedseq+prox.
    pub mu: f64,
    /// Dynamic regulariser weight for feddyn and fedseq+dyn.
    pub alpha_dyn: f64,
    pub inter_mu: f64,
    pub inter_alpha_dyn: f64,
    /// Write measured wall-clock seconds into history.csv instead of zeros.
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproximatorConfig {
    /// `conf`, `clf` or `oracle`.
    pub kind: String,
    /// `global-mean` or `per-class-diag`.
    pub conf_mode: String,
    /// `all`, `last2` or `last`.
    pub classifier_mode: String,
    pub explained_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupingSection {
    pub method: String,
    pub metric: String,
    pub min_samples: usize,
    pub max_clients: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentralizedConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub output_dir: String,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub partition: PartitionConfig,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    pub approximator: ApproximatorConfig,
    pub grouping: GroupingSection,
    pub centralized: CentralizedConfig,
}

pub const PRESETS: [&str; 2] = ["desk-synth", "paper-cifar10"];

impl ExperimentConfig {
    /// Small synthetic setup: 50 single-class clients over 10 Gaussian classes.
    pub fn desk_synth() -> Self {
        Self {
            preset: "desk-synth".into(),
            algorithm: Algorithm::FedSeq,
            seed: 0,
            output_dir: "runs/desk-synth".into(),
            data: DataConfig {
                source: "synth".into(),
                cifar_dir: String::new(),
                num_classes: 10,
                train_per_class: 500,
                test_per_class: 110,
                dim: 32,
                separation: 4.0,
                exemplars_per_class: 10,
            },
            model: ModelConfig {
                arch: "mlp".into(),
                hidden: vec![64],
                filters: 0,
            },
            partition: PartitionConfig {
                clients: 50,
                alpha: 0.0,
            },
            train: TrainConfig {
                rounds: 300,
                fraction: 0.2,
                local_epochs: 1,
                superclient_epochs: 1,
                lr: 0.01,
                momentum: 0.0,
                weight_decay: 4e-4,
                batch_size: 64,
                mu: 0.01,
                alpha_dyn: 0.1,
                inter_mu: 1.0,
                inter_alpha_dyn: 1.0,
                timing: false,
            },
            pretrain: PretrainConfig { epochs: 10 },
            approximator: ApproximatorConfig {
                kind: "conf".into(),
                conf_mode: "global-mean".into(),
                classifier_mode: "all".into(),
                explained_variance: 0.9,
            },
            grouping: GroupingSection {
                method: "greedy".into(),
                metric: "kl".into(),
                min_samples: 800,
                max_clients: 11,
            },
            centralized: CentralizedConfig {
                epochs: 30,
                lr: 0.01,
                momentum: 0.9,
            },
        }
    }

    /// CIFAR-10 with 500 clients, LeNet-style CNN and 10k rounds. Long-running.
    pub fn paper_cifar10() -> Self {
        let mut c = Self::desk_synth();
        c.preset = "paper-cifar10".into();
        c.output_dir = "runs/paper-cifar10".into();
        c.data = DataConfig {
            source: "cifar10".into(),
            cifar_dir: "data/cifar-10-batches-bin".into(),
            num_classes: 10,
            train_per_class: 0,
            test_per_class: 0,
            dim: 3 * 32 * 32,
            separation: 0.0,
            exemplars_per_class: 10,
        };
        c.model = ModelConfig {
            arch: "cnn".into(),
            hidden: vec![384, 192],
            filters: 64,
        };
        c.partition.clients = 500;
        c.train.rounds = 10_000;
        c.grouping.min_samples = 800;
        c.centralized.epochs = 300;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk-synth" => Ok(Self::desk_synth()),
            "paper-cifar10" => Ok(Self::paper_cifar10()),
            _ => Err(Error::Config(format!(
                "unknown preset `{name}`, expected one of {}",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.partition.clients == 0 {
            return bad("partition.clients must be >= 1".into());
        }
        if !(self.partition.alpha >= 0.0) {
            return bad("partition.alpha must be >= 0".into());
        }
        if !matches!(self.data.source.as_str(), "synth" | "cifar10") {
            return bad(format!(
                "data.source `{}` is not synth or cifar10",
                self.data.source
            ));
        }
        if !matches!(self.model.arch.as_str(), "mlp" | "cnn") {
            return bad(format!(
                "model.arch `{}` is not mlp or cnn",
                self.model.arch
            ));
        }
        if !matches!(self.approximator.kind.as_str(), "conf" | "clf" | "oracle") {
            return bad(format!(
                "approximator.kind `{}` is not conf, clf or oracle",
                self.approximator.kind
            ));
        }
        let t = &self.train;
        if t.rounds == 0 || t.local_epochs == 0 || t.superclient_epochs == 0 || t.batch_size == 0 {
            return bad(
                "train.rounds, local_epochs, superclient_epochs and batch_size must be >= 1".into(),
            );
        }
        if !(t.fraction > 0.0 && t.fraction <= 1.0) {
            return bad(format!(
                "train.fraction must be in (0,1], got {}",
                t.fraction
            ));
        }
        if self.pretrain.epochs == 0 || self.centralized.epochs == 0 {
            return bad("pretrain.epochs and centralized.epochs must be >= 1".into());
        }
        let as_config = |key: &str, e: Error| Error::Config(format!("{key}: {e}"));
        let a = &self.approximator;
        a.conf_mode
            .parse::<ConfMode>()
            .map_err(|e| as_config("approximator.conf_mode", e))?;
        a.classifier_mode
            .parse::<ClassifierMode>()
            .map_err(|e| as_config("approximator.classifier_mode", e))?;
        self.grouping
            .method
            .parse::<GroupingMethod>()
            .map_err(|e| as_config("grouping.method", e))?;
        let metric: Metric = self
            .grouping
            .metric
            .parse()
            .map_err(|e| as_config("grouping.metric", e))?;
        let kind = if a.kind == "clf" {
            EstimateKind::Embedding
        } else {
            EstimateKind::Confidence
        };
        if !metric.supports(kind) {
            return bad(format!(
                "grouping.metric = {} needs confidence estimates, approximator.kind is {}",
                metric.name(),
                a.kind
            ));
        }
        Ok(())
    }

    /// Dotted key → value view of the whole configuration.
    pub fn to_flat(&self) -> Result<BTreeMap<String, toml::Value>> {
        let value = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut out = BTreeMap::new();
        flatten("", &value, &mut out);
        Ok(out)
    }

    fn from_flat(flat: &BTreeMap<String, toml::Value>) -> Result<Self> {
        let mut root = toml::Table::new();
        for (key, value) in flat {
            let mut table = &mut root;
            let mut parts: Vec<&str> = key.split('.').collect();
            let last = parts.pop().expect("split yields at least one part");
            for p in parts {
                table = table
                    .entry(p)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .expect("flattened keys never collide with values");
            }
            table.insert(last.to_string(), value.clone());
        }
        toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))
    }

    /// Parses config text over the preset it names (`preset = "..."`, default
    /// `desk-synth`), then applies `key=value` overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut given = BTreeMap::new();
        flatten("", &toml::Value::Table(table), &mut given);
        let mut sets = Vec::with_capacity(overrides.len());
        for o in overrides {
            sets.push(parse_override(o)?);
        }
        let preset = sets
            .iter()
            .rev()
            .find(|(k, _)| k == "preset")
            .map(|(_, v)| v.clone())
            .or_else(|| given.get("preset").cloned());
        let preset = match preset {
            None => "desk-synth".to_string(),
            Some(toml::Value::String(s)) => s,
            Some(other) => {
                return Err(Error::Config(format!(
                    "preset must be a string, got {other}"
                )))
            }
        };
        let mut flat = Self::preset(&preset)?.to_flat()?;
        for (key, value) in given.into_iter().chain(sets) {
            set_key(&mut flat, &key, value)?;
        }
        let config = Self::from_flat(&flat)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn output_path(&self) -> PathBuf {
        PathBuf::from(&self.output_dir)
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut BTreeMap<String, toml::Value>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

/// Replaces a known key, coercing integers given for float keys.
fn set_key(flat: &mut BTreeMap<String, toml::Value>, key: &str, value: toml::Value) -> Result<()> {
    let Some(slot) = flat.get_mut(key) else {
        return Err(Error::UnknownKey {
            key: key.to_string(),
            valid: flat.keys().cloned().collect(),
        });
    };
    *slot = match (&*slot, value) {
        (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (_, v) => v,
    };
    Ok(())
}

/// `key=value`, where the value is read as a TOML value and falls back to a bare string.
fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_round_trips_through_flat_keys() {
        let c = ExperimentConfig::desk_synth();
        let back = ExperimentConfig::from_flat(&c.to_flat().unwrap()).unwrap();
        assert_eq!(c, back);
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::parse(&text, &[]).unwrap(), c);
    }

    #[test]
    fn overrides_and_sections() {
        let text = "algorithm = \"fedavg\"\n[train]\nrounds = 7\nlr = 1\n";
        let c = ExperimentConfig::parse(
            text,
            &["algorithm=fedseqinter".into(), "partition.alpha=0.5".into()],
        )
        .unwrap();
        assert_eq!(c.algorithm, Algorithm::FedSeqInter);
        assert_eq!(c.train.rounds, 7);
        assert_eq!(c.train.lr, 1.0);
        assert_eq!(c.partition.alpha, 0.5);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = ExperimentConfig::parse("[train]\nround = 3\n", &[]).unwrap_err();
        match err {
            Error::UnknownKey { key, valid } => {
                assert_eq!(key, "train.round");
                assert!(valid.contains(&"train.rounds".to_string()));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(ExperimentConfig::parse("", &["nope=1".into()]).is_err());
    }

    #[test]
    fn preset_selection() {
        let c = ExperimentConfig::parse("preset = \"paper-cifar10\"", &[]).unwrap();
        assert_eq!(c.partition.clients, 500);
        assert_eq!(c.grouping.min_samples, 800);
        assert!(ExperimentConfig::parse("preset = \"nope\"", &[]).is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(matches!(
            ExperimentConfig::parse("[train]\nfraction = 0.0\n", &[]),
            Err(Error::Config(_))
        ));
        assert!(ExperimentConfig::parse("algorithm = \"fedfoo\"", &[]).is_err());
    }
}
