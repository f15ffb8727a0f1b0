use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::causal::{AlignedSite, Alignment, CausalModel, Site};
use crate::classifier::{LogRegParams, DEFAULT_LAMBDA};
use crate::diagnosis::QuasiCliqueParams;
use crate::error::{Error, Result};
use crate::models::dataset::{DEFAULT_SIZE, DEFAULT_VOCAB};
use crate::models::{full_hypothesis, output_only_hypothesis, TrainParams};

/// Everything one run needs. Every random choice has an explicit seed here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub hypothesis: HypothesisConfig,
    pub alignment: AlignmentConfig,
    pub diagnosis: DiagnosisConfig,
    pub classifier: ClassifierConfig,
    pub output_dir: PathBuf,
    /// Write a fixed marker instead of wall-clock timestamps.
    pub mask_timestamps: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskConfig::default(),
            model: ModelConfig::default(),
            hypothesis: HypothesisConfig::default(),
            alignment: AlignmentConfig::default(),
            diagnosis: DiagnosisConfig::default(),
            classifier: ClassifierConfig::default(),
            output_dir: PathBuf::from("out"),
            mask_timestamps: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub n: usize,
    pub vocab: u32,
    pub seed: u64,
    /// Read this CSV instead of generating.
    pub dataset_path: Option<PathBuf>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            n: DEFAULT_SIZE,
            vocab: DEFAULT_VOCAB,
            seed: 0,
            dataset_path: None,
        }
    }
}

/// Training set size for MLP runs; smaller sets do not generalize to unseen token pairs.
pub const DEFAULT_TRAIN_SIZE: usize = 60_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    #[default]
    Circuit,
    MlpCheckpoint {
        path: PathBuf,
    },
    MlpTrain {
        #[serde(default = "default_train_size")]
        train_size: usize,
        #[serde(default = "default_train_data_seed")]
        data_seed: u64,
        #[serde(default)]
        params: TrainParams,
    },
}

fn default_train_size() -> usize {
    DEFAULT_TRAIN_SIZE
}

fn default_train_data_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HypothesisConfig {
    /// o5 as a single truth table over o1, o2, o3.
    #[default]
    OutputOnly,
    /// o1, o2, o3 → o4 → o5.
    Full,
    File {
        path: PathBuf,
    },
}

impl HypothesisConfig {
    pub fn load(&self) -> Result<CausalModel> {
        match self {
            Self::OutputOnly => Ok(output_only_hypothesis()),
            Self::Full => Ok(full_hypothesis()),
            Self::File { path } => CausalModel::from_json(&std::fs::read_to_string(path)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlignmentConfig {
    Explicit {
        alignment: Alignment,
    },
    Search {
        /// Defaults to the hypothesis' first output.
        #[serde(default)]
        variable: Option<String>,
        /// Hidden layers to sweep; all when absent. Ignored for the circuit.
        #[serde(default)]
        layers: Option<Vec<usize>>,
        #[serde(default = "yes")]
        directions: bool,
        #[serde(default = "default_restarts")]
        restarts: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn yes() -> bool {
    true
}

fn default_restarts() -> usize {
    2
}

impl Default for AlignmentConfig {
    /// The circuit's misaligned running example: o5 read from the o3 wire.
    fn default() -> Self {
        Self::Explicit {
            alignment: Alignment::single("o5", AlignedSite::identity(Site::variable("o3"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sampling {
    /// `per_class` correct inputs of each of the eight classes, in class order.
    PerClass { per_class: usize },
    /// The first `n` correct inputs in dataset order.
    First { n: usize },
}

impl Default for Sampling {
    fn default() -> Self {
        Self::PerClass { per_class: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosisConfig {
    pub gamma: f64,
    pub max_buckets: usize,
    pub min_size: usize,
    pub seed_count: usize,
    pub sampling: Sampling,
    /// Ordered pairs used for alignment scoring and the heatmap.
    pub pairs: usize,
    pub pair_seed: u64,
}

impl Default for DiagnosisConfig {
    fn default() -> Self {
        let q = QuasiCliqueParams::default();
        Self {
            gamma: q.gamma,
            max_buckets: q.max_buckets,
            min_size: q.min_size,
            seed_count: q.seed_count,
            sampling: Sampling::default(),
            pairs: 2000,
            pair_seed: 0,
        }
    }
}

impl DiagnosisConfig {
    pub fn quasi_clique(&self) -> QuasiCliqueParams {
        QuasiCliqueParams {
            gamma: self.gamma,
            min_size: self.min_size,
            seed_count: self.seed_count,
            max_buckets: self.max_buckets,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub lambda: f64,
    pub max_iterations: usize,
    pub split_seed: u64,
    /// Hidden layer for MLP activation features; defaults to the aligned layer, else the last.
    pub activation_layer: Option<usize>,
    pub top_k: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            max_iterations: LogRegParams::default().max_iterations,
            split_seed: 0,
            activation_layer: None,
            top_k: 5,
        }
    }
}

impl ClassifierConfig {
    pub fn params(&self, lambda: f64) -> LogRegParams {
        LogRegParams {
            lambda,
            max_iterations: self.max_iterations,
            ..LogRegParams::default()
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks parameter ranges and that referenced input files exist.
    pub fn validate(&self) -> Result<()> {
        self.diagnosis.quasi_clique().validate()?;
        if self.task.vocab < 2 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary size must be at least 2, got {}",
                self.task.vocab
            )));
        }
        if self.task.n == 0 {
            return Err(Error::InvalidArgument("task.n must be positive".into()));
        }
        if !(self.classifier.lambda >= 0.0 && self.classifier.lambda.is_finite()) {
            return Err(Error::InvalidArgument(
                "classifier.lambda must be finite and >= 0".into(),
            ));
        }
        match self.diagnosis.sampling {
            Sampling::PerClass { per_class: 0 } | Sampling::First { n: 0 } => {
                return Err(Error::InvalidArgument(
                    "sampling must select at least one input".into(),
                ))
            }
            _ => {}
        }
        let mut files: Vec<&Path> = Vec::new();
        if let Some(p) = &self.task.dataset_path {
            files.push(p);
        }
        if let ModelConfig::MlpCheckpoint { path } = &self.model {
            files.push(path);
        }
        if let HypothesisConfig::File { path } = &self.hypothesis {
            files.push(path);
        }
        if let Some(missing) = files.into_iter().find(|p| !p.is_file()) {
            return Err(Error::InvalidArgument(format!(
                "referenced file {} does not exist",
                missing.display()
            )));
        }
        Ok(())
    }

    /// SHA-256 of the compact JSON form, hex encoded. The output directory is not
    /// part of the experiment and is left out.
    pub fn hash(&self) -> String {
        let mut experiment = self.clone();
        experiment.output_dir = PathBuf::new();
        let text = serde_json::to_string(&experiment).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_uses_defaults() {
        let c = RunConfig::from_json(r#"{"diagnosis": {"gamma": 1.0}, "model": {"kind": "mlp_train", "params": {"epochs": 0}}}"#)
            .unwrap();
        assert_eq!(c.diagnosis.gamma, 1.0);
        assert_eq!(c.diagnosis.max_buckets, 2);
        let ModelConfig::MlpTrain {
            train_size, params, ..
        } = &c.model
        else {
            panic!()
        };
        assert_eq!(*train_size, DEFAULT_TRAIN_SIZE);
        assert_eq!(params.epochs, 0);
        assert_eq!(params.hidden, vec![128, 64]);
        assert_eq!(RunConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
    }

    #[test]
    fn validation_and_hash() {
        let mut c = RunConfig::default();
        c.validate().unwrap();
        let h = c.hash();
        assert_eq!(h.len(), 64);
        assert_eq!(h, RunConfig::default().hash());
        c.output_dir = "elsewhere".into();
        assert_eq!(c.hash(), h);
        c.diagnosis.gamma = 0.0;
        assert!(c.validate().is_err());
        c = RunConfig::default();
        c.task.vocab = 1;
        assert!(c.validate().is_err());
        c = RunConfig::default();
        c.hypothesis = HypothesisConfig::File {
            path: "/nonexistent/h.json".into(),
        };
        assert!(c.validate().is_err());
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }
}
