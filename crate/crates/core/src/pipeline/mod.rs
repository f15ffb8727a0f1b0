//! The end-to-end recipe behind the command-line verbs: configuration, staged
//! execution with stage-tagged errors, and artifact persistence.

mod commands;
mod config;
mod features;
mod recurse;
mod report;

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use commands::{
    cmd_classify, cmd_diagnose, cmd_export, cmd_generate, cmd_sweep, cmd_train, load_dataset,
    load_model, ClassifyOutcome, DiagnoseOutcome, GenerateOutcome, LoadedModel, SweepOutcome,
    TrainOutcome,
};
pub use config::{
    AlignmentConfig, ClassifierConfig, DiagnosisConfig, HypothesisConfig, ModelConfig, RunConfig,
    Sampling, TaskConfig, DEFAULT_TRAIN_SIZE,
};
pub use features::{hand_features, PipelineModel};
pub use recurse::{
    cmd_recurse, extend_hypothesis, hierarchy, Promotion, RecurseOutcome, RecursePass,
    RecurseReport, Rewire, FINAL_HYPOTHESIS_FILE, RECURSE_REPORT_FILE,
};
pub use report::{
    BucketSummary, ClassifierReport, ClassifierSummary, DiagnosisReport, GridPoint, Provenance,
    SearchSummary, WireMajority, REPORT_FORMAT,
};

/// Pipeline stages; each maps to a distinct process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Dataset,
    Model,
    Hypothesis,
    Filter,
    Search,
    Graph,
    Partition,
    Report,
    Classify,
    Recurse,
    Write,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Dataset => "dataset",
            Stage::Model => "model",
            Stage::Hypothesis => "hypothesis",
            Stage::Filter => "filter",
            Stage::Search => "search",
            Stage::Graph => "graph",
            Stage::Partition => "partition",
            Stage::Report => "report",
            Stage::Classify => "classify",
            Stage::Recurse => "recurse",
            Stage::Write => "write",
        }
    }

    pub fn exit_code(self) -> i32 {
        10 + self as i32
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub type StageResult<T> = std::result::Result<T, StageError>;

pub(crate) trait AtStage<T> {
    fn at(self, stage: Stage) -> StageResult<T>;
}

impl<T, E: Into<Error>> AtStage<T> for std::result::Result<T, E> {
    fn at(self, stage: Stage) -> StageResult<T> {
        self.map_err(|e| StageError {
            stage,
            source: e.into(),
        })
    }
}

/// Writes via a sibling temporary file and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> crate::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> crate::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
