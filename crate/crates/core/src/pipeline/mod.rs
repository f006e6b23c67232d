//! End-to-end workflow: corpus loading, splits, staged training into a
//! model bundle, prediction, evaluation and reports.

mod bundle;
mod config;
mod corpus;
mod metrics;
mod split;
pub mod synth;

use std::path::{Path, PathBuf};

pub use bundle::{
    check_leakage, evaluate, read_predictions, run_stage, run_training, write_predictions, Bundle,
    PredictionRecord, Predictor, SplitRecord, Stage, StageManifest, TrainSummary, MANIFEST_SCHEMA,
};
pub use config::{ClusteringConfig, KernelMode, Paths, PipelineConfig, SplitFractions};
pub use corpus::{
    ingest_file, parse_labels, read_listing, write_labels, Corpus, LABEL_FILES, MICROSOFT_FAMILIES,
};
pub use metrics::{
    emit_report, ClassCounts, ClassMetrics, ConfusionMatrix, EvaluationReport, RunMetadata,
    REPORT_SCHEMA,
};
pub use split::{split_dataset, Split};

use crate::asm::AsmError;
use crate::cluster::ClusterError;
use crate::gru::GruError;
use crate::svm::SvmError;
use crate::wl::WlError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus directory {0} does not exist or has no label file")]
    MissingCorpus(PathBuf),
    #[error("family `{0}` has fewer than 3 files and cannot be split")]
    FamilyTooSmall(String),
    #[error("invalid report: {0}")]
    InvalidReport(String),
    #[error("invalid synthetic corpus spec: {0}")]
    InvalidSpec(String),
    #[error("cannot write {0}: {1}")]
    UnwritablePath(PathBuf, #[source] std::io::Error),
    #[error("{file}: unparsable listing: {reason}")]
    UnparsableFile { file: String, reason: String },
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("invalid model bundle: {0}")]
    InvalidBundle(String),
    #[error("test data leaked into training: {0}")]
    Leakage(String),
    #[error("classifier was trained on different features than the configuration produces")]
    FingerprintMismatch,
    #[error(transparent)]
    Asm(#[from] AsmError),
    #[error(transparent)]
    Gru(#[from] GruError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Wl(#[from] WlError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// The innermost error, past stage wrappers.
    pub fn root(&self) -> &PipelineError {
        match self {
            Self::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}
