//! Program family classification from static call graphs.
//!
//! The pipeline parses IDA-style disassembly listings into functions, builds
//! a call graph per file, embeds each internal function's instruction
//! sequence with a GRU sequence-to-sequence autoencoder, discretizes the
//! embeddings with mini-batch k-means, and classifies the relabeled call
//! graphs with a Weisfeiler-Lehman subtree kernel fed to one-vs-all SVMs
//! with Platt-scaled probabilities.
//!
//! Module map:
//!
//! * [`asm`]: listing parser, instruction normalization, function
//!   extraction, vocabulary.
//! * [`callgraph`]: call graph construction with internal/external vertices.
//! * [`gru`]: GRU autoencoder with backpropagation through time.
//! * [`cluster`]: mini-batch k-means and cluster-ID vertex labeling.
//! * [`wl`]: Weisfeiler-Lehman relabeling, feature vectors, kernel matrix.
//! * [`svm`]: SMO solver on precomputed kernels, Platt scaling, one-vs-all.
//! * [`pipeline`]: splits, metrics, reports, synthetic corpora and the
//!   staged train/predict/evaluate workflow.

pub mod asm;
pub mod callgraph;
pub mod cluster;
pub mod container;
pub mod gru;
pub mod linalg;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod svm;
pub mod wl;

pub use asm::{AsmListing, FunctionRecord, Vocabulary};
pub use callgraph::{CallGraph, GraphStats, VertexKind};

pub use cluster::{KMeansModel, LabeledGraph};
pub use gru::{GruAutoencoderModel, TrainingConfig};
pub use pipeline::{EvaluationReport, PipelineConfig, PipelineError};
pub use svm::{BinarySvmModel, OneVsAllClassifier, PlattCalibrator};
pub use wl::{KernelMatrix, LabelDictionary, WlConfig, WlFeatureVector};
