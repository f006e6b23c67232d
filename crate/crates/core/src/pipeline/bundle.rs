//! Staged training with content-hashed artifacts, plus prediction and
//! evaluation against a finished bundle.
//!
//! Every stage writes its outputs into the model directory and then a
//! manifest naming the sha256 of each input and output. A stage that fails
//! leaves a `<stage>.INVALID` marker next to its manifest; bundles with
//! markers or hash mismatches are refused.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{KernelMode, PipelineConfig};
use super::corpus::{ingest_file, Corpus};
use super::metrics::EvaluationReport;
use super::split::{split_dataset, Split};
use super::PipelineError;
use crate::asm::{build_vocabulary, encode_sequence, FunctionRecord, Vocabulary};
use crate::callgraph::build_call_graph;
use crate::cluster::{fit_minibatch_kmeans, label_graph, KMeansModel, KMeansParams, LabeledGraph};
use crate::container::Container;
use crate::gru::{encode, encode_many, train, GruAutoencoderModel};
use crate::linalg::Matrix;
use crate::rng::sha256_hex;
use crate::svm::{
    grid_search, repair_psd, train_one_vs_all, OneVsAllClassifier, OvaParams, Prediction,
};
use crate::wl::{
    corpus_features, kernel_matrix, kernel_rows, normalize_kernel, normalize_rows,
    rbf_kernel_matrix, rbf_rows, read_features_jsonl, wl_features_frozen, write_features_jsonl,
    KernelMatrix, LabelDictionary, WlFeatureVector,
};

pub const MANIFEST_SCHEMA: &str = "manifest/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Split,
    Ingest,
    Vocab,
    Autoencoder,
    Embed,
    Cluster,
    Features,
    Classifier,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Split,
        Stage::Ingest,
        Stage::Vocab,
        Stage::Autoencoder,
        Stage::Embed,
        Stage::Cluster,
        Stage::Features,
        Stage::Classifier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Split => "split",
            Stage::Ingest => "ingest",
            Stage::Vocab => "vocab",
            Stage::Autoencoder => "autoencoder",
            Stage::Embed => "embed",
            Stage::Cluster => "cluster",
            Stage::Features => "features",
            Stage::Classifier => "classifier",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageManifest {
    pub schema: String,
    pub stage: Stage,
    pub params: serde_json::Value,
    /// Input name to sha256. Upstream artifacts appear as `stage/file`,
    /// corpus listings as `listing/<id>`.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to sha256.
    pub outputs: BTreeMap<String, String>,
}

/// A model directory holding stage artifacts.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
}

impl Bundle {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.dir.join("manifests").join(format!("{stage}.json"))
    }

    fn marker_path(&self, stage: Stage) -> PathBuf {
        self.dir.join("manifests").join(format!("{stage}.INVALID"))
    }

    pub fn manifest(&self, stage: Stage) -> Result<StageManifest, PipelineError> {
        if self.marker_path(stage).exists() {
            return Err(PipelineError::InvalidBundle(format!(
                "stage {stage} is marked invalid"
            )));
        }
        let p = self.manifest_path(stage);
        let text = std::fs::read_to_string(&p)
            .map_err(|_| PipelineError::InvalidBundle(format!("stage {stage} has not run")))?;
        let m: StageManifest = serde_json::from_str(&text)
            .map_err(|e| PipelineError::InvalidBundle(format!("{stage}: {e}")))?;
        if m.schema != MANIFEST_SCHEMA || m.stage != stage {
            return Err(PipelineError::InvalidBundle(format!(
                "{stage}: unexpected manifest header"
            )));
        }
        Ok(m)
    }

    /// Reads an output of `stage` and checks it against the manifest hash.
    pub fn read(&self, stage: Stage, name: &str) -> Result<Vec<u8>, PipelineError> {
        let m = self.manifest(stage)?;
        let expected = m
            .outputs
            .get(name)
            .ok_or_else(|| PipelineError::InvalidBundle(format!("{stage} has no output {name}")))?;
        let p = self.dir.join(name);
        let bytes = std::fs::read(&p).map_err(|e| PipelineError::io(&p, e))?;
        if &sha256_hex(&bytes) != expected {
            return Err(PipelineError::InvalidBundle(format!(
                "{name} does not match its manifest"
            )));
        }
        Ok(bytes)
    }

    fn read_text(&self, stage: Stage, name: &str) -> Result<String, PipelineError> {
        String::from_utf8(self.read(stage, name)?)
            .map_err(|_| PipelineError::InvalidBundle(format!("{name} is not UTF-8")))
    }

    /// Checks every stage's outputs and that each recorded upstream input
    /// still matches the upstream manifest.
    pub fn verify(&self) -> Result<(), PipelineError> {
        let mut produced: BTreeMap<String, String> = BTreeMap::new();
        for stage in Stage::ALL {
            let m = self.manifest(stage)?;
            for (key, hash) in &m.inputs {
                if key.starts_with("listing/") || key == "labels" {
                    continue;
                }
                if produced.get(key) != Some(hash) {
                    return Err(PipelineError::InvalidBundle(format!(
                        "{stage}: stale input {key}"
                    )));
                }
            }
            for name in m.outputs.keys() {
                self.read(stage, name)?;
                produced.insert(format!("{stage}/{name}"), m.outputs[name].clone());
            }
        }
        Ok(())
    }

    /// The configuration the bundle was trained with.
    pub fn config(&self) -> Result<PipelineConfig, PipelineError> {
        PipelineConfig::from_json(&self.read_text(Stage::Split, "config.json")?)
    }

    pub fn split(&self) -> Result<SplitRecord, PipelineError> {
        Ok(serde_json::from_str(
            &self.read_text(Stage::Split, "split.json")?,
        )?)
    }
}

struct StageRun<'a> {
    bundle: &'a Bundle,
    stage: Stage,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl<'a> StageRun<'a> {
    fn begin(bundle: &'a Bundle, stage: Stage) -> Result<Self, PipelineError> {
        let dir = bundle.dir.join("manifests");
        std::fs::create_dir_all(&dir).map_err(|e| PipelineError::UnwritablePath(dir.clone(), e))?;
        let marker = bundle.marker_path(stage);
        std::fs::write(&marker, b"").map_err(|e| PipelineError::UnwritablePath(marker, e))?;
        let manifest = bundle.manifest_path(stage);
        if manifest.exists() {
            std::fs::remove_file(&manifest).map_err(|e| PipelineError::io(&manifest, e))?;
        }
        Ok(Self {
            bundle,
            stage,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    /// Records `upstream/name` as an input and returns its verified bytes.
    fn consume(&mut self, upstream: Stage, name: &str) -> Result<Vec<u8>, PipelineError> {
        let bytes = self.bundle.read(upstream, name)?;
        self.inputs
            .insert(format!("{upstream}/{name}"), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn consume_text(&mut self, upstream: Stage, name: &str) -> Result<String, PipelineError> {
        String::from_utf8(self.consume(upstream, name)?)
            .map_err(|_| PipelineError::InvalidBundle(format!("{name} is not UTF-8")))
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let p = self.bundle.dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| PipelineError::UnwritablePath(p, e))?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn finish(self, params: serde_json::Value) -> Result<(), PipelineError> {
        let m = StageManifest {
            schema: MANIFEST_SCHEMA.into(),
            stage: self.stage,
            params,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let p = self.bundle.manifest_path(self.stage);
        let text = serde_json::to_string_pretty(&m)? + "\n";
        std::fs::write(&p, text).map_err(|e| PipelineError::UnwritablePath(p, e))?;
        let marker = self.bundle.marker_path(self.stage);
        std::fs::remove_file(&marker).map_err(|e| PipelineError::io(&marker, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRecord {
    pub split: Split,
    /// Labeled ids whose listing file is missing.
    pub missing: Vec<String>,
    /// Family of every split id.
    pub families: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestedFile {
    file_id: String,
    family: String,
    validation: bool,
    functions: Vec<FunctionRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub train_files: usize,
    pub excluded: BTreeMap<String, String>,
    pub best_c: f64,
}

fn jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it).expect("artifact serializes");
        out.push(b'\n');
    }
    out
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, PipelineError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(PipelineError::from))
        .collect()
}

fn check_config(bundle: &Bundle, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    if bundle.config()?.hash() != cfg.hash() {
        return Err(PipelineError::Config(
            "configuration differs from the one this bundle was started with; rerun the full training".into(),
        ));
    }
    Ok(())
}

fn stage_split(
    bundle: &Bundle,
    cfg: &PipelineConfig,
    corpus: &Corpus,
) -> Result<(), PipelineError> {
    let mut run = StageRun::begin(bundle, Stage::Split)?;
    let (present, missing): (Vec<_>, Vec<_>) = corpus
        .labels
        .iter()
        .cloned()
        .partition(|(id, _)| corpus.listing_path(id).is_file());
    let split = split_dataset(&present, cfg.split, cfg.seed)?;
    run.inputs.insert(
        "labels".into(),
        sha256_hex(super::corpus::write_labels(&corpus.labels).as_bytes()),
    );
    let record = SplitRecord {
        split,
        missing: missing.into_iter().map(|(id, _)| id).collect(),
        families: present.into_iter().collect(),
    };
    run.write("config.json", cfg.to_json().as_bytes())?;
    run.write(
        "split.json",
        serde_json::to_string_pretty(&record)?.as_bytes(),
    )?;
    run.finish(serde_json::json!({ "seed": cfg.seed, "fractions": cfg.split }))
}

fn stage_ingest(
    bundle: &Bundle,
    cfg: &PipelineConfig,
) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut run = StageRun::begin(bundle, Stage::Ingest)?;
    let record: SplitRecord = serde_json::from_str(&run.consume_text(Stage::Split, "split.json")?)?;
    let corpus = Corpus::open(&cfg.paths.corpus_dir)?;
    let mut wanted: Vec<(&String, bool)> = record.split.train.iter().map(|i| (i, false)).collect();
    wanted.extend(record.split.validation.iter().map(|i| (i, true)));
    wanted.sort();
    let results = crate::par::map(&wanted, |&(id, validation)| {
        let text = corpus.read_listing(id)?;
        let hash = sha256_hex(text.as_bytes());
        Ok::<_, PipelineError>((hash, ingest_file(id, &text).map(|f| (f, validation))))
    });
    let mut files = Vec::new();
    let mut excluded = BTreeMap::new();
    for ((id, _), r) in wanted.iter().zip(results) {
        let (hash, outcome) = r?;
        run.inputs.insert(format!("listing/{id}"), hash);
        match outcome {
            Ok((functions, validation)) => files.push(IngestedFile {
                file_id: id.to_string(),
                family: record.families[*id].clone(),
                validation,
                functions,
            }),
            Err(e) => {
                excluded.insert(id.to_string(), e.to_string());
            }
        }
    }
    run.write("ingest.jsonl", &jsonl(&files))?;
    run.write(
        "excluded.json",
        serde_json::to_string_pretty(&excluded)?.as_bytes(),
    )?;
    run.finish(serde_json::json!({}))?;
    Ok(excluded)
}

fn load_ingested(run: &mut StageRun) -> Result<Vec<IngestedFile>, PipelineError> {
    parse_jsonl(&run.consume_text(Stage::Ingest, "ingest.jsonl")?)
}

fn stage_vocab(bundle: &Bundle, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let mut run = StageRun::begin(bundle, Stage::Vocab)?;
    let files = load_ingested(&mut run)?;
    let train: Vec<FunctionRecord> = files
        .into_iter()
        .filter(|f| !f.validation)
        .flat_map(|f| f.functions)
        .collect();
    let vocab = build_vocabulary(&train, cfg.vocab_max_size)?;
    run.write("vocab.json", vocab.to_json().as_bytes())?;
    run.finish(serde_json::json!({ "max_size": cfg.vocab_max_size }))
}

fn sequences(
    files: &[IngestedFile],
    vocab: &Vocabulary,
    max_len: usize,
    validation: bool,
) -> Vec<Vec<u32>> {
    let set: BTreeSet<Vec<u32>> = files
        .iter()
        .filter(|f| f.validation == validation)
        .flat_map(|f| f.functions.iter().filter(|r| !r.is_external))
        .map(|r| encode_sequence(r, vocab, max_len).expect("internal function"))
        .collect();
    set.into_iter().collect()
}

fn stage_autoencoder(bundle: &Bundle, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let mut run = StageRun::begin(bundle, Stage::Autoencoder)?;
    let files = load_ingested(&mut run)?;
    let vocab = Vocabulary::from_json(&run.consume_text(Stage::Vocab, "vocab.json")?)?;
    let tc = crate::gru::TrainingConfig {
        seed: cfg.seed,
        ..cfg.autoencoder.clone()
    };
    // identical functions are trained once
    let train_set = sequences(&files, &vocab, tc.max_len, false);
    let validation_set = sequences(&files, &vocab, tc.max_len, true);
    let mut outcome = train(&train_set, &validation_set, vocab.len(), &tc)?;
    outcome.model.vocab_fingerprint = vocab.fingerprint();
    run.write("autoencoder.bin", &outcome.model.to_bytes())?;
    run.write(
        "autoencoder_history.json",
        serde_json::to_string_pretty(&serde_json::json!({
            "best_epoch": outcome.best_epoch,
            "train_sequences": train_set.len(),
            "validation_sequences": validation_set.len(),
            "history": outcome.history,
        }))?
        .as_bytes(),
    )?;
    run.finish(serde_json::to_value(&tc)?)
}

/// Encodes each distinct sequence once.
fn embed_functions<'a>(
    model: &GruAutoencoderModel,
    vocab: &Vocabulary,
    max_len: usize,
    functions: impl Iterator<Item = &'a FunctionRecord>,
) -> Result<Vec<Vec<f64>>, PipelineError> {
    let seqs: Vec<Vec<u32>> = functions
        .map(|f| encode_sequence(f, vocab, max_len))
        .collect::<Result<_, _>>()?;
    let unique: Vec<Vec<u32>> = seqs
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let vectors = encode_many(model, &unique)?;
    let lookup: HashMap<&Vec<u32>, &Vec<f64>> = unique.iter().zip(&vectors).collect();
    Ok(seqs.iter().map(|s| lookup[s].clone()).collect())
}

fn load_autoencoder(
    bytes: &[u8],
    vocab: &Vocabulary,
) -> Result<GruAutoencoderModel, PipelineError> {
    let model = GruAutoencoderModel::from_bytes(bytes)?;
    if model.vocab_fingerprint != vocab.fingerprint() {
        return Err(PipelineError::InvalidBundle(
            "autoencoder was trained with another vocabulary".into(),
        ));
    }
    Ok(model)
}

fn stage_embed(bundle: &Bundle, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let mut run = StageRun::begin(bundle, Stage::Embed)?;
    let files = load_ingested(&mut run)?;
    let vocab = Vocabulary::from_json(&run.consume_text(Stage::Vocab, "vocab.json")?)?;
    let model = load_autoencoder(&run.consume(Stage::Autoencoder, "autoencoder.bin")?, &vocab)?;
    let internal: Vec<(&str, &FunctionRecord)> = files
        .iter()
        .filter(|f| !f.validation)
        .flat_map(|f| {
            f.functions
                .iter()
                .filter(|r| !r.is_external)
                .map(move |r| (f.file_id.as_str(), r))
        })
        .collect();
    let vectors = embed_functions(
        &model,
        &vocab,
        cfg.autoencoder.max_len,
        internal.iter().map(|(_, r)| *r),
    )?;
    let keys: Vec<(&str, &str)> = internal
        .iter()
        .map(|(f, r)| (*f, r.name.as_str()))
        .collect();
    let h = model.dims.hidden_dim;
    let m = Matrix::from_fn(vectors.len(), h, |r, c| vectors[r][c]);
    let mut c = Container::new("embeddings", serde_json::json!({ "keys": keys }));
    c.push("embeddings", &m);
    run.write("embeddings.bin", &c.to_bytes())?;
    run.finish(serde_json::json!({ "max_len": cfg.autoencoder.max_len }))
}

struct Embeddings {
    keys: Vec<(String, String)>,
    vectors: Vec<Vec<f64>>,
}

fn load_embeddings(bytes: &[u8]) -> Result<Embeddings, PipelineError> {
    let c =
        Container::from_bytes(bytes).map_err(|e| PipelineError::InvalidBundle(e.to_string()))?;
    c.expect_kind("embeddings")
        .map_err(|e| PipelineError::InvalidBundle(e.to_string()))?;
    let keys: Vec<(String, String)> = serde_json::from_value(c.header.meta["keys"].clone())?;
    let m = c
        .tensor("embeddings")
        .ok_or_else(|| PipelineError::InvalidBundle("missing embeddings tensor".into()))?;
    if m.rows != keys.len() {
        return Err(PipelineError::InvalidBundle(
            "embedding count mismatch".into(),
        ));
    }
    Ok(Embeddings {
        vectors: (0..m.rows).map(|r| m.row(r).to_vec()).collect(),
        keys,
    })
}

fn stage_cluster(bundle: &Bundle, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let mut run = StageRun::begin(bundle, Stage::Cluster)?;
    let files = load_ingested(&mut run)?;
    let emb = load_embeddings(&run.consume(Stage::Embed, "embeddings.bin")?)?;
    let params = KMeansParams {
        k: cfg.clustering.k,
        batch_size: cfg.clustering.batch_size,
        iterations: cfg.clustering.iterations,
        seed: cfg.seed,
        unit_normalize: cfg.clustering.unit_normalize,
    };
    let kmeans = fit_minibatch_kmeans(&emb.vectors, &params)?;
    let mut by_file: HashMap<&str, HashMap<String, Vec<f64>>> = HashMap::new();
    for ((file, func), v) in emb.keys.iter().zip(&emb.vectors) {
        by_file
            .entry(file)
            .or_default()
            .insert(func.clone(), v.clone());
    }
    let empty = HashMap::new();
    let graphs: Vec<LabeledGraph> = files
        .iter()
        .filter(|f| !f.validation)
        .map(|f| {
            let g = build_call_graph(&f.functions, &f.file_id).with_family(Some(f.family.clone()));
            label_graph(
                &g,
                &kmeans,
                by_file.get(f.file_id.as_str()).unwrap_or(&empty),
            )
        })
        .collect::<Result<_, _>>()?;
    run.write("kmeans.bin", &kmeans.to_bytes())?;
    run.write("graphs.jsonl", &jsonl(&graphs))?;
    run.finish(serde_json::to_value(params)?)
}

fn gram(features: &[WlFeatureVector], mode: KernelMode) -> Result<KernelMatrix, PipelineError> {
    Ok(match mode {
        KernelMode::Linear => kernel_matrix(features),
        KernelMode::Normalized => normalize_kernel(&kernel_matrix(features))?,
        KernelMode::Rbf { gamma } => rbf_kernel_matrix(features, gamma),
    })
}

fn stage_features(bundle: &Bundle, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let mut run = StageRun::begin(bundle, Stage::Features)?;
    let graphs: Vec<LabeledGraph> =
        parse_jsonl(&run.consume_text(Stage::Cluster, "graphs.jsonl")?)?;
    let mut dict = LabelDictionary::new();
    let features = corpus_features(&graphs, &cfg.wl, &mut dict)?;
    let k = gram(&features, cfg.kernel)?;
    let mut feat_bytes = Vec::new();
    write_features_jsonl(&features, &mut feat_bytes)?;
    let (mut kb, mut ki) = (Vec::new(), Vec::new());
    k.write_binary(&mut kb, &mut ki)?;
    run.write("wl_dict.json", dict.to_json().as_bytes())?;
    run.write("features.jsonl", &feat_bytes)?;
    run.write("kernel.bin", &kb)?;
    run.write("kernel.index.json", &ki)?;
    run.finish(serde_json::json!({ "wl": cfg.wl, "kernel": cfg.kernel }))
}

fn stage_classifier(bundle: &Bundle, cfg: &PipelineConfig) -> Result<f64, PipelineError> {
    let mut run = StageRun::begin(bundle, Stage::Classifier)?;
    let graphs: Vec<LabeledGraph> =
        parse_jsonl(&run.consume_text(Stage::Cluster, "graphs.jsonl")?)?;
    let kb = run.consume(Stage::Features, "kernel.bin")?;
    let ki = run.consume_text(Stage::Features, "kernel.index.json")?;
    let k = KernelMatrix::read_binary(&kb, &ki)?;
    if k.ids.iter().ne(graphs.iter().map(|g| &g.file_id)) {
        return Err(PipelineError::InvalidBundle(
            "kernel rows do not follow graph order".into(),
        ));
    }
    let labels: Vec<String> = graphs
        .iter()
        .map(|g| g.family.clone().unwrap_or_default())
        .collect();
    let mut gram = Matrix::from_fn(k.n(), k.n(), |i, j| k.get(i, j));
    let jitter = repair_psd(&mut gram);
    let spec = crate::svm::GridSearchSpec {
        seed: cfg.seed,
        ..cfg.grid.clone()
    };
    let report = grid_search(&gram, &labels, &spec)?;
    let params = OvaParams {
        c: report.best_c,
        platt_folds: 3,
        seed: cfg.seed,
    };
    let mut clf = train_one_vs_all(&gram, &labels, &k.ids, &cfg.feature_fingerprint(), &params)?;
    if let Some(j) = jitter {
        clf.warnings
            .push(format!("kernel diagonal jittered by {j:e}"));
    }
    run.write(
        "grid.json",
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    run.write("classifier.json", clf.to_json().as_bytes())?;
    run.finish(serde_json::json!({ "grid": spec, "fingerprint": cfg.feature_fingerprint() }))?;
    Ok(report.best_c)
}

/// Runs one stage. All but `split` require the bundle to have been started
/// with the same configuration.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<(), PipelineError> {
    let wrap = |e: PipelineError| PipelineError::Stage {
        stage: stage.name(),
        source: Box::new(e),
    };
    let bundle = Bundle::new(&cfg.paths.model_dir);
    if stage == Stage::Split {
        let corpus = Corpus::open(&cfg.paths.corpus_dir).map_err(wrap)?;
        std::fs::create_dir_all(&bundle.dir)
            .map_err(|e| PipelineError::UnwritablePath(bundle.dir.clone(), e))
            .map_err(wrap)?;
        return stage_split(&bundle, cfg, &corpus).map_err(wrap);
    }
    check_config(&bundle, cfg).map_err(wrap)?;
    match stage {
        Stage::Split => unreachable!("handled above"),
        Stage::Ingest => stage_ingest(&bundle, cfg).map(drop),
        Stage::Vocab => stage_vocab(&bundle, cfg),
        Stage::Autoencoder => stage_autoencoder(&bundle, cfg),
        Stage::Embed => stage_embed(&bundle, cfg),
        Stage::Cluster => stage_cluster(&bundle, cfg),
        Stage::Features => stage_features(&bundle, cfg),
        Stage::Classifier => stage_classifier(&bundle, cfg).map(drop),
    }
    .map_err(wrap)
}

/// Runs every stage in order. Stage timings go to `timings.json`, outside
/// the manifests, so manifests stay byte-identical across reruns.
pub fn run_training(cfg: &PipelineConfig) -> Result<TrainSummary, PipelineError> {
    cfg.validate()?;
    let mut summary = TrainSummary::default();
    for stage in Stage::ALL {
        let t = Instant::now();
        run_stage(cfg, stage)?;
        summary
            .timings
            .insert(stage.name().into(), t.elapsed().as_secs_f64());
    }
    let bundle = Bundle::new(&cfg.paths.model_dir);
    summary.excluded = serde_json::from_slice(&bundle.read(Stage::Ingest, "excluded.json")?)?;
    let grid: crate::svm::GridReport =
        serde_json::from_slice(&bundle.read(Stage::Classifier, "grid.json")?)?;
    summary.best_c = grid.best_c;
    let split = bundle.split()?.split;
    summary.train_files = split
        .train
        .iter()
        .filter(|id| !summary.excluded.contains_key(*id))
        .count();
    let p = bundle.dir.join("timings.json");
    std::fs::write(&p, serde_json::to_string_pretty(&summary.timings)?)
        .map_err(|e| PipelineError::UnwritablePath(p, e))?;
    Ok(summary)
}

/// Everything needed to classify new listings.
pub struct Predictor {
    pub config: PipelineConfig,
    vocab: Vocabulary,
    model: GruAutoencoderModel,
    kmeans: KMeansModel,
    dict: LabelDictionary,
    train_features: Vec<WlFeatureVector>,
    train_diag: Vec<f64>,
    pub classifier: OneVsAllClassifier,
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub file_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub probabilities: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Predictor {
    pub fn load(model_dir: &Path) -> Result<Self, PipelineError> {
        let bundle = Bundle::new(model_dir);
        bundle.verify()?;
        let config = bundle.config()?;
        let vocab = Vocabulary::from_json(&bundle.read_text(Stage::Vocab, "vocab.json")?)?;
        let model = load_autoencoder(&bundle.read(Stage::Autoencoder, "autoencoder.bin")?, &vocab)?;
        let kmeans = KMeansModel::from_bytes(&bundle.read(Stage::Cluster, "kmeans.bin")?)?;
        let dict = LabelDictionary::from_json(&bundle.read_text(Stage::Features, "wl_dict.json")?)?;
        let train_features =
            read_features_jsonl(&bundle.read_text(Stage::Features, "features.jsonl")?)?;
        let classifier = OneVsAllClassifier::from_json(
            &bundle.read_text(Stage::Classifier, "classifier.json")?,
        )?;
        if classifier.fingerprint != config.feature_fingerprint() {
            return Err(PipelineError::FingerprintMismatch);
        }
        if classifier
            .train_ids
            .iter()
            .ne(train_features.iter().map(|f| &f.graph_id))
        {
            return Err(PipelineError::InvalidBundle(
                "classifier and features disagree on training order".into(),
            ));
        }
        let train_diag = train_features.iter().map(|f| f.self_kernel()).collect();
        Ok(Self {
            config,
            vocab,
            model,
            kmeans,
            dict,
            train_features,
            train_diag,
            classifier,
        })
    }

    /// Labeled call graph of a listing, using the frozen encoder and
    /// centroids.
    pub fn labeled_graph(&self, id: &str, text: &str) -> Result<LabeledGraph, PipelineError> {
        let functions = ingest_file(id, text)?;
        let g = build_call_graph(&functions, id);
        let internal: Vec<&FunctionRecord> = functions.iter().filter(|f| !f.is_external).collect();
        let mut embeddings = HashMap::with_capacity(internal.len());
        for f in internal {
            let seq = encode_sequence(f, &self.vocab, self.config.autoencoder.max_len)?;
            embeddings.insert(f.name.clone(), encode(&self.model, &seq)?);
        }
        Ok(label_graph(&g, &self.kmeans, &embeddings)?)
    }

    pub fn kernel_row(&self, g: &LabeledGraph) -> Result<Vec<f64>, PipelineError> {
        let f = wl_features_frozen(g, &self.config.wl, &self.dict)?;
        let q = std::slice::from_ref(&f);
        let mut rows = match self.config.kernel {
            KernelMode::Linear => kernel_rows(q, &self.train_features),
            KernelMode::Normalized => {
                let mut r = kernel_rows(q, &self.train_features);
                normalize_rows(&mut r, &[f.self_kernel()], &self.train_diag);
                r
            }
            KernelMode::Rbf { gamma } => rbf_rows(q, &self.train_features, gamma),
        };
        Ok(rows.pop().expect("one row"))
    }

    pub fn predict_listing(&self, id: &str, text: &str) -> Result<Prediction, PipelineError> {
        let g = self.labeled_graph(id, text)?;
        let row = self.kernel_row(&g)?;
        let mut p = self
            .classifier
            .predict_checked(&[row], &self.config.feature_fingerprint())?;
        Ok(p.pop().expect("one prediction"))
    }

    /// Predicts every file; a failing file yields an error record and the
    /// batch continues. Output follows input order.
    pub fn predict_files(&self, files: &[(String, PathBuf)]) -> Vec<PredictionRecord> {
        crate::par::map(files, |(id, path)| {
            let outcome =
                super::corpus::read_listing(path).and_then(|t| self.predict_listing(id, &t));
            self.record(id, outcome)
        })
    }

    fn record(&self, id: &str, outcome: Result<Prediction, PipelineError>) -> PredictionRecord {
        match outcome {
            Ok(p) => PredictionRecord {
                file_id: id.to_string(),
                truth: None,
                predicted: Some(p.class),
                probabilities: self
                    .classifier
                    .classes
                    .iter()
                    .cloned()
                    .zip(p.probabilities)
                    .collect(),
                error: None,
            },
            Err(e) => PredictionRecord {
                file_id: id.to_string(),
                truth: None,
                predicted: None,
                probabilities: BTreeMap::new(),
                error: Some(e.to_string()),
            },
        }
    }
}

/// Fails if any test id fed a training stage or overlaps the train and
/// validation splits.
pub fn check_leakage(bundle: &Bundle, test_ids: &[String]) -> Result<(), PipelineError> {
    let split = bundle.split()?.split;
    let seen: BTreeSet<&String> = split.train.iter().chain(&split.validation).collect();
    for id in test_ids {
        if seen.contains(id) {
            return Err(PipelineError::Leakage(format!(
                "{id} is also a training file"
            )));
        }
    }
    let test: BTreeSet<String> = test_ids.iter().map(|i| format!("listing/{i}")).collect();
    for stage in Stage::ALL {
        if let Some(k) = bundle
            .manifest(stage)?
            .inputs
            .keys()
            .find(|k| test.contains(*k))
        {
            return Err(PipelineError::Leakage(format!(
                "stage {stage} consumed {k}"
            )));
        }
    }
    Ok(())
}

pub fn write_predictions(records: &[PredictionRecord], path: &Path) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| PipelineError::UnwritablePath(parent.to_path_buf(), e))?;
    }
    std::fs::write(path, jsonl(records))
        .map_err(|e| PipelineError::UnwritablePath(path.to_path_buf(), e))
}

pub fn read_predictions(text: &str) -> Result<Vec<PredictionRecord>, PipelineError> {
    parse_jsonl(text)
}

/// Classifies the held-out test split, then writes `predictions.jsonl` and
/// the report files into the report directory. Test listings are read here
/// and nowhere else.
pub fn evaluate(cfg: &PipelineConfig) -> Result<EvaluationReport, PipelineError> {
    let started = Instant::now();
    let bundle = Bundle::new(&cfg.paths.model_dir);
    check_config(&bundle, cfg)?;
    let predictor = Predictor::load(&bundle.dir)?;
    let record = bundle.split()?;
    check_leakage(&bundle, &record.split.test)?;
    let corpus = Corpus::open(&cfg.paths.corpus_dir)?;
    let files: Vec<(String, PathBuf)> = record
        .split
        .test
        .iter()
        .map(|id| (id.clone(), corpus.listing_path(id)))
        .collect();
    let mut records = predictor.predict_files(&files);
    for r in &mut records {
        r.truth = record.families.get(&r.file_id).cloned();
    }
    let (mut truth, mut predicted) = (Vec::new(), Vec::new());
    let mut excluded = BTreeMap::new();
    for r in &records {
        match (&r.predicted, &r.truth) {
            (Some(p), Some(t)) => {
                truth.push(t.clone());
                predicted.push(p.clone());
            }
            _ => {
                excluded.insert(r.file_id.clone(), r.error.clone().unwrap_or_default());
            }
        }
    }
    let mut report =
        EvaluationReport::from_predictions(&truth, &predicted, &predictor.classifier.classes)?;
    report.metadata.seed = Some(cfg.seed);
    report.metadata.config_hash = Some(cfg.hash());
    report.metadata.excluded = excluded;
    report
        .metadata
        .timings
        .insert("evaluate".into(), started.elapsed().as_secs_f64());
    write_predictions(&records, &cfg.paths.report_dir.join("predictions.jsonl"))?;
    super::metrics::emit_report(&report, &cfg.paths.report_dir)?;
    Ok(report)
}
