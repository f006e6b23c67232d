use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cgfam::asm::{ingest_listing, write_jsonl};
use cgfam::callgraph::{build_call_graph, disambiguate_names};
use cgfam::pipeline::synth::{
    benchmark_spec, generate_synthetic_corpus, write_corpus, SyntheticCorpusSpec,
};
use cgfam::pipeline::{
    emit_report, evaluate, run_stage, run_training, write_predictions, EvaluationReport,
    PipelineConfig, Predictor, Stage,
};

/// Classify programs into families from their disassembly call graphs.
#[derive(Parser, Debug)]
#[command(name = "cgfam", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON pipeline configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-file and per-pair work.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides `paths.corpus_dir`.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Overrides `paths.model_dir`.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Overrides `paths.report_dir`.
    #[arg(long, global = true)]
    report_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse one listing; print its functions as JSON lines.
    Ingest {
        listing: PathBuf,
        /// Write function records here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the call graph as JSON.
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Write a synthetic labeled corpus.
    SynthGen {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        families: usize,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        /// Full generator spec as JSON; replaces --families/--samples.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Run every training stage.
    Train,
    /// Split, ingest, build the vocabulary and train the autoencoder.
    TrainAutoencoder,
    /// Embed every training function.
    Embed,
    /// Fit k-means and relabel training graphs.
    Cluster,
    /// WL features, label dictionary and kernel matrix.
    GraphFeatures,
    /// Grid search and one-vs-all training.
    TrainClassifier,
    /// Classify listings with a trained model.
    Predict {
        #[arg(required = true)]
        listings: Vec<PathBuf>,
        /// Write JSON lines here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify the held-out test split and write reports.
    Evaluate,
    /// Re-render the table and confusion plot of a saved report.
    Report {
        /// Defaults to `<report dir>/report.json`.
        report: Option<PathBuf>,
        /// Also rewrite the report files into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(p) = &g.corpus {
        cfg.paths.corpus_dir = p.clone();
    }
    if let Some(p) = &g.model {
        cfg.paths.model_dir = p.clone();
    }
    if let Some(p) = &g.report_dir {
        cfg.paths.report_dir = p.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => Ok(std::io::stdout().lock().write_all(bytes)?),
    }
}

fn file_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn stages(cfg: &PipelineConfig, list: &[Stage]) -> Result<()> {
    for &s in list {
        let t = std::time::Instant::now();
        run_stage(cfg, s)?;
        eprintln!("{s}: {:.2}s", t.elapsed().as_secs_f64());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.jobs {
        if n == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.command {
        Command::Ingest {
            listing,
            out,
            graph,
        } => {
            let text = cgfam::pipeline::read_listing(&listing)?;
            let id = file_id(&listing);
            let mut ex = ingest_listing(&id, &text)?;
            disambiguate_names(&mut ex.functions);
            for w in &ex.warnings {
                eprintln!("warning: {w:?}");
            }
            if ex.indirect_calls > 0 {
                eprintln!("{} indirect calls without an edge", ex.indirect_calls);
            }
            output(out.as_deref(), write_jsonl(&ex.functions).as_bytes())?;
            if let Some(p) = graph {
                let g = build_call_graph(&ex.functions, &id);
                std::fs::write(&p, g.to_canonical_json())
                    .with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::SynthGen {
            out,
            families,
            samples,
            spec,
        } => {
            let spec: SyntheticCorpusSpec = match spec {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => benchmark_spec(families, samples),
            };
            let seed = cli.global.seed.unwrap_or(0);
            let files = generate_synthetic_corpus(&spec, seed)?;
            write_corpus(&files, &out)?;
            eprintln!("wrote {} listings to {}", files.len(), out.display());
        }
        Command::Train => {
            let cfg = load_config(&cli.global)?;
            let s = run_training(&cfg)?;
            for (stage, secs) in &s.timings {
                eprintln!("{stage}: {secs:.2}s");
            }
            for (id, why) in &s.excluded {
                eprintln!("excluded {id}: {why}");
            }
            eprintln!("trained on {} files, C = {}", s.train_files, s.best_c);
        }
        Command::TrainAutoencoder => stages(
            &load_config(&cli.global)?,
            &[
                Stage::Split,
                Stage::Ingest,
                Stage::Vocab,
                Stage::Autoencoder,
            ],
        )?,
        Command::Embed => stages(&load_config(&cli.global)?, &[Stage::Embed])?,
        Command::Cluster => stages(&load_config(&cli.global)?, &[Stage::Cluster])?,
        Command::GraphFeatures => stages(&load_config(&cli.global)?, &[Stage::Features])?,
        Command::TrainClassifier => stages(&load_config(&cli.global)?, &[Stage::Classifier])?,
        Command::Predict { listings, out } => {
            let model_dir = match (&cli.global.model, &cli.global.config) {
                (Some(m), _) => m.clone(),
                (None, _) => load_config(&cli.global)?.paths.model_dir,
            };
            let predictor = Predictor::load(&model_dir)?;
            let files: Vec<(String, PathBuf)> =
                listings.iter().map(|p| (file_id(p), p.clone())).collect();
            let records = predictor.predict_files(&files);
            let failed = records.iter().filter(|r| r.error.is_some()).count();
            match out {
                Some(p) => write_predictions(&records, &p)?,
                None => {
                    let mut stdout = std::io::stdout().lock();
                    for r in &records {
                        writeln!(stdout, "{}", serde_json::to_string(r)?)?;
                    }
                }
            }
            if failed > 0 {
                eprintln!(
                    "{failed} of {} files could not be classified",
                    records.len()
                );
            }
        }
        Command::Evaluate => {
            let cfg = load_config(&cli.global)?;
            let report = evaluate(&cfg)?;
            print!("{}", report.format_table());
            eprintln!("reports written to {}", cfg.paths.report_dir.display());
        }
        Command::Report { report, out } => {
            let path = match report {
                Some(p) => p,
                None => load_config(&cli.global)?
                    .paths
                    .report_dir
                    .join("report.json"),
            };
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            let report = EvaluationReport::from_json(&text)?;
            print!("{}", report.format_table());
            if let Some(dir) = out {
                emit_report(&report, &dir)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let mut source = e.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
