//! `essay-score` command-line front end.
//!
//! Every subcommand writes its artifacts into the output directory and returns
//! a short summary. Failures carry the name of the stage that failed.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bow::{self, FrequencyTable, PreprocessConfig, StemmerKind, StopwordLanguage};
use crate::corpus::{self, Corpus, CorpusFormat};
use crate::error::{Error, Result};
use crate::logreg::{self, LogRegModel};
use crate::metrics::{self, ConfusionMatrix, Measure, NamedMetrics};
use crate::transformer::{self, checkpoint, TransformerConfig};
use crate::triage::{self, Digest, TriageItem, TriageReport};
use crate::wordpiece::{self, Vocabulary};

pub use config::{ModelKind, RunConfig};

#[derive(Debug, thiserror::Error)]
#[error("{stage} failed: {source}")]
pub struct CliError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

trait StageExt<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, CliError>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, CliError> {
        self.map_err(|source| CliError { stage, source })
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "essay-score", version, about = "Train, evaluate and triage essay classifiers")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus statistics (stats.json).
    Stats {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Seeded train/test split (split.train.csv, split.test.csv).
    Split {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        test_fraction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Synthetic labeled corpus (corpus.csv).
    Synth {
        #[arg(long)]
        n_docs: Option<usize>,
        #[arg(long)]
        impolite_fraction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Subword vocabulary from a corpus (vocab.txt).
    BuildVocab {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        vocab_size: Option<usize>,
    },
    /// Train a model (model.json for bow, model.bin and train_log.csv for transformer).
    Train(TrainArgs),
    /// Metrics report (eval.txt, eval.json) from a model, predictions or confusion matrices.
    Eval(EvalArgs),
    /// Confidence-threshold triage (triage.json, triage.txt, review_queue.csv).
    Triage {
        /// Predictions CSV as written by `eval`.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        /// Corpus the predictions refer to, used for the review queue text reference.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Merge eval.json files into one comparison table (report.txt, report.json).
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Training corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Existing vocabulary for the transformer; built from the corpus otherwise.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub stopwords: Option<StopwordLanguage>,
    #[arg(long, value_enum)]
    pub stemmer: Option<StemmerKind>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained model: model.json (bow) or model.bin (transformer).
    #[arg(long, conflicts_with_all = ["predictions", "confusion"], requires = "corpus")]
    pub model: Option<PathBuf>,
    /// Labeled test corpus for `--model`.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Predictions CSV with human labels.
    #[arg(long, conflicts_with = "confusion")]
    pub predictions: Option<PathBuf>,
    /// JSON list of `{"model": name, "matrix": [[tn, fp], [fn, tp]]}`.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    /// Row name in the report.
    #[arg(long)]
    pub name: Option<String>,
}

/// Stored bag-of-words classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowModelFile {
    pub preprocess: PreprocessConfig,
    pub freqs: FrequencyTable,
    pub logreg: LogRegModel,
}

impl BowModelFile {
    pub fn predict(&self, corpus: &Corpus) -> Result<Vec<PredictionRecord>> {
        let x = bow::feature_matrix(corpus, &self.freqs, &self.preprocess);
        let probs = logreg::predict_proba(&self.logreg, &x)?;
        let labels = logreg::predict(&self.logreg, &x)?;
        Ok(corpus
            .documents()
            .iter()
            .zip(probs.into_iter().zip(labels))
            .map(|(d, (p, l))| PredictionRecord {
                id: d.id.clone(),
                label: Some(d.label),
                predicted: l,
                p_polite: p,
            })
            .collect())
    }
}

/// One row of predictions.csv. `label` is the human label when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub label: Option<u8>,
    pub predicted: u8,
    pub p_polite: f64,
}

impl PredictionRecord {
    pub fn triage_item(&self) -> TriageItem {
        TriageItem {
            id: self.id.clone(),
            predicted: self.predicted,
            probability: self.p_polite.max(1.0 - self.p_polite),
            human: self.label,
        }
    }
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        let rec: PredictionRecord = rec?;
        if rec.predicted > 1 || rec.label.is_some_and(|l| l > 1) || !(0.0..=1.0).contains(&rec.p_polite) {
            return Err(Error::Value {
                row: i + 1,
                message: "labels must be 0/1 and p_polite in [0, 1]".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionInput {
    pub model: String,
    pub matrix: [[u64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageOutput {
    pub report: TriageReport,
    pub digest: Option<Digest>,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn require(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::InvalidArgument(format!("missing {what} path")))
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    corpus::load_corpus(path, CorpusFormat::from_path(path))
}

/// Runs the selected subcommand and returns its one-paragraph summary.
pub fn run(cli: Cli) -> CliResult<String> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).stage("config")?,
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.paths.out = Some(out);
    }
    let out = cfg.out_dir();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e)).stage("output directory")?;

    match cli.command {
        Command::Stats { corpus } => {
            let path = require(corpus.or(cfg.paths.corpus), "corpus").stage("stats")?;
            let corpus = load_corpus(&path).stage("load corpus")?;
            let stats = corpus::corpus_stats(&corpus).stage("stats")?;
            write_file(&out.join("stats.json"), to_json(&stats).stage("stats")?).stage("write stats")?;
            Ok(format!(
                "{} documents: {} impolite, {} polite; {:.1} words on average (sd {:.1})",
                stats.n_docs, stats.class_counts[&0], stats.class_counts[&1], stats.mean_words, stats.sd_words
            ))
        }
        Command::Split {
            corpus,
            test_fraction,
            seed,
        } => {
            let path = require(corpus.or(cfg.paths.corpus), "corpus").stage("split")?;
            let corpus = load_corpus(&path).stage("load corpus")?;
            let mut spec = cfg.split;
            spec.test_fraction = test_fraction.unwrap_or(spec.test_fraction);
            spec.seed = seed.unwrap_or(spec.seed);
            let (train, test) = corpus::split(&corpus, &spec).stage("split")?;
            corpus::write_corpus(&train, &out.join("split.train.csv"), CorpusFormat::Csv).stage("write split")?;
            corpus::write_corpus(&test, &out.join("split.test.csv"), CorpusFormat::Csv).stage("write split")?;
            Ok(format!("{} train / {} test (seed {})", train.len(), test.len(), spec.seed))
        }
        Command::Synth {
            n_docs,
            impolite_fraction,
            seed,
        } => {
            let s = cfg.synth;
            let corpus = corpus::generate_synthetic(
                n_docs.unwrap_or(s.n_docs),
                impolite_fraction.unwrap_or(s.impolite_fraction),
                seed.unwrap_or(s.seed),
            )
            .stage("synth")?;
            corpus::write_corpus(&corpus, &out.join("corpus.csv"), CorpusFormat::Csv).stage("write corpus")?;
            let counts = corpus.class_counts();
            Ok(format!("{} documents ({} impolite, {} polite)", corpus.len(), counts[0], counts[1]))
        }
        Command::BuildVocab { corpus, vocab_size } => {
            let path = require(corpus.or(cfg.paths.corpus), "corpus").stage("build-vocab")?;
            let corpus = load_corpus(&path).stage("load corpus")?;
            let size = vocab_size.unwrap_or(cfg.transformer.vocab_size);
            let vocab = wordpiece::build_vocab(&corpus, size, cfg.transformer.lowercase).stage("build-vocab")?;
            vocab.save(&out.join("vocab.txt")).stage("write vocab")?;
            Ok(format!("vocabulary of {} tokens", vocab.len()))
        }
        Command::Train(args) => train(args, cfg, &out),
        Command::Eval(args) => eval(args, cfg, &out),
        Command::Triage {
            predictions,
            tau,
            corpus,
        } => {
            let records = read_predictions(&predictions).stage("load predictions")?;
            let items: Vec<TriageItem> = records.iter().map(PredictionRecord::triage_item).collect();
            let report = triage::run_triage(&items, tau.unwrap_or(cfg.triage.tau)).stage("triage")?;
            let has_labels = items.iter().any(|i| i.human.is_some());
            let digest = if has_labels {
                Some(triage::disagreement_digest(&report).stage("triage digest")?)
            } else {
                None
            };
            let mut text = report.summary() + "\n";
            if let Some(d) = &digest {
                text.push('\n');
                text.push_str(&d.render_text());
            }
            let doc_ref = corpus.or(cfg.paths.corpus).map(|p| p.display().to_string());
            triage::write_review_queue(&out.join("review_queue.csv"), &report, |id| match &doc_ref {
                Some(p) => format!("{p}#{id}"),
                None => id.to_string(),
            })
            .stage("write review queue")?;
            let summary = report.summary();
            let output = TriageOutput { report, digest };
            write_file(&out.join("triage.json"), to_json(&output).stage("triage")?).stage("write triage")?;
            write_file(&out.join("triage.txt"), text).stage("write triage")?;
            Ok(summary)
        }
        Command::Report { inputs } => {
            let mut rows = Vec::new();
            for path in &inputs {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e)).stage("load eval")?;
                let part: Vec<NamedMetrics> = serde_json::from_str(&text).map_err(Error::from).stage("load eval")?;
                rows.extend(part);
            }
            let report = metrics::render_report(&rows).stage("report")?;
            write_file(&out.join("report.txt"), &report.text).stage("write report")?;
            write_file(&out.join("report.json"), &report.json).stage("write report")?;
            Ok(report.text.trim_end().to_string())
        }
    }
}

fn train(args: TrainArgs, mut cfg: RunConfig, out: &Path) -> CliResult<String> {
    let kind = args.model.unwrap_or(cfg.model);
    let path = require(args.corpus.or(cfg.paths.corpus.clone()), "corpus").stage("train")?;
    let corpus = load_corpus(&path).stage("load corpus")?;
    let labels = corpus.labels();
    let mut summary = String::new();

    if matches!(kind, ModelKind::Bow | ModelKind::Both) {
        let language = args.stopwords.unwrap_or(cfg.preprocess.stopwords);
        let mut preprocess = PreprocessConfig::for_language(language);
        preprocess.stemmer = args.stemmer.unwrap_or(cfg.preprocess.stemmer);
        preprocess.lowercase = cfg.preprocess.lowercase;
        let mut hyper = cfg.logreg;
        hyper.l2_lambda = args.l2.unwrap_or(hyper.l2_lambda);
        let freqs = bow::build_freqs(&corpus, &preprocess);
        let x = bow::feature_matrix(&corpus, &freqs, &preprocess);
        let weights = logreg::balanced_class_weights(&labels).stage("train bow")?;
        let model = logreg::train(&x, &labels, weights, hyper).stage("train bow")?;
        let file = BowModelFile {
            preprocess,
            freqs,
            logreg: model,
        };
        let train_acc = accuracy(&file.predict(&corpus).stage("train bow")?);
        write_file(&out.join("model.json"), to_json(&file).stage("train bow")?).stage("write model")?;
        let _ = writeln!(summary, "bow: training accuracy {train_acc:.4}");
    }

    if matches!(kind, ModelKind::Transformer | ModelKind::Both) {
        let vocab = match args.vocab.or(cfg.paths.vocab.clone()) {
            Some(p) => Vocabulary::load(&p).stage("load vocab")?,
            None => {
                let t = &cfg.transformer;
                let v = wordpiece::build_vocab(&corpus, t.vocab_size, t.lowercase).stage("build-vocab")?;
                v.save(&out.join("vocab.txt")).stage("write vocab")?;
                v
            }
        };
        let t = &mut cfg.transformer;
        t.max_len = args.max_len.unwrap_or(t.max_len);
        let model_cfg = TransformerConfig {
            vocab_size: vocab.len(),
            max_len: t.max_len,
            d_model: t.d_model,
            n_heads: t.n_heads,
            n_layers: t.n_layers,
            d_ff: t.d_ff,
            n_labels: 2,
            dropout_rate: t.dropout_rate,
        };
        let mut train_cfg = cfg.train;
        train_cfg.num_epochs = args.epochs.unwrap_or(train_cfg.num_epochs);
        train_cfg.batch_size = args.batch_size.unwrap_or(train_cfg.batch_size);
        train_cfg.lr_init = args.lr.unwrap_or(train_cfg.lr_init);
        train_cfg.seed = args.seed.unwrap_or(train_cfg.seed);
        let encodings = encode_all(&corpus, &vocab, model_cfg.max_len).stage("encode")?;
        let weights = transformer::ratio_class_weights(&labels).stage("train transformer")?;
        let (params, log) =
            transformer::train(&encodings, &labels, &model_cfg, &train_cfg, &weights).stage("train transformer")?;
        checkpoint::save(&out.join("model.bin"), &params, &vocab).stage("write model")?;
        log.write_csv(&out.join("train_log.csv")).stage("write train log")?;
        let preds = transformer_records(&params, &corpus, &encodings).stage("train transformer")?;
        let tail = &log.entries[log.entries.len().saturating_sub(50)..];
        let _ = writeln!(
            summary,
            "transformer: {} steps, final loss {:.4}, training accuracy {:.4}",
            log.entries.len(),
            transformer::TrainLog::mean_loss(tail),
            accuracy(&preds)
        );
    }
    Ok(summary.trim_end().to_string())
}

fn accuracy(records: &[PredictionRecord]) -> f64 {
    let hits = records.iter().filter(|r| r.label == Some(r.predicted)).count();
    hits as f64 / records.len().max(1) as f64
}

fn encode_all(corpus: &Corpus, vocab: &Vocabulary, max_len: usize) -> Result<Vec<wordpiece::Encoding>> {
    corpus
        .texts()
        .iter()
        .map(|t| wordpiece::encode_padded(t, vocab, max_len))
        .collect()
}

fn transformer_records(
    params: &transformer::TransformerParams,
    corpus: &Corpus,
    encodings: &[wordpiece::Encoding],
) -> Result<Vec<PredictionRecord>> {
    let preds = transformer::predict(params, encodings)?;
    Ok(corpus
        .documents()
        .iter()
        .zip(preds)
        .map(|(d, p)| PredictionRecord {
            id: d.id.clone(),
            label: Some(d.label),
            predicted: p.label,
            p_polite: p.probabilities[1],
        })
        .collect())
}

fn eval(args: EvalArgs, cfg: RunConfig, out: &Path) -> CliResult<String> {
    // (row, confusion matrix, probability AUC when scores are available)
    let mut rows: Vec<(NamedMetrics, ConfusionMatrix, Option<f64>)> = Vec::new();

    if let Some(path) = &args.confusion {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e)).stage("load confusion")?;
        let inputs: Vec<ConfusionInput> = serde_json::from_str(&text).map_err(Error::from).stage("load confusion")?;
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("no confusion matrices".into())).stage("load confusion");
        }
        for input in inputs {
            let cm = ConfusionMatrix::new(input.matrix).stage("eval")?;
            let row = metrics::metrics_from_confusion(&cm).stage("eval")?;
            rows.push((NamedMetrics::new(input.model, row), cm, None));
        }
    } else {
        let (records, default_name) = if let Some(model) = args.model.or(cfg.paths.model.clone()) {
            let path = require(args.corpus.or(cfg.paths.corpus.clone()), "test corpus").stage("eval")?;
            let corpus = load_corpus(&path).stage("load corpus")?;
            let (records, name) = if model.extension().is_some_and(|e| e == "bin") {
                let (params, vocab) = checkpoint::load(&model).stage("load model")?;
                let enc = encode_all(&corpus, &vocab, params.config.max_len).stage("encode")?;
                (transformer_records(&params, &corpus, &enc).stage("predict")?, "Transformer")
            } else {
                let text = fs::read_to_string(&model).map_err(|e| Error::io(&model, e)).stage("load model")?;
                let file: BowModelFile = serde_json::from_str(&text).map_err(Error::from).stage("load model")?;
                (file.predict(&corpus).stage("predict")?, "Logistic Regression")
            };
            write_predictions(&out.join("predictions.csv"), &records).stage("write predictions")?;
            (records, name)
        } else if let Some(path) = &args.predictions {
            (read_predictions(path).stage("load predictions")?, "Predictions")
        } else {
            return Err(Error::InvalidArgument("eval needs --model, --predictions or --confusion".into()))
                .stage("eval");
        };
        let truth: Vec<u8> = records
            .iter()
            .map(|r| r.label)
            .collect::<Option<Vec<u8>>>()
            .ok_or_else(|| Error::InvalidArgument("every prediction needs a human label".into()))
            .stage("eval")?;
        let predicted: Vec<u8> = records.iter().map(|r| r.predicted).collect();
        let scores: Vec<f64> = records.iter().map(|r| r.p_polite).collect();
        let cm = metrics::confusion(&truth, &predicted).stage("eval")?;
        let row = metrics::metrics_from_confusion(&cm).stage("eval")?;
        let auc = metrics::prob_auc(&truth, &scores).ok();
        let name = args.name.clone().unwrap_or_else(|| default_name.to_string());
        rows.push((NamedMetrics::new(name, row), cm, auc));
    }

    let named: Vec<NamedMetrics> = rows.iter().map(|r| r.0.clone()).collect();
    let report = metrics::render_report(&named).stage("eval")?;
    let mut text = report.text.clone();
    for (row, cm, auc) in &rows {
        text.push('\n');
        text.push_str(&metrics::render_confusion(row.display_name(), cm));
        if let Some(k) = row.row.kappa {
            let _ = writeln!(text, "kappa {}: {}", metrics::format_score(Some(k)), band(Measure::Kappa, k));
        }
        if let Some(a) = row.row.roc_auc_labels {
            let _ = writeln!(text, "roc auc (labels) {}: {}", metrics::format_score(Some(a)), band(Measure::Auc, a));
        }
        if let Some(a) = auc {
            let _ = writeln!(text, "roc auc (probabilities) {}: {}", metrics::format_score(Some(*a)), band(Measure::Auc, *a));
        }
        if !row.undefined_flags.is_empty() {
            let _ = writeln!(text, "undefined: {}", row.undefined_flags.join(", "));
        }
    }
    write_file(&out.join("eval.txt"), &text).stage("write eval")?;
    write_file(&out.join("eval.json"), &report.json).stage("write eval")?;
    Ok(report.text.trim_end().to_string())
}

fn band(measure: Measure, value: f64) -> String {
    metrics::interpret(measure, value).map_or_else(|_| "out of range".to_string(), |b| b.to_string())
}
