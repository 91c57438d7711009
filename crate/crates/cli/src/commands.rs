use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use emograph::corpus::{build_corpus, encode_records, read_records, Example, RecordFile};
use emograph::emograph::EmotionGraph;
use emograph::eval::kfold_split;
use emograph::model::{Classifier, Mode, ModelError};

use crate::config::RunConfig;
use crate::error::ConfigError;
use crate::pipeline::{self, label_difference, Encoded, write_json, write_jsonl};

pub const DEFAULT_OUT: &str = "emograph-out";

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

fn write_manifest(dir: &Path, command: &str, config: &serde_json::Value, outputs: &[&str]) -> Result<()> {
    let manifest = json!({
        "tool": "emograph",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "outputs": outputs,
    });
    write_json(&dir.join("manifest.json"), &manifest)
}

fn config_value(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn degree_summary(graph: &EmotionGraph, positives: &[u64]) -> String {
    let width = graph.labels.names().iter().map(String::len).max().unwrap_or(5).max(7);
    let mut out = format!("{:<width$}  {:>9}  {:>4}  {:>3}\n", "emotion", "positives", "out", "in");
    for (i, (o, n)) in graph.degrees().into_iter().enumerate() {
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>4}  {:>3}", graph.labels.name(i), positives[i], o, n);
    }
    let _ = write!(out, "{} edges (mu = {}, w = {})", graph.edges().len(), graph.mu, graph.w);
    out
}

fn write_graph(dir: &Path, graph: &EmotionGraph) -> Result<()> {
    fs::write(dir.join("graph.json"), graph.to_json() + "\n").context("cannot write graph.json")?;
    fs::write(dir.join("graph.dot"), graph.to_dot()).context("cannot write graph.dot")?;
    Ok(())
}

pub fn build_graph(cfg: &RunConfig) -> Result<()> {
    cfg.validate(true)?;
    let data = pipeline::load_data(cfg)?;
    let enc = pipeline::encode(&data)?;
    let graph = pipeline::graph_for(cfg, &data.labels, &enc.train, enc.val.as_deref())?;
    let dir = out_dir(cfg)?;
    write_graph(&dir, &graph)?;
    write_manifest(&dir, "build-graph", &config_value(cfg), &["graph.json", "graph.dot"])?;

    let mut counted = enc.train.clone();
    if cfg.graph.use_val {
        counted.extend(enc.val.unwrap_or_default());
    }
    let positives: Vec<u64> =
        (0..data.labels.len()).map(|i| counted.iter().filter(|e| e.labels[i]).count() as u64).collect();
    println!("{}", degree_summary(&graph, &positives));
    Ok(())
}

/// Metrics of one finished training run, as printed and stored.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub split: &'static str,
    pub accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

/// Trains per the config and writes checkpoint, log and report into `dir`.
/// Returns the headline metrics on the first available of test, val, train.
pub fn train_into(cfg: &RunConfig, dir: &Path, quiet: bool) -> Result<RunSummary> {
    let data = pipeline::load_data(cfg)?;
    let enc = pipeline::encode(&data)?;
    let mode = pipeline::resolve_mode(&cfg.mode, &data.labels, &data.options)?;
    let graph = pipeline::graph_for(cfg, &data.labels, &enc.train, enc.val.as_deref())?;
    let config = pipeline::model_config(cfg, mode.clone());
    let model = Classifier::new(config, data.labels.clone(), enc.vocab.clone(), graph.clone(), data.options.clone(), cfg.seed)?;
    // The graph above saw every example; single-label training only sees
    // the ones it can score.
    let enc = match &mode {
        Mode::Multilabel => enc,
        Mode::Singlelabel { kept } => {
            let only = |x: &[Example], split| pipeline::single_kept_only(x, kept, split);
            Encoded {
                train: only(&enc.train, "train")?,
                val: enc.val.as_deref().map(|v| only(v, "val")).transpose()?,
                test: enc.test.as_deref().map(|t| only(t, "test")).transpose()?,
                vocab: enc.vocab,
            }
        }
    };
    let trained = pipeline::fit(cfg, model, &enc.train, enc.val.as_deref(), cfg.seed)?;
    trained.model.save(&dir.join("model.ckpt"))?;
    write_jsonl(&dir.join("train_log.jsonl"), &trained.log)?;
    write_graph(dir, &graph)?;

    let (split, examples) = match (&enc.test, &enc.val) {
        (Some(t), _) => ("test", t),
        (None, Some(v)) => ("val", v),
        _ => ("train", &enc.train),
    };
    let kept = match &mode {
        Mode::Multilabel => None,
        Mode::Singlelabel { kept } => Some(kept.as_slice()),
    };
    let report = pipeline::report(&trained.model, kept, examples, cfg.optim.threshold, cfg.eval.min_support)?;
    write_json(&dir.join("report.json"), &json!({ "split": split, "report": report.to_json() }))?;
    write_manifest(
        dir,
        "train",
        &config_value(cfg),
        &["model.ckpt", "train_log.jsonl", "graph.json", "graph.dot", "report.json"],
    )?;
    if !quiet {
        println!("best epoch {} of {}; {split} split:", trained.best_epoch, trained.log.len());
        println!("{}", report.to_table());
    }
    let (accuracy, micro_f1, macro_f1) = report.headline();
    Ok(RunSummary { split, accuracy, micro_f1, macro_f1 })
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    cfg.validate(true)?;
    let dir = out_dir(cfg)?;
    match cfg.eval.folds {
        Some(k) => cross_validate(cfg, &dir, k),
        None => train_into(cfg, &dir, false).map(|_| ()),
    }
}

#[derive(Debug, Serialize)]
struct FoldResult {
    fold: usize,
    best_epoch: usize,
    report: serde_json::Value,
    accuracy: f64,
    micro_f1: f64,
    macro_f1: f64,
}

/// k-fold cross-validation over the training corpus. Each fold gets its own
/// vocabulary, graph (unless a prebuilt one is configured) and model.
fn cross_validate(cfg: &RunConfig, dir: &Path, k: usize) -> Result<()> {
    let data = pipeline::load_data(cfg)?;
    let mode = pipeline::resolve_mode(&cfg.mode, &data.labels, &data.options)?;
    let records = &data.train_file.records;
    let folds = kfold_split(records.len(), k, cfg.seed)?;
    let subset = |idx: &[usize]| RecordFile {
        path: data.train_file.path.clone(),
        records: idx.iter().map(|&i| records[i].clone()).collect(),
    };
    let kept = match &mode {
        Mode::Multilabel => None,
        Mode::Singlelabel { kept } => Some(kept.clone()),
    };
    let mut results = Vec::with_capacity(k);
    for (fold, (train_idx, test_idx)) in folds.iter().enumerate() {
        let corpus = build_corpus(&subset(train_idx), Some(&data.labels), &data.options)?;
        let test = encode_records(&subset(test_idx), &data.labels, &corpus.vocab, &data.options)?;
        let graph = pipeline::graph_for(cfg, &data.labels, &corpus.examples, None)?;
        let seed = cfg.seed.wrapping_add(fold as u64);
        let config = pipeline::model_config(cfg, mode.clone());
        let model = Classifier::new(config, data.labels.clone(), corpus.vocab, graph, data.options.clone(), seed)?;
        let (train_set, test) = match &kept {
            None => (corpus.examples, test),
            Some(kept) => (
                pipeline::single_kept_only(&corpus.examples, kept, "train")?,
                pipeline::single_kept_only(&test, kept, "test")?,
            ),
        };
        let trained = pipeline::fit(cfg, model, &train_set, None, seed)?;
        let report =
            pipeline::report(&trained.model, kept.as_deref(), &test, cfg.optim.threshold, cfg.eval.min_support)?;
        let (accuracy, micro_f1, macro_f1) = report.headline();
        log::info!("fold {}/{k}: accuracy {accuracy:.4}", fold + 1);
        println!("fold {}:\n{}", fold + 1, report.to_table());
        results.push(FoldResult { fold: fold + 1, best_epoch: trained.best_epoch, report: report.to_json(), accuracy, micro_f1, macro_f1 });
    }
    let mean = |f: fn(&FoldResult) -> f64| results.iter().map(f).sum::<f64>() / results.len() as f64;
    let summary = json!({
        "folds": results,
        "mean_accuracy": mean(|r| r.accuracy),
        "mean_micro_f1": mean(|r| r.micro_f1),
        "mean_macro_f1": mean(|r| r.macro_f1),
    });
    println!("mean accuracy over {k} folds: {:.4}", mean(|r| r.accuracy));
    write_json(&dir.join("cv.json"), &summary)?;
    write_manifest(dir, "train", &config_value(cfg), &["cv.json"])
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub corpus: &'a Path,
    pub kept: Option<Vec<String>>,
    pub threshold: f64,
    pub min_support: usize,
    pub out: Option<&'a Path>,
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let model = Classifier::load(args.checkpoint)?;
    let file = read_records(args.corpus)?;
    let unknown: std::collections::BTreeSet<&String> = file
        .records
        .iter()
        .flat_map(|(_, r)| &r.labels)
        .filter(|l| model.labels.resolve(l, &model.corpus.aliases).is_none())
        .collect();
    if !unknown.is_empty() {
        let corpus_labels: Vec<String> = unknown.iter().map(|s| s.to_string()).collect();
        bail!(ConfigError(label_difference("the corpus", &corpus_labels, model.labels.names())));
    }
    let mut examples = encode_records(&file, &model.labels, &model.vocab, &model.corpus)?;
    let kept = match (&args.kept, model.kept()) {
        (Some(names), _) => Some(pipeline::resolve_kept(names, &model.labels, &model.corpus)?),
        (None, Some(k)) => Some(k.to_vec()),
        (None, None) => None,
    };
    if let Some(kept) = &kept {
        let before = examples.len();
        examples.retain(|e| kept.iter().filter(|&&k| e.labels[k]).count() == 1);
        if examples.len() < before {
            println!("skipped {} examples without exactly one kept label", before - examples.len());
        }
        if examples.is_empty() {
            bail!("no examples with exactly one kept label");
        }
    }
    let report = pipeline::report(&model, kept.as_deref(), &examples, args.threshold, args.min_support)?;
    println!("{}", report.to_table());
    if let Some(dir) = args.out {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        write_json(&dir.join("report.json"), &report.to_json())?;
        let resolved = json!({
            "checkpoint": args.checkpoint,
            "corpus": args.corpus,
            "kept": args.kept,
            "threshold": args.threshold,
            "min_support": args.min_support,
        });
        write_manifest(dir, "eval", &resolved, &["report.json"])?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Mu,
    W,
}

/// One CSV row; metrics are empty when the run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub accuracy: Option<f64>,
    pub micro_f1: Option<f64>,
    pub macro_f1: Option<f64>,
    pub error: Option<String>,
}

pub fn sweep(cfg: &RunConfig, param: SweepParam, values: &[f64], jobs: usize) -> Result<()> {
    if values.len() < 2 {
        bail!(ConfigError("a sweep needs at least 2 values".into()));
    }
    if jobs == 0 {
        bail!(ConfigError("--jobs must be at least 1".into()));
    }
    cfg.validate(true)?;
    let runs: Vec<RunConfig> = values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            match param {
                SweepParam::Mu => c.graph.mu = v,
                SweepParam::W => c.graph.w = v,
            }
            c
        })
        .collect();
    // Out-of-domain values fail here, before anything is trained.
    for run in &runs {
        run.validate(true)?;
    }
    let dir = out_dir(cfg)?;
    let name = match param {
        SweepParam::Mu => "mu",
        SweepParam::W => "w",
    };
    let rows: Mutex<Vec<Option<SweepRow>>> = Mutex::new(vec![None; values.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.min(values.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= runs.len() {
                    break;
                }
                let value = values[i];
                let run_dir = dir.join(format!("{name}-{value}"));
                let outcome = fs::create_dir_all(&run_dir)
                    .map_err(anyhow::Error::from)
                    .and_then(|_| train_into(&runs[i], &run_dir, true));
                let row = match outcome {
                    Ok(sum) => {
                        log::info!("{name} = {value}: accuracy {:.4}", sum.accuracy);
                        SweepRow { value, accuracy: Some(sum.accuracy), micro_f1: Some(sum.micro_f1), macro_f1: Some(sum.macro_f1), error: None }
                    }
                    Err(e) => {
                        log::error!("{name} = {value}: {e:#}");
                        SweepRow { value, accuracy: None, micro_f1: None, macro_f1: None, error: Some(format!("{e:#}")) }
                    }
                };
                rows.lock().expect("no panics while holding the lock")[i] = Some(row);
            });
        }
    });
    let rows: Vec<SweepRow> = rows.into_inner().expect("workers finished").into_iter().flatten().collect();
    let csv_path = dir.join("sweep.csv");
    let mut writer = csv::Writer::from_path(&csv_path).with_context(|| format!("cannot write {}", csv_path.display()))?;
    for row in &rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    let mut resolved = config_value(cfg);
    resolved["sweep"] = json!({ "param": name, "values": values });
    write_manifest(&dir, "sweep", &resolved, &["sweep.csv"])?;
    print!("{}", fs::read_to_string(&csv_path)?);
    Ok(())
}

#[cfg(test)]
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(reader.deserialize().collect::<Result<_, _>>()?)
}

pub enum PredictInput<'a> {
    Texts(&'a [String]),
    File(&'a Path),
    Stdin,
}

fn prediction_line(model: &Classifier, text: &str, threshold: f64) -> Result<String> {
    let value = match model.predict(text, threshold) {
        Ok(pred) => serde_json::to_value(pred)?,
        Err(ModelError::EmptyInput) => json!({ "error": ModelError::EmptyInput.to_string() }),
        Err(e) => return Err(e.into()),
    };
    Ok(serde_json::to_string(&value)?)
}

pub fn predict(checkpoint: &Path, input: PredictInput, threshold: f64, out: Option<&Path>) -> Result<()> {
    if !(0.0..=1.0).contains(&threshold) {
        bail!(ConfigError(format!("threshold {threshold} outside [0, 1]")));
    }
    let model = Classifier::load(checkpoint)?;
    let stdout = io::stdout();
    let mut sink = stdout.lock();
    let mut saved = Vec::new();
    let mut emit = |line: String| -> Result<()> {
        writeln!(sink, "{line}")?;
        if out.is_some() {
            saved.push(line);
        }
        Ok(())
    };
    match input {
        PredictInput::Texts(texts) => {
            for t in texts {
                emit(prediction_line(&model, t, threshold)?)?;
            }
        }
        PredictInput::File(path) => {
            let f = fs::File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
            for line in io::BufReader::new(f).lines() {
                emit(prediction_line(&model, &line?, threshold)?)?;
            }
        }
        PredictInput::Stdin => {
            for line in io::stdin().lock().lines() {
                emit(prediction_line(&model, &line?, threshold)?)?;
            }
        }
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let body: String = saved.iter().map(|l| format!("{l}\n")).collect();
        fs::write(dir.join("predictions.jsonl"), body).context("cannot write predictions.jsonl")?;
        let resolved = json!({ "checkpoint": checkpoint, "threshold": threshold });
        write_manifest(dir, "predict", &resolved, &["predictions.jsonl"])?;
    }
    Ok(())
}

pub fn export_dot(graph_path: &Path, out: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(graph_path).with_context(|| format!("cannot read {}", graph_path.display()))?;
    let graph = EmotionGraph::from_json(&text).with_context(|| format!("in {}", graph_path.display()))?;
    let dot = graph.to_dot();
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
            fs::write(dir.join("graph.dot"), &dot).context("cannot write graph.dot")?;
            write_manifest(dir, "export-dot", &json!({ "graph": graph_path }), &["graph.dot"])?;
        }
        None => print!("{dot}"),
    }
    Ok(())
}
