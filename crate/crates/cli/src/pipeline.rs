//! Corpus → graph → model plumbing shared by the commands.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use emograph::corpus::{
    build_corpus, count_examples, encode_records, label_space_from_records, read_records, CorpusOptions, Example,
    LabelSpace, RecordFile, Vocabulary,
};
use emograph::emograph::EmotionGraph;
use emograph::eval::{EvalReport, SingleLabelReport};
use emograph::model::{train, Classifier, EpochLog, Mode, ModelConfig};

use crate::config::{ModeConfig, RunConfig};
use crate::error::ConfigError;

/// Everything loaded from disk for one run.
pub struct Data {
    pub options: CorpusOptions,
    pub labels: LabelSpace,
    pub train_file: RecordFile,
    pub val_file: Option<RecordFile>,
    pub test_file: Option<RecordFile>,
}

pub fn load_data(cfg: &RunConfig) -> Result<Data> {
    let options = cfg.corpus_options()?;
    let train_path = cfg.data.train.as_ref().ok_or_else(|| ConfigError("no training corpus".into()))?;
    let train_file = read_records(train_path)?;
    let val_file = cfg.data.val.as_deref().map(read_records).transpose()?;
    let test_file = cfg.data.test.as_deref().map(read_records).transpose()?;
    let labels = match (&cfg.data.label_file, &cfg.data.label_names) {
        (Some(path), _) => LabelSpace::from_file(path)?,
        (None, Some(names)) => LabelSpace::new(names.iter().cloned())?,
        (None, None) => {
            let mut files = vec![&train_file];
            files.extend(val_file.as_ref());
            label_space_from_records(&files, &options.aliases)?
        }
    };
    Ok(Data { options, labels, train_file, val_file, test_file })
}

/// Examples of every split, encoded against a vocabulary built on the
/// training split only.
pub struct Encoded {
    pub vocab: Vocabulary,
    pub train: Vec<Example>,
    pub val: Option<Vec<Example>>,
    pub test: Option<Vec<Example>>,
}

pub fn encode(data: &Data) -> Result<Encoded> {
    let corpus = build_corpus(&data.train_file, Some(&data.labels), &data.options)?;
    let split = |f: &Option<RecordFile>| -> Result<Option<Vec<Example>>> {
        Ok(match f {
            Some(file) => Some(encode_records(file, &data.labels, &corpus.vocab, &data.options)?),
            None => None,
        })
    };
    Ok(Encoded { val: split(&data.val_file)?, test: split(&data.test_file)?, vocab: corpus.vocab, train: corpus.examples })
}

/// Loads the configured graph, or counts co-occurrence over `train` (and
/// `val` when the config asks for it).
pub fn graph_for(cfg: &RunConfig, labels: &LabelSpace, train: &[Example], val: Option<&[Example]>) -> Result<EmotionGraph> {
    if let Some(path) = &cfg.graph.path {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let graph = EmotionGraph::from_json(&text).with_context(|| format!("in {}", path.display()))?;
        if &graph.labels != labels {
            bail!(ConfigError(label_difference("graph", graph.labels.names(), labels.names())));
        }
        return Ok(graph);
    }
    let mut examples: Vec<Example> = train.to_vec();
    if cfg.graph.use_val {
        if let Some(v) = val {
            examples.extend_from_slice(v);
        }
    }
    let m = count_examples(&examples, labels.len());
    Ok(EmotionGraph::build(&m, labels, cfg.graph.mu, cfg.graph.w)?)
}

/// Describes how two label spaces differ.
pub fn label_difference(what: &str, theirs: &[String], ours: &[String]) -> String {
    let a: BTreeSet<&String> = theirs.iter().collect();
    let b: BTreeSet<&String> = ours.iter().collect();
    let only_theirs: Vec<&&String> = a.difference(&b).collect();
    let only_ours: Vec<&&String> = b.difference(&a).collect();
    if only_theirs.is_empty() && only_ours.is_empty() {
        format!("{what} lists the same labels in a different order: {theirs:?} vs {ours:?}")
    } else {
        format!("label spaces differ: only in {what}: {only_theirs:?}; only in this run: {only_ours:?}")
    }
}

pub fn resolve_mode(mode: &ModeConfig, labels: &LabelSpace, options: &CorpusOptions) -> Result<Mode> {
    Ok(match mode {
        ModeConfig::Multilabel => Mode::Multilabel,
        ModeConfig::Singlelabel { kept } => Mode::Singlelabel { kept: resolve_kept(kept, labels, options)? },
    })
}

pub fn resolve_kept(kept: &[String], labels: &LabelSpace, options: &CorpusOptions) -> Result<Vec<usize>> {
    kept.iter()
        .map(|name| {
            labels.resolve(name, &options.aliases).ok_or_else(|| {
                ConfigError(format!("kept label {name:?} is not in the label space {:?}", labels.names())).into()
            })
        })
        .collect()
}

/// Keeps the examples carrying exactly one kept label, as single-label
/// training and scoring require.
pub fn single_kept_only(examples: &[Example], kept: &[usize], split: &str) -> Result<Vec<Example>> {
    let out: Vec<Example> =
        examples.iter().filter(|e| kept.iter().filter(|&&k| e.labels[k]).count() == 1).cloned().collect();
    if out.len() < examples.len() {
        log::info!("{split}: dropped {} examples without exactly one kept label", examples.len() - out.len());
    }
    if out.is_empty() {
        bail!("{split}: no examples with exactly one kept label");
    }
    Ok(out)
}

pub fn model_config(cfg: &RunConfig, mode: Mode) -> ModelConfig {
    ModelConfig { encoder: cfg.model.encoder.clone(), head: cfg.model.head.clone(), mode }
}

pub struct Trained {
    pub model: Classifier,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

pub fn fit(cfg: &RunConfig, model: Classifier, train_set: &[Example], val: Option<&[Example]>, seed: u64) -> Result<Trained> {
    log::info!(
        "training {} parameters on {} examples ({} labels)",
        model.params.numel(),
        train_set.len(),
        model.labels.len()
    );
    let out = train(model, train_set, val, &cfg.optim, seed)?;
    log::info!("best epoch {} of {}", out.best_epoch, out.log.len());
    Ok(Trained { model: out.model, log: out.log, best_epoch: out.best_epoch })
}

/// Report for a trained model on `examples` under its own mode.
pub enum Report {
    Multi(EvalReport),
    Single { restricted: EvalReport, single: SingleLabelReport },
}

impl Report {
    pub fn headline(&self) -> (f64, f64, f64) {
        let r = match self {
            Report::Multi(r) => r,
            Report::Single { restricted, .. } => restricted,
        };
        (r.jaccard_accuracy, r.micro_f1, r.macro_f1)
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Report::Multi(r) => serde_json::to_value(r).expect("report serializes"),
            Report::Single { restricted, single } => serde_json::json!({ "restricted": restricted, "single_label": single }),
        }
    }

    pub fn to_table(&self) -> String {
        match self {
            Report::Multi(r) => r.to_table(),
            Report::Single { single, .. } => single.to_table(),
        }
    }
}

pub fn report(model: &Classifier, kept: Option<&[usize]>, examples: &[Example], threshold: f64, min_support: usize) -> Result<Report> {
    match kept {
        None => Ok(Report::Multi(model.evaluate(examples, threshold)?)),
        Some(kept) => {
            let mut restricted = model.clone();
            restricted.config.mode = Mode::Singlelabel { kept: kept.to_vec() };
            Ok(Report::Single {
                restricted: restricted.evaluate(examples, threshold)?,
                single: model.evaluate_single(examples, kept, min_support)?,
            })
        }
    }
}

pub fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row)?);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}
