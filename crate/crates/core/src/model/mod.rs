//! Sentence encoders, graph-generated emotion classifiers, losses, training
//! and checkpoints.
//!
//! A [`Classifier`] scores a sentence `s` against one classifier vector per
//! emotion, `ŷ_i = ⟨s, C_i⟩`, where the rows of `C` come from a graph head
//! run over learned label embeddings: a single GCN layer over the normalized
//! emotion graph, masked multi-head attention over its edges, or (as a
//! baseline) free per-label vectors.

mod checkpoint;
mod config;
pub mod forward;
mod params;
mod train;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{preprocess, tokenize, CorpusOptions, Example, LabelSpace, Vocabulary};
use crate::emograph::{EmotionGraph, GraphError};
use crate::eval::{single_label_report, EvalError, EvalReport, SingleLabelReport};
use crate::numcore::{sigmoid, NumError, Rng, Tape, Tensor, Var};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{EncoderConfig, EncoderKind, HeadConfig, HeadKind, Mode, ModelConfig};
pub use forward::Bound;
pub use params::{ModelParams, ParamGroup};
pub use train::{train, EpochLog, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("empty after preprocessing")]
    EmptyInput,
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("unreadable checkpoint (format version {}): {message}", version.map_or("unknown".to_string(), |v| v.to_string()))]
    Format { version: Option<u32>, message: String },
}

/// Mean sigmoid cross-entropy of `logits` against 0/1 `targets` (same shape).
pub fn multilabel_loss(logits: &Tensor, targets: &Tensor) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let z = tape.constant(logits.clone());
    let loss = tape.bce_with_logits(z, targets)?;
    Ok(tape.value(loss).item()?)
}

/// Softmax cross-entropy of one logit row restricted to `keep`.
pub fn singlelabel_loss(logits: &[f64], keep: &[usize], gold: usize) -> Result<f64, ModelError> {
    if !keep.contains(&gold) {
        return Err(ModelError::Contract(format!("gold index {gold} is not a kept label")));
    }
    let mut mask = vec![false; logits.len()];
    for &k in keep {
        *mask
            .get_mut(k)
            .ok_or_else(|| ModelError::Contract(format!("kept index {k} out of range")))? = true;
    }
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::row(logits.to_vec())?);
    let loss = tape.softmax_xent(z, &mask, &[gold])?;
    Ok(tape.value(loss).item()?)
}

/// Decision for one input text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub labels: Vec<String>,
    /// Sigmoid probability per label (multi-label) or restricted softmax
    /// probability per kept label (single-label).
    pub probabilities: BTreeMap<String, f64>,
}

/// A trained (or freshly initialized) model with everything needed to run
/// it on raw text.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub config: ModelConfig,
    pub labels: LabelSpace,
    pub vocab: Vocabulary,
    pub graph: EmotionGraph,
    pub corpus: CorpusOptions,
    pub params: ModelParams,
}

impl Classifier {
    pub fn new(
        config: ModelConfig,
        labels: LabelSpace,
        vocab: Vocabulary,
        graph: EmotionGraph,
        corpus: CorpusOptions,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let params = ModelParams::init(&config, vocab.len(), labels.len(), seed);
        let model = Self { config, labels, vocab, graph, corpus, params };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.config.validate(self.labels.len())?;
        if self.graph.labels != self.labels {
            return Err(ModelError::Config("graph label space differs from the model's".into()));
        }
        if self.corpus.max_len > self.config.encoder.max_len {
            return Err(ModelError::Config(format!(
                "corpus max_len {} exceeds encoder max_len {}",
                self.corpus.max_len, self.config.encoder.max_len
            )));
        }
        let expected = params::layout(&self.config, self.vocab.len(), self.labels.len());
        if expected.len() != self.params.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                self.params.len()
            )));
        }
        for (name, shape, _) in expected {
            match self.params.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(ModelError::Config(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(ModelError::Config(format!("missing parameter {name}"))),
            }
        }
        Ok(())
    }

    pub fn kept(&self) -> Option<&[usize]> {
        match &self.config.mode {
            Mode::Multilabel => None,
            Mode::Singlelabel { kept } => Some(kept),
        }
    }

    /// Preprocesses and tokenizes `text` exactly as training data was.
    pub fn tokens_for(&self, text: &str) -> Result<Vec<usize>, ModelError> {
        let tokens = tokenize(&preprocess(text));
        if tokens.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        Ok(self.vocab.encode(&tokens, self.corpus.max_len))
    }

    /// Logits for a batch of token sequences, recorded on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &[&[usize]],
        mut rng: Option<&mut Rng>,
    ) -> Result<Var, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Contract("empty batch".into()));
        }
        let c = forward::classifiers(tape, bound, &self.config.head, &self.graph)?;
        let mut rows = Vec::with_capacity(batch.len());
        for tokens in batch {
            rows.push(forward::encode(tape, bound, &self.config.encoder, tokens, rng.as_deref_mut())?);
        }
        let s = if rows.len() == 1 { rows[0] } else { tape.concat_rows(&rows)? };
        forward::score(tape, s, c)
    }

    /// The training objective for `batch` under the model's mode.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &[&Example],
        rng: Option<&mut Rng>,
    ) -> Result<Var, ModelError> {
        let token_lists: Vec<&[usize]> = batch.iter().map(|e| e.tokens.as_slice()).collect();
        let logits = self.forward(tape, bound, &token_lists, rng)?;
        let n = self.labels.len();
        match &self.config.mode {
            Mode::Multilabel => {
                let mut targets = Vec::with_capacity(batch.len() * n);
                for e in batch {
                    if e.labels.len() != n {
                        return Err(ModelError::Contract(format!(
                            "label vector width {} != {n}",
                            e.labels.len()
                        )));
                    }
                    targets.extend(e.labels.iter().map(|&y| if y { 1.0 } else { 0.0 }));
                }
                let targets = Tensor::new(vec![batch.len(), n], targets)?;
                Ok(tape.bce_with_logits(logits, &targets)?)
            }
            Mode::Singlelabel { kept } => {
                let mut keep = vec![false; n];
                for &k in kept {
                    keep[k] = true;
                }
                let gold = batch.iter().map(|e| single_gold(e, kept)).collect::<Result<Vec<_>, _>>()?;
                Ok(tape.softmax_xent(logits, &keep, &gold)?)
            }
        }
    }

    /// Evaluation-mode loss (no dropout).
    pub fn loss(&self, batch: &[Example]) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.params);
        let refs: Vec<&Example> = batch.iter().collect();
        let loss = self.batch_loss(&mut tape, &bound, &refs, None)?;
        Ok(tape.value(loss).item()?)
    }

    /// Evaluation-mode loss and its gradient for every parameter.
    pub fn loss_and_grads(&self, batch: &[Example]) -> Result<(f64, BTreeMap<String, Tensor>), ModelError> {
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.params);
        let refs: Vec<&Example> = batch.iter().collect();
        let loss = self.batch_loss(&mut tape, &bound, &refs, None)?;
        let mut grads = tape.backward(loss)?;
        let by_name = bound.iter().map(|(name, &v)| (name.clone(), grads.take(v))).collect();
        Ok((tape.value(loss).item()?, by_name))
    }

    pub fn logits_batch(&self, batch: &[&[usize]]) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.params);
        let logits = self.forward(&mut tape, &bound, batch, None)?;
        Ok(tape.value(logits).clone())
    }

    pub fn logits(&self, tokens: &[usize]) -> Result<Vec<f64>, ModelError> {
        Ok(self.logits_batch(&[tokens])?.into_data())
    }

    /// The generated classifier matrix `C` (`n × out_dim`).
    pub fn classifier_matrix(&self) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.params);
        let c = forward::classifiers(&mut tape, &bound, &self.config.head, &self.graph)?;
        Ok(tape.value(c).clone())
    }

    /// Sentence representation `s` (`1 × hidden_dim`), evaluation mode.
    pub fn sentence(&self, tokens: &[usize]) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.params);
        let s = forward::encode(&mut tape, &bound, &self.config.encoder, tokens, None)?;
        Ok(tape.value(s).clone())
    }

    /// Labels with `σ(ŷ_i) ≥ threshold`; in single-label mode the arg-max
    /// over the kept labels (threshold unused).
    pub fn predict_tokens(&self, tokens: &[usize], threshold: f64) -> Result<Prediction, ModelError> {
        let logits = self.logits(tokens)?;
        match self.kept() {
            None => {
                let mut labels = Vec::new();
                let mut probabilities = BTreeMap::new();
                for (i, &z) in logits.iter().enumerate() {
                    let p = sigmoid(z);
                    let name = self.labels.name(i).to_string();
                    if p >= threshold {
                        labels.push(name.clone());
                    }
                    probabilities.insert(name, p);
                }
                Ok(Prediction { labels, probabilities })
            }
            Some(kept) => Ok(self.restricted_prediction(&logits, kept)),
        }
    }

    fn restricted_prediction(&self, logits: &[f64], kept: &[usize]) -> Prediction {
        let best = restricted_argmax(logits, kept);
        let max = kept.iter().map(|&k| logits[k]).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = kept.iter().map(|&k| (logits[k] - max).exp()).sum();
        let probabilities =
            kept.iter().map(|&k| (self.labels.name(k).to_string(), (logits[k] - max).exp() / total)).collect();
        Prediction { labels: vec![self.labels.name(best).to_string()], probabilities }
    }

    pub fn predict(&self, text: &str, threshold: f64) -> Result<Prediction, ModelError> {
        self.predict_tokens(&self.tokens_for(text)?, threshold)
    }

    /// Arg-max over `kept` regardless of the model's own mode.
    pub fn predict_restricted(&self, tokens: &[usize], kept: &[usize]) -> Result<usize, ModelError> {
        if kept.is_empty() {
            return Err(ModelError::Contract("no kept labels".into()));
        }
        Ok(restricted_argmax(&self.logits(tokens)?, kept))
    }

    /// Logit rows for `examples`, evaluated in chunks.
    pub fn logits_for(&self, examples: &[Example]) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut rows = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(64) {
            let lists: Vec<&[usize]> = chunk.iter().map(|e| e.tokens.as_slice()).collect();
            rows.extend(self.logits_batch(&lists)?.to_rows());
        }
        Ok(rows)
    }

    /// Multi-label report. In single-label mode predictions are one-hot
    /// arg-maxes and every vector is restricted to the kept labels.
    pub fn evaluate(&self, examples: &[Example], threshold: f64) -> Result<EvalReport, ModelError> {
        if examples.is_empty() {
            return Err(EvalError::Empty.into());
        }
        let logits = self.logits_for(examples)?;
        let (preds, golds, names): (Vec<Vec<bool>>, Vec<Vec<bool>>, Vec<String>) = match self.kept() {
            None => (
                logits.iter().map(|row| row.iter().map(|&z| sigmoid(z) >= threshold).collect()).collect(),
                examples.iter().map(|e| e.labels.clone()).collect(),
                self.labels.names().to_vec(),
            ),
            Some(kept) => (
                logits
                    .iter()
                    .map(|row| {
                        let best = restricted_argmax(row, kept);
                        kept.iter().map(|&k| k == best).collect()
                    })
                    .collect(),
                examples.iter().map(|e| kept.iter().map(|&k| e.labels[k]).collect()).collect(),
                kept.iter().map(|&k| self.labels.name(k).to_string()).collect(),
            ),
        };
        Ok(EvalReport::compute(&preds, &golds, &names)?)
    }

    /// Accuracy and per-class F1 for restricted arg-max decisions over
    /// `kept`. Every example needs exactly one positive among `kept`.
    pub fn evaluate_single(
        &self,
        examples: &[Example],
        kept: &[usize],
        min_support: usize,
    ) -> Result<SingleLabelReport, ModelError> {
        let golds = examples.iter().map(|e| single_gold(e, kept)).collect::<Result<Vec<_>, _>>()?;
        let preds: Vec<usize> = self.logits_for(examples)?.iter().map(|row| restricted_argmax(row, kept)).collect();
        Ok(single_label_report(&preds, &golds, kept, self.labels.names(), min_support)?)
    }
}

/// First maximum wins on ties.
fn restricted_argmax(logits: &[f64], kept: &[usize]) -> usize {
    let mut best = kept[0];
    for &k in &kept[1..] {
        if logits[k] > logits[best] {
            best = k;
        }
    }
    best
}

fn single_gold(example: &Example, kept: &[usize]) -> Result<usize, ModelError> {
    let mut found = kept.iter().copied().filter(|&k| example.labels.get(k).copied().unwrap_or(false));
    match (found.next(), found.next()) {
        (Some(g), None) => Ok(g),
        _ => Err(ModelError::Contract(format!(
            "single-label mode needs exactly one kept label per example: {:?}",
            example.raw_text
        ))),
    }
}
