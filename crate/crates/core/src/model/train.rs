use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::numcore::{clip_global_norm, splitmix64, AdamConfig, AdamState, Rng, Tape, Tensor};

use super::forward::Bound;
use super::params::{ModelParams, ParamGroup};
use super::{Classifier, ModelError};

/// Salt mixed into the run seed for the shuffling/dropout stream so it never
/// coincides with the parameter-initialization streams.
const TRAIN_STREAM: u64 = 0x7452_4149_4E5F_5247;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Learning rate of the optimizer over `head.*` parameters.
    pub lr_head: f64,
    /// Learning rate of the optimizer over token embeddings and the encoder.
    pub lr_encoder: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without improvement of the monitored Jaccard before stopping;
    /// `None` always runs every epoch.
    pub patience: Option<usize>,
    pub clip_norm: Option<f64>,
    /// Decision threshold used for the monitored metrics.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_head: 1e-3,
            lr_encoder: 1e-3,
            batch_size: 32,
            epochs: 100,
            patience: Some(5),
            clip_norm: Some(5.0),
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, lr) in [("lr_head", self.lr_head), ("lr_encoder", self.lr_encoder)] {
            if !lr.is_finite() || lr < 0.0 {
                return Err(ModelError::Config(format!("{name} must be a finite non-negative number, got {lr}")));
            }
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(ModelError::Config("epochs must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(ModelError::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(ModelError::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_jaccard: f64,
    pub val_micro_f1: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best monitored Jaccard.
    pub model: Classifier,
    pub log: Vec<EpochLog>,
    /// 1-based.
    pub best_epoch: usize,
}

struct Optimizer {
    names: Vec<String>,
    adam: AdamState,
}

impl Optimizer {
    fn new(params: &ModelParams, group: ParamGroup, lr: f64) -> Self {
        let names: Vec<String> = params.names().filter(|n| ModelParams::group(n) == group).cloned().collect();
        let shapes: Vec<&[usize]> = names.iter().map(|n| params.get(n).expect("listed name").shape()).collect();
        Self { adam: AdamState::new(AdamConfig::with_lr(lr), shapes), names }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &[(String, Tensor)]) -> Result<(), ModelError> {
        let grad_refs: Vec<&Tensor> = self
            .names
            .iter()
            .map(|n| &grads.iter().find(|(g, _)| g == n).expect("gradient for every parameter").1)
            .collect();
        let mut targets: Vec<&mut Tensor> = params.iter_mut().filter(|(n, _)| self.names.contains(n)).map(|(_, t)| t).collect();
        self.adam.step(&mut targets, &grad_refs)?;
        Ok(())
    }
}

/// Mini-batch training with one Adam instance per parameter group, both
/// stepped on every batch. Metrics are monitored on `val` when given,
/// otherwise on the training examples.
pub fn train(
    model: Classifier,
    train: &[Example],
    val: Option<&[Example]>,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    model.validate()?;
    if train.is_empty() {
        return Err(ModelError::Contract("training split is empty".into()));
    }
    if val.is_some_and(<[Example]>::is_empty) {
        return Err(ModelError::Contract("validation split is empty".into()));
    }
    let mut model = model;
    let mut rng = Rng::new(splitmix64(seed) ^ TRAIN_STREAM);
    let mut head_opt = Optimizer::new(&model.params, ParamGroup::Head, config.lr_head);
    let mut enc_opt = Optimizer::new(&model.params, ParamGroup::Encoder, config.lr_encoder);
    let monitored = val.unwrap_or(train);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let mut tape = Tape::new();
            let bound = Bound::new(&mut tape, &model.params);
            let loss_var = model.batch_loss(&mut tape, &bound, &batch, Some(&mut rng))?;
            let loss = tape.value(loss_var).item()?;
            if !loss.is_finite() {
                return Err(ModelError::Divergence { epoch, step: step + 1, loss });
            }
            total += loss * batch.len() as f64;

            let mut grads = tape.backward(loss_var)?;
            let (names, mut tensors): (Vec<String>, Vec<Tensor>) =
                bound.iter().map(|(n, &v)| (n.clone(), grads.take(v))).unzip();
            if let Some(max) = config.clip_norm {
                let norm = clip_global_norm(&mut tensors, max);
                if !norm.is_finite() {
                    return Err(ModelError::Divergence { epoch, step: step + 1, loss: norm });
                }
            }
            let named: Vec<(String, Tensor)> = names.into_iter().zip(tensors).collect();
            head_opt.step(&mut model.params, &named)?;
            enc_opt.step(&mut model.params, &named)?;
        }
        if !model.params.is_finite() {
            return Err(ModelError::Divergence { epoch, step: order.len().div_ceil(config.batch_size), loss: f64::NAN });
        }

        let report = model.evaluate(monitored, config.threshold)?;
        log::debug!(
            "epoch {epoch}: loss {:.5} jaccard {:.4}",
            total / train.len() as f64,
            report.jaccard_accuracy
        );
        log.push(EpochLog {
            epoch,
            train_loss: total / train.len() as f64,
            val_jaccard: report.jaccard_accuracy,
            val_micro_f1: report.micro_f1,
            val_macro_f1: report.macro_f1,
        });

        let improved = best.as_ref().is_none_or(|(score, _, _)| report.jaccard_accuracy > *score);
        if improved {
            best = Some((report.jaccard_accuracy, epoch, model.params.clone()));
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        if config.patience.is_some_and(|p| epoch - best_epoch >= p) {
            break;
        }
    }

    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    model.params = params;
    Ok(TrainOutcome { model, log, best_epoch })
}
