use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Mean of token embeddings, then a two-layer MLP.
    Meanpool,
    /// Transformer encoder with learned positions, mean-pooled.
    Selfattn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub embed_dim: usize,
    /// Size of the sentence representation `s`.
    pub hidden_dim: usize,
    pub heads: usize,
    pub depth: usize,
    pub dropout_p: f64,
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Selfattn,
            embed_dim: 64,
            hidden_dim: 64,
            heads: 4,
            depth: 2,
            dropout_p: 0.1,
            max_len: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.max_len == 0 {
            return Err(ModelError::Config("encoder dimensions and max_len must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(ModelError::Config(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        if self.kind == EncoderKind::Selfattn {
            if self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
                return Err(ModelError::Config(format!(
                    "hidden_dim {} is not divisible by {} attention heads",
                    self.hidden_dim, self.heads
                )));
            }
            if self.depth == 0 {
                return Err(ModelError::Config("selfattn depth must be at least 1".into()));
            }
        }
        Ok(())
    }

    /// Width of the transformer feed-forward layer.
    pub fn ff_dim(&self) -> usize {
        2 * self.hidden_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Gcn,
    Gat,
    /// Independent per-label weight vectors, no graph.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub label_embed_dim: usize,
    /// Must equal the encoder's `hidden_dim`.
    pub out_dim: usize,
    pub gat_heads: usize,
    pub leaky_slope: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { kind: HeadKind::Gcn, label_embed_dim: 64, out_dim: 64, gat_heads: 4, leaky_slope: 0.2 }
    }
}

impl HeadConfig {
    pub fn validate(&self, encoder: &EncoderConfig) -> Result<(), ModelError> {
        if self.out_dim != encoder.hidden_dim {
            return Err(ModelError::Config(format!(
                "head out_dim {} must equal encoder hidden_dim {}",
                self.out_dim, encoder.hidden_dim
            )));
        }
        if self.kind != HeadKind::Flat && self.label_embed_dim == 0 {
            return Err(ModelError::Config("label_embed_dim must be positive".into()));
        }
        if self.kind == HeadKind::Gat && (self.gat_heads == 0 || !self.out_dim.is_multiple_of(self.gat_heads)) {
            return Err(ModelError::Config(format!(
                "{} GAT heads cannot split out_dim {} evenly",
                self.gat_heads, self.out_dim
            )));
        }
        Ok(())
    }

    pub fn gat_head_dim(&self) -> usize {
        self.out_dim / self.gat_heads.max(1)
    }
}

/// Training objective and decision rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    /// Independent sigmoid per label.
    Multilabel,
    /// Softmax restricted to `kept` label positions; all classifiers are
    /// still generated, only the kept ones are scored.
    Singlelabel { kept: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub mode: Mode,
}

impl ModelConfig {
    pub fn validate(&self, n_labels: usize) -> Result<(), ModelError> {
        self.encoder.validate()?;
        self.head.validate(&self.encoder)?;
        if let Mode::Singlelabel { kept } = &self.mode {
            if kept.len() < 2 {
                return Err(ModelError::Config("single-label mode needs at least 2 kept labels".into()));
            }
            if let Some(bad) = kept.iter().find(|&&k| k >= n_labels) {
                return Err(ModelError::Config(format!("kept label index {bad} out of range")));
            }
            let mut sorted = kept.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != kept.len() {
                return Err(ModelError::Config("kept labels contain duplicates".into()));
            }
        }
        Ok(())
    }
}
