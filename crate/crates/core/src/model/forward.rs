//! Encoders, graph heads and scoring, expressed as tape operations.

use std::collections::BTreeMap;

use crate::emograph::EmotionGraph;
use crate::numcore::{Rng, Tape, Tensor, Var};

use super::config::{EncoderConfig, EncoderKind, HeadConfig, HeadKind};
use super::params::{self, ModelParams};
use super::ModelError;

const LN_EPS: f64 = 1e-5;

/// Parameters placed on a tape as trainable leaves.
#[derive(Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn new(tape: &mut Tape, params: &ModelParams) -> Self {
        let vars = params.iter().map(|(name, t)| (name.clone(), tape.param(t.clone()))).collect();
        Self { vars }
    }

    pub fn var(&self, name: &str) -> Result<Var, ModelError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::Contract(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

fn linear(tape: &mut Tape, bound: &Bound, x: Var, prefix: &str) -> Result<Var, ModelError> {
    let w = bound.var(&format!("{prefix}.w"))?;
    let b = bound.var(&format!("{prefix}.b"))?;
    let y = tape.matmul(x, w)?;
    Ok(tape.add_row(y, b)?)
}

/// Sentence representation `s` as a `1 × hidden_dim` row. Dropout is active
/// only when `rng` is given.
pub fn encode(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &EncoderConfig,
    tokens: &[usize],
    mut rng: Option<&mut Rng>,
) -> Result<Var, ModelError> {
    if tokens.is_empty() {
        return Err(ModelError::Contract("cannot encode an empty token list".into()));
    }
    if tokens.len() > cfg.max_len {
        return Err(ModelError::Contract(format!(
            "{} tokens exceed max_len {}",
            tokens.len(),
            cfg.max_len
        )));
    }
    let table = bound.var(params::TOKEN_EMBEDDINGS)?;
    let emb = tape.gather_rows(table, tokens)?;
    match cfg.kind {
        EncoderKind::Meanpool => {
            let emb = tape.dropout(emb, cfg.dropout_p, rng.as_deref_mut())?;
            let mean = tape.mean_rows(emb);
            let hidden = linear(tape, bound, mean, "enc.hidden")?;
            let hidden = tape.relu(hidden);
            linear(tape, bound, hidden, "enc.out")
        }
        EncoderKind::Selfattn => {
            let positions: Vec<usize> = (0..tokens.len()).collect();
            let pos_table = bound.var("enc.pos")?;
            let pos = tape.gather_rows(pos_table, &positions)?;
            let x = tape.add(emb, pos)?;
            let x = tape.dropout(x, cfg.dropout_p, rng.as_deref_mut())?;
            let mut x = linear(tape, bound, x, "enc.in")?;
            for layer in 0..cfg.depth {
                x = attention_block(tape, bound, cfg, x, layer, rng.as_deref_mut())?;
            }
            Ok(tape.mean_rows(x))
        }
    }
}

/// Multi-head self-attention, residual, layer norm, feed-forward, residual,
/// layer norm.
fn attention_block(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &EncoderConfig,
    x: Var,
    layer: usize,
    mut rng: Option<&mut Rng>,
) -> Result<Var, ModelError> {
    let p = |name: &str| format!("enc.l{layer}.{name}");
    let q = linear(tape, bound, x, &p("q"))?;
    let k = linear(tape, bound, x, &p("k"))?;
    let v = linear(tape, bound, x, &p("v"))?;
    let dh = cfg.hidden_dim / cfg.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = tape.slice_cols(q, lo, hi)?;
        let kh = tape.slice_cols(k, lo, hi)?;
        let vh = tape.slice_cols(v, lo, hi)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scores, None)?;
        heads.push(tape.matmul(attn, vh)?);
    }
    let joined = tape.concat_cols(&heads)?;
    let attn_out = linear(tape, bound, joined, &p("o"))?;
    let attn_out = tape.dropout(attn_out, cfg.dropout_p, rng.as_deref_mut())?;
    let x = tape.add(x, attn_out)?;
    let x = tape.layer_norm(x, bound.var(&p("ln1.g"))?, bound.var(&p("ln1.b"))?, LN_EPS)?;

    let ff = linear(tape, bound, x, &p("ff1"))?;
    let ff = tape.relu(ff);
    let ff = linear(tape, bound, ff, &p("ff2"))?;
    let ff = tape.dropout(ff, cfg.dropout_p, rng)?;
    let x = tape.add(x, ff)?;
    Ok(tape.layer_norm(x, bound.var(&p("ln2.g"))?, bound.var(&p("ln2.b"))?, LN_EPS)?)
}

/// One graph-convolution layer: `C = ReLU(G̃ · E_e · W1)`.
pub fn gcn_head(tape: &mut Tape, g_tilde: Var, label_emb: Var, w1: Var) -> Result<Var, ModelError> {
    let mixed = tape.matmul(g_tilde, label_emb)?;
    let projected = tape.matmul(mixed, w1)?;
    Ok(tape.relu(projected))
}

/// Trainable tensors of one attention head.
#[derive(Debug, Clone, Copy)]
pub struct GatHead {
    /// `label_embed_dim × d`
    pub weight: Var,
    /// `d × 1`, scores the attending node.
    pub a_src: Var,
    /// `d × 1`, scores the attended neighbor.
    pub a_dst: Var,
}

/// Attention mask over emotion nodes: the nonzero pattern of `g2` plus self
/// loops, row-major.
pub fn gat_mask(g2: &Tensor) -> Vec<bool> {
    let n = g2.rows();
    (0..n * n).map(|idx| idx / n == idx % n || g2.data()[idx] != 0.0).collect()
}

/// Masked multi-head graph attention. Head `h` computes
/// `α_ij = softmax_j(LeakyReLU(a_srcᵀ W e_i + a_dstᵀ W e_j))` over `j` in the
/// mask of row `i`, then `Σ_j α_ij W e_j`; heads are concatenated and passed
/// through ReLU. Returns the classifiers and the per-head attention matrices.
pub fn gat_head(
    tape: &mut Tape,
    g2: &Tensor,
    label_emb: Var,
    heads: &[GatHead],
    leaky_slope: f64,
) -> Result<(Var, Vec<Var>), ModelError> {
    let n = g2.rows();
    let mask = gat_mask(g2);
    let ones_col = tape.constant(Tensor::full(&[n, 1], 1.0));
    let ones_row = tape.constant(Tensor::full(&[1, n], 1.0));
    let mut outputs = Vec::with_capacity(heads.len());
    let mut attention = Vec::with_capacity(heads.len());
    for head in heads {
        let projected = tape.matmul(label_emb, head.weight)?;
        let src = tape.matmul(projected, head.a_src)?;
        let dst = tape.matmul(projected, head.a_dst)?;
        // src_i broadcast along rows, dst_j along columns.
        let src_grid = tape.matmul(src, ones_row)?;
        let dst_t = tape.transpose(dst)?;
        let dst_grid = tape.matmul(ones_col, dst_t)?;
        let logits = tape.add(src_grid, dst_grid)?;
        let logits = tape.leaky_relu(logits, leaky_slope);
        let alpha = tape.softmax_rows(logits, Some(&mask))?;
        outputs.push(tape.matmul(alpha, projected)?);
        attention.push(alpha);
    }
    let joined = tape.concat_cols(&outputs)?;
    Ok((tape.relu(joined), attention))
}

/// The `n × out_dim` matrix whose rows are the per-emotion classifiers.
pub fn classifiers(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &HeadConfig,
    graph: &EmotionGraph,
) -> Result<Var, ModelError> {
    match cfg.kind {
        HeadKind::Gcn => {
            let g_tilde = tape.constant(graph.g_tilde.clone());
            gcn_head(tape, g_tilde, bound.var(params::LABEL_EMBEDDINGS)?, bound.var(params::GCN_WEIGHT)?)
        }
        HeadKind::Gat => {
            let heads = (0..cfg.gat_heads)
                .map(|h| {
                    Ok(GatHead {
                        weight: bound.var(&params::gat_weight(h))?,
                        a_src: bound.var(&params::gat_src(h))?,
                        a_dst: bound.var(&params::gat_dst(h))?,
                    })
                })
                .collect::<Result<Vec<_>, ModelError>>()?;
            let (c, _) = gat_head(tape, &graph.g2, bound.var(params::LABEL_EMBEDDINGS)?, &heads, cfg.leaky_slope)?;
            Ok(c)
        }
        HeadKind::Flat => bound.var(params::FLAT_WEIGHT),
    }
}

/// Logits `ŷ[b][i] = ⟨s_b, C_i⟩` for stacked sentence rows `s` (`B × d`).
pub fn score(tape: &mut Tape, s: Var, c: Var) -> Result<Var, ModelError> {
    let ct = tape.transpose(c)?;
    Ok(tape.matmul(s, ct)?)
}
