use std::collections::BTreeMap;

use crate::numcore::{init, splitmix64, InitScheme, Tensor};

use super::config::{EncoderKind, HeadKind, ModelConfig};

/// Which optimizer owns a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Label embeddings and everything in the graph head (`head.*`).
    Head,
    /// Token embeddings and encoder weights.
    Encoder,
}

/// All trainable tensors, keyed by name. Iteration order is the sorted name
/// order, which is also the order used for seeding and optimizer state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

pub const TOKEN_EMBEDDINGS: &str = "emb.tokens";
pub const LABEL_EMBEDDINGS: &str = "head.labels";
pub const GCN_WEIGHT: &str = "head.w1";
pub const FLAT_WEIGHT: &str = "head.flat";

pub fn gat_weight(h: usize) -> String {
    format!("head.gat{h}.w")
}
pub fn gat_src(h: usize) -> String {
    format!("head.gat{h}.a_src")
}
pub fn gat_dst(h: usize) -> String {
    format!("head.gat{h}.a_dst")
}

/// Name and shape of every parameter the configuration needs, with its init.
pub fn layout(config: &ModelConfig, vocab_size: usize, n_labels: usize) -> Vec<(String, Vec<usize>, InitScheme)> {
    use InitScheme::{GlorotUniform as G, Ones, Zeros};
    let enc = &config.encoder;
    let (e, h) = (enc.embed_dim, enc.hidden_dim);
    let mut out: Vec<(String, Vec<usize>, InitScheme)> = vec![(TOKEN_EMBEDDINGS.into(), vec![vocab_size, e], G)];
    match enc.kind {
        EncoderKind::Meanpool => {
            out.push(("enc.hidden.w".into(), vec![e, h], G));
            out.push(("enc.hidden.b".into(), vec![1, h], Zeros));
            out.push(("enc.out.w".into(), vec![h, h], G));
            out.push(("enc.out.b".into(), vec![1, h], Zeros));
        }
        EncoderKind::Selfattn => {
            let f = enc.ff_dim();
            out.push(("enc.pos".into(), vec![enc.max_len, e], G));
            out.push(("enc.in.w".into(), vec![e, h], G));
            out.push(("enc.in.b".into(), vec![1, h], Zeros));
            for l in 0..enc.depth {
                for p in ["q", "k", "v", "o"] {
                    out.push((format!("enc.l{l}.{p}.w"), vec![h, h], G));
                    out.push((format!("enc.l{l}.{p}.b"), vec![1, h], Zeros));
                }
                out.push((format!("enc.l{l}.ff1.w"), vec![h, f], G));
                out.push((format!("enc.l{l}.ff1.b"), vec![1, f], Zeros));
                out.push((format!("enc.l{l}.ff2.w"), vec![f, h], G));
                out.push((format!("enc.l{l}.ff2.b"), vec![1, h], Zeros));
                for ln in ["ln1", "ln2"] {
                    out.push((format!("enc.l{l}.{ln}.g"), vec![1, h], Ones));
                    out.push((format!("enc.l{l}.{ln}.b"), vec![1, h], Zeros));
                }
            }
        }
    }
    let head = &config.head;
    match head.kind {
        HeadKind::Gcn => {
            out.push((LABEL_EMBEDDINGS.into(), vec![n_labels, head.label_embed_dim], G));
            out.push((GCN_WEIGHT.into(), vec![head.label_embed_dim, head.out_dim], G));
        }
        HeadKind::Gat => {
            let d = head.gat_head_dim();
            out.push((LABEL_EMBEDDINGS.into(), vec![n_labels, head.label_embed_dim], G));
            for k in 0..head.gat_heads {
                out.push((gat_weight(k), vec![head.label_embed_dim, d], G));
                out.push((gat_src(k), vec![d, 1], G));
                out.push((gat_dst(k), vec![d, 1], G));
            }
        }
        HeadKind::Flat => out.push((FLAT_WEIGHT.into(), vec![n_labels, head.out_dim], G)),
    }
    out
}

impl ModelParams {
    /// Parameter `k` (in sorted name order) is drawn with seed
    /// `splitmix64(seed + k)`.
    pub fn init(config: &ModelConfig, vocab_size: usize, n_labels: usize, seed: u64) -> Self {
        let mut specs = layout(config, vocab_size, n_labels);
        specs.sort_by(|a, b| a.0.cmp(&b.0));
        let tensors = specs
            .into_iter()
            .enumerate()
            .map(|(k, (name, shape, scheme))| {
                let t = init(&shape, scheme, splitmix64(seed.wrapping_add(k as u64)));
                (name, t)
            })
            .collect();
        Self { tensors }
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn group(name: &str) -> ParamGroup {
        if name.starts_with("head.") {
            ParamGroup::Head
        } else {
            ParamGroup::Encoder
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}
