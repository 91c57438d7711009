//! Emotion graphs built from label co-occurrence.
//!
//! The chain is
//!
//! * `g1[i][j] = M[i][j] / M[i][i]`: conditional co-occurrence, asymmetric;
//!   a label with no positives gets an all-zero row.
//! * `g2 = [g1 >= mu]`: binarized, diagonal included. Rows of labels with
//!   no positives stay zero for every `mu`, so those labels stay isolated.
//! * `g`: each row's off-diagonal ones divided by their count `k` (the sum
//!   excludes the diagonal, so a node's neighbor weights sum to 1), with the
//!   diagonal overwritten by `1 - w`.
//! * `g_tilde = D^-1/2 g D^-1/2`, `D` the row sums of `g`. No extra identity
//!   is added; the `1 - w` self weight already plays that role.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CooccurrenceMatrix, CorpusError, LabelSpace};
use crate::numcore::Tensor;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("threshold mu = {0} must lie in [0, 1]")]
    Mu(f64),
    #[error("weight w = {0} must lie in [0, 1)")]
    Weight(f64),
    #[error("co-occurrence matrix is {got}x{got} but the label space has {expected} labels")]
    Size { expected: usize, got: usize },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("node {0} has zero degree")]
    ZeroDegree(usize),
    #[error("malformed graph file: {0}")]
    Format(String),
    #[error(transparent)]
    Labels(#[from] CorpusError),
}

pub fn normalize_asymmetric(m: &CooccurrenceMatrix) -> Tensor {
    let n = m.n();
    let mut g1 = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let total = m.get(i, i);
        if total == 0 {
            continue;
        }
        for j in 0..n {
            g1.set(i, j, m.get(i, j) as f64 / total as f64);
        }
    }
    g1
}

pub fn binarize(g1: &Tensor, mu: f64) -> Tensor {
    let n = g1.rows();
    let mut g2 = Tensor::zeros(&[n, n]);
    for i in (0..n).filter(|&i| g1.get(i, i) > 0.0) {
        for j in 0..n {
            if g1.get(i, j) >= mu {
                g2.set(i, j, 1.0);
            }
        }
    }
    g2
}

pub fn reweight(g2: &Tensor, w: f64) -> Tensor {
    let n = g2.rows();
    let mut g = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let k: f64 = (0..n).filter(|&j| j != i).map(|j| g2.get(i, j)).sum();
        for j in 0..n {
            let v = if i == j {
                1.0 - w
            } else if k > 0.0 {
                g2.get(i, j) / k
            } else {
                0.0
            };
            g.set(i, j, v);
        }
    }
    g
}

/// Symmetric degree normalization of a non-negative square matrix.
pub fn gcn_normalize(g: &Tensor) -> Result<Tensor, GraphError> {
    let n = g.rows();
    let mut inv_sqrt = Vec::with_capacity(n);
    for i in 0..n {
        let d: f64 = g.row_slice(i).iter().sum();
        if d <= 0.0 {
            return Err(GraphError::ZeroDegree(i));
        }
        inv_sqrt.push(1.0 / d.sqrt());
    }
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, g.get(i, j) * (inv_sqrt[i] * inv_sqrt[j]));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphFile", into = "GraphFile")]
pub struct EmotionGraph {
    pub labels: LabelSpace,
    pub mu: f64,
    pub w: f64,
    pub g1: Tensor,
    pub g2: Tensor,
    pub g: Tensor,
    pub g_tilde: Tensor,
}

/// On-disk JSON layout.
#[derive(Clone, Serialize, Deserialize)]
struct GraphFile {
    labels: Vec<String>,
    mu: f64,
    w: f64,
    g1: Vec<Vec<f64>>,
    g2: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    g_tilde: Vec<Vec<f64>>,
}

fn check_params(mu: f64, w: f64) -> Result<(), GraphError> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(GraphError::Mu(mu));
    }
    if !(0.0..1.0).contains(&w) {
        return Err(GraphError::Weight(w));
    }
    Ok(())
}

impl EmotionGraph {
    pub fn build(m: &CooccurrenceMatrix, labels: &LabelSpace, mu: f64, w: f64) -> Result<Self, GraphError> {
        check_params(mu, w)?;
        if m.n() != labels.len() {
            return Err(GraphError::Size { expected: labels.len(), got: m.n() });
        }
        let g1 = normalize_asymmetric(m);
        let g2 = binarize(&g1, mu);
        let g = reweight(&g2, w);
        let g_tilde = gcn_normalize(&g)?;
        Ok(Self { labels: labels.clone(), mu, w, g1, g2, g, g_tilde })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Off-diagonal edges `i -> j` of the binarized graph.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && self.g2.get(i, j) != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        match (self.labels.position(from), self.labels.position(to)) {
            (Some(i), Some(j)) => i != j && self.g2.get(i, j) != 0.0,
            _ => false,
        }
    }

    /// `(out-degree, in-degree)` per node, off-diagonal only.
    pub fn degrees(&self) -> Vec<(usize, usize)> {
        let mut deg = vec![(0, 0); self.n()];
        for (i, j) in self.edges() {
            deg[i].0 += 1;
            deg[j].1 += 1;
        }
        deg
    }

    /// Positions of `keep` in the label space, in the order given. Names are
    /// looked up through `aliases` first. The graph itself is untouched.
    pub fn subgraph(&self, keep: &[String], aliases: &BTreeMap<String, String>) -> Result<Vec<usize>, GraphError> {
        keep.iter()
            .map(|name| self.labels.resolve(name, aliases).ok_or_else(|| GraphError::UnknownLabel(name.clone())))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        serde_json::from_str(text).map_err(|e| GraphError::Format(e.to_string()))
    }

    /// Graphviz digraph with one edge per off-diagonal nonzero of `g2`,
    /// labelled with the conditional co-occurrence `g1`.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph emograph {\n");
        for name in self.labels.names() {
            let _ = writeln!(out, "  {};", dot_id(name));
        }
        for (i, j) in self.edges() {
            let _ = writeln!(
                out,
                "  {} -> {} [label=\"{:.2}\"];",
                dot_id(self.labels.name(i)),
                dot_id(self.labels.name(j)),
                self.g1.get(i, j)
            );
        }
        out.push_str("}\n");
        out
    }
}

impl From<EmotionGraph> for GraphFile {
    fn from(graph: EmotionGraph) -> Self {
        GraphFile {
            labels: graph.labels.names().to_vec(),
            mu: graph.mu,
            w: graph.w,
            g1: graph.g1.to_rows(),
            g2: graph.g2.to_rows(),
            g: graph.g.to_rows(),
            g_tilde: graph.g_tilde.to_rows(),
        }
    }
}

impl TryFrom<GraphFile> for EmotionGraph {
    type Error = GraphError;

    fn try_from(file: GraphFile) -> Result<Self, Self::Error> {
        check_params(file.mu, file.w)?;
        let labels = LabelSpace::new(file.labels)?;
        let n = labels.len();
        let matrix = |name: &str, rows: Vec<Vec<f64>>| -> Result<Tensor, GraphError> {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(GraphError::Format(format!("{name} must be {n}x{n}")));
            }
            let t = Tensor::from_rows(&rows).map_err(|e| GraphError::Format(e.to_string()))?;
            if !t.is_finite() {
                return Err(GraphError::Format(format!("{name} has non-finite entries")));
            }
            Ok(t)
        };
        Ok(Self {
            g1: matrix("g1", file.g1)?,
            g2: matrix("g2", file.g2)?,
            g: matrix("g", file.g)?,
            g_tilde: matrix("g_tilde", file.g_tilde)?,
            labels,
            mu: file.mu,
            w: file.w,
        })
    }
}

fn dot_id(name: &str) -> String {
    let plain = name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    if plain {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('\\', "\\\\").replace('"', "\\\""))
    }
}
