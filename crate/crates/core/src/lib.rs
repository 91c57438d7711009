//! EmoGraph: emotion co-occurrence graphs and graph-generated emotion
//! classifiers.
//!
//! The pipeline is [`corpus`] (tweets to examples and label counts),
//! [`emograph`] (counts to a normalized emotion graph), [`model`] (a text
//! encoder plus a GCN/GAT head that turns label embeddings into one
//! classifier vector per emotion) and [`eval`] (Jaccard accuracy, micro/macro
//! F1). Everything runs on the small autodiff core in [`numcore`].

pub mod corpus;
pub mod emograph;
pub mod eval;
pub mod model;
pub mod numcore;
pub mod synthetic;
