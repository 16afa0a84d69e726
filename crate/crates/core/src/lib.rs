//! IGEL: inductive node embeddings learned over sparse distance-degree
//! encodings of each node's local neighbourhood.
//!
//! The pipeline is `graph` → `encoder` (sparse structural features) →
//! `model` (dense embeddings `e = xᵀ W`), with `W` learned either by
//! skip-gram over random walks ([`unsup`]) or jointly with a downstream
//! predictor ([`supervised`]). [`eval`] holds the metrics and analysis
//! protocols.

pub mod encoder;
pub mod eval;
pub mod graph;
pub mod model;
pub mod optim;
pub mod supervised;
pub mod unsup;
pub mod walker;

pub use encoder::{encode_all, encode_node, EncoderConfig, SparseFeatures};
pub use graph::{Graph, NodeId};
pub use model::EmbeddingMatrix;
