//! Layers assembled from tape primitives. Each layer owns only
//! [`ParamId`](crate::ParamId) handles; values live in a
//! [`ParamStore`](crate::ParamStore) and are read through the tape.

mod attention;
mod conv;
mod embedding;
mod linear;
mod lstm;

pub use attention::{AttentionOutput, LayerNorm, MultiHeadAttention, TransformerLayer, LAYER_NORM_EPS};
pub use conv::Conv2d;
pub use embedding::{sinusoidal_table, EmbeddingTable};
pub use linear::Linear;
pub use lstm::{LstmCell, LstmState};
